//! `stations.csv` and `graph.json` readers and writers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeoError, GeoGraph, StationMeta, StationSet};

pub fn read_stations_csv(path: &Path) -> Result<StationSet, GeoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| GeoError::Parse(e.to_string()))?;
    let stations = rdr
        .deserialize::<StationMeta>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| GeoError::Parse(format!("{}: {e}", path.display())))?;
    StationSet::new(stations)
}

pub fn write_stations_csv(path: &Path, stations: &StationSet) -> Result<(), GeoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| GeoError::Parse(e.to_string()))?;
    for s in stations.iter() {
        w.serialize(s).map_err(|e| GeoError::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// On-disk graph: undirected edges as `[i, j, distance_km]` plus the
/// station list needed to recompute bearings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub stations: Vec<StationMeta>,
}

impl From<&GeoGraph> for GraphFile {
    fn from(g: &GeoGraph) -> Self {
        Self {
            n: g.n(),
            edges: g.edges(),
            stations: g.stations.as_slice().to_vec(),
        }
    }
}

impl TryFrom<GraphFile> for GeoGraph {
    type Error = GeoError;
    fn try_from(f: GraphFile) -> Result<Self, GeoError> {
        if f.stations.len() != f.n {
            return Err(GeoError::Shape(format!(
                "graph.json declares n = {} but lists {} stations",
                f.n,
                f.stations.len()
            )));
        }
        let edges: Vec<_> = f.edges.iter().map(|&(i, j, _)| (i, j)).collect();
        GeoGraph::from_edges(StationSet::new(f.stations)?, &edges)
    }
}

pub fn write_graph_json(path: &Path, g: &GeoGraph) -> Result<(), GeoError> {
    let text = serde_json::to_string_pretty(&GraphFile::from(g)).map_err(|e| GeoError::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_graph_json(path: &Path) -> Result<GeoGraph, GeoError> {
    let text = std::fs::read_to_string(path)?;
    let f: GraphFile =
        serde_json::from_str(&text).map_err(|e| GeoError::Parse(format!("{}: {e}", path.display())))?;
    GeoGraph::try_from(f)
}
