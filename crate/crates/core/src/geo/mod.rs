//! Station metadata and the graphs derived from it: the transport-pathway
//! graph, the static inverse-distance diffusion graph, and the per-timestep
//! wind-projected advection graph.

mod elevation;
mod graph;
pub mod io;

use serde::{Deserialize, Serialize};

pub use elevation::{ridge_height, ElevationField, Raster, RIDGE_SAMPLES};
pub use graph::{
    build_advection_graph, build_diffusion_graph, build_geospatial_graph, AdvectionGraph, DiffusionGraph,
    GeoGraph, WindConvention, DEFAULT_D_THETA_KM, DEFAULT_M_THETA_M, KMH_PER_MS,
};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(rename = "elevation_m")]
    pub elevation: f64,
}

impl StationMeta {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64, elevation: f64) -> Self {
        Self {
            id: id.into(),
            lat,
            lon,
            elevation,
        }
    }

    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

/// Validated list of stations: unique ids, coordinates in range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<StationMeta>", into = "Vec<StationMeta>")]
pub struct StationSet {
    stations: Vec<StationMeta>,
}

impl StationSet {
    pub fn new(stations: Vec<StationMeta>) -> Result<Self, GeoError> {
        let mut seen = std::collections::HashSet::new();
        for s in &stations {
            if !seen.insert(s.id.as_str()) {
                return Err(GeoError::InvalidStation(format!("duplicate station id `{}`", s.id)));
            }
            if !(-90.0..=90.0).contains(&s.lat) || !(-180.0..=180.0).contains(&s.lon) {
                return Err(GeoError::InvalidStation(format!(
                    "station `{}` has out-of-range coordinates ({}, {})",
                    s.id, s.lat, s.lon
                )));
            }
            if !s.elevation.is_finite() {
                return Err(GeoError::InvalidStation(format!("station `{}` has non-finite elevation", s.id)));
            }
        }
        Ok(Self { stations })
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn as_slice(&self) -> &[StationMeta] {
        &self.stations
    }

    pub fn iter(&self) -> std::slice::Iter<'_, StationMeta> {
        self.stations.iter()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }

    /// Stations at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, GeoError> {
        Self::new(indices.iter().map(|&i| self.stations[i].clone()).collect())
    }
}

impl TryFrom<Vec<StationMeta>> for StationSet {
    type Error = GeoError;
    fn try_from(v: Vec<StationMeta>) -> Result<Self, GeoError> {
        Self::new(v)
    }
}

impl From<StationSet> for Vec<StationMeta> {
    fn from(s: StationSet) -> Self {
        s.stations
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GeoError {
    #[error("invalid station: {0}")]
    InvalidStation(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("elevation raster does not cover ({lat}, {lon})")]
    Coverage { lat: f64, lon: f64 },
    #[error("stations {0} and {1} share a location")]
    DuplicateLocation(usize, usize),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` to `b`, degrees clockwise from north
/// in `[0, 360)`.
pub fn initial_bearing_deg(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dl = (b.lon - a.lon).to_radians();
    let y = dl.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
    y.atan2(x).to_degrees().rem_euclid(360.0)
}

#[cfg(test)]
mod tests;
