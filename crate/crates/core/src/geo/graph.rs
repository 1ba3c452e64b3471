use serde::{Deserialize, Serialize};

use super::{haversine_km, initial_bearing_deg, ridge_height, ElevationField, GeoError, StationSet};
use crate::autodiff::Matrix;

pub const DEFAULT_D_THETA_KM: f64 = 300.0;
pub const DEFAULT_M_THETA_M: f64 = 1200.0;
/// (m/s)/km to 1/h.
pub const KMH_PER_MS: f64 = 3.6;

/// Projections this close to zero are treated as exactly perpendicular.
const PERPENDICULAR_EPS: f64 = 1e-12;

/// How wind-direction degrees are to be read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindConvention {
    /// Meteorological: the direction the wind blows from.
    #[default]
    From,
    /// The direction the wind blows toward.
    Toward,
}

impl WindConvention {
    pub fn heading_deg(self, dir: f64) -> f64 {
        match self {
            Self::From => dir + 180.0,
            Self::Toward => dir,
        }
    }
}

impl std::str::FromStr for WindConvention {
    type Err = GeoError;
    fn from_str(s: &str) -> Result<Self, GeoError> {
        match s {
            "from" => Ok(Self::From),
            "toward" => Ok(Self::Toward),
            other => Err(GeoError::Parse(format!("unknown wind convention `{other}` (from|toward)"))),
        }
    }
}

/// Transport-pathway graph over a station set.
#[derive(Clone, Debug, PartialEq)]
pub struct GeoGraph {
    pub stations: StationSet,
    adjacency: Vec<bool>,
    pub distance: Matrix,
}

impl GeoGraph {
    /// Graph with the given undirected edges; distances from the coordinates.
    pub fn from_edges(stations: StationSet, edges: &[(usize, usize)]) -> Result<Self, GeoError> {
        let n = stations.len();
        let distance = distance_matrix(&stations);
        let mut adjacency = vec![false; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(GeoError::Shape(format!("edge ({i}, {j}) invalid for {n} stations")));
            }
            adjacency[i * n + j] = true;
            adjacency[j * n + i] = true;
        }
        Ok(Self {
            stations,
            adjacency,
            distance,
        })
    }

    pub fn n(&self) -> usize {
        self.stations.len()
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n() + j]
    }

    /// Row-major `N x N` adjacency flags.
    pub fn adjacency(&self) -> &[bool] {
        &self.adjacency
    }

    /// Undirected edges `(i, j, km)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacent(i, j) {
                    out.push((i, j, self.distance.get(i, j)));
                }
            }
        }
        out
    }

    /// Adjacency as a 0/1 matrix.
    pub fn adjacency_matrix(&self) -> Matrix {
        let n = self.n();
        Matrix::from_vec(n, n, self.adjacency.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect())
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n()).filter(|&j| self.adjacent(i, j)).count()
    }
}

fn distance_matrix(stations: &StationSet) -> Matrix {
    let s = stations.as_slice();
    let n = s.len();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = haversine_km(s[i].position(), s[j].position());
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Edge `(i, j)` iff the stations are closer than `d_theta` km and no ridge
/// between them reaches `m_theta` metres above the higher endpoint.
pub fn build_geospatial_graph(
    stations: &StationSet,
    field: &ElevationField,
    d_theta: f64,
    m_theta: f64,
) -> Result<GeoGraph, GeoError> {
    if stations.len() < 2 {
        return Err(GeoError::Degenerate(format!(
            "a graph needs at least 2 stations, got {}",
            stations.len()
        )));
    }
    if !(d_theta > 0.0) {
        return Err(GeoError::Degenerate(format!("d_theta must be positive, got {d_theta}")));
    }
    let s = stations.as_slice();
    let mut edges = Vec::new();
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            let d = haversine_km(s[i].position(), s[j].position());
            if d >= d_theta {
                continue;
            }
            if ridge_height(&s[i], &s[j], field)? < m_theta {
                edges.push((i, j));
            }
        }
    }
    GeoGraph::from_edges(stations.clone(), &edges)
}

/// Static inverse-distance weights (1/km).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionGraph {
    pub weights: Matrix,
}

pub fn build_diffusion_graph(geo: &GeoGraph) -> Result<DiffusionGraph, GeoError> {
    let n = geo.n();
    let mut w = Matrix::zeros(n, n);
    for (i, j, d) in geo.edges() {
        if d <= 0.0 {
            return Err(GeoError::DuplicateLocation(i, j));
        }
        w.set(i, j, 1.0 / d);
        w.set(j, i, 1.0 / d);
    }
    Ok(DiffusionGraph { weights: w })
}

/// Directed wind-projected weights (1/h) at one time index.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvectionGraph {
    pub weights: Matrix,
    pub timestamp: usize,
}

/// `w[i][j] = max(0, 3.6 * v_i * cos(xi) / d_ij)` over geo edges, where `xi`
/// is the angle between station i's wind heading and the bearing i → j.
pub fn build_advection_graph(
    geo: &GeoGraph,
    wind_speed: &[f64],
    wind_dir: &[f64],
    convention: WindConvention,
    timestamp: usize,
) -> Result<AdvectionGraph, GeoError> {
    let n = geo.n();
    if wind_speed.len() != n || wind_dir.len() != n {
        return Err(GeoError::Shape(format!(
            "wind arrays have lengths {} and {}, expected {n}",
            wind_speed.len(),
            wind_dir.len()
        )));
    }
    if let Some(v) = wind_speed.iter().find(|v| !(**v >= 0.0)) {
        return Err(GeoError::Shape(format!("wind speed must be non-negative, got {v}")));
    }
    let s = geo.stations.as_slice();
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        if wind_speed[i] == 0.0 {
            continue;
        }
        let heading = convention.heading_deg(wind_dir[i]);
        for j in 0..n {
            if i == j || !geo.adjacent(i, j) {
                continue;
            }
            let d = geo.distance.get(i, j);
            if d <= 0.0 {
                return Err(GeoError::DuplicateLocation(i.min(j), i.max(j)));
            }
            let bearing = initial_bearing_deg(s[i].position(), s[j].position());
            let cos_xi = (heading - bearing).to_radians().cos();
            if cos_xi > PERPENDICULAR_EPS {
                w.set(i, j, KMH_PER_MS * wind_speed[i] * cos_xi / d);
            }
        }
    }
    Ok(AdvectionGraph { weights: w, timestamp })
}
