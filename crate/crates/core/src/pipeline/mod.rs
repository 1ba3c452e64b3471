//! Observation panels on the 3-hour grid and everything that prepares them
//! for training: CSV ingestion, imputation, normalization, chronological
//! splits, windowing, sudden-change labels and the synthetic generator.

mod impute;
mod normalize;
mod panel;
mod split;
pub mod synthetic;
mod windows;

pub use impute::{impute, ImputeReport, MAX_INTERPOLATED_GAP_HOURS};
pub use normalize::FeatureStats;
pub use panel::{
    read_observations_csv, read_observations_csv_between, write_observations_csv, ObservationPanel, FEATURES, GRID_HOURS, PM25, WIND_DIR,
    WIND_SPEED,
};
pub use split::{split_chronological, SplitManifest, SplitRange, Splits};
pub use windows::{label_series, label_sudden_changes, window_starts, SUDDEN_DELTA, SUDDEN_LEVEL};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("time grid error: {0}")]
    Grid(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{split} split has {len} steps, fewer than the {need} needed for one window")]
    InsufficientData { split: String, len: usize, need: usize },
    #[error("unknown station `{0}`")]
    UnknownStation(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("synthetic generation diverged at t = {t} h")]
    Divergence { t: f64 },
    #[error(transparent)]
    Geo(#[from] crate::geo::GeoError),
    #[error(transparent)]
    Physics(#[from] crate::physics::PhysicsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
