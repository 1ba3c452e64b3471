use serde::{Deserialize, Serialize};

use super::panel::{ObservationPanel, FEATURES, PM25};
use super::PipelineError;

/// Per-station, per-feature mean and standard deviation, `N x D` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub n: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Fits on `train` only, ignoring missing cells. A feature with zero
    /// variance (or fewer than two values) falls back to scale 1.
    pub fn fit(train: &ObservationPanel) -> Self {
        let (n, d) = (train.n(), FEATURES.len());
        let mut mean = vec![0.0; n * d];
        let mut std = vec![1.0; n * d];
        let mut flat = Vec::new();
        for i in 0..n {
            for f in 0..d {
                let xs: Vec<f64> = (0..train.len())
                    .map(|t| train.get(t, i, f))
                    .filter(|v| v.is_finite())
                    .collect();
                if xs.is_empty() {
                    log::warn!("station {} feature {} has no training data", train.stations[i], FEATURES[f]);
                    continue;
                }
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
                mean[i * d + f] = m;
                if var > 0.0 {
                    std[i * d + f] = var.sqrt();
                } else {
                    flat.push(format!("{}/{}", train.stations[i], FEATURES[f]));
                }
            }
        }
        if !flat.is_empty() {
            log::warn!("zero variance, using unit scale: {}", flat.join(", "));
        }
        Self { n, mean, std }
    }

    fn check(&self, panel: &ObservationPanel) -> Result<(), PipelineError> {
        if panel.n() != self.n {
            return Err(PipelineError::Shape(format!(
                "stats for {} stations applied to a panel with {}",
                self.n,
                panel.n()
            )));
        }
        Ok(())
    }

    fn map(&self, panel: &ObservationPanel, f: impl Fn(f64, f64, f64) -> f64) -> Result<ObservationPanel, PipelineError> {
        self.check(panel)?;
        let d = FEATURES.len();
        let mut out = panel.clone();
        for t in 0..panel.len() {
            for i in 0..panel.n() {
                for k in 0..d {
                    let v = panel.get(t, i, k);
                    out.set(t, i, k, f(v, self.mean[i * d + k], self.std[i * d + k]));
                }
            }
        }
        Ok(out)
    }

    pub fn normalize(&self, panel: &ObservationPanel) -> Result<ObservationPanel, PipelineError> {
        self.map(panel, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, panel: &ObservationPanel) -> Result<ObservationPanel, PipelineError> {
        self.map(panel, |v, m, s| v * s + m)
    }

    pub fn pm25_mean(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.mean[i * FEATURES.len() + PM25]).collect()
    }

    pub fn pm25_std(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.std[i * FEATURES.len() + PM25]).collect()
    }
}
