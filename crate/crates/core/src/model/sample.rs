use super::{HorizonWinds, ModelConfig, ModelContext, ModelError};
use crate::autodiff::Matrix;
use crate::pipeline::{window_starts, FeatureStats, ObservationPanel, PM25, WIND_DIR, WIND_SPEED};

/// One window ready for a forward pass.
#[derive(Clone, Debug)]
pub struct Sample {
    /// Step index of the first history step within its panel.
    pub start: usize,
    /// Normalized features, `history x (N x D)`.
    pub history: Vec<Matrix>,
    /// PM2.5 at the last history step, physical units.
    pub x_last: Vec<f64>,
    /// Exact advection operator per horizon step.
    pub advection: Vec<Matrix>,
    /// Normalized PM2.5 targets, `N x 1` per step. Empty when forecasting
    /// past the end of the data.
    pub target_z: Vec<Matrix>,
    pub target_raw: Vec<Matrix>,
}

/// A split's panels plus per-step advection operators, cut into windows on
/// demand.
#[derive(Clone, Debug)]
pub struct WindowSource {
    pub raw: ObservationPanel,
    pub norm: ObservationPanel,
    advection: Vec<Matrix>,
    pub history: usize,
    pub horizon: usize,
    pub winds: HorizonWinds,
}

impl WindowSource {
    /// `raw` must already be imputed; `stats` come from the training split.
    pub fn new(
        ctx: &ModelContext,
        cfg: &ModelConfig,
        raw: ObservationPanel,
        stats: &FeatureStats,
    ) -> Result<Self, ModelError> {
        let n = ctx.n();
        if raw.n() != n {
            return Err(ModelError::Config(format!("panel has {} stations, graph has {n}", raw.n())));
        }
        let norm = stats
            .normalize(&raw)
            .map_err(|e| ModelError::Config(e.to_string()))?;
        let advection = (0..raw.len())
            .map(|t| {
                let speed = raw.feature_at(t, WIND_SPEED);
                let dir = raw.feature_at(t, WIND_DIR);
                if speed.iter().chain(&dir).all(|v| v.is_finite()) {
                    ctx.advection(&speed, &dir)
                } else {
                    Ok(Matrix::zeros(n, n))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            raw,
            norm,
            advection,
            history: cfg.history,
            horizon: cfg.horizon,
            winds: cfg.horizon_winds,
        })
    }

    pub fn starts(&self, stride: usize) -> Vec<usize> {
        window_starts(&self.raw, self.history, self.horizon, stride)
    }

    fn inputs(&self, start: usize, with_targets: bool) -> Sample {
        let last = start + self.history - 1;
        let history = (start..=last).map(|t| self.norm.step_matrix(t)).collect();
        let advection = (0..self.horizon)
            .map(|s| match self.winds {
                HorizonWinds::Persist => self.advection[last].clone(),
                HorizonWinds::Observed if with_targets => self.advection[last + s].clone(),
                HorizonWinds::Observed => self.advection[last].clone(),
            })
            .collect();
        let (mut target_z, mut target_raw) = (Vec::new(), Vec::new());
        if with_targets {
            for t in last + 1..=last + self.horizon {
                target_z.push(Matrix::column(self.norm.feature_at(t, PM25)));
                target_raw.push(Matrix::column(self.raw.feature_at(t, PM25)));
            }
        }
        Sample {
            start,
            history,
            x_last: self.raw.feature_at(last, PM25),
            advection,
            target_z,
            target_raw,
        }
    }

    /// Window starting at `start` with its targets.
    pub fn sample(&self, start: usize) -> Sample {
        self.inputs(start, true)
    }

    /// Inputs from the last `history` steps, for forecasting beyond the data.
    pub fn latest(&self) -> Option<Sample> {
        let start = self.raw.len().checked_sub(self.history)?;
        self.raw
            .complete(start, self.raw.len())
            .then(|| self.inputs(start, false))
    }
}
