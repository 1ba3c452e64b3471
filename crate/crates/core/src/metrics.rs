//! Point-forecast error metrics and the evaluation report layout.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("metrics need at least one value")]
    Empty,
    #[error("truth has {0} values, prediction has {1}")]
    Length(usize, usize),
}

fn check(x: &[f64], xh: &[f64]) -> Result<(), MetricsError> {
    if x.len() != xh.len() {
        return Err(MetricsError::Length(x.len(), xh.len()));
    }
    if x.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn mae(x: &[f64], xh: &[f64]) -> Result<f64, MetricsError> {
    check(x, xh)?;
    Ok(x.iter().zip(xh).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

pub fn rmse(x: &[f64], xh: &[f64]) -> Result<f64, MetricsError> {
    check(x, xh)?;
    Ok((x.iter().zip(xh).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64).sqrt())
}

/// Mean of `|x - xh| / ((|x| + |xh|) / 2)`, as a fraction. A pair with
/// `x = xh = 0` contributes 0.
pub fn smape(x: &[f64], xh: &[f64]) -> Result<f64, MetricsError> {
    check(x, xh)?;
    let s: f64 = x
        .iter()
        .zip(xh)
        .map(|(a, b)| {
            let den = (a.abs() + b.abs()) / 2.0;
            if den == 0.0 {
                0.0
            } else {
                (a - b).abs() / den
            }
        })
        .sum();
    Ok(s / x.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub smape: f64,
}

impl Metrics {
    pub fn compute(x: &[f64], xh: &[f64]) -> Result<Self, MetricsError> {
        Ok(Self {
            mae: mae(x, xh)?,
            rmse: rmse(x, xh)?,
            smape: smape(x, xh)?,
        })
    }
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Metrics,
    /// Absent when no target cell is a sudden-change point.
    pub sudden_change: Option<Metrics>,
    pub per_horizon: Vec<Metrics>,
    pub windows: usize,
    pub sudden_change_points: usize,
}

/// Pools truth/prediction pairs by horizon step and sudden-change flag.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    truth: Vec<Vec<f64>>,
    pred: Vec<Vec<f64>>,
    sudden_truth: Vec<f64>,
    sudden_pred: Vec<f64>,
    windows: usize,
}

impl MetricsAccumulator {
    pub fn new(horizon: usize) -> Self {
        Self {
            truth: vec![Vec::new(); horizon],
            pred: vec![Vec::new(); horizon],
            ..Self::default()
        }
    }

    /// `truth[s][i]`, `pred[s][i]`, `sudden[s][i]` for one window.
    pub fn add_window(&mut self, truth: &[Vec<f64>], pred: &[Vec<f64>], sudden: &[Vec<bool>]) {
        for s in 0..self.truth.len().min(truth.len()) {
            for i in 0..truth[s].len() {
                self.truth[s].push(truth[s][i]);
                self.pred[s].push(pred[s][i]);
                if sudden.get(s).and_then(|r| r.get(i)).copied().unwrap_or(false) {
                    self.sudden_truth.push(truth[s][i]);
                    self.sudden_pred.push(pred[s][i]);
                }
            }
        }
        self.windows += 1;
    }

    pub fn report(&self) -> Result<EvalReport, MetricsError> {
        let all_t: Vec<f64> = self.truth.iter().flatten().copied().collect();
        let all_p: Vec<f64> = self.pred.iter().flatten().copied().collect();
        let per_horizon = self
            .truth
            .iter()
            .zip(&self.pred)
            .map(|(t, p)| Metrics::compute(t, p))
            .collect::<Result<Vec<_>, _>>()?;
        let sudden_change = if self.sudden_truth.is_empty() {
            None
        } else {
            Some(Metrics::compute(&self.sudden_truth, &self.sudden_pred)?)
        };
        Ok(EvalReport {
            overall: Metrics::compute(&all_t, &all_p)?,
            sudden_change,
            per_horizon,
            windows: self.windows,
            sudden_change_points: self.sudden_truth.len(),
        })
    }
}
