use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::panel::ObservationPanel;
use super::PipelineError;

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: ObservationPanel,
    pub val: ObservationPanel,
    pub test: ObservationPanel,
    pub manifest: SplitManifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRange {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    /// Step indices `first..last+1` within the full panel.
    pub first_step: usize,
    pub steps: usize,
}

/// Contents of `splits.json`. `end` is the last timestamp in each split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: SplitRange,
    pub val: SplitRange,
    pub test: SplitRange,
}

/// Cuts the panel into contiguous train/val/test segments. Boundaries are
/// floored; the test split takes the remainder. Each segment must hold at
/// least `min_len` steps (one full window).
pub fn split_chronological(panel: &ObservationPanel, ratios: [f64; 3], min_len: usize) -> Result<Splits, PipelineError> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(PipelineError::Shape(format!("split ratios must be positive, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    let len = panel.len();
    let n_train = (len as f64 * ratios[0] / total).floor() as usize;
    let n_val = (len as f64 * (ratios[0] + ratios[1]) / total).floor() as usize - n_train;
    let bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, len)];
    let names = ["train", "val", "test"];
    let mut ranges = Vec::with_capacity(3);
    for ((a, b), name) in bounds.iter().zip(names) {
        if b - a < min_len.max(1) {
            return Err(PipelineError::InsufficientData {
                split: name.to_string(),
                len: b - a,
                need: min_len.max(1),
            });
        }
        ranges.push(SplitRange {
            start: panel.times[*a],
            end: panel.times[b - 1],
            first_step: *a,
            steps: b - a,
        });
    }
    let test = ranges.pop().unwrap();
    let val = ranges.pop().unwrap();
    let train = ranges.pop().unwrap();
    Ok(Splits {
        train: panel.slice(bounds[0].0, bounds[0].1),
        val: panel.slice(bounds[1].0, bounds[1].1),
        test: panel.slice(bounds[2].0, bounds[2].1),
        manifest: SplitManifest { train, val, test },
    })
}
