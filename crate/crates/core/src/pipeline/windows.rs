use super::panel::{ObservationPanel, PM25};

pub const SUDDEN_LEVEL: f64 = 75.0;
pub const SUDDEN_DELTA: f64 = 20.0;

/// Start indices of complete `history + horizon` windows taken every
/// `stride` steps. Windows touching a missing cell are skipped.
pub fn window_starts(panel: &ObservationPanel, history: usize, horizon: usize, stride: usize) -> Vec<usize> {
    let span = history + horizon;
    if panel.len() < span || stride == 0 {
        return Vec::new();
    }
    (0..=panel.len() - span)
        .step_by(stride)
        .filter(|&s| panel.complete(s, s + span))
        .collect()
}

/// Flags step `t` when `x[t] > 75` and the move to `t + 1` exceeds 20.
/// The last step has no successor and is never flagged.
pub fn label_series(x: &[f64]) -> Vec<bool> {
    let mut out = vec![false; x.len()];
    for t in 0..x.len().saturating_sub(1) {
        out[t] = x[t] > SUDDEN_LEVEL && (x[t + 1] - x[t]).abs() > SUDDEN_DELTA;
    }
    out
}

/// Sudden-change mask over `steps` of the panel's PM2.5, `[t][station]`.
/// The successor of the last requested step is read from the panel when
/// it exists.
pub fn label_sudden_changes(panel: &ObservationPanel, steps: std::ops::Range<usize>) -> Vec<Vec<bool>> {
    let end = (steps.end + 1).min(panel.len());
    let mut mask = vec![vec![false; panel.n()]; steps.len()];
    for i in 0..panel.n() {
        let series: Vec<f64> = (steps.start..end).map(|t| panel.get(t, i, PM25)).collect();
        for (t, flag) in label_series(&series).into_iter().take(steps.len()).enumerate() {
            mask[t][i] = flag;
        }
    }
    mask
}
