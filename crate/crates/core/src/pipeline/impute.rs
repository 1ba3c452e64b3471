use super::panel::{ObservationPanel, FEATURES, GRID_HOURS};
use super::PipelineError;
use crate::geo::{haversine_km, StationSet};

/// Runs of missing steps shorter than this are linearly interpolated.
pub const MAX_INTERPOLATED_GAP_HOURS: f64 = 5.0;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImputeReport {
    pub neighbor_filled: usize,
    pub interpolated: usize,
    pub unfilled: usize,
}

/// Nearest-station fill followed by linear interpolation of short gaps.
///
/// Cells that survive both passes stay NaN; windows touching them are
/// skipped by [`window_starts`](super::window_starts).
pub fn impute(panel: &ObservationPanel, stations: &StationSet) -> Result<(ObservationPanel, ImputeReport), PipelineError> {
    let n = panel.n();
    let pos = panel
        .stations
        .iter()
        .map(|id| {
            stations
                .index_of(id)
                .map(|k| stations.as_slice()[k].position())
                .ok_or_else(|| PipelineError::UnknownStation(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    // Neighbours of each station sorted by distance, ties broken by id.
    let order: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut js: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            js.sort_by(|&a, &b| {
                haversine_km(pos[i], pos[a])
                    .total_cmp(&haversine_km(pos[i], pos[b]))
                    .then_with(|| panel.stations[a].cmp(&panel.stations[b]))
            });
            js
        })
        .collect();

    let mut out = panel.clone();
    let mut report = ImputeReport::default();
    for t in 0..panel.len() {
        for i in 0..n {
            for f in 0..FEATURES.len() {
                if !panel.is_missing(t, i, f) {
                    continue;
                }
                if let Some(&j) = order[i].iter().find(|&&j| !panel.is_missing(t, j, f)) {
                    out.set(t, i, f, panel.get(t, j, f));
                    report.neighbor_filled += 1;
                }
            }
        }
    }

    let max_steps = (MAX_INTERPOLATED_GAP_HOURS / GRID_HOURS as f64).ceil() as usize - 1;
    for i in 0..n {
        for f in 0..FEATURES.len() {
            let mut t = 0;
            while t < out.len() {
                if !out.is_missing(t, i, f) {
                    t += 1;
                    continue;
                }
                let start = t;
                while t < out.len() && out.is_missing(t, i, f) {
                    t += 1;
                }
                let gap = t - start;
                if start == 0 || t == out.len() || gap > max_steps {
                    report.unfilled += gap;
                    continue;
                }
                let (a, b) = (out.get(start - 1, i, f), out.get(t, i, f));
                for k in 0..gap {
                    let w = (k + 1) as f64 / (gap + 1) as f64;
                    out.set(start + k, i, f, a + w * (b - a));
                }
                report.interpolated += gap;
            }
        }
    }
    if report.unfilled > 0 {
        log::warn!("{} cells remain missing after imputation; windows touching them are dropped", report.unfilled);
    }
    Ok((out, report))
}
