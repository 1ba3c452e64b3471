use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, Duration, Timelike, Utc};

use super::PipelineError;
use crate::autodiff::Matrix;

/// Feature columns, in panel order.
pub const FEATURES: [&str; 6] = ["pm25", "temp", "pressure", "humidity", "wind_speed", "wind_dir"];
pub const PM25: usize = 0;
pub const WIND_SPEED: usize = 4;
pub const WIND_DIR: usize = 5;
pub const GRID_HOURS: i64 = 3;

/// `T x N x D` observations on a strict 3-hour UTC grid. Missing cells are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationPanel {
    pub times: Vec<DateTime<Utc>>,
    pub stations: Vec<String>,
    values: Vec<f64>,
}

impl ObservationPanel {
    pub fn new(times: Vec<DateTime<Utc>>, stations: Vec<String>, values: Vec<f64>) -> Result<Self, PipelineError> {
        let d = FEATURES.len();
        if values.len() != times.len() * stations.len() * d {
            return Err(PipelineError::Shape(format!(
                "{} values for {} steps x {} stations x {d} features",
                values.len(),
                times.len(),
                stations.len()
            )));
        }
        for w in times.windows(2) {
            if w[1] - w[0] != Duration::hours(GRID_HOURS) {
                return Err(PipelineError::Grid(format!("{} follows {} on a 3-hour grid", w[1], w[0])));
            }
        }
        Ok(Self {
            times,
            stations,
            values,
        })
    }

    /// A panel of the given size with every cell missing.
    pub fn empty(start: DateTime<Utc>, len: usize, stations: Vec<String>) -> Self {
        let times = (0..len).map(|t| start + Duration::hours(GRID_HOURS * t as i64)).collect();
        let n = stations.len();
        Self {
            times,
            stations,
            values: vec![f64::NAN; len * n * FEATURES.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.stations.len()
    }

    pub fn d(&self) -> usize {
        FEATURES.len()
    }

    fn idx(&self, t: usize, i: usize, f: usize) -> usize {
        (t * self.n() + i) * FEATURES.len() + f
    }

    pub fn get(&self, t: usize, i: usize, f: usize) -> f64 {
        self.values[self.idx(t, i, f)]
    }

    pub fn set(&mut self, t: usize, i: usize, f: usize, v: f64) {
        let k = self.idx(t, i, f);
        self.values[k] = v;
    }

    pub fn is_missing(&self, t: usize, i: usize, f: usize) -> bool {
        self.get(t, i, f).is_nan()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    /// `N x D` features at step `t`.
    pub fn step_matrix(&self, t: usize) -> Matrix {
        let w = self.n() * FEATURES.len();
        Matrix::from_vec(self.n(), FEATURES.len(), self.values[t * w..(t + 1) * w].to_vec())
    }

    /// One feature across stations at step `t`.
    pub fn feature_at(&self, t: usize, f: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(t, i, f)).collect()
    }

    /// Steps `start..end` as a new panel.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let w = self.n() * FEATURES.len();
        Self {
            times: self.times[start..end].to_vec(),
            stations: self.stations.clone(),
            values: self.values[start * w..end * w].to_vec(),
        }
    }

    /// Whether every cell in steps `start..end` is present.
    pub fn complete(&self, start: usize, end: usize) -> bool {
        let w = self.n() * FEATURES.len();
        self.values[start * w..end * w].iter().all(|v| v.is_finite())
    }
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, PipelineError> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = chrono::NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(PipelineError::Parse(format!("timestamp `{s}` is not ISO-8601")))
}

fn on_grid(t: &DateTime<Utc>) -> bool {
    t.minute() == 0 && t.second() == 0 && t.nanosecond() == 0 && t.hour() as i64 % GRID_HOURS == 0
}

/// Reads `timestamp,station_id,pm25,temp,pressure,humidity,wind_speed,wind_dir`.
/// Hourly data is reduced to the 3-hour grid by keeping on-grid rows; empty
/// fields are missing. Station order follows `stations`.
pub fn read_observations_csv(path: &Path, stations: &[String]) -> Result<ObservationPanel, PipelineError> {
    read_observations_csv_between(path, stations, None)
}

/// Like [`read_observations_csv`], but rows outside the inclusive `span`
/// are discarded before their values are parsed.
pub fn read_observations_csv_between(
    path: &Path,
    stations: &[String],
    span: Option<(DateTime<Utc>, DateTime<Utc>)>,
) -> Result<ObservationPanel, PipelineError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| PipelineError::Parse(format!("{}: missing column `{name}`", path.display())))
    };
    let t_col = col("timestamp")?;
    let s_col = col("station_id")?;
    let f_cols = FEATURES.iter().map(|f| col(f)).collect::<Result<Vec<_>, _>>()?;
    let station_index: HashMap<&str, usize> = stations.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut rows: BTreeMap<DateTime<Utc>, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let t = parse_time(rec.get(t_col).unwrap_or("").trim())?;
        if !on_grid(&t) || span.is_some_and(|(a, b)| t < a || t > b) {
            continue;
        }
        let sid = rec.get(s_col).unwrap_or("").trim();
        let &i = station_index
            .get(sid)
            .ok_or_else(|| PipelineError::UnknownStation(sid.to_string()))?;
        let vals = f_cols
            .iter()
            .map(|&c| {
                let s = rec.get(c).unwrap_or("").trim();
                if s.is_empty() || s.eq_ignore_ascii_case("nan") {
                    Ok(f64::NAN)
                } else {
                    s.parse::<f64>()
                        .map_err(|e| PipelineError::Parse(format!("line {}: `{s}`: {e}", line + 2)))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.entry(t).or_default().push((i, vals));
    }
    let (Some(first), Some(last)) = (rows.keys().next().copied(), rows.keys().last().copied()) else {
        return Err(PipelineError::Parse(format!("{}: no on-grid rows", path.display())));
    };
    let len = ((last - first).num_hours() / GRID_HOURS) as usize + 1;
    let mut panel = ObservationPanel::empty(first, len, stations.to_vec());
    for (t, entries) in rows {
        let step = ((t - first).num_hours() / GRID_HOURS) as usize;
        for (i, vals) in entries {
            for (f, v) in vals.into_iter().enumerate() {
                panel.set(step, i, f, v);
            }
        }
    }
    Ok(panel)
}

pub fn write_observations_csv(path: &Path, panel: &ObservationPanel) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp", "station_id"];
    header.extend(FEATURES);
    w.write_record(&header)?;
    for (t, time) in panel.times.iter().enumerate() {
        let ts = time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        for (i, sid) in panel.stations.iter().enumerate() {
            let mut rec = vec![ts.clone(), sid.clone()];
            for f in 0..FEATURES.len() {
                let v = panel.get(t, i, f);
                rec.push(if v.is_nan() { String::new() } else { format!("{v}") });
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
