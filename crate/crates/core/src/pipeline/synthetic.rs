//! Seeded open-system generator used as ground truth by tests and the
//! acceptance suite. Concentrations follow the transport ODE with known
//! `k`, `beta` and a constant gate, plus an optional emission source.

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::panel::{ObservationPanel, FEATURES, PM25, WIND_DIR, WIND_SPEED};
use super::PipelineError;
use crate::geo::{
    build_advection_graph, build_diffusion_graph, build_geospatial_graph, initial_bearing_deg, ElevationField,
    GeoGraph, LatLon, StationMeta, StationSet, WindConvention,
};
use crate::ode::{self, SolveSpec, Trajectory};
use crate::physics::{DiffusionSign, Gate, PhysicsParams, PhysicsSystem, INTERVAL_HOURS};

const KM_PER_DEG: f64 = 111.195;
/// Solver tolerance for ground-truth integration.
pub const TRUTH_TOL: f64 = 1e-8;
const BLOWUP: f64 = 1e9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Grid,
    Random,
    /// West-to-east line.
    Line,
}

/// Wind direction is meteorological (where the wind blows from), degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "lowercase")]
pub enum WindRegime {
    Constant { speed: f64, direction: f64 },
    Rotating { speed: f64, direction: f64, deg_per_step: f64 },
    Gusty { speed: f64, direction: f64, gust: f64, jitter_deg: f64 },
    /// Blows away from the layout centroid at every station.
    Outward { speed: f64 },
}

impl Default for WindRegime {
    fn default() -> Self {
        Self::Constant {
            speed: 3.0,
            direction: 270.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub layout: Layout,
    /// Observed stations.
    pub n_stations: usize,
    pub spacing_km: f64,
    /// Line layout only: unobserved stations simulated past each end.
    pub hidden_boundary: usize,
    /// Graph distance threshold; defaults to 1.5 x spacing.
    pub d_theta_km: Option<f64>,
    pub center: [f64; 2],
    pub start: DateTime<Utc>,
    /// Recorded 3-hour steps.
    pub length: usize,
    /// Steps simulated and discarded before recording.
    pub burn_in: usize,
    pub k: f64,
    /// One value for every station, or one per simulated station.
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub wind: WindRegime,
    pub diffusion_sign: DiffusionSign,
    pub x0: f64,
    /// Relative spread of initial values, uniform in `x0 * (1 +- spread)`.
    pub x0_spread: f64,
    /// Mean emission rate, concentration units per hour.
    pub emission: f64,
    pub emission_spread: f64,
    /// Relative amplitude of a 24-hour cycle on the emission rate.
    pub diurnal_amplitude: f64,
    pub noise_sigma: f64,
    /// Interpret `noise_sigma` as a fraction of the clean PM2.5 std.
    pub noise_relative: bool,
    /// Shift every beta by the same amount so that total mass at the end of
    /// the record equals total mass at its start. A uniform shift `c` scales
    /// the source-free solution by `exp(c t)`, so the result is still an
    /// exact trajectory with constant parameters. Requires `emission = 0`.
    pub balance: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            layout: Layout::Grid,
            n_stations: 16,
            spacing_km: 40.0,
            hidden_boundary: 0,
            d_theta_km: None,
            center: [39.9, 116.4],
            start: DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z").unwrap().with_timezone(&Utc),
            length: 400,
            burn_in: 0,
            k: 8.0,
            beta: vec![-0.05],
            alpha: 0.5,
            wind: WindRegime::default(),
            diffusion_sign: DiffusionSign::Smoothing,
            x0: 80.0,
            x0_spread: 0.0,
            emission: 0.0,
            emission_spread: 0.0,
            diurnal_amplitude: 0.0,
            noise_sigma: 0.0,
            noise_relative: false,
            balance: false,
        }
    }
}

impl SyntheticSpec {
    pub fn total_stations(&self) -> usize {
        match self.layout {
            Layout::Line => self.n_stations + 2 * self.hidden_boundary,
            _ => self.n_stations,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Spec(m));
        if self.n_stations < 2 {
            return bad(format!("need at least 2 stations, got {}", self.n_stations));
        }
        if self.hidden_boundary > 0 && self.layout != Layout::Line {
            return bad("hidden_boundary requires the line layout".into());
        }
        if !(self.spacing_km > 0.0) {
            return bad(format!("spacing_km must be positive, got {}", self.spacing_km));
        }
        if self.length == 0 {
            return bad("length must be at least 1".into());
        }
        let total = self.total_stations();
        if self.beta.len() != 1 && self.beta.len() != total {
            return bad(format!("beta needs 1 or {total} values, got {}", self.beta.len()));
        }
        if let Some(b) = self.beta.iter().find(|b| !(**b >= -1.0)) {
            return bad(format!("beta {b} is below -1"));
        }
        if !(self.k >= 0.0) || !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("need k >= 0 and alpha in [0, 1], got k = {}, alpha = {}", self.k, self.alpha));
        }
        if !(self.noise_sigma >= 0.0) || !(self.emission >= 0.0) {
            return bad("noise_sigma and emission must be non-negative".into());
        }
        if self.balance && self.emission > 0.0 {
            return bad("balance requires emission = 0".into());
        }
        if !(0.0..=1.0).contains(&self.x0_spread)
            || !(0.0..=1.0).contains(&self.emission_spread)
            || !(0.0..=1.0).contains(&self.diurnal_amplitude)
        {
            return bad("spreads and diurnal amplitude must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Hidden parameters behind a generated panel, written as `synthetic_truth.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub seed: u64,
    pub k: f64,
    pub alpha: f64,
    /// Per observed station.
    pub beta: Vec<f64>,
    pub emission: Vec<f64>,
    pub diurnal_amplitude: f64,
    pub wind: WindRegime,
    pub diffusion_sign: DiffusionSign,
    pub hidden_boundary: usize,
    /// Absolute observation noise on PM2.5.
    pub noise_sigma: f64,
    pub station_ids: Vec<String>,
}

/// The exact generating dynamics over all simulated stations.
#[derive(Clone, Debug)]
pub struct SyntheticModel {
    pub system: PhysicsSystem,
    pub emission: Vec<f64>,
    pub diurnal_amplitude: f64,
    pub wind_speed: Vec<Vec<f64>>,
    pub wind_dir: Vec<Vec<f64>>,
}

impl SyntheticModel {
    pub fn source(&self, t: f64) -> f64 {
        1.0 + self.diurnal_amplitude * (2.0 * std::f64::consts::PI * t / 24.0).sin()
    }

    pub fn rhs(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let idx = self.system.interval_index(t);
        self.rhs_on(idx, t, x)
    }

    fn rhs_on(&self, idx: usize, t: f64, x: &[f64]) -> Vec<f64> {
        let s = self.source(t);
        let mut dx = self.system.rhs_on(idx, x);
        for (d, e) in dx.iter_mut().zip(&self.emission) {
            *d += e * s;
        }
        dx
    }

    /// Integrates at the truth tolerance, restarting at each 3-hour boundary.
    pub fn trajectory(&self, x0: &[f64], times: &[f64]) -> Result<Trajectory, PipelineError> {
        if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PipelineError::Spec("output times must be strictly increasing".into()));
        }
        let mut states = vec![x0.to_vec()];
        let mut y = x0.to_vec();
        let mut a = times[0];
        let mut next = 1;
        let t_end = *times.last().unwrap();
        while next < times.len() {
            let idx = self.system.interval_index(a);
            let b = if idx + 1 >= self.system.advection.len() {
                t_end
            } else {
                ((idx as f64 + 1.0) * INTERVAL_HOURS).min(t_end)
            };
            let mut seg = vec![a];
            let first = next;
            while next < times.len() && times[next] <= b {
                if times[next] > a {
                    seg.push(times[next]);
                }
                next += 1;
            }
            if seg.len() == 1 || *seg.last().unwrap() < b {
                seg.push(b);
            }
            let spec = SolveSpec::dopri5(seg).with_tolerances(TRUTH_TOL, TRUTH_TOL);
            let traj = ode::solve(&|t: f64, x: &[f64]| self.rhs_on(idx, t, x), &y, &spec)
                .map_err(|_| PipelineError::Divergence { t: a })?;
            if let Some(pos) = traj
                .states
                .iter()
                .position(|s| s.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP))
            {
                return Err(PipelineError::Divergence { t: traj.times[pos] });
            }
            states.extend(traj.states[1..1 + next - first].iter().cloned());
            y = traj.states.last().unwrap().clone();
            a = b;
        }
        Ok(Trajectory {
            times: times.to_vec(),
            states,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    /// Observed stations.
    pub stations: StationSet,
    pub graph: GeoGraph,
    pub panel: ObservationPanel,
    /// PM2.5 before observation noise, `[t][station]`, observed stations.
    pub clean: Vec<Vec<f64>>,
    pub truth: SyntheticTruth,
    /// Dynamics over every simulated station, hidden ones included.
    pub model: SyntheticModel,
    pub x0: Vec<f64>,
    /// Indices of observed stations among the simulated ones.
    pub observed: Vec<usize>,
}

fn offset(center: LatLon, east_km: f64, north_km: f64) -> LatLon {
    let lat = center.lat + north_km / KM_PER_DEG;
    let lon = center.lon + east_km / (KM_PER_DEG * center.lat.to_radians().cos());
    LatLon::new(lat, lon)
}

fn layout_positions(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = spec.total_stations();
    let s = spec.spacing_km;
    match spec.layout {
        Layout::Grid => {
            let cols = (n as f64).sqrt().ceil() as usize;
            (0..n).map(|i| ((i % cols) as f64 * s, (i / cols) as f64 * s)).collect()
        }
        Layout::Line => (0..n).map(|i| (i as f64 * s, 0.0)).collect(),
        Layout::Random => {
            let side = s * (n as f64).sqrt();
            let mut pts: Vec<(f64, f64)> = Vec::with_capacity(n);
            while pts.len() < n {
                let p = (rng.random_range(0.0..side), rng.random_range(0.0..side));
                if pts.iter().all(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() > 0.5 * s) {
                    pts.push(p);
                }
            }
            pts
        }
    }
}

fn winds(
    spec: &SyntheticSpec,
    stations: &StationSet,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = stations.len();
    let mut speed = Vec::with_capacity(steps);
    let mut dir = Vec::with_capacity(steps);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let outward: Vec<(f64, f64)> = {
        let c = stations.iter().fold((0.0, 0.0), |acc, s| (acc.0 + s.lat, acc.1 + s.lon));
        let c = LatLon::new(c.0 / n as f64, c.1 / n as f64);
        stations
            .iter()
            .map(|s| {
                let p = s.position();
                if (p.lat - c.lat).abs() < 1e-9 && (p.lon - c.lon).abs() < 1e-9 {
                    (0.0, 0.0)
                } else {
                    (1.0, (initial_bearing_deg(c, p) + 180.0).rem_euclid(360.0))
                }
            })
            .collect()
    };
    for step in 0..steps {
        let (v, d) = match &spec.wind {
            WindRegime::Constant { speed, direction } => (vec![*speed; n], vec![*direction; n]),
            WindRegime::Rotating {
                speed,
                direction,
                deg_per_step,
            } => (vec![*speed; n], vec![(direction + deg_per_step * step as f64).rem_euclid(360.0); n]),
            WindRegime::Gusty {
                speed,
                direction,
                gust,
                jitter_deg,
            } => {
                let v = (speed + gust * std_normal.sample(rng)).max(0.0);
                let d = (direction + jitter_deg * std_normal.sample(rng)).rem_euclid(360.0);
                (vec![v; n], vec![d; n])
            }
            WindRegime::Outward { speed } => (
                outward.iter().map(|o| o.0 * speed).collect(),
                outward.iter().map(|o| o.1).collect(),
            ),
        };
        speed.push(v);
        dir.push(d);
    }
    (speed, dir)
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Builds stations, integrates the truth and samples a noisy panel.
/// Identical specs give bit-identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic, PipelineError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.total_stations();
    let center = LatLon::new(spec.center[0], spec.center[1]);
    let stations = StationSet::new(
        layout_positions(spec, &mut rng)
            .into_iter()
            .enumerate()
            .map(|(i, (e, n))| {
                let p = offset(center, e, n);
                StationMeta::new(format!("S{i:03}"), p.lat, p.lon, 0.0)
            })
            .collect(),
    )?;
    let observed: Vec<usize> = (spec.hidden_boundary..spec.hidden_boundary + spec.n_stations).collect();

    let d_theta = spec.d_theta_km.unwrap_or(1.5 * spec.spacing_km);
    let geo = build_geospatial_graph(&stations, &ElevationField::Flat, d_theta, f64::INFINITY)?;
    let diffusion = build_diffusion_graph(&geo)?;
    let steps = spec.burn_in + spec.length;
    let (wind_speed, wind_dir) = winds(spec, &stations, steps, &mut rng);
    let advection = (0..steps)
        .map(|s| build_advection_graph(&geo, &wind_speed[s], &wind_dir[s], WindConvention::From, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut beta = if spec.beta.len() == 1 {
        vec![spec.beta[0]; total]
    } else {
        spec.beta.clone()
    };
    let x0: Vec<f64> = (0..total)
        .map(|_| spec.x0 * (1.0 + spec.x0_spread * rng.random_range(-1.0..=1.0)))
        .collect();
    let emission: Vec<f64> = (0..total)
        .map(|_| spec.emission * (1.0 + spec.emission_spread * rng.random_range(-1.0..=1.0)))
        .collect();
    let times: Vec<f64> = (0..steps).map(|s| s as f64 * INTERVAL_HOURS).collect();
    let simulate = |beta: &[f64]| -> Result<(SyntheticModel, Trajectory), PipelineError> {
        let system = PhysicsSystem::exact(
            &diffusion,
            &advection,
            PhysicsParams {
                k: spec.k,
                beta: beta.to_vec(),
            },
            Gate::Fixed(spec.alpha),
            spec.diffusion_sign,
        )?;
        let model = SyntheticModel {
            system,
            emission: emission.clone(),
            diurnal_amplitude: spec.diurnal_amplitude,
            wind_speed: wind_speed.clone(),
            wind_dir: wind_dir.clone(),
        };
        let traj = if steps == 1 {
            Trajectory {
                times: times.clone(),
                states: vec![x0.clone()],
            }
        } else {
            model.trajectory(&x0, &times)?
        };
        Ok((model, traj))
    };
    let (mut model, mut traj) = simulate(&beta)?;
    if spec.balance && spec.length > 1 {
        let mass = |s: &[f64]| s.iter().sum::<f64>();
        let (a, b) = (spec.burn_in, steps - 1);
        let growth = (mass(&traj.states[b]) / mass(&traj.states[a])).ln() / (times[b] - times[a]);
        beta.iter_mut().for_each(|v| *v -= growth);
        if let Some(v) = beta.iter().find(|v| **v < -1.0) {
            return Err(PipelineError::Spec(format!("balancing pushes beta to {v}, below -1")));
        }
        (model, traj) = simulate(&beta)?;
    }
    let clean: Vec<Vec<f64>> = traj.states[spec.burn_in..]
        .iter()
        .map(|s| observed.iter().map(|&i| s[i]).collect())
        .collect();
    let noise_sigma = if spec.noise_relative {
        let flat: Vec<f64> = clean.iter().flatten().copied().collect();
        spec.noise_sigma * std_dev(&flat)
    } else {
        spec.noise_sigma
    };

    let ids: Vec<String> = observed.iter().map(|&i| stations.as_slice()[i].id.clone()).collect();
    let mut panel = ObservationPanel::empty(spec.start, spec.length, ids.clone());
    let noise = Normal::new(0.0, 1.0).unwrap();
    for (t, row) in clean.iter().enumerate() {
        let hours = (spec.burn_in + t) as f64 * INTERVAL_HOURS;
        let day = 2.0 * std::f64::consts::PI * hours / 24.0;
        let week = 2.0 * std::f64::consts::PI * hours / (24.0 * 7.0);
        for (i, &x) in row.iter().enumerate() {
            let g = observed[i];
            let eps = noise.sample(&mut rng);
            panel.set(t, i, PM25, x + noise_sigma * eps);
            panel.set(t, i, 1, 12.0 + 8.0 * (day - 2.0).sin() + 0.3 * noise.sample(&mut rng));
            panel.set(t, i, 2, 1013.0 + 6.0 * week.sin() + 0.3 * noise.sample(&mut rng));
            panel.set(t, i, 3, 55.0 + 20.0 * day.cos() + 0.3 * noise.sample(&mut rng));
            panel.set(t, i, WIND_SPEED, wind_speed[spec.burn_in + t][g]);
            panel.set(t, i, WIND_DIR, wind_dir[spec.burn_in + t][g]);
        }
    }
    debug_assert_eq!(panel.d(), FEATURES.len());

    let sub = stations.subset(&observed)?;
    let graph = build_geospatial_graph(&sub, &ElevationField::Flat, d_theta, f64::INFINITY)?;
    let truth = SyntheticTruth {
        seed: spec.seed,
        k: spec.k,
        alpha: spec.alpha,
        beta: observed.iter().map(|&i| beta[i]).collect(),
        emission: observed.iter().map(|&i| emission[i]).collect(),
        diurnal_amplitude: spec.diurnal_amplitude,
        wind: spec.wind.clone(),
        diffusion_sign: spec.diffusion_sign,
        hidden_boundary: spec.hidden_boundary,
        noise_sigma,
        station_ids: ids,
    };
    Ok(Synthetic {
        stations: sub,
        graph,
        panel,
        clean,
        truth,
        model,
        x0,
        observed,
    })
}
