use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Deserialize;

use dualode::geo::io::{read_graph_json, read_stations_csv, write_graph_json, write_stations_csv};
use dualode::geo::{build_advection_graph, build_diffusion_graph, build_geospatial_graph, ElevationField, WindConvention};
use dualode::model::HorizonWinds;
use dualode::ode::SolveSpec;
use dualode::physics::{DiffusionSign, Gate, PhysicsParams, PhysicsSystem, INTERVAL_HOURS};
use dualode::pipeline::synthetic::{generate_synthetic, SyntheticSpec};
use dualode::pipeline::{read_observations_csv, read_observations_csv_between, write_observations_csv};
use dualode::train::{self as training, evaluate_windows, forecast, prepare, Checkpoint, TrainConfig, TrainError};

pub fn build_graph(stations: &Path, elevation: Option<&Path>, d_theta: f64, m_theta: f64, out: &Path) -> Result<()> {
    let stations = read_stations_csv(stations).with_context(|| format!("reading {}", stations.display()))?;
    let field = ElevationField::load(elevation).context("reading elevation raster")?;
    let graph = build_geospatial_graph(&stations, &field, d_theta, m_theta)?;
    write_graph_json(out, &graph)?;
    log::info!("{} stations, {} edges -> {}", graph.n(), graph.edges().len(), out.display());
    Ok(())
}

pub fn gen_synthetic(spec: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let mut spec: SyntheticSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let s = generate_synthetic(&spec)?;
    fs::create_dir_all(out)?;
    write_stations_csv(&out.join("stations.csv"), &s.stations)?;
    write_graph_json(&out.join("graph.json"), &s.graph)?;
    write_observations_csv(&out.join("observations.csv"), &s.panel)?;
    fs::write(out.join("synthetic_truth.json"), serde_json::to_string_pretty(&s.truth)?)?;
    log::info!("{} stations x {} steps -> {}", s.panel.n(), s.panel.len(), out.display());
    Ok(())
}

pub struct SimulateArgs {
    pub graph: PathBuf,
    pub params: PathBuf,
    pub x0: PathBuf,
    pub hours: f64,
    pub out: PathBuf,
    pub output_step: f64,
    pub rtol: f64,
    pub atol: f64,
}

/// One value for every station, or one per station.
#[derive(Deserialize)]
#[serde(untagged)]
enum PerStation {
    One(f64),
    Each(Vec<f64>),
}

impl PerStation {
    fn expand(&self, n: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            Self::One(v) => Ok(vec![*v; n]),
            Self::Each(v) if v.len() == n => Ok(v.clone()),
            Self::Each(v) => bail!("{what} has {} entries, the graph has {n} stations", v.len()),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Wind {
    speed: PerStation,
    direction: PerStation,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateParams {
    k: f64,
    beta: PerStation,
    /// Fixed diffusion weight of the gate.
    #[serde(default = "half")]
    alpha: f64,
    wind: Option<Wind>,
    #[serde(default)]
    diffusion_sign: DiffusionSign,
    #[serde(default)]
    wind_convention: WindConvention,
}

fn half() -> f64 {
    0.5
}

#[derive(Deserialize)]
struct X0Row {
    station_id: String,
    value: f64,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    ensure!(a.hours > 0.0 && a.hours.is_finite(), "--hours must be positive");
    ensure!(a.output_step > 0.0, "--output-step must be positive");
    let graph = read_graph_json(&a.graph).with_context(|| format!("reading {}", a.graph.display()))?;
    let n = graph.n();
    let p: SimulateParams = serde_json::from_str(&fs::read_to_string(&a.params).with_context(|| format!("reading {}", a.params.display()))?)
        .with_context(|| format!("parsing {}", a.params.display()))?;
    ensure!((0.0..=1.0).contains(&p.alpha), "alpha must lie in [0, 1], got {}", p.alpha);

    let mut x0 = vec![f64::NAN; n];
    let mut rdr = csv::Reader::from_path(&a.x0).with_context(|| format!("reading {}", a.x0.display()))?;
    for row in rdr.deserialize::<X0Row>() {
        let row = row.with_context(|| format!("parsing {}", a.x0.display()))?;
        let i = graph.stations.index_of(&row.station_id).with_context(|| format!("unknown station `{}` in x0", row.station_id))?;
        x0[i] = row.value;
    }
    if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
        bail!("x0 has no value for station `{}`", graph.stations.as_slice()[i].id);
    }

    let (speed, dir) = match &p.wind {
        Some(w) => (w.speed.expand(n, "wind speed")?, w.direction.expand(n, "wind direction")?),
        None => (vec![0.0; n], vec![0.0; n]),
    };
    let params = PhysicsParams {
        k: p.k,
        beta: p.beta.expand(n, "beta")?,
    };
    let system = PhysicsSystem::exact(
        &build_diffusion_graph(&graph)?,
        &[build_advection_graph(&graph, &speed, &dir, p.wind_convention, 0)?],
        params,
        Gate::Fixed(p.alpha),
        p.diffusion_sign,
    )?;

    let steps = (a.hours / a.output_step).round() as usize;
    ensure!(
        (steps as f64 * a.output_step - a.hours).abs() < 1e-9 * a.hours,
        "--hours must be a multiple of --output-step"
    );
    let times: Vec<f64> = (0..=steps).map(|s| s as f64 * a.output_step).collect();
    let spec = SolveSpec::dopri5(times.clone()).with_tolerances(a.rtol, a.atol);
    let traj = system.solve(&x0, &times, &spec)?;

    fs::create_dir_all(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("trajectory.csv"))?;
    w.write_record(["time", "station", "value"])?;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        for (s, v) in graph.stations.iter().zip(x) {
            w.write_record([t.to_string(), s.id.clone(), v.to_string()])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(a.out.join("mass_budget.csv"))?;
    for row in system.mass_budget(&traj) {
        w.serialize(row)?;
    }
    w.flush()?;
    log::info!("{} stations over {} h -> {}", n, a.hours, a.out.display());
    Ok(())
}

pub fn train(config: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    cfg.validate()?;
    let graph = read_graph_json(&data.join("graph.json")).with_context(|| format!("reading {}/graph.json", data.display()))?;
    let panel = read_observations_csv(&data.join("observations.csv"), &graph.stations.ids())
        .with_context(|| format!("reading {}/observations.csv", data.display()))?;
    let prepared = prepare(&cfg.model, cfg.split, graph, &panel)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("splits.json"), serde_json::to_string_pretty(&prepared.manifest)?)?;

    let mut log_file = fs::File::create(out.join("metrics.jsonl"))?;
    let mut write_err = None;
    let result = training::train(&cfg, &prepared, |entry| {
        let line = serde_json::to_string(entry).expect("epoch log serializes");
        if let Err(e) = writeln!(log_file, "{line}") {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(e).context("writing metrics.jsonl");
    }
    match result {
        Ok(outcome) => {
            outcome.checkpoint.save(&out.join("checkpoint.json"))?;
            log::info!(
                "best epoch {} (val MAE {:.4}){}",
                outcome.checkpoint.epoch,
                outcome.checkpoint.val_mae,
                if outcome.stopped_early { ", stopped early" } else { "" }
            );
            Ok(())
        }
        Err(TrainError::NonFinite {
            what,
            epoch,
            batch,
            last_good,
        }) => {
            match last_good {
                Some(ck) => {
                    ck.save(&out.join("checkpoint.json"))?;
                    eprintln!("wrote last good checkpoint (epoch {}) to {}", ck.epoch, out.join("checkpoint.json").display());
                }
                None => eprintln!("no completed epoch; no checkpoint written"),
            }
            bail!("non-finite {what} at epoch {epoch}, batch {batch}")
        }
        Err(e) => Err(e.into()),
    }
}

pub fn predict(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let mut ck = Checkpoint::load(checkpoint)?;
    // Future winds are unknown at forecast time.
    ck.model.horizon_winds = HorizonWinds::Persist;
    let ctx = ck.context()?;
    let panel = read_observations_csv(&data.join("observations.csv"), &ctx.graph.stations.ids())
        .with_context(|| format!("reading {}/observations.csv", data.display()))?;
    let last = *panel.times.last().context("observations.csv has no rows")?;
    let src = ck.window_source(&ctx, &panel)?;
    let sample = src
        .latest()
        .context("the last history window has missing values that imputation could not fill")?;
    let model = ck.build_model()?;
    let pred = forecast(model.as_ref(), &ck.store()?, &ctx, &ck.model, &sample)?;

    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["timestamp", "station_id", "pm25"])?;
    for (s, row) in pred.iter().enumerate() {
        let t = last + chrono::Duration::hours((s as i64 + 1) * INTERVAL_HOURS as i64);
        for (station, v) in ctx.graph.stations.iter().zip(row) {
            w.write_record([t.to_rfc3339(), station.id.clone(), v.to_string()])?;
        }
    }
    w.flush()?;
    log::info!("{} steps from {} -> {}", pred.len(), last.to_rfc3339(), out.display());
    Ok(())
}

pub fn evaluate(checkpoint: &Path, data: &Path, report: &Path, access_log: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let ctx = ck.context()?;
    let test = &ck.splits.test;
    let panel = read_observations_csv_between(&data.join("observations.csv"), &ctx.graph.stations.ids(), Some((test.start, test.end)))
        .with_context(|| format!("reading {}/observations.csv", data.display()))?;
    if let Some(path) = access_log {
        let mut f = fs::File::create(path)?;
        for t in &panel.times {
            writeln!(f, "{}", t.to_rfc3339())?;
        }
    }
    let src = ck.window_source(&ctx, &panel)?;
    let model = ck.build_model()?;
    let stride = ck.model.horizon;
    let r = evaluate_windows(model.as_ref(), &ck.store()?, &ctx, &ck.model, &src, stride)?;
    ensure!(r.windows > 0, "the test split has no complete window");
    fs::write(report, serde_json::to_string_pretty(&r)?)?;
    log::info!("test MAE {:.4} over {} windows -> {}", r.overall.mae, r.windows, report.display());
    Ok(())
}
