//! Training, evaluation and forecasting on prepared station panels.

mod adam;
mod config;

use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use config::TrainConfig;

use crate::autodiff::{AutodiffError, ParamRecord, ParamStore, Tape};
use crate::data::DataError;
use crate::fusion::{total_loss, FusionError, StationScale};
use crate::geo::{GeoError, GeoGraph, StationMeta, StationSet};
use crate::metrics::{EvalReport, MetricsAccumulator, MetricsError};
use crate::ode::SolveError;
use crate::physics::PhysicsError;
use crate::model::{model_registry, ForecastModel, ModelConfig, ModelContext, ModelError, Sample, SolverMode, WindowSource};
use crate::pipeline::{
    impute, label_sudden_changes, split_chronological, FeatureStats, ObservationPanel, PipelineError, SplitManifest,
    PM25,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no complete windows in the {0} split")]
    NoWindows(&'static str),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}; training aborted")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
        /// Best checkpoint before the failure, if any epoch completed.
        last_good: Option<Box<Checkpoint>>,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Splits, imputation, statistics and window sources for one dataset.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub ctx: ModelContext,
    pub stats: FeatureStats,
    pub manifest: SplitManifest,
    pub train: WindowSource,
    pub val: WindowSource,
    pub test: WindowSource,
}

/// Mean absolute training PM2.5; physics states are divided by it.
fn physics_scale(train: &ObservationPanel) -> f64 {
    let xs: Vec<f64> = (0..train.len())
        .flat_map(|t| train.feature_at(t, PM25))
        .filter(|v| v.is_finite())
        .collect();
    let m = xs.iter().map(|v| v.abs()).sum::<f64>() / xs.len().max(1) as f64;
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn station_scale(stats: &FeatureStats) -> StationScale {
    StationScale {
        mean: stats.pm25_mean(),
        std: stats.pm25_std(),
    }
}

/// Splits chronologically, imputes each split on its own, fits feature
/// statistics on the training split and builds window sources.
pub fn prepare(model: &ModelConfig, split: [f64; 3], graph: GeoGraph, panel: &ObservationPanel) -> Result<Prepared, TrainError> {
    if panel.stations != graph.stations.ids() {
        return Err(TrainError::Config("panel stations do not match the graph's station order".into()));
    }
    let splits = split_chronological(panel, split, model.history + model.horizon)?;
    let (train, _) = impute(&splits.train, &graph.stations)?;
    let (val, _) = impute(&splits.val, &graph.stations)?;
    let (test, _) = impute(&splits.test, &graph.stations)?;
    let stats = FeatureStats::fit(&train);
    let ctx = ModelContext::new(model, graph, station_scale(&stats), physics_scale(&train))?;
    Ok(Prepared {
        train: WindowSource::new(&ctx, model, train, &stats)?,
        val: WindowSource::new(&ctx, model, val, &stats)?,
        test: WindowSource::new(&ctx, model, test, &stats)?,
        ctx,
        stats,
        manifest: splits.manifest,
    })
}

/// Contents of `checkpoint.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: IndexMap<String, ParamRecord>,
    pub stats: FeatureStats,
    pub physics_scale: f64,
    pub stations: Vec<StationMeta>,
    pub edges: Vec<(usize, usize)>,
    pub splits: SplitManifest,
    pub seed: u64,
    /// 1-based epoch the parameters come from.
    pub epoch: usize,
    pub val_mae: f64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn graph(&self) -> Result<GeoGraph, TrainError> {
        Ok(GeoGraph::from_edges(StationSet::new(self.stations.clone())?, &self.edges)?)
    }

    pub fn context(&self) -> Result<ModelContext, TrainError> {
        Ok(ModelContext::new(&self.model, self.graph()?, station_scale(&self.stats), self.physics_scale)?)
    }

    pub fn store(&self) -> Result<ParamStore, TrainError> {
        Ok(ParamStore::from_records(&self.params)?)
    }

    pub fn build_model(&self) -> Result<Box<dyn ForecastModel>, TrainError> {
        Ok(model_registry().build(&self.model, self.stations.len())?)
    }

    /// Imputes an evaluation panel and cuts it into windows with the
    /// training statistics.
    pub fn window_source(&self, ctx: &ModelContext, panel: &ObservationPanel) -> Result<WindowSource, TrainError> {
        let (panel, _) = impute(panel, &ctx.graph.stations)?;
        Ok(WindowSource::new(ctx, &self.model, panel, &self.stats)?)
    }
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_pred: f64,
    pub l_tcl: Option<f64>,
    pub l_total: f64,
    pub val_mae: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Forecast for one window in physical units, `[step][station]`.
pub fn forecast(
    model: &dyn ForecastModel,
    store: &ParamStore,
    ctx: &ModelContext,
    cfg: &ModelConfig,
    sample: &Sample,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let tape = Tape::new();
    let fw = model.forward(&tape, store, ctx, sample, SolverMode::inference(cfg))?;
    Ok(fw.raw(&ctx.scale))
}

/// Metrics over every window of `src` taken every `stride` steps.
pub fn evaluate_windows(
    model: &dyn ForecastModel,
    store: &ParamStore,
    ctx: &ModelContext,
    cfg: &ModelConfig,
    src: &WindowSource,
    stride: usize,
) -> Result<EvalReport, TrainError> {
    let starts = src.starts(stride);
    if starts.is_empty() {
        return Err(TrainError::NoWindows("evaluation"));
    }
    let mut acc = MetricsAccumulator::new(cfg.horizon);
    for start in starts {
        let sample = src.sample(start);
        let pred = forecast(model, store, ctx, cfg, &sample)?;
        let truth: Vec<Vec<f64>> = sample.target_raw.iter().map(|m| m.data.clone()).collect();
        let first = start + cfg.history;
        let sudden = label_sudden_changes(&src.raw, first..first + cfg.horizon);
        acc.add_window(&truth, &pred, &sudden);
    }
    Ok(acc.report()?)
}

struct BatchLoss {
    pred: f64,
    tcl: Option<f64>,
    total: f64,
}

fn train_batch(
    cfg: &TrainConfig,
    model: &dyn ForecastModel,
    store: &mut ParamStore,
    data: &Prepared,
    batch: &[usize],
) -> Result<BatchLoss, TrainError> {
    let tcl_cfg = cfg.tcl()?;
    let w = 1.0 / batch.len() as f64;
    store.zero_grad();
    let mut out = BatchLoss {
        pred: 0.0,
        tcl: None,
        total: 0.0,
    };
    for &start in batch {
        let sample = data.train.sample(start);
        let tape = Tape::new();
        let fw = model.forward(&tape, store, &data.ctx, &sample, SolverMode::training(&cfg.model))?;
        let latents = fw.latents.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
        let parts = total_loss(&sample.target_z, &fw.preds, latents, cfg.gamma, &tcl_cfg, cfg.pred_norm)?;
        out.pred += w * parts.pred.scalar();
        if let Some(t) = parts.tcl {
            *out.tcl.get_or_insert(0.0) += w * t.scalar();
        }
        out.total += w * parts.total.scalar();
        let grads = tape.backward(parts.total.scale(w))?;
        store.accumulate(&grads);
    }
    Ok(out)
}

/// Adam on `L_pred + gamma * L_tcl` with staged learning-rate decay,
/// gradient clipping and early stopping on validation MAE. The returned
/// checkpoint holds the best validation epoch. `on_epoch` sees every log
/// line as it is produced.
pub fn train(cfg: &TrainConfig, data: &Prepared, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let model = model_registry().build(&cfg.model, data.ctx.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    model.init(&mut store, &mut rng);
    let mut adam = Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    let mut starts = data.train.starts(cfg.train_stride);
    if starts.is_empty() {
        return Err(TrainError::NoWindows("train"));
    }
    if data.val.starts(cfg.eval_stride()).is_empty() {
        return Err(TrainError::NoWindows("validation"));
    }
    let snapshot = |store: &ParamStore, epoch: usize, val_mae: f64| Checkpoint {
        model: cfg.model.clone(),
        params: store.to_records(),
        stats: data.stats.clone(),
        physics_scale: data.ctx.physics_scale,
        stations: data.ctx.graph.stations.as_slice().to_vec(),
        edges: data.ctx.graph.edges().into_iter().map(|(i, j, _)| (i, j)).collect(),
        splits: data.manifest.clone(),
        seed: cfg.seed,
        epoch,
        val_mae,
    };

    let mut best: Option<Checkpoint> = None;
    let mut logs = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        starts.shuffle(&mut rng);
        let (mut pred, mut tcl, mut total) = (0.0, None::<f64>, 0.0);
        let batches: Vec<&[usize]> = starts.chunks(cfg.batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let abort = |what| TrainError::NonFinite {
                what,
                epoch: epoch + 1,
                batch: b,
                last_good: best.clone().map(Box::new),
            };
            let loss = match train_batch(cfg, model.as_ref(), &mut store, data, batch) {
                Err(e) if diverged(&e) => return Err(abort("solver state")),
                r => r?,
            };
            if !loss.total.is_finite() {
                return Err(abort("loss"));
            }
            let norm = store.grad_norm();
            if !norm.is_finite() {
                return Err(abort("gradient"));
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                store.scale_grads(cfg.clip_norm / norm);
            }
            adam.step(&mut store, lr);
            let share = batch.len() as f64 / starts.len() as f64;
            pred += share * loss.pred;
            total += share * loss.total;
            if let Some(t) = loss.tcl {
                *tcl.get_or_insert(0.0) += share * t;
            }
        }
        let val_mae = match evaluate_windows(model.as_ref(), &store, &data.ctx, &cfg.model, &data.val, cfg.eval_stride()) {
            Ok(r) => r.overall.mae,
            Err(e) if diverged(&e) => {
                return Err(TrainError::NonFinite {
                    what: "validation forecast",
                    epoch: epoch + 1,
                    batch: batches.len(),
                    last_good: best.map(Box::new),
                })
            }
            Err(e) => return Err(e),
        };
        let log = EpochLog {
            epoch: epoch + 1,
            l_pred: pred,
            l_tcl: tcl,
            l_total: total,
            val_mae,
            lr,
        };
        log::info!(
            "epoch {} loss {:.5} val_mae {:.4} lr {:.2e}",
            log.epoch,
            log.l_total,
            log.val_mae,
            lr
        );
        on_epoch(&log);
        logs.push(log);
        if best.as_ref().is_none_or(|b| val_mae < b.val_mae) {
            best = Some(snapshot(&store, epoch + 1, val_mae));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch ran"),
        logs,
        stopped_early,
    })
}

/// Solver blow-ups caused by the parameters rather than by the inputs.
fn diverged(e: &TrainError) -> bool {
    let source = match e {
        TrainError::Model(ModelError::Physics(PhysicsError::Solve { source, .. })) => source,
        TrainError::Model(ModelError::Data(DataError::Solve { source, .. })) => source,
        _ => return false,
    };
    matches!(source, SolveError::NonFinite { .. } | SolveError::Stiff { .. })
}
