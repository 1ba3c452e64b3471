//! Forecast models over one window: the dual-branch model and the two
//! single-branch ablations, registered by name.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{AttentionMask, Linear};
use crate::autodiff::{AutodiffError, Matrix, ParamStore, Tape, Var};
use crate::data::{DataBranch, DataError};
use crate::fusion::{normalized_adjacency, FusionError, FusionStack, StationScale};
use crate::geo::{build_advection_graph, build_diffusion_graph, GeoError, GeoGraph, WindConvention};
use crate::ode::SolveSpec;
use crate::physics::{
    advection_operator, diffusion_operator, gate_layer, operator_registry, CoefficientEstimator, DiffusionSign,
    GateMode, PhysicsEncoder, PhysicsError, TapeGate, TapePhysics, TransportOperator,
};
use crate::pipeline::FEATURES;

mod sample;

pub use sample::{Sample, WindowSource};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Where horizon winds come from when building advection operators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HorizonWinds {
    /// Repeat the last observed wind field over the horizon.
    #[default]
    Persist,
    /// Use the winds recorded over the horizon (a perfect wind forecast).
    Observed,
}

/// Architecture and solver settings; stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: String,
    pub latent: usize,
    pub hidden: usize,
    pub gnn_layers: usize,
    /// `exact` or `learned`.
    pub operator: String,
    pub cheb_order: usize,
    pub gate: GateMode,
    pub diffusion_sign: DiffusionSign,
    pub wind_convention: WindConvention,
    pub horizon_winds: HorizonWinds,
    pub history: usize,
    pub horizon: usize,
    /// RK4 step used on the tape during training, hours.
    pub train_dt: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: "dual".into(),
            latent: 32,
            hidden: 32,
            gnn_layers: 3,
            operator: "exact".into(),
            cheb_order: 3,
            gate: GateMode::Learned,
            diffusion_sign: DiffusionSign::Smoothing,
            wind_convention: WindConvention::From,
            horizon_winds: HorizonWinds::Persist,
            history: 24,
            horizon: 24,
            train_dt: 1.5,
            rtol: 1e-3,
            atol: 1e-3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.latent == 0 || self.hidden == 0 || self.gnn_layers == 0 {
            return bad("latent, hidden and gnn_layers must be positive");
        }
        if self.history < 2 || self.horizon == 0 {
            return bad("history must be at least 2 and horizon at least 1");
        }
        if !(self.train_dt > 0.0) || !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return bad("train_dt, rtol and atol must be positive");
        }
        if self.cheb_order == 0 {
            return bad("cheb_order must be at least 1");
        }
        Ok(())
    }

    pub fn solve_template(&self) -> SolveSpec {
        SolveSpec::dopri5(vec![0.0, 1.0]).with_tolerances(self.rtol, self.atol)
    }
}

/// Graph-derived constants and unit scales shared by every window.
#[derive(Clone, Debug)]
pub struct ModelContext {
    pub graph: GeoGraph,
    /// Exact diffusion operator (without `k`).
    pub diffusion: Matrix,
    pub mask: AttentionMask,
    pub a_hat: Matrix,
    /// PM2.5 z-score per station.
    pub scale: StationScale,
    /// Physics states are PM2.5 divided by this.
    pub physics_scale: f64,
    /// Unit of the estimated diffusion coefficient: `k_unit` times the mean
    /// edge weight is a rate of 0.1 per hour.
    pub k_unit: f64,
    pub convention: WindConvention,
}

impl ModelContext {
    pub fn new(cfg: &ModelConfig, graph: GeoGraph, scale: StationScale, physics_scale: f64) -> Result<Self, ModelError> {
        let n = graph.n();
        if scale.mean.len() != n || scale.std.len() != n {
            return Err(ModelError::Config(format!("PM2.5 stats cover {} stations, graph has {n}", scale.mean.len())));
        }
        if !(physics_scale > 0.0) {
            return Err(ModelError::Config(format!("physics scale must be positive, got {physics_scale}")));
        }
        let weights = build_diffusion_graph(&graph)?.weights;
        let edge_weights: Vec<f64> = weights.data.iter().copied().filter(|w| *w > 0.0).collect();
        let k_unit = if edge_weights.is_empty() {
            1.0
        } else {
            0.1 * edge_weights.len() as f64 / edge_weights.iter().sum::<f64>()
        };
        let diffusion = diffusion_operator(&weights, cfg.diffusion_sign);
        let mask = AttentionMask::from_adjacency(n, graph.adjacency())?;
        let a_hat = normalized_adjacency(n, graph.adjacency())?;
        Ok(Self {
            graph,
            diffusion,
            mask,
            a_hat,
            scale,
            physics_scale,
            k_unit,
            convention: cfg.wind_convention,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Exact advection operator for one wind field.
    pub fn advection(&self, speed: &[f64], dir: &[f64]) -> Result<Matrix, ModelError> {
        let g = build_advection_graph(&self.graph, speed, dir, self.convention, 0)?;
        Ok(advection_operator(&g.weights))
    }
}

/// How the horizon is integrated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverMode {
    /// Fixed-step RK4 recorded on the tape (training).
    Tape { dt: f64 },
    /// Adaptive dopri5 on plain values; results enter the tape as constants.
    Adaptive { rtol: f64, atol: f64 },
}

impl SolverMode {
    pub fn training(cfg: &ModelConfig) -> Self {
        Self::Tape { dt: cfg.train_dt }
    }

    pub fn inference(cfg: &ModelConfig) -> Self {
        Self::Adaptive {
            rtol: cfg.rtol,
            atol: cfg.atol,
        }
    }
}

/// Output of one forward pass.
pub struct Forward<'t> {
    /// Normalized PM2.5 per horizon step, `N x 1`.
    pub preds: Vec<Var<'t>>,
    /// Physics and data latents per step, present for the dual model.
    pub latents: Option<(Vec<Var<'t>>, Vec<Var<'t>>)>,
    pub k: Option<f64>,
    pub beta: Option<Vec<f64>>,
}

impl Forward<'_> {
    /// Predictions in physical units, `[step][station]`.
    pub fn raw(&self, scale: &StationScale) -> Vec<Vec<f64>> {
        self.preds
            .iter()
            .map(|p| {
                p.value()
                    .data
                    .iter()
                    .enumerate()
                    .map(|(i, z)| z * scale.std[i] + scale.mean[i])
                    .collect()
            })
            .collect()
    }
}

pub trait ForecastModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng);
    fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        ctx: &ModelContext,
        sample: &Sample,
        solver: SolverMode,
    ) -> Result<Forward<'t>, ModelError>;
}

type Factory = fn(&ModelConfig, usize) -> Result<Box<dyn ForecastModel>, ModelError>;

pub struct ModelRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register("dual", |c, n| Ok(Box::new(DualModel::new(c, n)?)));
        r.register("physics", |c, n| Ok(Box::new(PhysicsOnly::new(c, n)?)));
        r.register("data", |c, n| Ok(Box::new(DataOnly::new(c, n)?)));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    /// Builds the model named by `cfg.variant` for `n` stations.
    pub fn build(&self, cfg: &ModelConfig, n: usize) -> Result<Box<dyn ForecastModel>, ModelError> {
        cfg.validate()?;
        let f = self.factories.get(cfg.variant.as_str()).ok_or_else(|| {
            ModelError::Config(format!(
                "unknown model `{}` (known: {})",
                cfg.variant,
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        f(cfg, n)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().copied()
    }
}

pub fn model_registry() -> &'static ModelRegistry {
    static R: OnceLock<ModelRegistry> = OnceLock::new();
    R.get_or_init(ModelRegistry::with_defaults)
}

fn constants<'t>(tape: &'t Tape, ms: &[Matrix]) -> Vec<Var<'t>> {
    ms.iter().map(|m| tape.constant(m.clone())).collect()
}

struct PhysicsRun<'t> {
    /// Scaled PM2.5 per horizon step.
    trajectory: Vec<Var<'t>>,
    k: f64,
    beta: Vec<f64>,
}

/// Coefficient estimator, gate and transport operators.
struct PhysicsParts {
    estimator: CoefficientEstimator,
    gate: Linear,
    gate_mode: GateMode,
    operator: Box<dyn TransportOperator>,
    horizon: usize,
}

const PHYSICS: &str = "physics";

impl PhysicsParts {
    fn new(cfg: &ModelConfig, n: usize) -> Result<Self, ModelError> {
        Ok(Self {
            estimator: CoefficientEstimator::new(&format!("{PHYSICS}.estimator"), FEATURES.len(), cfg.hidden, n),
            gate: gate_layer(PHYSICS),
            gate_mode: cfg.gate,
            operator: operator_registry().create(&cfg.operator, cfg.cheb_order)?,
            horizon: cfg.horizon,
        })
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.estimator.init(store, rng);
        if self.gate_mode == GateMode::Learned {
            self.gate.init(store, rng);
        }
        self.operator.init(store, &format!("{PHYSICS}.op.diffusion"));
        self.operator.init(store, &format!("{PHYSICS}.op.advection"));
    }

    fn run<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        ctx: &ModelContext,
        sample: &Sample,
        solver: SolverMode,
    ) -> Result<PhysicsRun<'t>, ModelError> {
        let history = constants(tape, &sample.history);
        let (k, beta) = self.estimator.estimate(tape, store, &history)?;
        let k = k.scale(ctx.k_unit);
        let gate = match self.gate_mode {
            GateMode::Learned => TapeGate::Learned(self.gate.bind(tape, store)?),
            GateMode::Diffusion => TapeGate::Fixed(1.0),
            GateMode::Advection => TapeGate::Fixed(0.0),
        };
        let phys = TapePhysics::bind(
            tape,
            store,
            self.operator.as_ref(),
            PHYSICS,
            &ctx.diffusion,
            &sample.advection,
            k,
            beta,
            gate,
        )?;
        let x0: Vec<f64> = sample.x_last.iter().map(|x| x / ctx.physics_scale).collect();
        let trajectory = match solver {
            SolverMode::Tape { dt } => phys.forecast(tape.constant(Matrix::column(x0)), self.horizon, dt)?,
            SolverMode::Adaptive { rtol, atol } => {
                let template = SolveSpec::dopri5(vec![0.0, 1.0]).with_tolerances(rtol, atol);
                phys.system()?
                    .forecast(&x0, self.horizon, &template)?
                    .into_iter()
                    .map(|s| tape.constant(Matrix::column(s)))
                    .collect()
            }
        };
        Ok(PhysicsRun {
            trajectory,
            k: k.scalar(),
            beta: beta.value().data,
        })
    }
}

fn data_latents<'t>(
    data: &DataBranch,
    tape: &'t Tape,
    store: &ParamStore,
    ctx: &ModelContext,
    sample: &Sample,
    horizon: usize,
    solver: SolverMode,
) -> Result<Vec<Var<'t>>, ModelError> {
    let history = constants(tape, &sample.history);
    let z0 = data.encode_history(tape, store, &history)?;
    let interval = crate::physics::INTERVAL_HOURS;
    Ok(match solver {
        SolverMode::Tape { dt } => data.solve_tape(tape, store, z0, &ctx.mask, horizon, interval, dt)?,
        SolverMode::Adaptive { rtol, atol } => {
            let times: Vec<f64> = (0..=horizon).map(|s| s as f64 * interval).collect();
            let template = SolveSpec::dopri5(vec![0.0, 1.0]).with_tolerances(rtol, atol);
            let zs = data.solve_values(store, &z0.value(), &ctx.mask, &times, &template)?;
            constants(tape, &zs)
        }
    })
}

/// Both branches, latent alignment and GNN fusion.
pub struct DualModel {
    physics: PhysicsParts,
    encoder: PhysicsEncoder,
    data: DataBranch,
    fusion: FusionStack,
    horizon: usize,
}

impl DualModel {
    pub fn new(cfg: &ModelConfig, n: usize) -> Result<Self, ModelError> {
        Ok(Self {
            physics: PhysicsParts::new(cfg, n)?,
            encoder: PhysicsEncoder::new(&format!("{PHYSICS}.encoder"), cfg.latent),
            data: DataBranch::new("data", FEATURES.len(), cfg.hidden, cfg.latent),
            fusion: FusionStack::new("fusion", cfg.latent, cfg.gnn_layers)?,
            horizon: cfg.horizon,
        })
    }
}

impl ForecastModel for DualModel {
    fn name(&self) -> &'static str {
        "dual"
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.physics.init(store, rng);
        self.encoder.init(store, rng);
        self.data.init(store, rng);
        self.fusion.init(store, rng);
    }

    fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        ctx: &ModelContext,
        sample: &Sample,
        solver: SolverMode,
    ) -> Result<Forward<'t>, ModelError> {
        let phys = self.physics.run(tape, store, ctx, sample, solver)?;
        let zp = self.encoder.encode(tape, store, &phys.trajectory)?;
        let zd = data_latents(&self.data, tape, store, ctx, sample, self.horizon, solver)?;
        let a_hat = tape.constant(ctx.a_hat.clone());
        let preds = zp
            .iter()
            .zip(&zd)
            .map(|(&p, &d)| {
                let h = self.fusion.fuse(tape, store, p, d, a_hat)?;
                self.fusion.decode(tape, store, h)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Forward {
            preds,
            latents: Some((zp, zd)),
            k: Some(phys.k),
            beta: Some(phys.beta),
        })
    }
}

/// Physics branch alone; its trajectory is the forecast.
pub struct PhysicsOnly {
    physics: PhysicsParts,
}

impl PhysicsOnly {
    pub fn new(cfg: &ModelConfig, n: usize) -> Result<Self, ModelError> {
        Ok(Self {
            physics: PhysicsParts::new(cfg, n)?,
        })
    }
}

impl ForecastModel for PhysicsOnly {
    fn name(&self) -> &'static str {
        "physics"
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.physics.init(store, rng);
    }

    fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        ctx: &ModelContext,
        sample: &Sample,
        solver: SolverMode,
    ) -> Result<Forward<'t>, ModelError> {
        let phys = self.physics.run(tape, store, ctx, sample, solver)?;
        let preds = phys
            .trajectory
            .iter()
            .map(|x| ctx.scale.normalize(x.scale(ctx.physics_scale)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Forward {
            preds,
            latents: None,
            k: Some(phys.k),
            beta: Some(phys.beta),
        })
    }
}

/// Latent ODE with graph-masked attention and a linear decoder.
pub struct DataOnly {
    data: DataBranch,
    decoder: Linear,
    horizon: usize,
}

impl DataOnly {
    pub fn new(cfg: &ModelConfig, _n: usize) -> Result<Self, ModelError> {
        Ok(Self {
            data: DataBranch::new("data", FEATURES.len(), cfg.hidden, cfg.latent),
            decoder: Linear::new("data.decoder", cfg.latent, 1),
            horizon: cfg.horizon,
        })
    }
}

impl ForecastModel for DataOnly {
    fn name(&self) -> &'static str {
        "data"
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.data.init(store, rng);
        self.decoder.init(store, rng);
    }

    fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        ctx: &ModelContext,
        sample: &Sample,
        solver: SolverMode,
    ) -> Result<Forward<'t>, ModelError> {
        let zd = data_latents(&self.data, tape, store, ctx, sample, self.horizon, solver)?;
        let dec = self.decoder.bind(tape, store)?;
        let preds = zd.iter().map(|&z| dec.forward(z)).collect::<Result<Vec<_>, _>>()?;
        Ok(Forward {
            preds,
            latents: None,
            k: None,
            beta: None,
        })
    }
}
