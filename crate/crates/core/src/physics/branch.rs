//! Tape-side pieces of the physics branch, used for training.

use rand::Rng;

use super::{Gate, PhysicsError, PhysicsParams, PhysicsSystem, TransportOperator, INTERVAL_HOURS};
use crate::autodiff::nn::{BoundLinear, GruCell, Linear};
use crate::autodiff::{concat_cols, Matrix, ParamStore, Tape, Var};
use crate::ode::rk4_integrate;

/// GRU over the feature history of every station, then two heads:
/// `k = softplus(mean_i u_i)` and `beta_i = softplus(v_i + b_i) - 1`,
/// where `b` is a learned per-station offset.
#[derive(Clone, Debug)]
pub struct CoefficientEstimator {
    pub gru: GruCell,
    pub k_head: Linear,
    pub beta_head: Linear,
    pub station_bias: String,
    pub n: usize,
}

/// Offset `b` with `softplus(b) - 1 = 0`: a closed system at initialisation.
pub const BETA_NEUTRAL: f64 = 0.541_324_854_612_918;

impl CoefficientEstimator {
    pub fn new(prefix: &str, d_in: usize, hidden: usize, n: usize) -> Self {
        Self {
            gru: GruCell::new(format!("{prefix}.gru"), d_in, hidden),
            k_head: Linear::new(format!("{prefix}.k"), hidden, 1),
            beta_head: Linear::new(format!("{prefix}.beta"), hidden, 1),
            station_bias: format!("{prefix}.beta_station"),
            n,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.gru.init(store, rng);
        self.k_head.init(store, rng);
        self.beta_head.init(store, rng);
        store.insert(self.station_bias.clone(), Matrix::filled(self.n, 1, BETA_NEUTRAL));
    }

    /// `history[t]` is the `N x D` feature matrix at step `t`. Returns
    /// `(k: 1 x 1, beta: N x 1)`.
    pub fn estimate<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        history: &[Var<'t>],
    ) -> Result<(Var<'t>, Var<'t>), PhysicsError> {
        if history.len() < 2 {
            return Err(PhysicsError::ShortHistory(history.len()));
        }
        if history[0].rows() != self.n {
            return Err(PhysicsError::Shape(format!(
                "history has {} stations, estimator expects {}",
                history[0].rows(),
                self.n
            )));
        }
        let gru = self.gru.bind(tape, store)?;
        let h = *gru.run(history)?.last().unwrap();
        let k = self.k_head.bind(tape, store)?.forward(h)?.mean().softplus();
        let bias = tape.param(store, &self.station_bias)?;
        let beta = (self.beta_head.bind(tape, store)?.forward(h)? + bias).softplus().offset(-1.0);
        Ok((k, beta))
    }
}

/// Per-station GRU over the physics trajectory, one latent per step.
#[derive(Clone, Debug)]
pub struct PhysicsEncoder {
    pub gru: GruCell,
}

impl PhysicsEncoder {
    pub fn new(prefix: &str, latent: usize) -> Self {
        Self {
            gru: GruCell::new(prefix, 1, latent),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.gru.init(store, rng);
    }

    /// `(tau) x (N x 1)` to `(tau) x (N x d)`.
    pub fn encode<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        trajectory: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>, PhysicsError> {
        if trajectory.is_empty() {
            return Err(PhysicsError::Shape("cannot encode an empty trajectory".into()));
        }
        Ok(self.gru.bind(tape, store)?.run(trajectory)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum TapeGate<'t> {
    /// Linear map `[diff, adv] -> logit` shared by all stations.
    Learned(BoundLinear<'t>),
    Fixed(f64),
}

/// Gate parameters live under this prefix (`.weight` 2 x 1, `.bias` 1 x 1).
pub fn gate_layer(prefix: &str) -> Linear {
    Linear::new(format!("{prefix}.gate"), 2, 1)
}

/// The boundary-aware right-hand side bound on a tape.
#[derive(Clone, Debug)]
pub struct TapePhysics<'t> {
    pub diffusion: Var<'t>,
    pub advection: Vec<Var<'t>>,
    /// `1 x 1`.
    pub k: Var<'t>,
    /// `N x 1`.
    pub beta: Var<'t>,
    pub gate: TapeGate<'t>,
    pub interval: f64,
}

impl<'t> TapePhysics<'t> {
    /// Binds effective operators for the given exact bases.
    #[allow(clippy::too_many_arguments)]
    pub fn bind(
        tape: &'t Tape,
        store: &ParamStore,
        operator: &dyn TransportOperator,
        prefix: &str,
        diffusion_base: &Matrix,
        advection_bases: &[Matrix],
        k: Var<'t>,
        beta: Var<'t>,
        gate: TapeGate<'t>,
    ) -> Result<Self, PhysicsError> {
        if advection_bases.is_empty() {
            return Err(PhysicsError::Shape("at least one advection operator is required".into()));
        }
        let diffusion = operator.effective(tape, store, &format!("{prefix}.op.diffusion"), diffusion_base)?;
        let advection = advection_bases
            .iter()
            .map(|b| operator.effective(tape, store, &format!("{prefix}.op.advection"), b))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            diffusion,
            advection,
            k,
            beta,
            gate,
            interval: INTERVAL_HOURS,
        })
    }

    pub fn rhs_on(&self, idx: usize, x: Var<'t>) -> Var<'t> {
        let adv_op = self.advection[idx.min(self.advection.len() - 1)];
        let diff = self.diffusion.matmul(x).mul_scalar(self.k);
        let adv = adv_op.matmul(x);
        let alpha = match self.gate {
            TapeGate::Learned(lin) => concat_cols(&[diff, adv]).matmul(lin.weight).add_row(lin.bias).sigmoid(),
            TapeGate::Fixed(a) => x.tape().constant(Matrix::filled(x.rows(), 1, a)),
        };
        let one_minus = alpha.scale(-1.0).offset(1.0);
        alpha * diff + one_minus * adv + self.beta * x
    }

    /// Fixed-step RK4 through the horizon; one output per interval.
    pub fn forecast(&self, x0: Var<'t>, steps: usize, dt: f64) -> Result<Vec<Var<'t>>, PhysicsError> {
        let mut y = x0;
        let mut out = Vec::with_capacity(steps);
        for s in 0..steps {
            let states = rk4_integrate(
                |_t, y: &Var<'t>| Ok::<_, PhysicsError>(self.rhs_on(s, *y)),
                y,
                &[0.0, self.interval],
                dt,
            )?;
            y = *states.last().unwrap();
            out.push(y);
        }
        Ok(out)
    }

    /// Detached copy with plain values, for adaptive inference solves.
    pub fn system(&self) -> Result<PhysicsSystem, PhysicsError> {
        let gate = match self.gate {
            TapeGate::Learned(lin) => {
                let w = lin.weight.value();
                Gate::Learned {
                    w_diff: w.data[0],
                    w_adv: w.data[1],
                    bias: lin.bias.scalar(),
                }
            }
            TapeGate::Fixed(a) => Gate::Fixed(a),
        };
        PhysicsSystem::new(
            self.diffusion.value(),
            self.advection.iter().map(|a| a.value()).collect(),
            PhysicsParams {
                k: self.k.scalar(),
                beta: self.beta.value().data,
            },
            gate,
        )
    }
}
