//! Initial-value-problem integration shared by both dynamics branches.
//!
//! Integrators are strategies registered by name (`dopri5`, `rk4`) and picked
//! at runtime from [`SolveSpec::method`]. The first entry of
//! `output_times` is the initial time; the returned trajectory contains the
//! initial state followed by the state at every later requested time.

mod dopri5;
mod rk4;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use dopri5::{estimate_initial_step, Dopri5};
pub use rk4::{rk4_integrate, OdeVector, Rk4};

/// Right-hand side `dy/dt = f(t, y)`.
pub trait OdeRhs {
    fn eval(&self, t: f64, y: &[f64]) -> Vec<f64>;
}

impl<F> OdeRhs for F
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    fn eval(&self, t: f64, y: &[f64]) -> Vec<f64> {
        self(t, y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSpec {
    pub method: String,
    pub rtol: f64,
    pub atol: f64,
    pub output_times: Vec<f64>,
    pub max_steps: usize,
    /// Step length in hours for fixed-step methods.
    pub fixed_dt: f64,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_MAX_STEPS: usize = 10_000;
pub const DEFAULT_FIXED_DT: f64 = 1.5;

impl SolveSpec {
    pub fn dopri5(output_times: Vec<f64>) -> Self {
        Self {
            method: "dopri5".into(),
            rtol: DEFAULT_TOLERANCE,
            atol: DEFAULT_TOLERANCE,
            output_times,
            max_steps: DEFAULT_MAX_STEPS,
            fixed_dt: DEFAULT_FIXED_DT,
        }
    }

    pub fn rk4(output_times: Vec<f64>, fixed_dt: f64) -> Self {
        Self {
            method: "rk4".into(),
            fixed_dt,
            ..Self::dopri5(output_times)
        }
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: String| Err(SolveError::InvalidSpec(m));
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad(format!("tolerances must be positive (rtol {}, atol {})", self.rtol, self.atol));
        }
        if self.output_times.is_empty() {
            return bad("no output times".into());
        }
        if self.output_times.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("output times must be strictly increasing".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if self.method == "rk4" {
            if !(self.fixed_dt > 0.0) {
                return bad("fixed_dt must be positive".into());
            }
            for w in self.output_times.windows(2) {
                let ratio = (w[1] - w[0]) / self.fixed_dt;
                if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
                    return bad(format!(
                        "fixed_dt {} does not divide the interval [{}, {}]",
                        self.fixed_dt, w[0], w[1]
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("invalid solve spec: {0}")]
    InvalidSpec(String),
    #[error("unknown integration method `{0}`")]
    UnknownMethod(String),
    #[error("step budget of {max_steps} exhausted at t = {t} h (problem may be stiff)")]
    Stiff { t: f64, max_steps: usize },
    #[error("non-finite state or derivative at t = {t} h")]
    NonFinite { t: f64 },
}

/// An integration strategy.
pub trait Integrator: Send + Sync {
    fn name(&self) -> &'static str;
    fn integrate(&self, rhs: &dyn OdeRhs, y0: &[f64], spec: &SolveSpec) -> Result<Trajectory, SolveError>;
}

/// Name -> integrator table.
pub struct IntegratorRegistry {
    entries: BTreeMap<String, Box<dyn Integrator>>,
}

impl IntegratorRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Dopri5));
        r.register(Box::new(Rk4));
        r
    }

    pub fn register(&mut self, integrator: Box<dyn Integrator>) {
        self.entries.insert(integrator.name().to_string(), integrator);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Integrator, SolveError> {
        self.entries
            .get(name)
            .map(Box::as_ref)
            .ok_or_else(|| SolveError::UnknownMethod(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

pub fn registry() -> &'static IntegratorRegistry {
    static REGISTRY: OnceLock<IntegratorRegistry> = OnceLock::new();
    REGISTRY.get_or_init(IntegratorRegistry::with_defaults)
}

/// Solves with the integrator named by `spec.method`.
pub fn solve(rhs: &dyn OdeRhs, y0: &[f64], spec: &SolveSpec) -> Result<Trajectory, SolveError> {
    spec.validate()?;
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::NonFinite {
            t: spec.output_times[0],
        });
    }
    registry().get(&spec.method)?.integrate(rhs, y0, spec)
}

/// Mixed RMS error norm `sqrt(mean((e_i / (atol + rtol * max(|y_i|, |yhat_i|)))^2))`.
pub(crate) fn error_norm(err: &[f64], y: &[f64], y_new: &[f64], rtol: f64, atol: f64) -> f64 {
    if err.is_empty() {
        return 0.0;
    }
    let s: f64 = err
        .iter()
        .zip(y.iter().zip(y_new))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / err.len() as f64).sqrt()
}
