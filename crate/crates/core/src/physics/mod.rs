//! Physics branch: exact graph diffusion and advection, the boundary-aware
//! right-hand side with its gate and per-station correction, the
//! coefficient estimator, forward solves and the physics latent encoder.
//!
//! Time is measured in hours. Advection operators are piecewise constant
//! over observation intervals (3 h by default) and adaptive solves restart
//! at every interval boundary.

mod branch;
mod operator;
mod system;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Matrix};
use crate::geo::{AdvectionGraph, DiffusionGraph};
use crate::ode::SolveError;

pub use branch::{gate_layer, CoefficientEstimator, PhysicsEncoder, TapeGate, TapePhysics};
pub use operator::{operator_registry, ExactOperator, LearnedChebyshev, OperatorRegistry, TransportOperator};
pub use system::{MassBudgetRow, PhysicsSystem, INTERVAL_HOURS};

/// Sign of the discrete diffusion term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionSign {
    /// `k * sum_j w_ij (x_j - x_i)`: smooths toward equilibrium.
    #[default]
    Smoothing,
    /// `k * sum_j w_ij (x_i - x_j)`: the anti-diffusive form.
    Printed,
}

impl std::str::FromStr for DiffusionSign {
    type Err = PhysicsError;
    fn from_str(s: &str) -> Result<Self, PhysicsError> {
        match s {
            "smoothing" => Ok(Self::Smoothing),
            "printed" => Ok(Self::Printed),
            other => Err(PhysicsError::Config(format!(
                "unknown diffusion sign `{other}` (smoothing|printed)"
            ))),
        }
    }
}

/// Diffusion coefficient and per-station open-system correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub k: f64,
    pub beta: Vec<f64>,
}

impl PhysicsParams {
    pub fn validate(&self, n: usize) -> Result<(), PhysicsError> {
        if self.beta.len() != n {
            return Err(PhysicsError::Shape(format!("beta has {} entries, expected {n}", self.beta.len())));
        }
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return Err(PhysicsError::InvalidParams(format!("k must be finite and >= 0, got {}", self.k)));
        }
        if let Some((i, b)) = self.beta.iter().enumerate().find(|(_, b)| !(**b >= -1.0) || !b.is_finite()) {
            return Err(PhysicsError::InvalidParams(format!("beta[{i}] = {b} is below -1")));
        }
        Ok(())
    }
}

/// Weight `alpha` of the diffusion term against the advection term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    /// `alpha = sigmoid(w_diff * diff + w_adv * adv + bias)` per station.
    Learned { w_diff: f64, w_adv: f64, bias: f64 },
    /// The same alpha everywhere.
    Fixed(f64),
}

impl Gate {
    pub fn alpha(&self, diff: f64, adv: f64) -> f64 {
        match *self {
            Gate::Learned { w_diff, w_adv, bias } => crate::autodiff::sigmoid(w_diff * diff + w_adv * adv + bias),
            Gate::Fixed(a) => a,
        }
    }
}

/// How the gate is driven inside a trainable model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    #[default]
    Learned,
    /// alpha = 1: diffusion only.
    Diffusion,
    /// alpha = 0: advection only.
    Advection,
}

/// `alpha * diff + (1 - alpha) * adv + beta * x`, elementwise.
pub fn blend(alpha: f64, diff: f64, adv: f64, beta: f64, x: f64) -> f64 {
    alpha * diff + (1.0 - alpha) * adv + beta * x
}

/// `W - diag(W 1)` for the smoothing sign, its negation otherwise.
pub fn diffusion_operator(weights: &Matrix, sign: DiffusionSign) -> Matrix {
    let n = weights.rows;
    let deg = weights.row_sums();
    let mut m = weights.clone();
    for i in 0..n {
        m.set(i, i, m.get(i, i) - deg.data[i]);
    }
    match sign {
        DiffusionSign::Smoothing => m,
        DiffusionSign::Printed => m.scale(-1.0),
    }
}

/// `W^T - diag(W 1)`: inflow along in-edges minus outflow along out-edges.
pub fn advection_operator(weights: &Matrix) -> Matrix {
    let n = weights.rows;
    let out_deg = weights.row_sums();
    let mut m = weights.transpose();
    for i in 0..n {
        m.set(i, i, m.get(i, i) - out_deg.data[i]);
    }
    m
}

fn check_state(x: &[f64], n: usize) -> Result<(), PhysicsError> {
    if x.len() != n {
        return Err(PhysicsError::Shape(format!("state has {} entries, graph has {n} nodes", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PhysicsError::Shape("state contains non-finite values".into()));
    }
    Ok(())
}

fn apply(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows)
        .map(|i| m.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `(dx/dt)_i = k * sum_j w_ij (x_j - x_i)` (sign per `sign`).
pub fn diffusion_rhs_exact(
    x: &[f64],
    g: &DiffusionGraph,
    k: f64,
    sign: DiffusionSign,
) -> Result<Vec<f64>, PhysicsError> {
    let n = g.weights.rows;
    check_state(x, n)?;
    let s = match sign {
        DiffusionSign::Smoothing => k,
        DiffusionSign::Printed => -k,
    };
    Ok((0..n)
        .map(|i| s * g.weights.row(i).iter().zip(x).map(|(w, xj)| w * (xj - x[i])).sum::<f64>())
        .collect())
}

/// `(dx/dt)_i = sum_j w_ji x_j - x_i sum_j w_ij`.
pub fn advection_rhs_exact(x: &[f64], g: &AdvectionGraph) -> Result<Vec<f64>, PhysicsError> {
    let n = g.weights.rows;
    check_state(x, n)?;
    let w = &g.weights;
    Ok((0..n)
        .map(|i| {
            let inflow: f64 = (0..n).map(|j| w.get(j, i) * x[j]).sum();
            let outflow: f64 = w.row(i).iter().sum::<f64>() * x[i];
            inflow - outflow
        })
        .collect())
}

#[derive(Debug, thiserror::Error)]
pub enum PhysicsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid physics parameters: {0}")]
    InvalidParams(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("coefficient estimation needs at least 2 history steps, got {0}")]
    ShortHistory(usize),
    #[error("unknown operator mode `{0}`")]
    UnknownOperator(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{context}: {source}")]
    Solve {
        context: String,
        #[source]
        source: SolveError,
    },
}
