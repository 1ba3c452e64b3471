use serde::Serialize;

use super::{
    advection_operator, apply, blend, check_state, diffusion_operator, DiffusionSign, Gate, PhysicsError,
    PhysicsParams,
};
use crate::autodiff::Matrix;
use crate::geo::{AdvectionGraph, DiffusionGraph};
use crate::ode::{self, SolveSpec, Trajectory};

/// Spacing of the observation grid and of advection-operator switches.
pub const INTERVAL_HOURS: f64 = 3.0;

/// A fully specified right-hand side with plain `f64` parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicsSystem {
    /// Effective diffusion operator without the factor `k`.
    pub diffusion: Matrix,
    /// Effective advection operator per interval; the last one is reused
    /// past the end.
    pub advection: Vec<Matrix>,
    pub k: f64,
    pub beta: Vec<f64>,
    pub gate: Gate,
    pub interval: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassBudgetRow {
    pub time: f64,
    pub total_mass: f64,
    pub d_mass_dt: f64,
    pub sum_beta_x: f64,
}

impl PhysicsSystem {
    pub fn new(
        diffusion: Matrix,
        advection: Vec<Matrix>,
        params: PhysicsParams,
        gate: Gate,
    ) -> Result<Self, PhysicsError> {
        let n = diffusion.rows;
        params.validate(n)?;
        if diffusion.cols != n {
            return Err(PhysicsError::Shape("diffusion operator must be square".into()));
        }
        if advection.is_empty() {
            return Err(PhysicsError::Shape("at least one advection operator is required".into()));
        }
        if let Some(a) = advection.iter().find(|a| a.shape() != (n, n)) {
            return Err(PhysicsError::Shape(format!(
                "advection operator {:?} does not match {n} nodes",
                a.shape()
            )));
        }
        Ok(Self {
            diffusion,
            advection,
            k: params.k,
            beta: params.beta,
            gate,
            interval: INTERVAL_HOURS,
        })
    }

    /// System built from the analytic operators of the given graphs.
    pub fn exact(
        diffusion: &DiffusionGraph,
        advection: &[AdvectionGraph],
        params: PhysicsParams,
        gate: Gate,
        sign: DiffusionSign,
    ) -> Result<Self, PhysicsError> {
        Self::new(
            diffusion_operator(&diffusion.weights, sign),
            advection.iter().map(|a| advection_operator(&a.weights)).collect(),
            params,
            gate,
        )
    }

    pub fn n(&self) -> usize {
        self.diffusion.rows
    }

    pub fn interval_index(&self, t: f64) -> usize {
        let i = (t / self.interval).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.advection.len() - 1)
        }
    }

    /// Diffusion (`k` applied) and advection terms on interval `idx`.
    pub fn terms(&self, idx: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let diff = apply(&self.diffusion, x).into_iter().map(|v| self.k * v).collect();
        let adv = apply(&self.advection[idx.min(self.advection.len() - 1)], x);
        (diff, adv)
    }

    pub fn rhs_on(&self, idx: usize, x: &[f64]) -> Vec<f64> {
        let (diff, adv) = self.terms(idx, x);
        (0..x.len())
            .map(|i| blend(self.gate.alpha(diff[i], adv[i]), diff[i], adv[i], self.beta[i], x[i]))
            .collect()
    }

    pub fn rhs(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.rhs_on(self.interval_index(t), x)
    }

    /// Integrates from `times[0]`, restarting the solver at every interval
    /// boundary so no step crosses an operator switch.
    pub fn solve(&self, x0: &[f64], times: &[f64], template: &SolveSpec) -> Result<Trajectory, PhysicsError> {
        check_state(x0, self.n())?;
        if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PhysicsError::Config("output times must be non-empty and strictly increasing".into()));
        }
        let t_end = *times.last().unwrap();
        let mut states = vec![x0.to_vec()];
        let mut y = x0.to_vec();
        let mut a = times[0];
        let mut next = 1;
        while next < times.len() {
            let idx = self.interval_index(a);
            let boundary = (idx as f64 + 1.0) * self.interval;
            let b = if idx + 1 >= self.advection.len() || boundary >= t_end {
                t_end
            } else {
                boundary
            };
            let mut seg = vec![a];
            let first_out = next;
            while next < times.len() && times[next] <= b {
                if times[next] > a {
                    seg.push(times[next]);
                }
                next += 1;
            }
            let b_is_output = seg.last() == Some(&b) && seg.len() > 1;
            if !b_is_output {
                seg.push(b);
            }
            let spec = SolveSpec {
                output_times: seg,
                ..template.clone()
            };
            let traj = ode::solve(&|_t: f64, x: &[f64]| self.rhs_on(idx, x), &y, &spec).map_err(|source| {
                PhysicsError::Solve {
                    context: format!("physics solve on interval {idx} from t = {a} h"),
                    source,
                }
            })?;
            let n_out = next - first_out;
            states.extend(traj.states[1..1 + n_out].iter().cloned());
            y = traj.states.last().unwrap().clone();
            a = b;
        }
        Ok(Trajectory {
            times: times.to_vec(),
            states,
        })
    }

    /// States at `interval, 2 * interval, ..., steps * interval` from `x0` at 0.
    pub fn forecast(&self, x0: &[f64], steps: usize, template: &SolveSpec) -> Result<Vec<Vec<f64>>, PhysicsError> {
        let times: Vec<f64> = (0..=steps).map(|s| s as f64 * self.interval).collect();
        Ok(self.solve(x0, &times, template)?.states.split_off(1))
    }

    pub fn mass_budget(&self, traj: &Trajectory) -> Vec<MassBudgetRow> {
        traj.times
            .iter()
            .zip(&traj.states)
            .map(|(&t, x)| MassBudgetRow {
                time: t,
                total_mass: x.iter().sum(),
                d_mass_dt: self.rhs(t, x).iter().sum(),
                sum_beta_x: self.beta.iter().zip(x).map(|(b, x)| b * x).sum(),
            })
            .collect()
    }
}
