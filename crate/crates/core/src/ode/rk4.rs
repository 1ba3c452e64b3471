use super::{Integrator, OdeRhs, SolveError, SolveSpec, Trajectory};
use crate::autodiff::Var;

/// State types RK4 can advance: anything supporting `y + a * x`.
pub trait OdeVector: Clone {
    fn axpy(&self, a: f64, x: &Self) -> Self;
}

impl OdeVector for Vec<f64> {
    fn axpy(&self, a: f64, x: &Self) -> Self {
        self.iter().zip(x).map(|(y, x)| y + a * x).collect()
    }
}

/// On a tape every stage is recorded, so gradients of the discrete solution
/// come out of the usual backward sweep.
impl OdeVector for Var<'_> {
    fn axpy(&self, a: f64, x: &Self) -> Self {
        *self + x.scale(a)
    }
}

/// Classical fixed-step RK4 over `times` (the first entry is the initial
/// time). Each output interval is split into `round(dt_interval / dt)` equal
/// steps. Returns the initial state followed by one state per later time.
pub fn rk4_integrate<S, E, F>(mut f: F, y0: S, times: &[f64], dt: f64) -> Result<Vec<S>, E>
where
    S: OdeVector,
    F: FnMut(f64, &S) -> Result<S, E>,
{
    let mut out = Vec::with_capacity(times.len());
    let mut y = y0;
    out.push(y.clone());
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let n = ((span / dt).round() as usize).max(1);
        let h = span / n as f64;
        for s in 0..n {
            let t = w[0] + s as f64 * h;
            let k1 = f(t, &y)?;
            let k2 = f(t + 0.5 * h, &y.axpy(0.5 * h, &k1))?;
            let k3 = f(t + 0.5 * h, &y.axpy(0.5 * h, &k2))?;
            let k4 = f(t + h, &y.axpy(h, &k3))?;
            y = y
                .axpy(h / 6.0, &k1)
                .axpy(h / 3.0, &k2)
                .axpy(h / 3.0, &k3)
                .axpy(h / 6.0, &k4);
        }
        out.push(y.clone());
    }
    Ok(out)
}

pub struct Rk4;

impl Integrator for Rk4 {
    fn name(&self) -> &'static str {
        "rk4"
    }

    fn integrate(&self, rhs: &dyn OdeRhs, y0: &[f64], spec: &SolveSpec) -> Result<Trajectory, SolveError> {
        let total_steps: f64 = spec
            .output_times
            .windows(2)
            .map(|w| ((w[1] - w[0]) / spec.fixed_dt).round())
            .sum();
        if total_steps > spec.max_steps as f64 {
            return Err(SolveError::Stiff {
                t: spec.output_times[0],
                max_steps: spec.max_steps,
            });
        }
        let states = rk4_integrate(
            |t, y: &Vec<f64>| {
                let dy = rhs.eval(t, y);
                if dy.iter().all(|v| v.is_finite()) {
                    Ok(dy)
                } else {
                    Err(SolveError::NonFinite { t })
                }
            },
            y0.to_vec(),
            &spec.output_times,
            spec.fixed_dt,
        )?;
        Ok(Trajectory {
            times: spec.output_times.clone(),
            states,
        })
    }
}
