//! Dormand–Prince 5(4) with PI step-size control and the classic
//! fourth-order continuous extension for output between accepted steps.

use super::{error_norm, Integrator, OdeRhs, SolveError, SolveSpec, Trajectory};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th- and embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense output.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;

fn rms_scaled(v: &[f64], y: &[f64], rtol: f64, atol: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let s: f64 = v
        .iter()
        .zip(y)
        .map(|(v, y)| (v / (atol + rtol * y.abs())).powi(2))
        .sum();
    (s / v.len() as f64).sqrt()
}

/// Initial step from the usual norm-ratio heuristic: a first guess
/// `0.01 * |y0| / |f0|`, refined by one explicit Euler probe so that the
/// estimated fifth-order local error is about `0.01`. If the derivative
/// vanishes everywhere, returns `span / 100`.
pub fn estimate_initial_step(rhs: &dyn OdeRhs, t0: f64, y0: &[f64], span: f64, rtol: f64, atol: f64) -> f64 {
    let f0 = rhs.eval(t0, y0);
    estimate_with_f0(rhs, t0, y0, &f0, span, rtol, atol)
}

fn estimate_with_f0(rhs: &dyn OdeRhs, t0: f64, y0: &[f64], f0: &[f64], span: f64, rtol: f64, atol: f64) -> f64 {
    let span = span.abs();
    let d0 = rms_scaled(y0, y0, rtol, atol);
    let d1 = rms_scaled(f0, y0, rtol, atol);
    if d1 == 0.0 {
        return span / 100.0;
    }
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let f1 = rhs.eval(t0 + h0, &y1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_scaled(&diff, y0, rtol, atol) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

pub struct Dopri5;

impl Integrator for Dopri5 {
    fn name(&self) -> &'static str {
        "dopri5"
    }

    fn integrate(&self, rhs: &dyn OdeRhs, y0: &[f64], spec: &SolveSpec) -> Result<Trajectory, SolveError> {
        let times = &spec.output_times;
        let t_end = *times.last().unwrap();
        let n = y0.len();
        let mut states = Vec::with_capacity(times.len());
        states.push(y0.to_vec());
        if times.len() == 1 {
            return Ok(Trajectory {
                times: times.clone(),
                states,
            });
        }

        let (rtol, atol) = (spec.rtol, spec.atol);
        let mut t = times[0];
        let mut y = y0.to_vec();
        let mut k1 = rhs.eval(t, &y);
        if k1.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonFinite { t });
        }
        let mut h = estimate_with_f0(rhs, t, &y, &k1, t_end - t, rtol, atol);
        let mut next_out = 1;
        let mut fac_old = 1e-4_f64;
        let mut rejected = false;
        let mut steps = 0usize;

        let mut stage = vec![0.0; n];
        let mut y_new = vec![0.0; n];
        let mut err = vec![0.0; n];

        while next_out < times.len() {
            if steps >= spec.max_steps {
                return Err(SolveError::Stiff {
                    t,
                    max_steps: spec.max_steps,
                });
            }
            if h <= 1e-14 * t.abs().max(1.0) {
                return Err(SolveError::Stiff {
                    t,
                    max_steps: spec.max_steps,
                });
            }
            let last = t + 1.01 * h >= t_end;
            if last {
                h = t_end - t;
            }

            for i in 0..n {
                stage[i] = y[i] + h * A21 * k1[i];
            }
            let k2 = rhs.eval(t + C2 * h, &stage);
            for i in 0..n {
                stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            let k3 = rhs.eval(t + C3 * h, &stage);
            for i in 0..n {
                stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            let k4 = rhs.eval(t + C4 * h, &stage);
            for i in 0..n {
                stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            let k5 = rhs.eval(t + C5 * h, &stage);
            for i in 0..n {
                stage[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let k6 = rhs.eval(t + h, &stage);
            for i in 0..n {
                y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            let t_new = if last { t_end } else { t + h };
            let k7 = rhs.eval(t_new, &y_new);
            steps += 1;

            for i in 0..n {
                err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
            let e = error_norm(&err, &y, &y_new, rtol, atol);
            if !e.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                return Err(SolveError::NonFinite { t });
            }

            let fac11 = e.powf(EXPO);
            if e <= 1.0 {
                let mut fac = fac11 / fac_old.powf(BETA);
                fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = h / fac;
                if rejected {
                    h_new = h_new.min(h);
                }
                fac_old = e.max(1e-4);

                while next_out < times.len() && times[next_out] <= t_new + 1e-12 * t_new.abs().max(1.0) {
                    let target = times[next_out];
                    if last && next_out == times.len() - 1 {
                        states.push(y_new.clone());
                    } else {
                        let theta = ((target - t) / h).clamp(0.0, 1.0);
                        states.push(dense(theta, h, &y, &y_new, &k1, &k3, &k4, &k5, &k6, &k7));
                    }
                    next_out += 1;
                }

                t = t_new;
                std::mem::swap(&mut y, &mut y_new);
                k1 = k7;
                rejected = false;
                h = h_new;
            } else {
                h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
                rejected = true;
            }
        }

        Ok(Trajectory {
            times: times.clone(),
            states,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn dense(
    theta: f64,
    h: f64,
    y0: &[f64],
    y1: &[f64],
    k1: &[f64],
    k3: &[f64],
    k4: &[f64],
    k5: &[f64],
    k6: &[f64],
    k7: &[f64],
) -> Vec<f64> {
    let theta1 = 1.0 - theta;
    (0..y0.len())
        .map(|i| {
            let r1 = y0[i];
            let r2 = y1[i] - y0[i];
            let r3 = h * k1[i] - r2;
            let r4 = r2 - h * k7[i] - r3;
            let r5 = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            r1 + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)))
        })
        .collect()
}
