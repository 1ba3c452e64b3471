//! Central finite-difference gradient checking against the tape.
//!
//! The finite-difference side only ever calls the forward closure on
//! perturbed parameter copies, so it shares no code with the backward rules.

use super::{Matrix, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error `|ad - fd| / max(|ad|, |fd|, floor)` seen.
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares tape gradients of `f` with central differences of step `eps` on
/// every parameter in `store` (at most `max_per_param` evenly spaced entries
/// per tensor).
pub fn check<F>(store: &ParamStore, eps: f64, max_per_param: usize, f: F) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Var<'t>,
{
    let tape = Tape::new();
    let loss = f(&tape, store);
    let grads = tape.backward(loss).expect("scalar loss");
    let mut analytic = store.clone();
    analytic.zero_grad();
    analytic.accumulate(&grads);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let eval = |s: &ParamStore| {
        let tape = Tape::new();
        f(&tape, s).scalar()
    };
    for (name, tensor) in store.iter() {
        if !tensor.requires_grad {
            continue;
        }
        let n = tensor.value.len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let mut plus = store.clone();
            let mut minus = store.clone();
            bump(&mut plus, name, i, eps);
            bump(&mut minus, name, i, -eps);
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let ad = analytic.get(name).unwrap().grad.data[i];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.to_string();
                report.worst_index = i;
            }
        }
    }
    report
}

fn bump(store: &mut ParamStore, name: &str, i: usize, delta: f64) {
    let t = store.get_mut(name).unwrap();
    t.value.data[i] += delta;
}

/// Convenience: random matrix with entries uniform in `[-scale, scale]`.
pub fn random_matrix<R: rand::Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-scale..=scale)).collect(),
    )
}
