use std::collections::HashMap;

use crate::autodiff::{Matrix, ParamStore};

/// Adam with bias correction; moments keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    moments: HashMap<String, (Matrix, Matrix)>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (name, t) in store.iter_mut() {
            if !t.requires_grad {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Matrix::zeros(t.value.rows, t.value.cols), Matrix::zeros(t.value.rows, t.value.cols)));
            for k in 0..t.value.data.len() {
                let g = t.grad.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * g;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * g * g;
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                t.value.data[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
