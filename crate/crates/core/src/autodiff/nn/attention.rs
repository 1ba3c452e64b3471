use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{AutodiffError, ParamStore, Tape, Var};

/// Boolean `n x n` mask; `true` means station `i` may attend to station `j`.
#[derive(Clone, Debug)]
pub struct AttentionMask {
    n: usize,
    data: Rc<Vec<bool>>,
}

impl AttentionMask {
    pub fn new(n: usize, data: Vec<bool>) -> Result<Self, AutodiffError> {
        if data.len() != n * n {
            return Err(AutodiffError::Shape(format!(
                "mask has {} entries, expected {}",
                data.len(),
                n * n
            )));
        }
        if let Some(row) = (0..n).find(|&i| !data[i * n..(i + 1) * n].iter().any(|&b| b)) {
            return Err(AutodiffError::IsolatedNode(row));
        }
        Ok(Self {
            n,
            data: Rc::new(data),
        })
    }

    /// Adjacency plus self-loops; never has an empty row.
    pub fn from_adjacency(n: usize, adjacency: &[bool]) -> Result<Self, AutodiffError> {
        let mut data = adjacency.to_vec();
        for i in 0..n.min(data.len() / n.max(1)) {
            data[i * n + i] = true;
        }
        Self::new(n, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![false; n * n];
        for i in 0..n {
            data[i * n + i] = true;
        }
        Self {
            n,
            data: Rc::new(data),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }
}

/// Single-head scaled dot-product self-attention across stations.
#[derive(Clone, Debug)]
pub struct MaskedSelfAttention {
    pub name: String,
    pub d: usize,
}

impl MaskedSelfAttention {
    pub fn new(name: impl Into<String>, d: usize) -> Self {
        Self { name: name.into(), d }
    }

    fn p(&self, s: &str) -> String {
        format!("{}.{s}", self.name)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        for s in ["w_q", "w_k", "w_v"] {
            store.init_uniform(&self.p(s), self.d, self.d, self.d, rng);
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<BoundAttention<'t>, AutodiffError> {
        Ok(BoundAttention {
            w_q: tape.param(store, &self.p("w_q"))?,
            w_k: tape.param(store, &self.p("w_k"))?,
            w_v: tape.param(store, &self.p("w_v"))?,
            d: self.d,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundAttention<'t> {
    pub w_q: Var<'t>,
    pub w_k: Var<'t>,
    pub w_v: Var<'t>,
    d: usize,
}

impl<'t> BoundAttention<'t> {
    /// Row-stochastic attention matrix restricted to the mask.
    pub fn weights(&self, z: Var<'t>, mask: &AttentionMask) -> Result<Var<'t>, AutodiffError> {
        let (n, d) = z.shape();
        if d != self.d || n != mask.n {
            return Err(AutodiffError::Shape(format!(
                "attention input {n}x{d} vs mask {} / width {}",
                mask.n, self.d
            )));
        }
        let q = z.matmul(self.w_q);
        let k = z.matmul(self.w_k);
        let logits = q.matmul(k.t()).scale(1.0 / (self.d as f64).sqrt());
        Ok(logits.masked_softmax(mask.data.clone()))
    }

    pub fn forward(&self, z: Var<'t>, mask: &AttentionMask) -> Result<Var<'t>, AutodiffError> {
        let a = self.weights(z, mask)?;
        Ok(a.matmul(z.matmul(self.w_v)))
    }
}
