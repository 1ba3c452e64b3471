use rand::Rng;

use crate::autodiff::{AutodiffError, Matrix, ParamStore, Tape, Var};

/// ChebNet operator for a symmetric weight matrix with the usual
/// `lambda_max = 2` approximation: `2 L / 2 - I = -D^{-1/2} W D^{-1/2}`.
/// Zero-degree nodes get an all-zero row and column.
pub fn scaled_laplacian(weights: &Matrix) -> Matrix {
    let n = weights.rows;
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = weights.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, -inv_sqrt_deg[i] * weights.get(i, j) * inv_sqrt_deg[j]);
        }
    }
    out
}

/// `[T_0(op), ..., T_{order-1}(op)]` with `T_0 = I`, `T_1 = op`,
/// `T_k = 2 op T_{k-1} - T_{k-2}`.
pub fn chebyshev_basis(op: &Matrix, order: usize) -> Vec<Matrix> {
    let n = op.rows;
    let mut out: Vec<Matrix> = Vec::with_capacity(order);
    for k in 0..order {
        let next = match k {
            0 => Matrix::identity(n),
            1 => op.clone(),
            _ => op.matmul(&out[k - 1]).scale(2.0).zip_map(&out[k - 2], |a, b| a - b),
        };
        out.push(next);
    }
    out
}

/// Chebyshev graph convolution `sum_{k<K} T_k(L) X W_k`.
#[derive(Clone, Debug)]
pub struct ChebGraphConv {
    pub name: String,
    pub order: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl ChebGraphConv {
    pub fn new(name: impl Into<String>, order: usize, d_in: usize, d_out: usize) -> Result<Self, AutodiffError> {
        if order < 1 {
            return Err(AutodiffError::Config("Chebyshev order must be at least 1".into()));
        }
        Ok(Self {
            name: name.into(),
            order,
            d_in,
            d_out,
        })
    }

    pub fn weight_name(&self, k: usize) -> String {
        format!("{}.w{k}", self.name)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        for k in 0..self.order {
            store.init_uniform(&self.weight_name(k), self.d_in, self.d_out, self.d_in * self.order, rng);
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<BoundChebConv<'t>, AutodiffError> {
        let weights = (0..self.order)
            .map(|k| tape.param(store, &self.weight_name(k)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BoundChebConv { weights })
    }
}

#[derive(Clone, Debug)]
pub struct BoundChebConv<'t> {
    weights: Vec<Var<'t>>,
}

impl<'t> BoundChebConv<'t> {
    /// `operator` is the fixed `N x N` graph operator (a constant node).
    pub fn forward(&self, x: Var<'t>, operator: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let n = x.rows();
        if operator.shape() != (n, n) {
            return Err(AutodiffError::Shape(format!(
                "Chebyshev operator {:?} does not match {n} nodes",
                operator.shape()
            )));
        }
        let mut t_prev = x;
        let mut out = x.matmul(self.weights[0]);
        if self.weights.len() == 1 {
            return Ok(out);
        }
        let mut t_cur = operator.matmul(x);
        out = out + t_cur.matmul(self.weights[1]);
        for w in &self.weights[2..] {
            let t_next = operator.matmul(t_cur).scale(2.0) - t_prev;
            out = out + t_next.matmul(*w);
            t_prev = t_cur;
            t_cur = t_next;
        }
        Ok(out)
    }
}
