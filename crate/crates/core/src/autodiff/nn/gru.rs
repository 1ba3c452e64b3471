use rand::Rng;

use crate::autodiff::{AutodiffError, Matrix, ParamStore, Tape, Var};

/// Gated recurrent unit applied independently to every row (station).
///
/// Gate layout along the `3h` axis is `[reset, update, candidate]`:
///
/// ```text
/// r  = sigmoid(x Wxr + bxr + h Whr + bhr)
/// z  = sigmoid(x Wxz + bxz + h Whz + bhz)
/// n  = tanh(x Wxn + bxn + r * (h Whn + bhn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub name: String,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl GruCell {
    pub fn new(name: impl Into<String>, d_in: usize, d_hidden: usize) -> Self {
        Self {
            name: name.into(),
            d_in,
            d_hidden,
        }
    }

    fn p(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.name)
    }

    pub fn param_names(&self) -> [String; 4] {
        [self.p("w_x"), self.p("w_h"), self.p("b_x"), self.p("b_h")]
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let h = self.d_hidden;
        // PyTorch-style bound 1/sqrt(hidden) for every GRU tensor.
        store.init_uniform(&self.p("w_x"), self.d_in, 3 * h, h, rng);
        store.init_uniform(&self.p("w_h"), h, 3 * h, h, rng);
        store.init_uniform(&self.p("b_x"), 1, 3 * h, h, rng);
        store.init_uniform(&self.p("b_h"), 1, 3 * h, h, rng);
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<BoundGru<'t>, AutodiffError> {
        let [wx, wh, bx, bh] = self.param_names();
        let bound = BoundGru {
            w_x: tape.param(store, &wx)?,
            w_h: tape.param(store, &wh)?,
            b_x: tape.param(store, &bx)?,
            b_h: tape.param(store, &bh)?,
            d_in: self.d_in,
            d_hidden: self.d_hidden,
        };
        if bound.w_x.shape() != (self.d_in, 3 * self.d_hidden)
            || bound.w_h.shape() != (self.d_hidden, 3 * self.d_hidden)
        {
            return Err(AutodiffError::Shape(format!(
                "GRU {} parameters do not match ({}, {})",
                self.name, self.d_in, self.d_hidden
            )));
        }
        Ok(bound)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundGru<'t> {
    w_x: Var<'t>,
    w_h: Var<'t>,
    b_x: Var<'t>,
    b_h: Var<'t>,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl<'t> BoundGru<'t> {
    pub fn step(&self, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let hd = self.d_hidden;
        if x.cols() != self.d_in || h.cols() != hd || x.rows() != h.rows() {
            return Err(AutodiffError::Shape(format!(
                "GRU step: x {:?}, h {:?}, expected (_, {}) and (_, {hd})",
                x.shape(),
                h.shape(),
                self.d_in
            )));
        }
        let gx = x.matmul(self.w_x).add_row(self.b_x);
        let gh = h.matmul(self.w_h).add_row(self.b_h);
        let r = (gx.slice_cols(0, hd) + gh.slice_cols(0, hd)).sigmoid();
        let z = (gx.slice_cols(hd, hd) + gh.slice_cols(hd, hd)).sigmoid();
        let n = (gx.slice_cols(2 * hd, hd) + r * gh.slice_cols(2 * hd, hd)).tanh();
        // (1 - z) * n + z * h  ==  n + z * (h - n)
        Ok(n + z * (h - n))
    }

    /// Runs from a zero hidden state and returns every hidden state.
    pub fn run(&self, xs: &[Var<'t>]) -> Result<Vec<Var<'t>>, AutodiffError> {
        let first = xs
            .first()
            .ok_or_else(|| AutodiffError::Shape("GRU over an empty sequence".into()))?;
        let tape = first.tape();
        let mut h = tape.constant(Matrix::zeros(first.rows(), self.d_hidden));
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            h = self.step(x, h)?;
            out.push(h);
        }
        Ok(out)
    }
}
