use rand::Rng;

use crate::autodiff::{AutodiffError, ParamStore, Tape, Var};

/// Affine map `x W + b` applied row-wise.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Self {
            name: name.into(),
            d_in,
            d_out,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        store.init_uniform(&self.weight_name(), self.d_in, self.d_out, self.d_in, rng);
        store.init_uniform(&self.bias_name(), 1, self.d_out, self.d_in, rng);
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<BoundLinear<'t>, AutodiffError> {
        Ok(BoundLinear {
            weight: tape.param(store, &self.weight_name())?,
            bias: tape.param(store, &self.bias_name())?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> BoundLinear<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let (d_in, _) = self.weight.shape();
        if x.cols() != d_in {
            return Err(AutodiffError::Shape(format!(
                "linear expects {d_in} input features, got {}",
                x.cols()
            )));
        }
        Ok(x.matmul(self.weight).add_row(self.bias))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check, random_matrix};
    use crate::autodiff::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_of_linear_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lin = Linear::new("lin", 4, 3);
            let mut store = ParamStore::new();
            lin.init(&mut store, &mut rng);
            store.insert("x", random_matrix(5, 4, 1.0, &mut rng));
            let report = check(&store, 1e-4, 1000, |tape, s| {
                let x = tape.param(s, "x").unwrap();
                lin.bind(tape, s).unwrap().forward(x).unwrap().sigmoid().sum()
            });
            assert!(report.max_rel_err < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new("lin", 4, 3);
        let mut store = ParamStore::new();
        lin.init(&mut store, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(Matrix::zeros(2, 5));
        assert!(lin.bind(&tape, &store).unwrap().forward(x).is_err());
    }
}
