//! Data-driven branch: a per-station GRU encoder over the feature history
//! gives the initial latent state, and an autonomous latent ODE whose
//! right-hand side mixes stations only through graph-masked self-attention
//! carries it over the horizon.

use rand::Rng;

use crate::autodiff::nn::{AttentionMask, BoundAttention, BoundLinear, GruCell, Linear, MaskedSelfAttention};
use crate::autodiff::{AutodiffError, Matrix, ParamStore, Tape, Var};
use crate::ode::{self, rk4_integrate, SolveError, SolveSpec};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{context}: {source}")]
    Solve {
        context: String,
        #[source]
        source: SolveError,
    },
}

/// `F(Z) = tanh(tanh((Z + MSA(Z)) W1 + b1) W2 + b2)`.
#[derive(Clone, Debug)]
pub struct LatentOdeRhs {
    pub msa: MaskedSelfAttention,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLatentRhs<'t> {
    msa: BoundAttention<'t>,
    fc1: BoundLinear<'t>,
    fc2: BoundLinear<'t>,
}

impl<'t> BoundLatentRhs<'t> {
    pub fn eval(&self, z: Var<'t>, mask: &AttentionMask) -> Result<Var<'t>, DataError> {
        let mixed = z + self.msa.forward(z, mask)?;
        Ok(self.fc2.forward(self.fc1.forward(mixed)?.tanh())?.tanh())
    }
}

impl LatentOdeRhs {
    pub fn new(prefix: &str, d: usize) -> Self {
        Self {
            msa: MaskedSelfAttention::new(format!("{prefix}.msa"), d),
            fc1: Linear::new(format!("{prefix}.fc1"), d, d),
            fc2: Linear::new(format!("{prefix}.fc2"), d, d),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.msa.init(store, rng);
        self.fc1.init(store, rng);
        self.fc2.init(store, rng);
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<BoundLatentRhs<'t>, DataError> {
        Ok(BoundLatentRhs {
            msa: self.msa.bind(tape, store)?,
            fc1: self.fc1.bind(tape, store)?,
            fc2: self.fc2.bind(tape, store)?,
        })
    }
}

/// Encoder plus latent dynamics.
#[derive(Clone, Debug)]
pub struct DataBranch {
    pub encoder: GruCell,
    pub head: Linear,
    pub rhs: LatentOdeRhs,
    pub d_in: usize,
    pub latent: usize,
}

impl DataBranch {
    pub fn new(prefix: &str, d_in: usize, hidden: usize, latent: usize) -> Self {
        Self {
            encoder: GruCell::new(format!("{prefix}.encoder.gru"), d_in, hidden),
            head: Linear::new(format!("{prefix}.encoder.head"), hidden, latent),
            rhs: LatentOdeRhs::new(&format!("{prefix}.rhs"), latent),
            d_in,
            latent,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.encoder.init(store, rng);
        self.head.init(store, rng);
        self.rhs.init(store, rng);
    }

    /// `history[t]` is `N x D`; returns the initial latent `N x d`.
    pub fn encode_history<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        history: &[Var<'t>],
    ) -> Result<Var<'t>, DataError> {
        let first = history
            .first()
            .ok_or_else(|| DataError::Shape("history must contain at least one step".into()))?;
        if let Some(h) = history.iter().find(|h| h.cols() != self.d_in || h.rows() != first.rows()) {
            return Err(DataError::Shape(format!(
                "history step has shape {:?}, expected ({}, {})",
                h.shape(),
                first.rows(),
                self.d_in
            )));
        }
        let h = *self.encoder.bind(tape, store)?.run(history)?.last().unwrap();
        Ok(self.head.bind(tape, store)?.forward(h)?)
    }

    /// Fixed-step RK4 on the tape; one latent per interval of `interval` hours.
    pub fn solve_tape<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z0: Var<'t>,
        mask: &AttentionMask,
        steps: usize,
        interval: f64,
        dt: f64,
    ) -> Result<Vec<Var<'t>>, DataError> {
        let rhs = self.rhs.bind(tape, store)?;
        let times: Vec<f64> = (0..=steps).map(|s| s as f64 * interval).collect();
        let mut out = rk4_integrate(|_t, z: &Var<'t>| rhs.eval(*z, mask), z0, &times, dt)?;
        Ok(out.split_off(1))
    }

    /// Plain-valued solve with any registered integrator.
    pub fn solve_values(
        &self,
        store: &ParamStore,
        z0: &Matrix,
        mask: &AttentionMask,
        times: &[f64],
        template: &SolveSpec,
    ) -> Result<Vec<Matrix>, DataError> {
        let (n, d) = z0.shape();
        if d != self.latent {
            return Err(DataError::Shape(format!("latent width {d}, expected {}", self.latent)));
        }
        // Surface missing parameters before entering the solver.
        self.rhs.bind(&Tape::new(), store)?;
        let f = |_t: f64, y: &[f64]| -> Vec<f64> {
            let tape = Tape::new();
            let rhs = self.rhs.bind(&tape, store).expect("parameters checked above");
            let z = tape.constant(Matrix::from_vec(n, d, y.to_vec()));
            rhs.eval(z, mask).expect("shapes checked above").value().data
        };
        let spec = SolveSpec {
            output_times: times.to_vec(),
            ..template.clone()
        };
        let traj = ode::solve(&f, &z0.data, &spec).map_err(|source| DataError::Solve {
            context: "latent ODE solve".into(),
            source,
        })?;
        Ok(traj
            .states
            .into_iter()
            .skip(1)
            .map(|s| Matrix::from_vec(n, d, s))
            .collect())
    }
}
