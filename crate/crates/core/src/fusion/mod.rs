//! Alignment and fusion of the two latent trajectories: the decaying
//! temporal contrastive loss, a GNN over the station graph on the
//! concatenated latents, the decoder and the joint objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::Linear;
use crate::autodiff::{concat_cols, concat_rows, AutodiffError, Matrix, ParamStore, Tape, Var};

/// Latent norms are computed as `sqrt(|z|^2 + NORM_EPS^2)`.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("decay weight is undefined for t = s = {0}")]
    UndefinedPair(usize),
    #[error("target contains a non-finite value at step {step}, station {station}")]
    NonFiniteTarget { step: usize, station: usize },
    #[error("normalization statistics are missing or do not match {0} stations")]
    MissingStats(usize),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Index set of the contrastive softmax denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TclDenominator {
    /// Sum over `i in 1..=2 tau`, `i != t'`.
    #[default]
    ExcludePartner,
    /// Sum over `i in 1..=2 tau`, `i != t`.
    Standard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayTclConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: usize,
    #[serde(default)]
    pub denominator: TclDenominator,
}

impl DecayTclConfig {
    pub fn new(tau: usize) -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.8,
            tau,
            denominator: TclDenominator::ExcludePartner,
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(FusionError::Config(format!(
                "decay rates must be positive (lambda1 {}, lambda2 {})",
                self.lambda1, self.lambda2
            )));
        }
        if self.tau == 0 {
            return Err(FusionError::Config("tau must be at least 1".into()));
        }
        Ok(())
    }
}

/// `2 sigmoid(-lambda1 |t-s|)` within a branch segment (`|t-s| < tau`),
/// otherwise `2 sigmoid(-lambda2 (|t-s| mod tau))`. Indices are 1-based
/// positions in `[Z^P, Z^D, Z^P]`.
pub fn decay_weight(t: usize, s: usize, cfg: &DecayTclConfig) -> Result<f64, FusionError> {
    if t == s {
        return Err(FusionError::UndefinedPair(t));
    }
    let off = t.abs_diff(s);
    let sig = crate::autodiff::sigmoid;
    Ok(if off < cfg.tau {
        2.0 * sig(-cfg.lambda1 * off as f64)
    } else {
        2.0 * sig(-cfg.lambda2 * (off % cfg.tau) as f64)
    })
}

/// Row-wise `z / sqrt(|z|^2 + eps^2)`; finite gradient at `z = 0`.
fn normalize_rows(z: Var<'_>) -> Var<'_> {
    let norms = z.square().row_sums().offset(NORM_EPS * NORM_EPS).sqrt();
    let inv = z.tape().constant(Matrix::filled(z.rows(), 1, 1.0)).div(norms);
    z.mul_col(inv)
}

/// `3 tau x 3 tau` similarities of `[Z^P, Z^D, Z^P]`: the station mean of
/// per-station cosine similarity.
pub fn similarity_matrix<'t>(zp: &[Var<'t>], zd: &[Var<'t>]) -> Result<Var<'t>, FusionError> {
    if zp.len() != zd.len() || zp.is_empty() {
        return Err(FusionError::Shape(format!(
            "trajectories have {} and {} steps",
            zp.len(),
            zd.len()
        )));
    }
    let (n, d) = zp[0].shape();
    if let Some(z) = zp.iter().chain(zd).find(|z| z.shape() != (n, d)) {
        return Err(FusionError::Shape(format!("latent {:?} differs from ({n}, {d})", z.shape())));
    }
    let flat = |z: &Var<'t>| normalize_rows(*z).reshape(1, n * d);
    let rows: Vec<Var<'t>> = zp.iter().chain(zd).chain(zp).map(flat).collect();
    let f = concat_rows(&rows);
    Ok(f.matmul(f.t()).scale(1.0 / n as f64))
}

/// Per-anchor contrastive terms `l(t)` for `t = 1..=2 tau`, as a `2 tau x 1` column.
pub fn tcl_terms<'t>(zp: &[Var<'t>], zd: &[Var<'t>], cfg: &DecayTclConfig) -> Result<Var<'t>, FusionError> {
    cfg.validate()?;
    let tau = cfg.tau;
    if zp.len() != tau {
        return Err(FusionError::Shape(format!("expected {tau} steps, got {}", zp.len())));
    }
    let tape = zp[0].tape();
    let m = 2 * tau;
    let s = similarity_matrix(zp, zd)?.slice_rows(0, m).slice_cols(0, m);
    let e = s.exp();
    let total = e.row_sums();
    let diag = (e * tape.constant(Matrix::identity(m))).row_sums();

    // Coefficients of log p(t, j) inside the first 2 tau columns, and of the
    // positives that fall in the third block (t > tau, partner t - tau).
    let mut coef = Matrix::zeros(m, m);
    let mut tail = Matrix::zeros(m, m);
    let mut tail_rows = Matrix::zeros(m, 1);
    for t in 0..m {
        for j in 0..m {
            if j == t {
                continue;
            }
            if j == t + tau {
                coef.set(t, j, 1.0);
            } else {
                coef.set(t, j, decay_weight(t + 1, j + 1, cfg)?);
            }
        }
        if t >= tau {
            tail.set(t, t - tau, 1.0);
            tail_rows.set(t, 0, 1.0);
        }
    }
    let (log_p, log_den) = match cfg.denominator {
        TclDenominator::ExcludePartner => {
            let den = e.scale(-1.0).add_col(total).ln();
            (s - den, total.ln())
        }
        TclDenominator::Standard => {
            let den = (total - diag).ln();
            (s - tape.constant(Matrix::zeros(m, m)).add_col(den), den)
        }
    };
    let weighted = (tape.constant(coef) * log_p).row_sums();
    let positives_tail = (tape.constant(tail) * s).row_sums() - tape.constant(tail_rows) * log_den;
    Ok((weighted + positives_tail).scale(-1.0))
}

/// `(1 / 2 tau) sum_t l(t)`.
pub fn tcl_loss<'t>(zp: &[Var<'t>], zd: &[Var<'t>], cfg: &DecayTclConfig) -> Result<Var<'t>, FusionError> {
    Ok(tcl_terms(zp, zd, cfg)?.mean())
}

/// `D^{-1/2} (A + I) D^{-1/2}` for a boolean adjacency.
pub fn normalized_adjacency(n: usize, adjacency: &[bool]) -> Result<Matrix, FusionError> {
    if adjacency.len() != n * n {
        return Err(FusionError::Shape(format!(
            "adjacency has {} entries for {n} stations",
            adjacency.len()
        )));
    }
    let mut a = Matrix::from_vec(n, n, adjacency.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
    for i in 0..n {
        a.set(i, i, 1.0);
    }
    let inv: Vec<f64> = (0..n).map(|i| 1.0 / a.row(i).iter().sum::<f64>().sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, inv[i] * a.get(i, j) * inv[j]);
        }
    }
    Ok(a)
}

/// `n` layers of `H <- tanh(A_hat H W + b)` at width `2d`, then a linear
/// decoder to one value per station.
#[derive(Clone, Debug)]
pub struct FusionStack {
    pub layers: Vec<Linear>,
    pub decoder: Linear,
    pub width: usize,
}

impl FusionStack {
    pub fn new(prefix: &str, latent: usize, n_layers: usize) -> Result<Self, FusionError> {
        if n_layers == 0 {
            return Err(FusionError::Config("at least one GNN layer is required".into()));
        }
        let width = 2 * latent;
        Ok(Self {
            layers: (0..n_layers)
                .map(|l| Linear::new(format!("{prefix}.gnn{l}"), width, width))
                .collect(),
            decoder: Linear::new(format!("{prefix}.decoder"), width, 1),
            width,
        })
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        for l in &self.layers {
            l.init(store, rng);
        }
        self.decoder.init(store, rng);
    }

    /// Fuses one step: `concat(Z^P_t, Z^D_t)` through the GNN layers.
    pub fn fuse<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        zp: Var<'t>,
        zd: Var<'t>,
        a_hat: Var<'t>,
    ) -> Result<Var<'t>, FusionError> {
        let mut h = concat_cols(&[zp, zd]);
        if h.cols() != self.width || a_hat.shape() != (h.rows(), h.rows()) {
            return Err(FusionError::Shape(format!(
                "fusion input {:?} with operator {:?}, expected width {}",
                h.shape(),
                a_hat.shape(),
                self.width
            )));
        }
        for l in &self.layers {
            h = l.bind(tape, store)?.forward(a_hat.matmul(h))?.tanh();
        }
        Ok(h)
    }

    /// Linear head to one normalized value per station (`N x 1`).
    pub fn decode<'t>(&self, tape: &'t Tape, store: &ParamStore, h: Var<'t>) -> Result<Var<'t>, FusionError> {
        Ok(self.decoder.bind(tape, store)?.forward(h)?)
    }
}

/// Per-station affine map between physical units and model space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationScale {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StationScale {
    fn check(&self, n: usize) -> Result<(), FusionError> {
        if self.mean.len() != n || self.std.len() != n || n == 0 {
            return Err(FusionError::MissingStats(n));
        }
        Ok(())
    }

    /// `x * std + mean` on an `N x 1` column.
    pub fn denormalize<'t>(&self, x: Var<'t>) -> Result<Var<'t>, FusionError> {
        self.check(x.rows())?;
        let tape = x.tape();
        Ok((x * tape.constant(Matrix::column(self.std.clone()))) + tape.constant(Matrix::column(self.mean.clone())))
    }

    /// `(x - mean) / std` on an `N x 1` column.
    pub fn normalize<'t>(&self, x: Var<'t>) -> Result<Var<'t>, FusionError> {
        self.check(x.rows())?;
        let tape = x.tape();
        Ok((x - tape.constant(Matrix::column(self.mean.clone()))).div(tape.constant(Matrix::column(self.std.clone()))))
    }
}

/// Norm used by the prediction loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredNorm {
    /// Element-mean absolute error.
    #[default]
    L1,
    /// Element-mean squared error.
    L2,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts<'t> {
    pub pred: Var<'t>,
    pub tcl: Option<Var<'t>>,
    pub total: Var<'t>,
}

/// Mean over horizon steps and stations of `|x - x_hat|` (or its square).
pub fn prediction_loss<'t>(targets: &[Matrix], preds: &[Var<'t>], norm: PredNorm) -> Result<Var<'t>, FusionError> {
    if targets.len() != preds.len() || preds.is_empty() {
        return Err(FusionError::Shape(format!(
            "{} targets for {} predictions",
            targets.len(),
            preds.len()
        )));
    }
    for (step, x) in targets.iter().enumerate() {
        if let Some(station) = x.data.iter().position(|v| !v.is_finite()) {
            return Err(FusionError::NonFiniteTarget { step, station });
        }
    }
    let tape = preds[0].tape();
    let mut acc: Option<Var<'t>> = None;
    for (x, p) in targets.iter().zip(preds) {
        if x.shape() != p.shape() {
            return Err(FusionError::Shape(format!("target {:?} vs prediction {:?}", x.shape(), p.shape())));
        }
        let r = tape.constant(x.clone()) - *p;
        let term = match norm {
            PredNorm::L1 => r.abs().mean(),
            PredNorm::L2 => r.square().mean(),
        };
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
    }
    Ok(acc.unwrap().scale(1.0 / preds.len() as f64))
}

/// `L = L_pred + gamma * L_tcl`; without latents (single-branch variants)
/// the contrastive part is absent.
pub fn total_loss<'t>(
    targets: &[Matrix],
    preds: &[Var<'t>],
    latents: Option<(&[Var<'t>], &[Var<'t>])>,
    gamma: f64,
    cfg: &DecayTclConfig,
    norm: PredNorm,
) -> Result<LossParts<'t>, FusionError> {
    let pred = prediction_loss(targets, preds, norm)?;
    let Some((zp, zd)) = latents else {
        return Ok(LossParts {
            pred,
            tcl: None,
            total: pred,
        });
    };
    let tcl = tcl_loss(zp, zd, cfg)?;
    let total = if gamma == 0.0 { pred } else { pred + tcl.scale(gamma) };
    Ok(LossParts {
        pred,
        tcl: Some(tcl),
        total,
    })
}

#[cfg(test)]
mod tests;
