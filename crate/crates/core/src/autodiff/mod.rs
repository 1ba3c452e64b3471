//! Reverse-mode automatic differentiation over small dense matrices and the
//! neural building blocks used by both dynamics branches.

mod matrix;
mod params;
mod tape;

pub mod nn;

pub mod gradcheck;

pub use matrix::Matrix;
pub use params::{ParamRecord, ParamStore, Tensor};
pub use tape::{concat_cols, concat_rows, Gradients, Tape, Var};

pub(crate) use tape::sigmoid;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("attention row {0} has no unmasked entry (isolated node)")]
    IsolatedNode(usize),
}
