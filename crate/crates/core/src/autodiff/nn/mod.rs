//! Layers built on the tape. Each block owns only parameter names and sizes;
//! `bind` places its parameters on a tape once so repeated calls (for
//! instance every RK4 stage) share the same parameter nodes.

mod attention;
mod cheb;
mod gru;
mod linear;

pub use attention::{AttentionMask, BoundAttention, MaskedSelfAttention};
pub use cheb::{chebyshev_basis, scaled_laplacian, BoundChebConv, ChebGraphConv};
pub use gru::{BoundGru, GruCell};
pub use linear::{BoundLinear, Linear};
