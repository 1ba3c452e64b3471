//! Hybrid air-quality forecasting on station graphs.
//!
//! A physics branch integrates a boundary-aware diffusion-advection system on
//! the geospatial station graph; a data branch integrates a latent Neural ODE
//! whose right-hand side mixes stations with graph-masked self-attention. The
//! two latent trajectories are aligned with a decaying temporal contrastive
//! loss, fused by a GNN and decoded to concentrations.

pub mod autodiff;
pub mod data;
pub mod fusion;
pub mod geo;
pub mod metrics;
pub mod model;
pub mod ode;
pub mod physics;
pub mod pipeline;
pub mod train;
