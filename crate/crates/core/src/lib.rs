//! Density estimation with normalizing flows that jointly learn a
//! low-dimensional data manifold, plus the scoring machinery to use both for
//! out-of-distribution detection.
//!
//! The latent space of a flow is split into an on-manifold part `u` (the
//! first `d` coordinates) and an off-manifold part `v`. Training minimizes
//! the flow negative log-likelihood plus a reconstruction penalty through
//! `x_rec = f^{-1}(proj(f(x)))`, where `proj` zeroes the off-manifold
//! coordinates. At evaluation time the reconstruction error is calibrated by
//! fitting a scale to held-out errors (a Gaussian for squared-error
//! penalties, a scaled Huber density otherwise), and the final score combines
//! negative log-likelihood, the weighted penalty, and optionally a
//! compression-based complexity correction.

pub mod checkpoint;
pub mod complexity;
pub mod config;
pub mod data;
pub mod error;
pub mod flow;
pub mod huber;
pub mod manifold;
pub mod nn;
pub mod numeric;
pub mod scoring;

pub use error::{Error, Result};
pub use flow::{FlowModel, SampleMode};
pub use manifold::{LatentSplit, ManifoldFlowModel, PenaltyKind, PenaltySpec};
pub use nn::{Adam, Mlp, SeededRng, Tensor};
