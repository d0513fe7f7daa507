//! Optimal-transport aggregation of patch/prompt distances for latent-space
//! image optimisation.
//!
//! The crate contains the full desk-scale loop: seeded toy generator and
//! encoder, differentiable patch sampling, the mean and entropic-OT losses
//! with analytic gradients, gradient descent on the latent, and the
//! assignment / cost-plane diagnostics used to compare the two losses.

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod loss;
pub mod measures;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod sinkhorn;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
