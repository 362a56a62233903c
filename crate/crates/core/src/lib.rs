//! Dynamics-aware denoising diffusion for linear time-invariant systems.
//!
//! A denoising diffusion model is trained on expert state/control
//! trajectories. At sampling time every reverse step is followed by a scaled
//! orthogonal projection onto the subspace of trajectories the system can
//! actually produce, so the final sample is admissible by construction. The
//! subspace comes either from the system matrices (free/forced response
//! maps) or, when the model is unknown, from block-Hankel matrices of a
//! single recorded experiment.
//!
//! Module map:
//!
//! - [`lti`]: the stochastic LTI system, rollouts and the trajectory map.
//! - [`tasks`]: LQR and waypoint/obstacle tasks, expert solvers, datasets.
//! - [`diffusion`]: noise schedule, forward noising, posterior mean.
//! - [`denoiser`]: dense residual mean predictor, loss, Adam, checkpoints.
//! - [`projector`]: model- and data-based admissibility projectors.
//! - [`sampler`]: vanilla and projected reverse processes.
//! - [`eval`]: error curves, residuals, moment propagation, Mahalanobis.

pub mod denoiser;
pub mod diffusion;
mod error;
pub mod eval;
pub mod io;
mod linalg;
pub mod lti;
pub mod projector;
pub mod rng;
pub mod sampler;
pub mod tasks;

pub use error::{Error, Result};
