//! Latent classifier guidance: compositional generation and manipulation in
//! latent spaces with a small diffusion model and per-attribute classifiers.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkernel`]: vectors, seeded Gaussian sampling, a small MLP with
//!   hand-derived gradients and Adam.
//! - [`diffusion`]: noise schedules, denoiser training, DDPM/DDIM reverse
//!   steps and ELBO evaluation.
//! - [`classifiers`]: linear and MLP latent attribute classifiers.
//! - [`guidance`]: score composition (AND / NOT / source regularisation),
//!   guided sampling, manipulation, sequential editing and the closed-form
//!   linear edit.
//! - [`world`]: synthetic attributed latent distributions with exact oracles.
//! - [`eval`]: ACC, latent Fréchet distance, identity distance and
//!   disentanglement reports.

pub mod classifiers;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod numkernel;
pub mod world;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
