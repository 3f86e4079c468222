//! Dense numeric kernel: vector helpers, seeded Gaussian sampling, a
//! fixed-topology MLP with analytic reverse-mode gradients, and Adam.

mod adam;
mod mlp;
mod rng;
pub mod vector;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{Activation, Dense, ForwardTrace, Mlp};
pub use rng::{gaussian_sample, Rng};
