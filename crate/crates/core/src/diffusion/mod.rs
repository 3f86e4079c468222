//! Latent DDPM: variance schedule, forward corruption, noise-prediction
//! training, DDPM/DDIM reverse sampling with guidance hooks, and ELBO.

mod denoiser;
mod elbo;
mod sampler;
mod schedule;
mod train;

pub use denoiser::{timestep_embedding, Denoiser, DenoiserCheckpoint, NoisePredictor, TrainingMeta, EMBEDDING_DIM};
pub use elbo::{elbo_conditional, elbo_unconditional, gaussian_kl, gaussian_log_density, ElboReport};
pub use sampler::{ddim_step, ddim_update, ddpm_step, ddpm_update, run_chain, sample, Guide, Sampler, SourcePull};
pub use schedule::{forward_sample, make_schedule, score_from_noise, NoiseSchedule, ScheduleParams};
pub use train::{train_denoiser, DenoiserTraining, LossTrace};
