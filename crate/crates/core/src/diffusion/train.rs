use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::denoiser::{Denoiser, NoisePredictor};
use super::schedule::NoiseSchedule;
use crate::error::{check_dim, Error, Result};
use crate::numkernel::{adam_step, AdamConfig, AdamState, Rng};
use crate::world::AttributedDataset;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserTraining {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for DenoiserTraining {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch: 128,
            lr: 1e-3,
        }
    }
}

/// Per-step batch losses and an exponential moving average of them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
}

impl LossTrace {
    const EMA: f64 = 0.99;

    fn push(&mut self, loss: f64) {
        let s = match self.smoothed.last() {
            Some(prev) => Self::EMA * prev + (1.0 - Self::EMA) * loss,
            None => loss,
        };
        self.raw.push(loss);
        self.smoothed.push(s);
    }

    /// Mean raw loss over the first and last `fraction` of the trace.
    pub fn head_tail_means(&self, fraction: f64) -> (f64, f64) {
        let k = ((self.raw.len() as f64 * fraction).ceil() as usize).clamp(1, self.raw.len().max(1));
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
        (mean(&self.raw[..k]), mean(&self.raw[self.raw.len() - k..]))
    }
}

// Examples per rayon task; gradients are summed per chunk, then across
// chunks in index order, so the result does not depend on thread count.
const CHUNK: usize = 16;

struct Example {
    input: Vec<f64>,
    eps: Vec<f64>,
}

/// Fits the noise predictor by minimising `E ‖ε − ε̂(z_t, t)‖²` with `t`
/// uniform on `1..=T`.
pub fn train_denoiser(
    s: &NoiseSchedule,
    data: &AttributedDataset,
    mut net: Denoiser,
    cfg: &DenoiserTraining,
    rng: &mut Rng,
) -> Result<(Denoiser, LossTrace)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    check_dim(net.latent_dim(), data.dim())?;
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let d = data.dim();
    let mut params = net.mlp().params();
    let mut adam = AdamState::new(params.len(), AdamConfig::default());
    let mut trace = LossTrace::default();

    for step in 0..cfg.steps {
        let batch: Vec<Example> = (0..cfg.batch)
            .map(|_| {
                let z0 = &data.latents[rng.below(data.len())];
                let t = 1 + rng.below(s.steps());
                let eps = rng.gaussian_vec(d);
                let zt = s.corrupt(z0, t, &eps);
                let input = net.network_input(&zt, t).expect("dimension checked");
                Example { input, eps }
            })
            .collect();

        let mlp = net.mlp();
        let scale = 2.0 / cfg.batch as f64;
        let partials: Vec<(Vec<f64>, f64)> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; params.len()];
                let mut loss = 0.0;
                for ex in chunk {
                    let tr = mlp.forward_trace(&ex.input)?;
                    let diff: Vec<f64> = tr.output().iter().zip(&ex.eps).map(|(p, e)| p - e).collect();
                    loss += diff.iter().map(|x| x * x).sum::<f64>();
                    let up: Vec<f64> = diff.iter().map(|x| scale * x).collect();
                    mlp.backward(&tr, &up, Some(&mut g))?;
                }
                Ok((g, loss))
            })
            .collect::<Result<_>>()?;
        let mut grads = vec![0.0; params.len()];
        let mut loss = 0.0;
        for (g, l) in partials {
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += b;
            }
            loss += l;
        }
        loss /= cfg.batch as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("denoiser loss at step {step}")));
        }
        trace.push(loss);
        adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
        net.mlp_mut().set_params(&params)?;
    }
    Ok((net, trace))
}
