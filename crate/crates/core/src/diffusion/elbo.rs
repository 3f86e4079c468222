//! Monte-Carlo ELBO of the latent DDPM, unconditional and with attribute
//! conditions.
//!
//! Each draw samples one forward trajectory `z_1..z_T` from `q(·|z_0)`. The
//! prior term is analytic; the per-step terms are the closed-form Gaussian
//! `−KL(q(z_{t−1}|z_t,z_0) ‖ p_θ(z_{t−1}|z_t))` evaluated at the sampled
//! `z_t`; the reconstruction term is `log N(z_0; μ_θ(z_1, 1), b_1 I)`.
//! Conditional terms `Σ_t log p(y|z_{t−1})` are read off the same trajectory,
//! so conditional and unconditional reports share all randomness.

use std::f64::consts::PI;

use super::denoiser::NoisePredictor;
use super::schedule::NoiseSchedule;
use crate::classifiers::ClassifierSet;
use crate::error::{Error, Result};
use crate::numkernel::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ElboReport {
    /// Sum of every listed term.
    pub total: f64,
    /// `E log p(z_T) / q(z_T|z_0)`.
    pub prior: f64,
    /// Per-step terms for `t = 2..=T` (index `t − 2`).
    pub denoising: Vec<f64>,
    /// `E log p(z_0|z_1)`.
    pub reconstruction: f64,
    /// `E log p(y|z_{t−1})` for `t = 1..=T`, when conditions were given.
    pub classifier: Option<Vec<f64>>,
}

impl ElboReport {
    pub fn unconditional_total(&self) -> f64 {
        self.prior + self.denoising.iter().sum::<f64>() + self.reconstruction
    }

    pub fn classifier_total(&self) -> f64 {
        self.classifier.as_ref().map_or(0.0, |c| c.iter().sum())
    }
}

/// `KL(N(m1, v1 I) ‖ N(m2, v2 I))`.
pub fn gaussian_kl(m1: &[f64], v1: f64, m2: &[f64], v2: f64) -> f64 {
    let d = m1.len() as f64;
    let sq: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * (d * (v1 / v2 - 1.0 + (v2 / v1).ln()) + sq / v2)
}

pub fn gaussian_log_density(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * (d * (2.0 * PI * var).ln() + sq / var)
}

/// Samples `z_1..z_T` through the one-step forward kernels.
fn trajectory(s: &NoiseSchedule, z0: &[f64], rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(s.steps() + 1);
    out.push(z0.to_vec());
    for t in 1..=s.steps() {
        let (a, b) = (s.alpha(t).sqrt(), s.beta(t).sqrt());
        let prev = &out[t - 1];
        let next = prev.iter().map(|x| a * x + b * rng.gaussian()).collect();
        out.push(next);
    }
    out
}

type LogLikelihood<'a> = dyn Fn(&[f64]) -> Result<f64> + 'a;

fn elbo(
    s: &NoiseSchedule,
    net: &dyn NoisePredictor,
    z0: &[f64],
    rng: &mut Rng,
    mc: usize,
    condition: Option<&LogLikelihood<'_>>,
) -> Result<ElboReport> {
    if mc == 0 {
        return Err(Error::InvalidArgument("need at least one Monte-Carlo draw".into()));
    }
    let steps = s.steps();
    let ab_t = s.alpha_bar(steps);
    let q_mean: Vec<f64> = z0.iter().map(|x| ab_t.sqrt() * x).collect();
    let prior = -gaussian_kl(&q_mean, 1.0 - ab_t, &vec![0.0; z0.len()], 1.0);

    let mut denoising = vec![0.0; steps.saturating_sub(1)];
    let mut reconstruction = 0.0;
    let mut classifier = condition.map(|_| vec![0.0; steps]);
    for _ in 0..mc {
        let traj = trajectory(s, z0, rng);
        for t in 2..=steps {
            let eps = net.predict_noise(&traj[t], t)?;
            let model_mean = s.predicted_mean(&eps, &traj[t], t);
            let post_mean = s.posterior_mean(z0, &traj[t], t);
            let var = s.posterior_variance(t);
            denoising[t - 2] -= gaussian_kl(&post_mean, var, &model_mean, var);
        }
        let eps = net.predict_noise(&traj[1], 1)?;
        let mean1 = s.predicted_mean(&eps, &traj[1], 1);
        reconstruction += gaussian_log_density(z0, &mean1, s.beta(1));
        if let (Some(ll), Some(acc)) = (condition, classifier.as_mut()) {
            for t in 1..=steps {
                acc[t - 1] += ll(&traj[t - 1])?;
            }
        }
    }
    let n = mc as f64;
    denoising.iter_mut().for_each(|x| *x /= n);
    reconstruction /= n;
    if let Some(c) = classifier.as_mut() {
        c.iter_mut().for_each(|x| *x /= n);
    }
    let mut report = ElboReport {
        total: 0.0,
        prior,
        denoising,
        reconstruction,
        classifier,
    };
    report.total = report.unconditional_total() + report.classifier_total();
    if !report.total.is_finite() {
        return Err(Error::NonFinite("ELBO".into()));
    }
    Ok(report)
}

pub fn elbo_unconditional(
    s: &NoiseSchedule,
    net: &dyn NoisePredictor,
    z0: &[f64],
    rng: &mut Rng,
    mc: usize,
) -> Result<ElboReport> {
    elbo(s, net, z0, rng, mc, None)
}

/// ELBO of `log p(z_0, y)` for independent attribute conditions
/// `y = [(attribute, label), ...]`, up to an additive constant.
pub fn elbo_conditional(
    s: &NoiseSchedule,
    net: &dyn NoisePredictor,
    classifiers: &ClassifierSet,
    condition: &[(String, bool)],
    z0: &[f64],
    rng: &mut Rng,
    mc: usize,
) -> Result<ElboReport> {
    let resolved = condition
        .iter()
        .map(|(name, label)| Ok((classifiers.get(name)?, *label)))
        .collect::<Result<Vec<_>>>()?;
    let ll = |z: &[f64]| -> Result<f64> { resolved.iter().map(|(c, y)| c.log_prob(z, *y)).sum::<Result<f64>>() };
    elbo(s, net, z0, rng, mc, Some(&ll))
}
