use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::Rng;

/// Parameters of a linear variance schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleParams {
    /// The standard 1000-step range `[1e-4, 0.02]`, rescaled by `1000 / T`
    /// so the terminal signal level stays comparable.
    pub fn rescaled(steps: usize) -> Self {
        let k = 1000.0 / steps as f64;
        Self {
            steps,
            beta_start: 1e-4 * k,
            beta_end: 0.02 * k,
        }
    }
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self::rescaled(100)
    }
}

/// Per-timestep coefficients. Timesteps are 1-based: `t ∈ 1..=T`, and
/// `alpha_bar(0) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_variances: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::new(ScheduleParams {
        steps,
        beta_start,
        beta_end,
    })
}

impl NoiseSchedule {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        let ScheduleParams {
            steps,
            beta_start,
            beta_end,
        } = params;
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        let posterior_variances = (0..steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                betas[i] * (1.0 - prev) / (1.0 - alpha_bars[i])
            })
            .collect();
        Ok(Self {
            params,
            betas,
            alpha_bars,
            posterior_variances,
        })
    }

    /// Arbitrary per-step variances, for tests that need exact `ā` values.
    #[cfg(test)]
    pub(crate) fn from_betas(betas: Vec<f64>) -> Self {
        let mut s = Self::new(ScheduleParams::rescaled(betas.len().max(21))).unwrap();
        let mut acc = 1.0;
        s.alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        s.posterior_variances = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { s.alpha_bars[i - 1] };
                betas[i] * (1.0 - prev) / (1.0 - s.alpha_bars[i])
            })
            .collect();
        s.betas = betas;
        s
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn index(&self, t: usize) -> usize {
        assert!(t >= 1 && t <= self.steps(), "timestep {t} outside 1..={}", self.steps());
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.index(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[self.index(t)]
        }
    }

    /// Variance of `q(z_{t-1} | z_t, z_0)`; zero at `t = 1`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_variances[self.index(t)]
    }

    /// `ā_T < 0.05`: the terminal marginal is close to `N(0, I)`.
    pub fn terminal_is_near_gaussian(&self) -> bool {
        self.alpha_bar(self.steps()) < 0.05
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t >= 1 && t <= self.steps() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )))
        }
    }

    /// Mean of `q(z_{t-1} | z_t, z_0)`.
    pub fn posterior_mean(&self, z0: &[f64], zt: &[f64], t: usize) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let c0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let ct = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        z0.iter().zip(zt).map(|(a, b)| c0 * a + ct * b).collect()
    }

    /// Mean of the learned reverse transition given predicted noise.
    pub fn predicted_mean(&self, eps_hat: &[f64], zt: &[f64], t: usize) -> Vec<f64> {
        let k = self.beta(t) / (1.0 - self.alpha_bar(t)).sqrt();
        let inv = 1.0 / self.alpha(t).sqrt();
        zt.iter().zip(eps_hat).map(|(z, e)| inv * (z - k * e)).collect()
    }

    /// Closed-form marginal `q(z_t | z_0)` with explicit noise.
    pub fn corrupt(&self, z0: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect()
    }
}

/// Draws `ε ~ N(0, I)` and returns `(z_t, ε)`.
pub fn forward_sample(s: &NoiseSchedule, z0: &[f64], t: usize, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    s.check_timestep(t)?;
    let eps = rng.gaussian_vec(z0.len());
    Ok((s.corrupt(z0, t, &eps), eps))
}

/// Converts predicted noise into the unconditional score `∇ log p(z_t)`.
pub fn score_from_noise(s: &NoiseSchedule, eps_hat: &[f64], t: usize) -> Vec<f64> {
    let k = -1.0 / (1.0 - s.alpha_bar(t)).sqrt();
    eps_hat.iter().map(|e| k * e).collect()
}
