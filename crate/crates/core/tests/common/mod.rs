#![allow(dead_code)]

use lcg_core::diffusion::{NoisePredictor, NoiseSchedule};
use lcg_core::world::WorldSpec;
use lcg_core::Result;

/// Exact noise prediction for an equal-weight isotropic Gaussian mixture:
/// the diffused marginal is again a mixture, so `ε* = −√(1−ā) ∇log p_t`.
pub struct MixtureOracle {
    pub schedule: NoiseSchedule,
    pub means: Vec<Vec<f64>>,
    pub stddevs: Vec<f64>,
}

impl MixtureOracle {
    pub fn new(schedule: NoiseSchedule, world: &WorldSpec) -> Self {
        Self {
            schedule,
            means: world.components.iter().map(|c| c.mean.clone()).collect(),
            stddevs: world.components.iter().map(|c| c.stddev).collect(),
        }
    }

    pub fn score(&self, z: &[f64], t: usize) -> Vec<f64> {
        let ab = self.schedule.alpha_bar(t);
        let d = z.len() as f64;
        let parts: Vec<(f64, Vec<f64>)> = self
            .means
            .iter()
            .zip(&self.stddevs)
            .map(|(m, s)| {
                let v = ab * s * s + 1.0 - ab;
                let diff: Vec<f64> = m.iter().zip(z).map(|(mi, zi)| ab.sqrt() * mi - zi).collect();
                let sq: f64 = diff.iter().map(|x| x * x).sum();
                let logw = -0.5 * sq / v - 0.5 * d * v.ln();
                (logw, diff.into_iter().map(|x| x / v).collect())
            })
            .collect();
        let top = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = parts.iter().map(|p| (p.0 - top).exp()).sum();
        let mut out = vec![0.0; z.len()];
        for (lw, g) in &parts {
            let r = (lw - top).exp() / total;
            for (o, x) in out.iter_mut().zip(g) {
                *o += r * x;
            }
        }
        out
    }
}

impl NoisePredictor for MixtureOracle {
    fn latent_dim(&self) -> usize {
        self.means[0].len()
    }

    fn predict_noise(&self, z: &[f64], t: usize) -> Result<Vec<f64>> {
        let k = -(1.0 - self.schedule.alpha_bar(t)).sqrt();
        Ok(self.score(z, t).into_iter().map(|x| k * x).collect())
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] += h;
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

/// Energy distance between two samples (V-statistic).
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mean_dist = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        let mut s = 0.0;
        for p in x {
            for q in y {
                s += p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            }
        }
        s / (x.len() * y.len()) as f64
    };
    2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b)
}

/// Permutation p-value of the energy distance between `a` and `b`.
pub fn energy_test(a: &[Vec<f64>], b: &[Vec<f64>], permutations: usize, seed: u64) -> f64 {
    let observed = energy_distance(a, b);
    let mut pooled: Vec<Vec<f64>> = a.iter().chain(b).cloned().collect();
    let mut rng = lcg_core::numkernel::Rng::new(seed);
    let mut hits = 0;
    for _ in 0..permutations {
        rng.shuffle(&mut pooled);
        let (x, y) = pooled.split_at(a.len());
        if energy_distance(x, y) >= observed {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (permutations + 1) as f64
}
