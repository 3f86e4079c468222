//! Latent-space metrics: oracle accuracy against requested labels, Fréchet
//! distance to reference moments, identity distance to source latents, and
//! the per-edit accuracy-change matrix for sequential editing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::guidance::{Editor, GuidanceTerm, ScaleSchedule};
use crate::numkernel::{vector, Rng};
use crate::world::{oracle_label, WorldSpec};

fn require_samples(samples: &[Vec<f64>]) -> Result<()> {
    if samples.is_empty() {
        Err(Error::InvalidArgument("no samples to evaluate".into()))
    } else {
        Ok(())
    }
}

/// Fraction of samples whose oracle label equals the target, per targeted
/// attribute, in target order.
pub fn acc(world: &WorldSpec, samples: &[Vec<f64>], targets: &[(String, bool)]) -> Result<Vec<(String, f64)>> {
    require_samples(samples)?;
    let cols = targets
        .iter()
        .map(|(name, _)| world.attribute_index(name))
        .collect::<Result<Vec<_>>>()?;
    let mut hits = vec![0usize; targets.len()];
    for z in samples {
        let labels = oracle_label(world, z)?;
        for (k, (&j, (_, y))) in cols.iter().zip(targets).enumerate() {
            if labels[j] == *y {
                hits[k] += 1;
            }
        }
    }
    Ok(targets
        .iter()
        .zip(hits)
        .map(|((name, _), h)| (name.clone(), h as f64 / samples.len() as f64))
        .collect())
}

/// Accuracy of one attribute against per-sample targets.
pub fn acc_per_sample(world: &WorldSpec, samples: &[Vec<f64>], attribute: &str, targets: &[bool]) -> Result<f64> {
    require_samples(samples)?;
    check_dim(samples.len(), targets.len())?;
    let j = world.attribute_index(attribute)?;
    let mut hits = 0usize;
    for (z, &y) in samples.iter().zip(targets) {
        if oracle_label(world, z)?[j] == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Sample mean and unbiased covariance.
pub fn gaussian_fit(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    require_samples(samples)?;
    let d = samples[0].len();
    for z in samples {
        check_dim(d, z.len())?;
    }
    let mean = vector::mean(samples);
    let mut cov = vec![vec![0.0; d]; d];
    for z in samples {
        for i in 0..d {
            let a = z[i] - mean[i];
            for j in 0..=i {
                cov[i][j] += a * (z[j] - mean[j]);
            }
        }
    }
    let denom = (samples.len().max(2) - 1) as f64;
    for i in 0..d {
        for j in 0..=i {
            cov[i][j] /= denom;
            cov[j][i] = cov[i][j];
        }
    }
    Ok((mean, cov))
}

fn to_matrix(c: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    check_dim(d, c.len())?;
    for row in c {
        check_dim(d, row.len())?;
    }
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (c[i][j] + c[j][i]));
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("covariance".into()));
    }
    Ok(m)
}

fn psd_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let scale = m.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
    let e = SymmetricEigen::new(m);
    if e.eigenvalues.iter().any(|&l| l < -1e-8 * scale) {
        return Err(Error::InvalidArgument(format!("{what} is not positive semi-definite")));
    }
    Ok(e)
}

/// `‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2 (√Σ1 Σ2 √Σ1)^{1/2})`, with negative
/// eigenvalues clamped to zero in both square roots.
pub fn frechet_distance(m1: &[f64], c1: &[Vec<f64>], m2: &[f64], c2: &[Vec<f64>]) -> Result<f64> {
    let d = m1.len();
    check_dim(d, m2.len())?;
    let s1 = to_matrix(c1, d)?;
    let s2 = to_matrix(c2, d)?;
    let e1 = psd_eigen(s1.clone(), "covariance")?;
    psd_eigen(s2.clone(), "covariance")?;
    let root = DVector::from_iterator(d, e1.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    let sqrt1 = &e1.eigenvectors * DMatrix::from_diagonal(&root) * e1.eigenvectors.transpose();
    let inner = &sqrt1 * &s2 * &sqrt1;
    let inner = 0.5 * (&inner + inner.transpose());
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let mean_term: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b) * (a - b)).sum();
    let v = mean_term + s1.trace() + s2.trace() - 2.0 * cross;
    if !v.is_finite() {
        return Err(Error::NonFinite("Fréchet distance".into()));
    }
    Ok(v.max(0.0))
}

/// Fréchet distance between a Gaussian fit of `samples` and the reference
/// moments.
pub fn latent_fid(samples: &[Vec<f64>], ref_mean: &[f64], ref_cov: &[Vec<f64>]) -> Result<f64> {
    let d = ref_mean.len();
    if samples.len() < d + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples for a {d}-dimensional fit, got {}",
            d + 1,
            samples.len()
        )));
    }
    let (m, c) = gaussian_fit(samples)?;
    frechet_distance(&m, &c, ref_mean, ref_cov)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityStats {
    pub distances: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Euclidean distances `‖z_out − ẑ‖` over aligned pairs.
pub fn identity_distance(sources: &[Vec<f64>], outputs: &[Vec<f64>]) -> Result<IdentityStats> {
    check_dim(sources.len(), outputs.len())?;
    require_samples(sources)?;
    let distances = sources
        .iter()
        .zip(outputs)
        .map(|(a, b)| {
            check_dim(a.len(), b.len())?;
            Ok(vector::distance(a, b))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = distances.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(IdentityStats {
        mean: distances.iter().sum::<f64>() / distances.len() as f64,
        median: quantile(&sorted, 0.5),
        q10: quantile(&sorted, 0.1),
        q90: quantile(&sorted, 0.9),
        max: sorted[sorted.len() - 1],
        distances,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeAcc {
    pub attribute: String,
    pub target: bool,
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub n: usize,
    pub seed: u64,
    pub unconditional_baseline: bool,
    pub acc: Vec<AttributeAcc>,
    pub latent_fid: Option<f64>,
    /// Fréchet distance of the reference-free baseline (e.g. unconditional
    /// samples) to the same reference moments.
    pub baseline_fid: Option<f64>,
    pub identity: Option<IdentityStats>,
}

impl EvalReport {
    pub fn acc_of(&self, attribute: &str) -> Option<f64> {
        self.acc.iter().find(|a| a.attribute == attribute).map(|a| a.acc)
    }

    /// One `metric,attribute,value` row per metric and attribute.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,attribute,value\n");
        for a in &self.acc {
            let _ = writeln!(out, "acc,{}={},{}", a.attribute, u8::from(a.target), a.acc);
        }
        if let Some(f) = self.latent_fid {
            let _ = writeln!(out, "latent_fid,,{f}");
        }
        if let Some(f) = self.baseline_fid {
            let _ = writeln!(out, "baseline_fid,,{f}");
        }
        if let Some(id) = &self.identity {
            for (k, v) in [
                ("identity_mean", id.mean),
                ("identity_median", id.median),
                ("identity_q10", id.q10),
                ("identity_q90", id.q90),
                ("identity_max", id.max),
            ] {
                let _ = writeln!(out, "{k},,{v}");
            }
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`; returns both paths.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<[std::path::PathBuf; 2]> {
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        fs::write(&csv, self.to_csv())?;
        let mut summary = self.clone();
        if let Some(id) = summary.identity.as_mut() {
            id.distances.clear();
        }
        fs::write(&json, serde_json::to_string_pretty(&summary)? + "\n")?;
        Ok([csv, json])
    }
}

/// Square matrix with a header row and column of names; `None` cells print
/// as `---`.
pub fn matrix_csv(names: &[String], rows: &[String], m: &[Vec<Option<f64>>]) -> String {
    let mut out = String::new();
    out.push_str(
        &std::iter::once(String::new())
            .chain(names.iter().cloned())
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for (name, row) in rows.iter().zip(m) {
        out.push_str(name);
        for v in row {
            out.push(',');
            match v {
                Some(x) => {
                    let _ = write!(out, "{x}");
                }
                None => out.push_str("---"),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementReport {
    pub attributes: Vec<String>,
    /// Attribute edited at each stage.
    pub edits: Vec<String>,
    /// `delta[k][j]`: ACC change of attribute `j` caused by edit `k`; `None`
    /// for the edited attribute itself.
    pub delta: Vec<Vec<Option<f64>>>,
    /// ACC of the edited attribute after edit `k`.
    pub targeted_acc: Vec<f64>,
    /// ACC gain of the edited attribute from edit `k`.
    pub targeted_gain: Vec<f64>,
}

impl DisentanglementReport {
    pub fn max_off_target(&self) -> f64 {
        self.delta
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |a, x| a.max(x.abs()))
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.attributes, &self.edits, &self.delta)
    }
}

/// Sequentially edits `sources` one attribute at a time (each with its own
/// scale) with per-sample targets drawn uniformly, and records how each edit moves the oracle ACC
/// of every other attribute. An attribute's reference label is its target
/// once it has been edited and its original oracle label before that.
pub fn disentanglement_report(
    world: &WorldSpec,
    editor: &dyn Editor,
    edits: &[(String, ScaleSchedule)],
    sources: &[Vec<f64>],
    rng: &mut Rng,
) -> Result<DisentanglementReport> {
    if world.attributes.len() < 2 {
        return Err(Error::InvalidArgument("need at least two attributes".into()));
    }
    require_samples(sources)?;
    let k = world.attributes.len();
    let n = sources.len();
    let edit_cols = edits
        .iter()
        .map(|(e, _)| world.attribute_index(e))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<bool>> = (0..n).map(|_| (0..k).map(|_| rng.coin()).collect()).collect();
    let mut reference = sources
        .iter()
        .map(|z| oracle_label(world, z))
        .collect::<Result<Vec<_>>>()?;
    let acc_table = |zs: &[Vec<f64>], refs: &[Vec<bool>]| -> Result<Vec<f64>> {
        let mut hits = vec![0usize; k];
        for (z, r) in zs.iter().zip(refs) {
            for (j, (l, t)) in oracle_label(world, z)?.iter().zip(r).enumerate() {
                if l == t {
                    hits[j] += 1;
                }
            }
        }
        Ok(hits.into_iter().map(|h| h as f64 / n as f64).collect())
    };

    let mut current = sources.to_vec();
    let mut delta = Vec::with_capacity(edits.len());
    let mut targeted_acc = Vec::with_capacity(edits.len());
    let mut targeted_gain = Vec::with_capacity(edits.len());
    for ((name, scale), &col) in edits.iter().zip(&edit_cols) {
        for (r, t) in reference.iter_mut().zip(&targets) {
            r[col] = t[col];
        }
        let before = acc_table(&current, &reference)?;
        let next: Vec<Vec<f64>> = rng
            .split(n)
            .into_par_iter()
            .zip(current.par_iter().zip(&targets))
            .map(|(mut r, (z, t))| {
                let term = GuidanceTerm::towards(name.clone(), t[col], *scale);
                editor.edit(z, std::slice::from_ref(&term), &mut r)
            })
            .collect::<Result<_>>()?;
        let after = acc_table(&next, &reference)?;
        delta.push((0..k).map(|j| (j != col).then(|| after[j] - before[j])).collect());
        targeted_acc.push(after[col]);
        targeted_gain.push(after[col] - before[col]);
        current = next;
    }
    Ok(DisentanglementReport {
        attributes: world.attribute_names(),
        edits: edits.iter().map(|(e, _)| e.clone()).collect(),
        delta,
        targeted_acc,
        targeted_gain,
    })
}
