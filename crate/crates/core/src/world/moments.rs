//! Exact moments of the world mixture restricted to a label assignment.
//!
//! Each component is standardised (`z = m + s x`, `x ~ N(0, I)`), so every
//! label becomes a half-space `n·x > l` with unit `n`. Orthogonal half-spaces
//! factorise into 1-D truncated normals (closed form). Otherwise the
//! constrained subspace (rank ≤ 3) is integrated with one coordinate handled
//! analytically and the rest by composite Simpson quadrature.

use statrs::function::erf::erfc;

use super::WorldSpec;
use crate::error::{Error, Result};
use crate::numkernel::vector;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalMoments {
    /// Mixture probability of the condition.
    pub probability: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        INV_SQRT_2PI * (-0.5 * x * x).exp()
    }
}

/// Upper tail `P(X > x)`.
fn upper(x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else if x == f64::NEG_INFINITY {
        1.0
    } else {
        0.5 * erfc(x / SQRT_2)
    }
}

/// `P(lo < X < hi)` without catastrophic cancellation in either tail.
fn interval_mass(lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        0.0
    } else if lo >= 0.0 {
        upper(lo) - upper(hi)
    } else if hi <= 0.0 {
        upper(-hi) - upper(-lo)
    } else {
        1.0 - upper(hi) - upper(-lo)
    }
}

/// `(Z, E[X 1], E[X² 1])` over `(lo, hi)` for a standard normal.
fn interval_moments(lo: f64, hi: f64) -> (f64, f64, f64) {
    let z = interval_mass(lo, hi);
    let (plo, phi) = (pdf(lo), pdf(hi));
    let m1 = plo - phi;
    let tlo = if lo.is_finite() { lo * plo } else { 0.0 };
    let thi = if hi.is_finite() { hi * phi } else { 0.0 };
    (z, m1, z + tlo - thi)
}

struct HalfSpace {
    normal: Vec<f64>,
    threshold: f64,
}

/// Moments of a standard normal in `R^d` restricted to the half-spaces.
/// Returns `(P, E[x], Cov[x])`.
fn standard_normal_restricted(d: usize, hs: &[HalfSpace]) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let orthogonal = hs.iter().enumerate().all(|(i, a)| {
        hs[i + 1..]
            .iter()
            .all(|b| vector::dot(&a.normal, &b.normal).abs() < 1e-12)
    });
    let mut mean = vec![0.0; d];
    let mut cov = identity(d);
    if orthogonal {
        let mut p = 1.0;
        for h in hs {
            let (z, m1, m2) = interval_moments(h.threshold, f64::INFINITY);
            if z <= 0.0 {
                return Ok((0.0, mean, cov));
            }
            p *= z;
            let mu = m1 / z;
            let var = m2 / z - mu * mu;
            vector::axpy(&mut mean, mu, &h.normal);
            for (i, row) in cov.iter_mut().enumerate() {
                for (j, c) in row.iter_mut().enumerate() {
                    *c += (var - 1.0) * h.normal[i] * h.normal[j];
                }
            }
        }
        return Ok((p, mean, cov));
    }
    general(d, hs)
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn gram_schmidt(vectors: impl IntoIterator<Item = Vec<f64>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for mut v in vectors {
        for b in &basis {
            let c = vector::dot(&v, b);
            vector::axpy(&mut v, -c, b);
        }
        let n = vector::norm(&v);
        if n > 1e-9 {
            basis.push(vector::scale(&v, 1.0 / n));
        }
    }
    basis
}

fn simpson_nodes(half_width: f64, intervals: usize) -> Vec<(f64, f64)> {
    simpson_on(-half_width, half_width, intervals)
}

fn simpson_on(a: f64, b: f64, intervals: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / intervals as f64;
    (0..=intervals)
        .map(|k| {
            let w = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (a + k as f64 * h, w * h / 3.0)
        })
        .collect()
}

/// Composite Simpson nodes on `[-half_width, half_width]` with panels split
/// at `breaks`, so integrands with kinks there keep full accuracy.
fn split_simpson_nodes(half_width: f64, intervals: usize, breaks: &[f64]) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|b| b.is_finite() && b.abs() < half_width)
        .collect();
    cuts.push(-half_width);
    cuts.push(half_width);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    cuts.windows(2)
        .flat_map(|w| {
            let share = (w[1] - w[0]) / (2.0 * half_width) * intervals as f64;
            let n = 2 * ((share / 2.0).ceil() as usize).max(8);
            simpson_on(w[0], w[1], n)
        })
        .collect()
}

fn general(d: usize, hs: &[HalfSpace]) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let q = gram_schmidt(hs.iter().map(|h| h.normal.clone()));
    let r = q.len();
    if r > 3 {
        return Err(Error::InvalidArgument(format!(
            "conditional moments support at most 3 non-orthogonal constraints, got rank {r}"
        )));
    }
    // constraint normals in the r-dim subspace coordinates
    let coeffs: Vec<Vec<f64>> = hs
        .iter()
        .map(|h| q.iter().map(|b| vector::dot(b, &h.normal)).collect())
        .collect();

    // analytic axis: the candidate with the largest minimum |v·p_i|
    let mut candidates: Vec<Vec<f64>> = coeffs.clone();
    let mut sum = vec![0.0; r];
    for c in &coeffs {
        vector::axpy(&mut sum, 1.0, c);
    }
    candidates.push(sum);
    candidates.extend((0..r).map(|i| {
        let mut e = vec![0.0; r];
        e[i] = 1.0;
        e
    }));
    let v = candidates
        .into_iter()
        .filter(|c| vector::norm(c) > 1e-9)
        .map(|c| vector::scale(&c, 1.0 / vector::norm(&c)))
        .max_by(|a, b| {
            let score = |v: &Vec<f64>| {
                coeffs
                    .iter()
                    .map(|c| vector::dot(v, c).abs())
                    .fold(f64::INFINITY, f64::min)
            };
            score(a).total_cmp(&score(b))
        })
        .expect("rank ≥ 1");
    let axes = gram_schmidt(std::iter::once(v.clone()).chain((0..r).map(|i| {
        let mut e = vec![0.0; r];
        e[i] = 1.0;
        e
    })));
    let comp = &axes[1..];
    let m = comp.len();

    let along: Vec<f64> = coeffs.iter().map(|c| vector::dot(&v, c)).collect();
    let across: Vec<Vec<f64>> = coeffs
        .iter()
        .map(|c| comp.iter().map(|b| vector::dot(b, c)).collect())
        .collect();

    let grid: Vec<(Vec<f64>, f64)> = match m {
        0 => vec![(vec![], 1.0)],
        1 => {
            // bounds on the analytic axis are (thr_i - a_i b) / k_i; the
            // integrand has kinks where two of them cross or an indicator flips
            let mut breaks = Vec::new();
            for i in 0..hs.len() {
                let (ki, ai, ti) = (along[i], across[i][0], hs[i].threshold);
                if ki.abs() < 1e-12 {
                    if ai.abs() > 1e-12 {
                        breaks.push(ti / ai);
                    }
                    continue;
                }
                for j in i + 1..hs.len() {
                    let (kj, aj, tj) = (along[j], across[j][0], hs[j].threshold);
                    if kj.abs() < 1e-12 {
                        continue;
                    }
                    let slope = aj / kj - ai / ki;
                    if slope.abs() > 1e-12 {
                        breaks.push((tj / kj - ti / ki) / slope);
                    }
                }
            }
            split_simpson_nodes(9.0, 4000, &breaks)
                .into_iter()
                .map(|(x, w)| (vec![x], w * pdf(x)))
                .collect()
        }
        _ => {
            let nodes = simpson_nodes(9.0, 600);
            nodes
                .iter()
                .flat_map(|&(x, wx)| {
                    nodes
                        .iter()
                        .map(move |&(y, wy)| (vec![x, y], wx * wy * pdf(x) * pdf(y)))
                })
                .collect()
        }
    };

    let mut p = 0.0;
    let mut es = 0.0;
    let mut ess = 0.0;
    let mut eb = vec![0.0; m];
    let mut ebb = vec![vec![0.0; m]; m];
    let mut esb = vec![0.0; m];
    for (b, w) in &grid {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for ((h, k), acr) in hs.iter().zip(&along).zip(&across) {
            let slack = vector::dot(acr, b) - h.threshold;
            if k.abs() < 1e-12 {
                if slack <= 0.0 {
                    lo = f64::INFINITY;
                }
                continue;
            }
            let bound = -slack / k;
            if *k > 0.0 {
                lo = lo.max(bound);
            } else {
                hi = hi.min(bound);
            }
        }
        if lo >= hi {
            continue;
        }
        let (z, m1, m2) = interval_moments(lo, hi);
        p += w * z;
        es += w * m1;
        ess += w * m2;
        for i in 0..m {
            eb[i] += w * z * b[i];
            esb[i] += w * m1 * b[i];
            for j in 0..m {
                ebb[i][j] += w * z * b[i] * b[j];
            }
        }
    }
    if p <= 0.0 {
        return Ok((0.0, vec![0.0; d], identity(d)));
    }
    es /= p;
    ess /= p;
    eb.iter_mut().for_each(|x| *x /= p);
    esb.iter_mut().for_each(|x| *x /= p);
    ebb.iter_mut().flatten().for_each(|x| *x /= p);

    // back to subspace coordinates a = C b + s v
    let mut ea = vector::scale(&v, es);
    for (i, c) in comp.iter().enumerate() {
        vector::axpy(&mut ea, eb[i], c);
    }
    let mut eaa = vec![vec![0.0; r]; r];
    for i in 0..r {
        for j in 0..r {
            let mut s = v[i] * v[j] * ess;
            for (k, ck) in comp.iter().enumerate() {
                s += (ck[i] * v[j] + v[i] * ck[j]) * esb[k];
                for (l, cl) in comp.iter().enumerate() {
                    s += ck[i] * cl[j] * ebb[k][l];
                }
            }
            eaa[i][j] = s;
        }
    }
    // lift to R^d: E[x] = Q^T E[a], Cov[x] = I - Q^T Q + Q^T Cov[a] Q
    let mut mean = vec![0.0; d];
    for (k, qk) in q.iter().enumerate() {
        vector::axpy(&mut mean, ea[k], qk);
    }
    let mut cov = identity(d);
    for (k, qk) in q.iter().enumerate() {
        for (l, ql) in q.iter().enumerate() {
            let c = eaa[k][l] - ea[k] * ea[l] - if k == l { 1.0 } else { 0.0 };
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += c * qk[i] * ql[j];
                }
            }
        }
    }
    Ok((p, mean, cov))
}

fn resolve(world: &WorldSpec, condition: &[(String, bool)]) -> Result<Vec<(usize, bool)>> {
    let mut seen = std::collections::HashSet::new();
    condition
        .iter()
        .map(|(name, label)| {
            let i = world.attribute_index(name)?;
            if !seen.insert(i) {
                return Err(Error::InvalidArgument(format!("attribute `{name}` conditioned twice")));
            }
            Ok((i, *label))
        })
        .collect()
}

struct ComponentMoments {
    weight: f64,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

fn per_component(world: &WorldSpec, condition: &[(usize, bool)]) -> Result<Vec<ComponentMoments>> {
    let k = world.components.len() as f64;
    world
        .components
        .iter()
        .map(|c| {
            let hs: Vec<HalfSpace> = condition
                .iter()
                .map(|&(i, label)| {
                    let a = &world.attributes[i];
                    let sign = if label { 1.0 } else { -1.0 };
                    let norm = vector::norm(&a.normal);
                    let margin = sign * (vector::dot(&a.normal, &c.mean) + a.offset);
                    HalfSpace {
                        normal: vector::scale(&a.normal, sign / norm),
                        threshold: -margin / (c.stddev * norm),
                    }
                })
                .collect();
            let (p, ex, cx) = standard_normal_restricted(world.dim, &hs)?;
            let mean: Vec<f64> = c.mean.iter().zip(&ex).map(|(m, x)| m + c.stddev * x).collect();
            let s2 = c.stddev * c.stddev;
            let cov = cx
                .into_iter()
                .map(|row| row.into_iter().map(|x| s2 * x).collect())
                .collect();
            Ok(ComponentMoments {
                weight: p / k,
                mean,
                cov,
            })
        })
        .collect()
}

pub(super) fn condition_probability(world: &WorldSpec, condition: &[(String, bool)]) -> Result<f64> {
    let cond = resolve(world, condition)?;
    Ok(per_component(world, &cond)?.iter().map(|c| c.weight).sum())
}

/// Mean and covariance of the world mixture restricted to the labels in
/// `condition` (`(attribute, label)` pairs).
pub fn oracle_conditional_moments(world: &WorldSpec, condition: &[(String, bool)]) -> Result<ConditionalMoments> {
    let cond = resolve(world, condition)?;
    let parts = per_component(world, &cond)?;
    let total: f64 = parts.iter().map(|c| c.weight).sum();
    if !(total > 1e-300) {
        return Err(Error::ZeroProbability);
    }
    let d = world.dim;
    let mut mean = vec![0.0; d];
    for c in &parts {
        vector::axpy(&mut mean, c.weight / total, &c.mean);
    }
    let mut cov = vec![vec![0.0; d]; d];
    for c in &parts {
        let w = c.weight / total;
        if w == 0.0 {
            continue;
        }
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += w * (c.cov[i][j] + (c.mean[i] - mean[i]) * (c.mean[j] - mean[j]));
            }
        }
    }
    Ok(ConditionalMoments {
        probability: total,
        mean,
        covariance: cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{standard_world, Preset};

    fn cond(pairs: &[(&str, bool)]) -> Vec<(String, bool)> {
        pairs.iter().map(|(n, l)| (n.to_string(), *l)).collect()
    }

    #[test]
    fn truncated_normal_closed_form() {
        // half-normal: mean sqrt(2/pi), variance 1 - 2/pi
        let (z, m1, m2) = interval_moments(0.0, f64::INFINITY);
        assert!((z - 0.5).abs() < 1e-15);
        let mu = m1 / z;
        assert!((mu - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((m2 / z - mu * mu - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-14);
        assert_eq!(interval_mass(1.0, 1.0), 0.0);
        assert!((interval_mass(f64::NEG_INFINITY, f64::INFINITY) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn point_mass_limit() {
        let mut w = standard_world(Preset::Quadrants2d);
        for c in &mut w.components {
            c.stddev = 0.01;
        }
        let m = oracle_conditional_moments(&w, &cond(&[("A", true), ("B", true)])).unwrap();
        assert!((m.mean[0] - 2.0).abs() < 1e-9 && (m.mean[1] - 2.0).abs() < 1e-9);
        assert!((m.probability - 0.25).abs() < 1e-12);
    }

    #[test]
    fn mirrored_conditions_mirror_means() {
        let w = standard_world(Preset::Quadrants2d);
        let pp = oracle_conditional_moments(&w, &cond(&[("A", true), ("B", true)])).unwrap();
        let nn = oracle_conditional_moments(&w, &cond(&[("A", false), ("B", false)])).unwrap();
        let pn = oracle_conditional_moments(&w, &cond(&[("A", true), ("B", false)])).unwrap();
        for i in 0..2 {
            assert!((pp.mean[i] + nn.mean[i]).abs() < 1e-12);
        }
        assert!((pp.mean[0] - pn.mean[0]).abs() < 1e-12);
        assert!((pp.mean[1] + pn.mean[1]).abs() < 1e-12);
    }

    #[test]
    fn quadrature_agrees_with_closed_form() {
        // an orthogonal pair forced through the quadrature path
        let hs = vec![
            HalfSpace {
                normal: vec![1.0, 0.0, 0.0],
                threshold: -0.3,
            },
            HalfSpace {
                normal: vec![0.0, 1.0, 0.0],
                threshold: 0.7,
            },
        ];
        let (p1, m1, c1) = standard_normal_restricted(3, &hs).unwrap();
        let (p2, m2, c2) = general(3, &hs).unwrap();
        assert!((p1 - p2).abs() < 1e-9, "{p1} {p2}");
        for i in 0..3 {
            assert!((m1[i] - m2[i]).abs() < 1e-8);
            for j in 0..3 {
                assert!((c1[i][j] - c2[i][j]).abs() < 1e-8, "{i}{j} {} {}", c1[i][j], c2[i][j]);
            }
        }
    }

    #[test]
    fn zero_probability_condition() {
        let mut w = standard_world(Preset::Quadrants2d);
        w.attributes[1].normal = vec![1.0, 0.0];
        // A = [x > 0] and "B" = [x > 0]: A=1, B=0 is empty
        assert!(matches!(
            oracle_conditional_moments(&w, &cond(&[("A", true), ("B", false)])),
            Err(Error::ZeroProbability)
        ));
    }

    #[test]
    fn empty_condition_is_mixture() {
        let w = standard_world(Preset::Quadrants2d);
        let m = oracle_conditional_moments(&w, &[]).unwrap();
        assert_eq!(m.probability, 1.0);
        assert!(m.mean.iter().all(|x| x.abs() < 1e-15));
        assert!((m.covariance[0][0] - 4.25).abs() < 1e-12);
        assert!(m.covariance[0][1].abs() < 1e-12);
    }
}
