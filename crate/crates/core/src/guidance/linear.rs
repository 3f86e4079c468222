//! With linear classifiers and no prior, the composed objective is a
//! quadratic whose maximiser is available in closed form.

use super::{GuidanceTerm, SourceTerm};
use crate::classifiers::ClassifierSet;
use crate::error::{check_dim, Error, Result};
use crate::numkernel::vector;

/// `Σ_assert α w − Σ_negate β w` with final-step scales.
fn drift(terms: &[GuidanceTerm], classifiers: &ClassifierSet, d: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; d];
    for term in terms {
        let w = classifiers.get(&term.attribute)?.weight_direction()?;
        check_dim(d, w.len())?;
        vector::axpy(&mut out, term.polarity.sign() * term.scale.last(), w);
    }
    Ok(out)
}

fn final_strength(source: &SourceTerm) -> Result<f64> {
    let g = source.gamma.last() / source.variance;
    if g > 0.0 && g.is_finite() {
        Ok(g)
    } else {
        Err(Error::InvalidArgument("final source scale must be positive".into()))
    }
}

/// `ẑ + (σ_src² / γ_0) (Σ_assert α_0 w − Σ_negate β_0 w)`.
pub fn linear_solution(terms: &[GuidanceTerm], source: &SourceTerm, classifiers: &ClassifierSet) -> Result<Vec<f64>> {
    let g = final_strength(source)?;
    let w = drift(terms, classifiers, source.latent.len())?;
    let mut z = source.latent.clone();
    vector::axpy(&mut z, 1.0 / g, &w);
    Ok(z)
}

/// Gradient ascent `z ← z + step (Σ α w − Σ β w − γ_0 (z − ẑ) / σ_src²)` on the
/// composed objective, with each classifier's gradient taken as its constant
/// weight vector.
pub fn fixed_point_flow(
    terms: &[GuidanceTerm],
    source: &SourceTerm,
    classifiers: &ClassifierSet,
    z_init: &[f64],
    step: f64,
    iters: usize,
) -> Result<Vec<f64>> {
    let g = final_strength(source)?;
    let d = source.latent.len();
    check_dim(d, z_init.len())?;
    if !(step > 0.0 && step * g < 2.0) {
        return Err(Error::InvalidArgument(format!(
            "step {step} is unstable for source strength {g}"
        )));
    }
    let w = drift(terms, classifiers, d)?;
    let bound = 1e6 * (1.0 + vector::norm(z_init) + vector::norm(&source.latent) + vector::norm(&w) / g);
    let mut z = z_init.to_vec();
    for i in 0..iters {
        for j in 0..d {
            z[j] += step * (w[j] - g * (z[j] - source.latent[j]));
        }
        let n = vector::norm(&z);
        if !(n <= bound) {
            return Err(Error::Divergence(format!("fixed-point flow at iteration {i}")));
        }
    }
    Ok(z)
}
