use rayon::prelude::*;

use super::{linear_solution, GuidanceSpec, GuidanceTerm, ResolvedGuidance, ScaleSchedule, SourceTerm};
use crate::classifiers::ClassifierSet;
use crate::diffusion::{forward_sample, run_chain, sample, NoisePredictor, NoiseSchedule, Sampler};
use crate::error::{check_dim, Error, Result};
use crate::numkernel::Rng;

/// Full reverse chains from `N(0, I)` with the spec's guidance at each step.
pub fn guided_sample(
    spec: &GuidanceSpec,
    net: &dyn NoisePredictor,
    classifiers: &ClassifierSet,
    s: &NoiseSchedule,
    n: usize,
    sampler: Sampler,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    if let Some(src) = &spec.source {
        check_dim(net.latent_dim(), src.latent.len())?;
    }
    let g = ResolvedGuidance::new(spec, classifiers, s.steps())?;
    sample(s, net, n, sampler, Some(&g), rng)
}

fn source_of(spec: &GuidanceSpec) -> Result<&SourceTerm> {
    spec.source
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("manipulation needs a source term".into()))
}

/// Corrupts the source latent to `t_start`, then runs guided reverse steps
/// down to `t = 0`.
#[allow(clippy::too_many_arguments)]
pub fn manipulate(
    spec: &GuidanceSpec,
    net: &dyn NoisePredictor,
    classifiers: &ClassifierSet,
    s: &NoiseSchedule,
    t_start: usize,
    sampler: Sampler,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let src = source_of(spec)?;
    check_dim(net.latent_dim(), src.latent.len())?;
    let g = ResolvedGuidance::new(spec, classifiers, s.steps())?;
    let (z, _) = forward_sample(s, &src.latent, t_start, rng)?;
    run_chain(s, net, z, t_start, sampler, Some(&g), rng)
}

/// [`manipulate`] for many sources in parallel; the spec's source latent is
/// replaced by each entry of `sources` and every chain gets its own split
/// generator.
#[allow(clippy::too_many_arguments)]
pub fn manipulate_batch(
    spec: &GuidanceSpec,
    sources: &[Vec<f64>],
    net: &dyn NoisePredictor,
    classifiers: &ClassifierSet,
    s: &NoiseSchedule,
    t_start: usize,
    sampler: Sampler,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    let template = source_of(spec)?;
    rng.split(sources.len())
        .into_par_iter()
        .zip(sources.par_iter())
        .map(|(mut r, z)| {
            let mut one = spec.clone();
            one.source = Some(SourceTerm {
                latent: z.clone(),
                ..template.clone()
            });
            manipulate(&one, net, classifiers, s, t_start, sampler, &mut r)
        })
        .collect()
}

/// Applies each edit in turn, using the previous output as the source.
/// Returns every intermediate latent.
#[allow(clippy::too_many_arguments)]
pub fn sequential_edit(
    edits: &[GuidanceSpec],
    net: &dyn NoisePredictor,
    classifiers: &ClassifierSet,
    s: &NoiseSchedule,
    source: &[f64],
    t_start: usize,
    sampler: Sampler,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    if edits.is_empty() {
        return Err(Error::InvalidArgument("edit list is empty".into()));
    }
    let mut current = source.to_vec();
    let mut out = Vec::with_capacity(edits.len());
    for edit in edits {
        let mut spec = edit.clone();
        spec.source = Some(SourceTerm {
            latent: current,
            ..source_of(edit)?.clone()
        });
        current = manipulate(&spec, net, classifiers, s, t_start, sampler, rng)?;
        out.push(current.clone());
    }
    Ok(out)
}

/// Sequential editing with the closed-form linear edit at each stage.
pub fn sequential_linear_edit(
    edits: &[GuidanceSpec],
    classifiers: &ClassifierSet,
    source: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if edits.is_empty() {
        return Err(Error::InvalidArgument("edit list is empty".into()));
    }
    let mut current = source.to_vec();
    let mut out = Vec::with_capacity(edits.len());
    for edit in edits {
        let src = SourceTerm {
            latent: current,
            ..source_of(edit)?.clone()
        };
        current = linear_solution(&edit.terms, &src, classifiers)?;
        out.push(current.clone());
    }
    Ok(out)
}

/// Something that edits a latent according to attribute terms, anchored to
/// the input latent.
pub trait Editor: Sync {
    fn edit(&self, z: &[f64], terms: &[GuidanceTerm], rng: &mut Rng) -> Result<Vec<f64>>;
}

/// Closed-form linear edits.
pub struct LinearEditor<'a> {
    pub classifiers: &'a ClassifierSet,
    pub gamma: f64,
}

impl Editor for LinearEditor<'_> {
    fn edit(&self, z: &[f64], terms: &[GuidanceTerm], _rng: &mut Rng) -> Result<Vec<f64>> {
        linear_solution(terms, &SourceTerm::new(z.to_vec(), self.gamma), self.classifiers)
    }
}

/// Guided reverse-diffusion edits from a corrupted source.
pub struct DiffusionEditor<'a> {
    pub net: &'a dyn NoisePredictor,
    pub classifiers: &'a ClassifierSet,
    pub schedule: &'a NoiseSchedule,
    pub sampler: Sampler,
    pub t_start: usize,
    pub gamma: ScaleSchedule,
}

impl Editor for DiffusionEditor<'_> {
    fn edit(&self, z: &[f64], terms: &[GuidanceTerm], rng: &mut Rng) -> Result<Vec<f64>> {
        let spec = GuidanceSpec::new(terms.to_vec()).with_source(SourceTerm::new(z.to_vec(), self.gamma));
        manipulate(
            &spec,
            self.net,
            self.classifiers,
            self.schedule,
            self.t_start,
            self.sampler,
            rng,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::LatentClassifier;
    use crate::diffusion::make_schedule;

    struct Zero;
    impl NoisePredictor for Zero {
        fn latent_dim(&self) -> usize {
            2
        }
        fn predict_noise(&self, _z: &[f64], _t: usize) -> Result<Vec<f64>> {
            Ok(vec![0.0; 2])
        }
    }

    fn set() -> ClassifierSet {
        [LatentClassifier::linear("A", vec![1.0, 0.0], 0.0)]
            .into_iter()
            .collect()
    }

    #[test]
    fn single_edit_matches_manipulate() {
        let s = make_schedule(20, 0.01, 0.2).unwrap();
        let spec =
            GuidanceSpec::new(vec![GuidanceTerm::assert("A", 1.0)]).with_source(SourceTerm::new(vec![0.5, 0.5], 2.0));
        let one = manipulate(&spec, &Zero, &set(), &s, 10, Sampler::Ddpm, &mut Rng::new(3)).unwrap();
        let seq = sequential_edit(
            std::slice::from_ref(&spec),
            &Zero,
            &set(),
            &s,
            &[0.5, 0.5],
            10,
            Sampler::Ddpm,
            &mut Rng::new(3),
        )
        .unwrap();
        assert_eq!(seq, vec![one]);
    }

    #[test]
    fn manipulation_requires_source() {
        let s = make_schedule(20, 0.01, 0.2).unwrap();
        let spec = GuidanceSpec::new(vec![GuidanceTerm::assert("A", 1.0)]);
        assert!(manipulate(&spec, &Zero, &set(), &s, 10, Sampler::Ddpm, &mut Rng::new(0)).is_err());
        assert!(sequential_edit(&[], &Zero, &set(), &s, &[0.0, 0.0], 10, Sampler::Ddpm, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn linear_sequence_threads_output() {
        let e = GuidanceSpec::new(vec![GuidanceTerm::assert("A", 2.0)]).with_source(SourceTerm::new(vec![], 1.0));
        let out = sequential_linear_edit(&[e.clone(), e], &set(), &[0.0, 1.0]).unwrap();
        assert_eq!(out, vec![vec![2.0, 1.0], vec![4.0, 1.0]]);
    }
}
