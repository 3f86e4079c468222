//! Composition of the unconditional score with classifier gradients
//! (conjunction and negation) and a source-latent anchor, plus the
//! closed-form linear edit these reduce to under linear classifiers.

mod edit;
mod file;
mod linear;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierSet, LatentClassifier};
use crate::diffusion::{score_from_noise, Guide, NoisePredictor, NoiseSchedule, SourcePull};
use crate::error::{check_dim, Error, Result};
use crate::numkernel::vector;

pub use edit::{
    guided_sample, manipulate, manipulate_batch, sequential_edit, sequential_linear_edit, DiffusionEditor, Editor,
    LinearEditor,
};
pub use file::{GuidanceFile, SourceRef};
pub use linear::{fixed_point_flow, linear_solution};

/// Per-timestep scale. `Linear` ramps from `start` at `t = T` to `end` at
/// `t = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleSchedule {
    Constant(f64),
    Linear { start: f64, end: f64 },
}

impl ScaleSchedule {
    pub fn at(&self, t: usize, steps: usize) -> f64 {
        match *self {
            ScaleSchedule::Constant(v) => v,
            ScaleSchedule::Linear { start, end } => end + (start - end) * t as f64 / steps.max(1) as f64,
        }
    }

    /// The value at `t = 0`.
    pub fn last(&self) -> f64 {
        self.at(0, 1)
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        let fine = match *self {
            ScaleSchedule::Constant(v) => ok(v),
            ScaleSchedule::Linear { start, end } => ok(start) && ok(end),
        };
        if fine {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{what} scale must be finite and >= 0")))
        }
    }

    fn is_zero(&self) -> bool {
        match *self {
            ScaleSchedule::Constant(v) => v == 0.0,
            ScaleSchedule::Linear { start, end } => start == 0.0 && end == 0.0,
        }
    }
}

impl From<f64> for ScaleSchedule {
    fn from(v: f64) -> Self {
        ScaleSchedule::Constant(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Assert,
    Negate,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Assert => 1.0,
            Polarity::Negate => -1.0,
        }
    }

    /// The label this polarity steers the attribute towards.
    pub fn target(self) -> bool {
        self == Polarity::Assert
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceTerm {
    pub attribute: String,
    pub polarity: Polarity,
    pub scale: ScaleSchedule,
}

impl GuidanceTerm {
    pub fn assert(attribute: impl Into<String>, scale: impl Into<ScaleSchedule>) -> Self {
        Self {
            attribute: attribute.into(),
            polarity: Polarity::Assert,
            scale: scale.into(),
        }
    }

    pub fn negate(attribute: impl Into<String>, scale: impl Into<ScaleSchedule>) -> Self {
        Self {
            attribute: attribute.into(),
            polarity: Polarity::Negate,
            scale: scale.into(),
        }
    }

    /// Steers `attribute` towards `target`: assert for 1, negate for 0.
    pub fn towards(attribute: impl Into<String>, target: bool, scale: impl Into<ScaleSchedule>) -> Self {
        if target {
            Self::assert(attribute, scale)
        } else {
            Self::negate(attribute, scale)
        }
    }
}

fn unit_variance() -> f64 {
    1.0
}

/// Gaussian anchor `log p(ẑ | z) = −γ ‖z − ẑ‖² / (2 σ_src²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceTerm {
    pub latent: Vec<f64>,
    pub gamma: ScaleSchedule,
    #[serde(default = "unit_variance")]
    pub variance: f64,
}

impl SourceTerm {
    pub fn new(latent: Vec<f64>, gamma: impl Into<ScaleSchedule>) -> Self {
        Self {
            latent,
            gamma: gamma.into(),
            variance: 1.0,
        }
    }

    fn strength(&self, t: usize, steps: usize) -> f64 {
        self.gamma.at(t, steps) / self.variance
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    #[serde(default)]
    pub terms: Vec<GuidanceTerm>,
    #[serde(default)]
    pub source: Option<SourceTerm>,
    #[serde(default = "default_true")]
    pub use_unconditional_score: bool,
}

fn default_true() -> bool {
    true
}

impl GuidanceSpec {
    pub fn new(terms: Vec<GuidanceTerm>) -> Self {
        Self {
            terms,
            source: None,
            use_unconditional_score: true,
        }
    }

    pub fn with_source(mut self, source: SourceTerm) -> Self {
        self.source = Some(source);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for term in &self.terms {
            if !seen.insert(term.attribute.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "attribute `{}` appears in more than one term",
                    term.attribute
                )));
            }
            term.scale.validate(&term.attribute)?;
        }
        if let Some(src) = &self.source {
            src.gamma.validate("source")?;
            if !(src.variance > 0.0 && src.variance.is_finite()) {
                return Err(Error::InvalidArgument("source variance must be positive".into()));
            }
            if !vector::all_finite(&src.latent) {
                return Err(Error::NonFinite("source latent".into()));
            }
        }
        if !self.use_unconditional_score && self.terms.is_empty() && self.source.is_none() {
            return Err(Error::InvalidArgument(
                "guidance without the unconditional score needs a term or a source".into(),
            ));
        }
        Ok(())
    }

    /// True when no term or source contributes anything.
    pub fn is_unguided(&self) -> bool {
        self.terms.iter().all(|t| t.scale.is_zero()) && self.source.as_ref().is_none_or(|s| s.gamma.is_zero())
    }

    /// The labels the terms steer towards, in term order.
    pub fn targets(&self) -> Vec<(String, bool)> {
        self.terms
            .iter()
            .map(|t| (t.attribute.clone(), t.polarity.target()))
            .collect()
    }
}

/// A spec with its classifiers looked up, usable as a sampler guide.
/// Attribute terms enter as an extra score; the source anchor enters as a
/// quadratic pull.
pub struct ResolvedGuidance<'a> {
    spec: &'a GuidanceSpec,
    classifiers: Vec<&'a LatentClassifier>,
    steps: usize,
}

impl<'a> ResolvedGuidance<'a> {
    pub fn new(spec: &'a GuidanceSpec, classifiers: &'a ClassifierSet, steps: usize) -> Result<Self> {
        spec.validate()?;
        let classifiers = spec
            .terms
            .iter()
            .map(|t| classifiers.get(&t.attribute))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            classifiers,
            steps,
        })
    }

    /// `Σ_assert α_t ∇log p(y=1|z) − Σ_negate β_t ∇log p(y=1|z)`.
    pub fn attribute_score(&self, z: &[f64], t: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; z.len()];
        for (term, c) in self.spec.terms.iter().zip(&self.classifiers) {
            let scale = term.scale.at(t, self.steps);
            if scale == 0.0 {
                continue;
            }
            let g = c.grad_log_prob(z, true)?;
            vector::axpy(&mut out, term.polarity.sign() * scale, &g);
        }
        Ok(out)
    }

    /// `γ_t (ẑ − z) / σ_src²`, or zeros without a source.
    pub fn source_score(&self, z: &[f64], t: usize) -> Result<Vec<f64>> {
        match &self.spec.source {
            Some(src) => {
                check_dim(src.latent.len(), z.len())?;
                let k = src.strength(t, self.steps);
                Ok(src.latent.iter().zip(z).map(|(s, x)| k * (s - x)).collect())
            }
            None => Ok(vec![0.0; z.len()]),
        }
    }
}

impl Guide for ResolvedGuidance<'_> {
    fn extra_score(&self, z_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self.attribute_score(z_t, t)
    }

    fn source_pull(&self, t: usize) -> Option<SourcePull<'_>> {
        self.spec.source.as_ref().map(|src| SourcePull {
            latent: &src.latent,
            strength: src.strength(t, self.steps),
        })
    }
}

/// The full composed score at `(z_t, t)`: the unconditional score (if
/// enabled), attribute terms and the source anchor.
pub fn compose_score(
    spec: &GuidanceSpec,
    net: &dyn NoisePredictor,
    classifiers: &ClassifierSet,
    s: &NoiseSchedule,
    z_t: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    check_dim(net.latent_dim(), z_t.len())?;
    s.check_timestep(t)?;
    let g = ResolvedGuidance::new(spec, classifiers, s.steps())?;
    let mut out = if spec.use_unconditional_score {
        score_from_noise(s, &net.predict_noise(z_t, t)?, t)
    } else {
        vec![0.0; z_t.len()]
    };
    vector::axpy(&mut out, 1.0, &g.attribute_score(z_t, t)?);
    vector::axpy(&mut out, 1.0, &g.source_score(z_t, t)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f64>);
    impl NoisePredictor for Fixed {
        fn latent_dim(&self) -> usize {
            self.0.len()
        }
        fn predict_noise(&self, _z: &[f64], _t: usize) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    fn schedule() -> NoiseSchedule {
        crate::diffusion::make_schedule(10, 0.01, 0.3).unwrap()
    }

    // log-sigmoid gradient at z = 0 with zero bias is w / 2
    fn set() -> ClassifierSet {
        [
            LatentClassifier::linear("A", vec![2.0, 0.0], 0.0),
            LatentClassifier::linear("B", vec![0.0, 2.0], 0.0),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn linear_combination_example() {
        let spec = GuidanceSpec {
            terms: vec![GuidanceTerm::assert("A", 2.0), GuidanceTerm::negate("B", 1.0)],
            source: Some(SourceTerm::new(vec![1.0, 1.0], 3.0)),
            use_unconditional_score: true,
        };
        let s = schedule();
        let out = compose_score(&spec, &Fixed(vec![0.0, 0.0]), &set(), &s, &[0.0, 0.0], 4).unwrap();
        assert!((out[0] - 5.0).abs() < 1e-12 && (out[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_spec_is_unconditional() {
        let s = schedule();
        let net = Fixed(vec![0.4, -0.3]);
        let z = [0.7, 0.1];
        let uncond = score_from_noise(&s, &[0.4, -0.3], 6);
        let spec = GuidanceSpec::new(vec![]);
        assert_eq!(compose_score(&spec, &net, &set(), &s, &z, 6).unwrap(), uncond);
        let zeroed = GuidanceSpec::new(vec![GuidanceTerm::assert("A", 0.0), GuidanceTerm::negate("B", 0.0)])
            .with_source(SourceTerm::new(vec![3.0, 3.0], 0.0));
        assert!(zeroed.is_unguided());
        assert_eq!(compose_score(&zeroed, &net, &set(), &s, &z, 6).unwrap(), uncond);
    }

    #[test]
    fn missing_classifier_and_validation() {
        let s = schedule();
        let net = Fixed(vec![0.0, 0.0]);
        let spec = GuidanceSpec::new(vec![GuidanceTerm::assert("C", 1.0)]);
        assert!(matches!(
            compose_score(&spec, &net, &set(), &s, &[0.0, 0.0], 1),
            Err(Error::MissingClassifier(_))
        ));
        let dup = GuidanceSpec::new(vec![GuidanceTerm::assert("A", 1.0), GuidanceTerm::negate("A", 1.0)]);
        assert!(dup.validate().is_err());
        let neg = GuidanceSpec::new(vec![GuidanceTerm::assert("A", -1.0)]);
        assert!(neg.validate().is_err());
        let mut empty = GuidanceSpec::new(vec![]);
        empty.use_unconditional_score = false;
        assert!(empty.validate().is_err());
    }

    #[test]
    fn linear_ramp_schedule() {
        let r = ScaleSchedule::Linear { start: 4.0, end: 1.0 };
        assert_eq!(r.at(10, 10), 4.0);
        assert_eq!(r.at(0, 10), 1.0);
        assert_eq!(r.at(5, 10), 2.5);
        assert_eq!(r.last(), 1.0);
        let json: ScaleSchedule = serde_json::from_str("2.5").unwrap();
        assert_eq!(json, ScaleSchedule::Constant(2.5));
        let json: ScaleSchedule = serde_json::from_str(r#"{"start":3,"end":0}"#).unwrap();
        assert_eq!(json, ScaleSchedule::Linear { start: 3.0, end: 0.0 });
    }
}
