use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GuidanceSpec, GuidanceTerm, ScaleSchedule, SourceTerm};
use crate::diffusion::Sampler;
use crate::error::{Error, Result};
use crate::world::AttributedDataset;

/// Where a manipulation's source latent comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceRef {
    Inline { latent: Vec<f64> },
    Dataset { index: usize },
}

impl SourceRef {
    pub fn resolve(&self, data: Option<&AttributedDataset>) -> Result<Vec<f64>> {
        match self {
            SourceRef::Inline { latent } => Ok(latent.clone()),
            SourceRef::Dataset { index } => {
                let ds = data.ok_or_else(|| {
                    Error::InvalidArgument("source refers to a dataset row but no dataset was given".into())
                })?;
                ds.latents
                    .get(*index)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("dataset has no row {index} (n = {})", ds.len())))
            }
        }
    }
}

fn zero_scale() -> ScaleSchedule {
    ScaleSchedule::Constant(0.0)
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Guidance spec as written on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceFile {
    #[serde(default)]
    pub terms: Vec<GuidanceTerm>,
    #[serde(default)]
    pub source: Option<SourceRef>,
    #[serde(default = "zero_scale")]
    pub gamma: ScaleSchedule,
    #[serde(default = "one")]
    pub source_variance: f64,
    #[serde(default = "yes")]
    pub use_unconditional_score: bool,
    #[serde(default)]
    pub sampler: Option<Sampler>,
    #[serde(default)]
    pub t_start: Option<usize>,
}

impl GuidanceFile {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn to_spec(&self, data: Option<&AttributedDataset>) -> Result<GuidanceSpec> {
        let source = match &self.source {
            Some(r) => Some(SourceTerm {
                latent: r.resolve(data)?,
                gamma: self.gamma,
                variance: self.source_variance,
            }),
            None => None,
        };
        let spec = GuidanceSpec {
            terms: self.terms.clone(),
            source,
            use_unconditional_score: self.use_unconditional_score,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::Polarity;

    #[test]
    fn parses_inline_and_indexed_sources() {
        let f: GuidanceFile = serde_json::from_str(
            r#"{
                "terms": [
                    {"attribute": "A", "polarity": "assert", "scale": 2.0},
                    {"attribute": "B", "polarity": "negate", "scale": {"start": 3, "end": 1}}
                ],
                "source": {"latent": [0.5, -1.0]},
                "gamma": 5,
                "sampler": {"kind": "ddim", "eta": 0.0},
                "t_start": 40
            }"#,
        )
        .unwrap();
        assert_eq!(f.terms[1].polarity, Polarity::Negate);
        assert_eq!(f.sampler, Some(Sampler::Ddim { eta: 0.0 }));
        let spec = f.to_spec(None).unwrap();
        assert_eq!(spec.source.unwrap().latent, vec![0.5, -1.0]);

        let g: GuidanceFile = serde_json::from_str(r#"{"source": {"index": 1}, "gamma": 1}"#).unwrap();
        assert!(g.to_spec(None).is_err());
        let ds = AttributedDataset {
            attributes: vec!["A".into()],
            latents: vec![vec![0.0, 0.0], vec![1.0, 2.0]],
            labels: vec![vec![false], vec![true]],
            provenance: None,
        };
        assert_eq!(g.to_spec(Some(&ds)).unwrap().source.unwrap().latent, vec![1.0, 2.0]);
        let bad: GuidanceFile = serde_json::from_str(r#"{"source": {"index": 7}}"#).unwrap();
        assert!(bad.to_spec(Some(&ds)).is_err());
    }
}
