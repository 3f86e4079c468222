//! Synthetic attributed latent worlds: an isotropic Gaussian mixture whose
//! binary attributes are half-space indicators `u·z + c > 0`. The world is the
//! ground truth behind every accuracy and Fréchet-distance measurement.

mod io;
mod moments;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{read_dataset, write_dataset, DatasetSidecar};
pub use moments::{oracle_conditional_moments, ConditionalMoments};

use crate::error::{check_dim, Error, Result};
use crate::numkernel::{vector, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    pub stddev: f64,
}

/// Binary attribute: label 1 iff `normal · z + offset > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Attribute {
    pub fn label(&self, z: &[f64]) -> bool {
        vector::dot(&self.normal, z) + self.offset > 0.0
    }
}

/// Equal-weight isotropic Gaussian mixture with half-space attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub dim: usize,
    pub components: Vec<Component>,
    pub attributes: Vec<Attribute>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Four components at `(±2, ±2)`, attributes `A = [x > 0]`, `B = [y > 0]`.
    #[serde(rename = "quadrants2d")]
    Quadrants2d,
    /// Eight components at `±2` on the first three of eight axes, one
    /// attribute per axis.
    #[serde(rename = "axes8d")]
    Axes8d,
    /// `axes8d` with the second attribute normal tilted towards the first.
    #[serde(rename = "axes8d-correlated")]
    Axes8dCorrelated,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadrants2d" => Ok(Preset::Quadrants2d),
            "axes8d" => Ok(Preset::Axes8d),
            "axes8d-correlated" => Ok(Preset::Axes8dCorrelated),
            other => Err(Error::InvalidArgument(format!("unknown world preset `{other}`"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Quadrants2d => "quadrants2d",
            Preset::Axes8d => "axes8d",
            Preset::Axes8dCorrelated => "axes8d-correlated",
        })
    }
}

fn axis(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

pub fn standard_world(preset: Preset) -> WorldSpec {
    match preset {
        Preset::Quadrants2d => WorldSpec {
            dim: 2,
            components: [(2.0, 2.0), (-2.0, 2.0), (-2.0, -2.0), (2.0, -2.0)]
                .iter()
                .map(|&(x, y)| Component {
                    mean: vec![x, y],
                    stddev: 0.5,
                })
                .collect(),
            attributes: vec![
                Attribute {
                    name: "A".into(),
                    normal: axis(2, 0),
                    offset: 0.0,
                },
                Attribute {
                    name: "B".into(),
                    normal: axis(2, 1),
                    offset: 0.0,
                },
            ],
        },
        Preset::Axes8d | Preset::Axes8dCorrelated => {
            let d = 8;
            let components = (0..8u32)
                .map(|bits| {
                    let mut mean = vec![0.0; d];
                    for (j, m) in mean.iter_mut().take(3).enumerate() {
                        *m = if bits >> j & 1 == 1 { 2.0 } else { -2.0 };
                    }
                    Component { mean, stddev: 0.5 }
                })
                .collect();
            let mut normals = vec![axis(d, 0), axis(d, 1), axis(d, 2)];
            if preset == Preset::Axes8dCorrelated {
                normals[1] = vec![0.6, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
            }
            let attributes = normals
                .into_iter()
                .enumerate()
                .map(|(i, normal)| Attribute {
                    name: format!("attr{}", i + 1),
                    normal,
                    offset: 0.0,
                })
                .collect();
            WorldSpec {
                dim: d,
                components,
                attributes,
            }
        }
    }
}

impl WorldSpec {
    /// Checks shapes, non-zero normals and that every attribute takes both
    /// labels with probability at least 0.05.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("world dimension must be positive".into()));
        }
        if self.components.is_empty() {
            return Err(Error::InvalidArgument("world needs at least one component".into()));
        }
        for c in &self.components {
            check_dim(self.dim, c.mean.len())?;
            if !(c.stddev > 0.0 && c.stddev.is_finite()) || !vector::all_finite(&c.mean) {
                return Err(Error::InvalidArgument("component stddev must be positive".into()));
            }
        }
        let mut names = std::collections::HashSet::new();
        for a in &self.attributes {
            check_dim(self.dim, a.normal.len())?;
            if !names.insert(a.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate attribute `{}`", a.name)));
            }
            if !(vector::norm(&a.normal) > 0.0) || !a.offset.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "attribute `{}` needs a non-zero normal",
                    a.name
                )));
            }
        }
        for a in &self.attributes {
            let p = moments::condition_probability(self, &[(a.name.clone(), true)])?;
            if !(0.05..=0.95).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "attribute `{}` is degenerate: P(label = 1) = {p:.4}",
                    a.name
                )));
            }
        }
        Ok(())
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.name.clone()).collect()
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }
}

/// Latent points with exact half-space labels.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributedDataset {
    pub attributes: Vec<String>,
    pub latents: Vec<Vec<f64>>,
    pub labels: Vec<Vec<bool>>,
    /// Generating world and seed, when known.
    pub provenance: Option<DatasetSidecar>,
}

impl AttributedDataset {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.latents
            .first()
            .map_or_else(|| self.provenance.as_ref().map_or(0, |p| p.world.dim), Vec::len)
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Labels of one attribute across all points.
    pub fn column(&self, name: &str) -> Result<Vec<bool>> {
        let j = self.attribute_index(name)?;
        Ok(self.labels.iter().map(|l| l[j]).collect())
    }
}

pub fn sample_dataset(world: &WorldSpec, n: usize, seed: u64, rng: &mut Rng) -> AttributedDataset {
    let mut latents = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = &world.components[rng.below(world.components.len())];
        let z: Vec<f64> = c.mean.iter().map(|m| m + c.stddev * rng.gaussian()).collect();
        labels.push(world.attributes.iter().map(|a| a.label(&z)).collect());
        latents.push(z);
    }
    AttributedDataset {
        attributes: world.attribute_names(),
        latents,
        labels,
        provenance: Some(DatasetSidecar {
            world: world.clone(),
            seed,
            n,
        }),
    }
}

/// Exact labels of `z`, one per attribute (strict inequality: boundary → 0).
pub fn oracle_label(world: &WorldSpec, z: &[f64]) -> Result<Vec<bool>> {
    check_dim(world.dim, z.len())?;
    Ok(world.attributes.iter().map(|a| a.label(z)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in [Preset::Quadrants2d, Preset::Axes8d, Preset::Axes8dCorrelated] {
            standard_world(p).validate().unwrap();
            assert_eq!(p.to_string().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn quadrants_labels() {
        let w = standard_world(Preset::Quadrants2d);
        assert_eq!(oracle_label(&w, &[2.0, 2.0]).unwrap(), vec![true, true]);
        assert_eq!(oracle_label(&w, &[2.0, 0.1]).unwrap(), vec![true, true]);
        assert_eq!(oracle_label(&w, &[0.0, -1.0]).unwrap(), vec![false, false]);
        assert!(oracle_label(&w, &[1.0]).is_err());
    }

    #[test]
    fn quadrant_means_sign_symmetric() {
        let w = standard_world(Preset::Quadrants2d);
        for c in &w.components {
            for flip in [[-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]] {
                let mirrored = [c.mean[0] * flip[0], c.mean[1] * flip[1]];
                assert!(w.components.iter().any(|o| o.mean == mirrored));
            }
        }
    }

    #[test]
    fn axes_normals_orthonormal() {
        let w = standard_world(Preset::Axes8d);
        for (i, a) in w.attributes.iter().enumerate() {
            for (j, b) in w.attributes.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_eq!(vector::dot(&a.normal, &b.normal), expected);
            }
        }
    }

    #[test]
    fn dataset_quadrant_shares_and_consistency() {
        let w = standard_world(Preset::Quadrants2d);
        let n = 10_000;
        let ds = sample_dataset(&w, n, 5, &mut Rng::new(5));
        let mut counts = [0usize; 4];
        for (z, l) in ds.latents.iter().zip(&ds.labels) {
            assert_eq!(&oracle_label(&w, z).unwrap(), l);
            counts[usize::from(l[0]) * 2 + usize::from(l[1])] += 1;
        }
        for c in counts {
            let share = c as f64 / n as f64;
            assert!((share - 0.25).abs() < 0.02, "share {share}");
        }
        let again = sample_dataset(&w, n, 5, &mut Rng::new(5));
        assert_eq!(again, ds);
    }

    #[test]
    fn invalid_worlds() {
        let mut w = standard_world(Preset::Quadrants2d);
        w.attributes[0].normal = vec![0.0, 0.0];
        assert!(w.validate().is_err());
        let mut w = standard_world(Preset::Quadrants2d);
        w.attributes[0].offset = 100.0;
        assert!(w.validate().is_err());
        let mut w = standard_world(Preset::Quadrants2d);
        w.components.clear();
        assert!(w.validate().is_err());
    }
}
