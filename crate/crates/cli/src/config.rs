//! Experiment configuration: one JSON document per experiment.
//!
//! Precedence, highest first: command-line flags, then the config file, then
//! built-in defaults. For the sampler and `t_start`, a value inside the
//! guidance block beats the top-level one.
//!
//! `guidance` and `linear_guidance` may be inline objects or paths (relative
//! to the config file); paths are inlined at load time so the resolved
//! config recorded in the manifest is self-contained. Guidance terms may be
//! written as shorthand strings: `"A"` asserts A and `"-B"` negates B, both at
//! `default_scale`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use lcg_core::classifiers::{ClassifierKind, ClassifierTraining};
use lcg_core::diffusion::{DenoiserTraining, Sampler, ScheduleParams};
use lcg_core::guidance::{GuidanceFile, GuidanceTerm};
use lcg_core::numkernel::Activation;
use lcg_core::world::{standard_world, Preset, WorldSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::MANIFEST_FORMAT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldChoice {
    Preset(Preset),
    Inline(WorldSpec),
}

impl WorldChoice {
    pub fn resolve(&self) -> Result<WorldSpec> {
        let w = match self {
            WorldChoice::Preset(p) => standard_world(*p),
            WorldChoice::Inline(w) => w.clone(),
        };
        w.validate()?;
        Ok(w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub training: DenoiserTraining,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            training: DenoiserTraining::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub attribute: String,
    #[serde(default = "linear_kind")]
    pub kind: ClassifierKind,
    #[serde(default)]
    pub training: ClassifierTraining,
}

fn linear_kind() -> ClassifierKind {
    ClassifierKind::Linear
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElboCheckConfig {
    pub latents: usize,
    pub mc: usize,
}

impl Default for ElboCheckConfig {
    fn default() -> Self {
        Self { latents: 10, mc: 1 }
    }
}

fn default_guidance() -> GuidanceFile {
    serde_json::from_value(json!({})).expect("empty guidance parses")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; required either here or via `--seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_world")]
    pub world: WorldChoice,
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    #[serde(default)]
    pub schedule: ScheduleParams,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    /// Empty means one linear classifier per world attribute.
    #[serde(default)]
    pub classifiers: Vec<ClassifierConfig>,
    #[serde(default = "default_scale")]
    pub default_scale: f64,
    #[serde(default = "default_guidance")]
    pub guidance: GuidanceFile,
    /// Guidance for the closed-form linear edit when it should differ from
    /// `guidance`.
    #[serde(default)]
    pub linear_guidance: Option<GuidanceFile>,
    /// Single-stage term lists for sequential editing.
    #[serde(default)]
    pub edits: Vec<Vec<GuidanceTerm>>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_edit_sources")]
    pub edit_sources: usize,
    #[serde(default = "default_sampler")]
    pub sampler: Sampler,
    #[serde(default)]
    pub t_start: Option<usize>,
    #[serde(default)]
    pub elbo_check: ElboCheckConfig,
}

fn default_world() -> WorldChoice {
    WorldChoice::Preset(Preset::Quadrants2d)
}
fn default_dataset_size() -> usize {
    10_000
}
fn default_scale() -> f64 {
    4.0
}
fn default_samples() -> usize {
    2000
}
fn default_edit_sources() -> usize {
    500
}
fn default_sampler() -> Sampler {
    Sampler::Ddpm
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_value(json!({}), Path::new(".")).expect("empty config parses")
    }
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sampler: Option<Sampler>,
    pub t_start: Option<usize>,
}

fn expand_term(v: &mut Value, scale: f64) -> Result<()> {
    if let Value::String(s) = v {
        let (name, polarity) = match s.strip_prefix('-') {
            Some(rest) => (rest.to_string(), "negate"),
            None => (s.strip_prefix('+').unwrap_or(s).to_string(), "assert"),
        };
        if name.is_empty() {
            bail!("empty attribute name in guidance term `{s}`");
        }
        *v = json!({"attribute": name, "polarity": polarity, "scale": scale});
    }
    Ok(())
}

fn expand_terms(list: &mut Value, scale: f64) -> Result<()> {
    if let Value::Array(items) = list {
        for item in items {
            expand_term(item, scale)?;
        }
    }
    Ok(())
}

fn inline_guidance(v: &mut Value, base: &Path, scale: f64) -> Result<()> {
    if let Value::String(p) = v {
        let path = base.join(&*p);
        let text = fs::read_to_string(&path).with_context(|| format!("reading guidance file {}", path.display()))?;
        *v = serde_json::from_str(&text).with_context(|| format!("parsing guidance file {}", path.display()))?;
    }
    if let Some(terms) = v.get_mut("terms") {
        expand_terms(terms, scale)?;
    }
    Ok(())
}

impl ExperimentConfig {
    /// Loads a config, or the config recorded in a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if v.get("format").and_then(Value::as_str) == Some(MANIFEST_FORMAT) {
            v = v.get("config").cloned().context("manifest has no config")?;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_value(v, base).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn from_value(mut v: Value, base: &Path) -> Result<Self> {
        let Value::Object(map) = &mut v else {
            bail!("config must be a JSON object");
        };
        let scale = match map.get("default_scale") {
            Some(s) => s.as_f64().context("default_scale must be a number")?,
            None => default_scale(),
        };
        for key in ["guidance", "linear_guidance"] {
            if let Some(g) = map.get_mut(key).filter(|g| !g.is_null()) {
                inline_guidance(g, base, scale)?;
            }
        }
        if let Some(Value::Array(edits)) = map.get_mut("edits") {
            for e in edits {
                expand_terms(e, scale)?;
            }
        }
        let cfg: Self = serde_json::from_value(v)?;
        cfg.sampler.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(s) = o.sampler {
            self.sampler = s;
            self.guidance.sampler = None;
            if let Some(l) = &mut self.linear_guidance {
                l.sampler = None;
            }
        }
        if let Some(t) = o.t_start {
            self.t_start = Some(t);
            self.guidance.t_start = None;
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .context("a seed is required (set `seed` in the config or pass --seed)")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("lcg-out"))
    }

    pub fn effective_sampler(&self) -> Sampler {
        self.guidance.sampler.unwrap_or(self.sampler)
    }

    /// Defaults to half the chain length.
    pub fn effective_t_start(&self, steps: usize) -> usize {
        self.guidance.t_start.or(self.t_start).unwrap_or(steps / 2)
    }

    pub fn classifier_configs(&self, world: &WorldSpec) -> Vec<ClassifierConfig> {
        if !self.classifiers.is_empty() {
            return self.classifiers.clone();
        }
        world
            .attribute_names()
            .into_iter()
            .map(|attribute| ClassifierConfig {
                attribute,
                kind: ClassifierKind::Linear,
                training: ClassifierTraining::default(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lcg_core::guidance::Polarity;

    #[test]
    fn defaults_and_shorthand_terms() {
        let cfg = ExperimentConfig::from_value(
            json!({
                "seed": 3,
                "default_scale": 2.5,
                "guidance": {"terms": ["A", "-B"]},
                "edits": [["attr1"], [{"attribute": "attr2", "polarity": "negate", "scale": 1}]]
            }),
            Path::new("."),
        )
        .unwrap();
        assert_eq!(cfg.dataset_size, 10_000);
        assert_eq!(cfg.schedule, ScheduleParams::rescaled(100));
        let t = &cfg.guidance.terms;
        assert_eq!((t[0].attribute.as_str(), t[0].polarity), ("A", Polarity::Assert));
        assert_eq!((t[1].attribute.as_str(), t[1].polarity), ("B", Polarity::Negate));
        assert_eq!(t[1].scale.last(), 2.5);
        assert_eq!(cfg.edits[1][0].polarity, Polarity::Negate);
        assert_eq!(cfg.effective_t_start(100), 50);
    }

    #[test]
    fn flags_beat_file_values() {
        let mut cfg = ExperimentConfig::from_value(
            json!({"seed": 1, "guidance": {"sampler": {"kind": "ddim", "eta": 0.0}, "t_start": 30}}),
            Path::new("."),
        )
        .unwrap();
        assert_eq!(cfg.effective_sampler(), Sampler::Ddim { eta: 0.0 });
        cfg.apply(&Overrides {
            seed: Some(9),
            sampler: Some(Sampler::Ddpm),
            t_start: Some(10),
            ..Default::default()
        });
        assert_eq!(cfg.seed().unwrap(), 9);
        assert_eq!(cfg.effective_sampler(), Sampler::Ddpm);
        assert_eq!(cfg.effective_t_start(100), 10);
    }

    #[test]
    fn guidance_path_is_inlined() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("g.json"), r#"{"terms": ["A"], "gamma": 2}"#).unwrap();
        fs::write(dir.path().join("c.json"), r#"{"seed": 1, "guidance": "g.json"}"#).unwrap();
        let cfg = ExperimentConfig::load(&dir.path().join("c.json")).unwrap();
        assert_eq!(cfg.guidance.terms[0].attribute, "A");
        fs::write(
            dir.path().join("bad.json"),
            r#"{"seed": 1, "guidance": "missing.json"}"#,
        )
        .unwrap();
        assert!(ExperimentConfig::load(&dir.path().join("bad.json")).is_err());
    }

    #[test]
    fn missing_seed_and_unknown_keys_rejected() {
        assert!(ExperimentConfig::default().seed().is_err());
        assert!(ExperimentConfig::from_value(json!({"sed": 1}), Path::new(".")).is_err());
    }
}
