//! Latent attribute classifiers `p(y = 1 | z) = σ(f(z))` with a linear or
//! small-MLP logit `f`, their input gradients, and training on clean
//! latents.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numkernel::{adam_step, vector, Activation, AdamConfig, AdamState, Mlp, Rng};
use crate::world::AttributedDataset;

/// Logits are clamped to this magnitude so log-probabilities stay finite.
const LOGIT_CLAMP: f64 = 1e4;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierModel {
    Linear { weights: Vec<f64>, bias: f64 },
    Mlp { mlp: Mlp },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentClassifier {
    pub attribute: String,
    #[serde(flatten)]
    pub model: ClassifierModel,
}

impl LatentClassifier {
    pub fn linear(attribute: impl Into<String>, weights: Vec<f64>, bias: f64) -> Self {
        Self {
            attribute: attribute.into(),
            model: ClassifierModel::Linear { weights, bias },
        }
    }

    pub fn mlp(attribute: impl Into<String>, mlp: Mlp) -> Result<Self> {
        check_dim(1, mlp.output_dim())?;
        Ok(Self {
            attribute: attribute.into(),
            model: ClassifierModel::Mlp { mlp },
        })
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.model, ClassifierModel::Linear { .. })
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            ClassifierModel::Linear { weights, .. } => weights.len(),
            ClassifierModel::Mlp { mlp } => mlp.input_dim(),
        }
    }

    pub fn logit(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.dim(), z.len())?;
        let f = match &self.model {
            ClassifierModel::Linear { weights, bias } => vector::dot(weights, z) + bias,
            ClassifierModel::Mlp { mlp } => mlp.forward(z)?[0],
        };
        Ok(f.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
    }

    /// Logit and its gradient w.r.t. `z`.
    pub fn logit_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim(), z.len())?;
        match &self.model {
            ClassifierModel::Linear { weights, bias } => Ok((
                (vector::dot(weights, z) + bias).clamp(-LOGIT_CLAMP, LOGIT_CLAMP),
                weights.clone(),
            )),
            ClassifierModel::Mlp { mlp } => {
                let trace = mlp.forward_trace(z)?;
                let f = trace.output()[0];
                let g = mlp.backward(&trace, &[1.0], None)?;
                Ok((f.clamp(-LOGIT_CLAMP, LOGIT_CLAMP), g))
            }
        }
    }

    /// `log p(y | z)`, computed as a stable log-sigmoid.
    pub fn log_prob(&self, z: &[f64], y: bool) -> Result<f64> {
        let f = self.logit(z)?;
        Ok(if y { -softplus(-f) } else { -softplus(f) })
    }

    /// `∇_z log p(y | z)`: `(1 − σ(f)) ∇f` for `y = 1`, `−σ(f) ∇f` for `y = 0`.
    pub fn grad_log_prob(&self, z: &[f64], y: bool) -> Result<Vec<f64>> {
        let (f, g) = self.logit_and_grad(z)?;
        let p = sigmoid(f);
        let k = if y { 1.0 - p } else { -p };
        Ok(vector::scale(&g, k))
    }

    /// The weight vector `w` of a linear classifier.
    pub fn weight_direction(&self) -> Result<&[f64]> {
        match &self.model {
            ClassifierModel::Linear { weights, .. } => Ok(weights),
            ClassifierModel::Mlp { .. } => Err(Error::NotLinear(self.attribute.clone())),
        }
    }

    pub fn predict(&self, z: &[f64]) -> Result<bool> {
        Ok(self.logit(z)? > 0.0)
    }
}

/// Classifiers keyed by attribute name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassifierSet {
    by_name: BTreeMap<String, LatentClassifier>,
}

impl ClassifierSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, c: LatentClassifier) {
        self.by_name.insert(c.attribute.clone(), c);
    }

    pub fn get(&self, attribute: &str) -> Result<&LatentClassifier> {
        self.by_name
            .get(attribute)
            .ok_or_else(|| Error::MissingClassifier(attribute.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &LatentClassifier> {
        self.by_name.values()
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

impl FromIterator<LatentClassifier> for ClassifierSet {
    fn from_iter<I: IntoIterator<Item = LatentClassifier>>(iter: I) -> Self {
        let mut s = Self::new();
        for c in iter {
            s.insert(c);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierKind {
    Linear,
    Mlp { hidden: Vec<usize>, activation: Activation },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTraining {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch: usize,
    pub validation_fraction: f64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.02,
            l2: 1e-4,
            batch: 256,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub train_size: usize,
    pub validation_size: usize,
    pub final_loss: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn accuracy(c: &LatentClassifier, data: &AttributedDataset, col: usize, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(f64::NAN);
    }
    let mut hits = 0usize;
    for &i in idx {
        if c.predict(&data.latents[i])? == data.labels[i][col] {
            hits += 1;
        }
    }
    Ok(hits as f64 / idx.len() as f64)
}

/// Minimises mean negative log-likelihood plus `l2/2 · ‖weights‖²` with Adam
/// over shuffled mini-batches; a held-out split gives validation accuracy.
pub fn train_classifier(
    kind: &ClassifierKind,
    data: &AttributedDataset,
    attribute: &str,
    cfg: &ClassifierTraining,
    rng: &mut Rng,
) -> Result<(LatentClassifier, AccuracyReport)> {
    let col = data.attribute_index(attribute)?;
    let positives = data.labels.iter().filter(|l| l[col]).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::InvalidArgument(format!(
            "attribute `{attribute}` has a single class in the training data"
        )));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) || cfg.batch == 0 {
        return Err(Error::InvalidArgument("bad classifier training settings".into()));
    }
    let d = data.dim();
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let n_val = ((data.len() as f64) * cfg.validation_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(data.len() - 1));
    let mut train_idx = train_idx.to_vec();

    // flat parameters and the mask of entries under the L2 penalty
    let (mut params, penalised, mut mlp) = match kind {
        ClassifierKind::Linear => {
            let mut mask = vec![true; d];
            mask.push(false);
            (vec![0.0; d + 1], mask, None)
        }
        ClassifierKind::Mlp { hidden, activation } => {
            let m = Mlp::new(d, hidden, 1, *activation, rng)?;
            let mask = m
                .layers()
                .iter()
                .flat_map(|l| {
                    std::iter::repeat_n(true, l.weights.len()).chain(std::iter::repeat_n(false, l.bias.len()))
                })
                .collect();
            (m.params(), mask, Some(m))
        }
    };
    let mut adam = AdamState::new(params.len(), AdamConfig::default());
    let mut grads = vec![0.0; params.len()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        rng.shuffle(&mut train_idx);
        let mut epoch_loss = 0.0;
        for chunk in train_idx.chunks(cfg.batch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let z = &data.latents[i];
                let y = if data.labels[i][col] { 1.0 } else { 0.0 };
                let f = match &mlp {
                    None => vector::dot(&params[..d], z) + params[d],
                    Some(m) => m.forward(z)?[0],
                };
                epoch_loss += if y > 0.5 { softplus(-f) } else { softplus(f) };
                // d(-log p)/df = σ(f) - y
                let r = (sigmoid(f) - y) * scale;
                match &mlp {
                    None => {
                        vector::axpy(&mut grads[..d], r, z);
                        grads[d] += r;
                    }
                    Some(m) => {
                        let tr = m.forward_trace(z)?;
                        m.backward(&tr, &[r], Some(&mut grads))?;
                    }
                }
            }
            for ((g, p), &pen) in grads.iter_mut().zip(&params).zip(&penalised) {
                if pen {
                    *g += cfg.l2 * p;
                }
            }
            adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
            if let Some(m) = mlp.as_mut() {
                m.set_params(&params)?;
            }
        }
        let loss = epoch_loss / train_idx.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("classifier loss for `{attribute}`")));
        }
        epoch_losses.push(loss);
    }

    let classifier = match mlp {
        None => LatentClassifier::linear(attribute, params[..d].to_vec(), params[d]),
        Some(m) => LatentClassifier::mlp(attribute, m)?,
    };
    let report = AccuracyReport {
        train_accuracy: accuracy(&classifier, data, col, &train_idx)?,
        validation_accuracy: accuracy(&classifier, data, col, val_idx)?,
        train_size: train_idx.len(),
        validation_size: val_idx.len(),
        final_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses,
    };
    Ok((classifier, report))
}

/// Cosine similarity between the weight vectors of linear classifiers.
pub fn pairwise_correlation(cs: &[&LatentClassifier]) -> Result<Vec<Vec<f64>>> {
    let dirs = cs
        .iter()
        .map(|c| {
            let w = c.weight_direction()?;
            let n = vector::norm(w);
            if !(n > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "classifier `{}` has a zero weight vector",
                    c.attribute
                )));
            }
            Ok(vector::scale(w, 1.0 / n))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = dirs.first() {
        for d in &dirs {
            check_dim(first.len(), d.len())?;
        }
    }
    Ok(dirs
        .iter()
        .enumerate()
        .map(|(i, a)| {
            dirs.iter()
                .enumerate()
                .map(|(j, b)| if i == j { 1.0 } else { vector::dot(a, b) })
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainingMeta {
    pub seed: u64,
    pub settings: ClassifierTraining,
    pub report: AccuracyReport,
}

/// On-disk classifier: kind, attribute, parameters and training metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierCheckpoint {
    pub format: String,
    pub version: u32,
    pub classifier: LatentClassifier,
    pub training: Option<ClassifierTrainingMeta>,
}

pub const CLASSIFIER_FORMAT: &str = "lcg-classifier";

impl ClassifierCheckpoint {
    pub fn new(classifier: LatentClassifier, training: Option<ClassifierTrainingMeta>) -> Self {
        Self {
            format: CLASSIFIER_FORMAT.into(),
            version: 1,
            classifier,
            training,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.format != CLASSIFIER_FORMAT || ck.version != 1 {
            return Err(Error::format(
                "classifier checkpoint",
                format!("unsupported format {} v{}", ck.format, ck.version),
            ));
        }
        if let ClassifierModel::Mlp { mlp } = &ck.classifier.model {
            check_dim(1, mlp.output_dim())?;
        }
        Ok(ck)
    }
}
