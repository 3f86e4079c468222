use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schedule::ScheduleParams;
use crate::error::{check_dim, Error, Result};
use crate::numkernel::{Activation, Mlp, Rng};

/// Anything that predicts the injected noise `ε̂(z_t, t)`.
pub trait NoisePredictor: Sync {
    fn latent_dim(&self) -> usize;
    fn predict_noise(&self, z_t: &[f64], t: usize) -> Result<Vec<f64>>;
}

pub const EMBEDDING_DIM: usize = 16;
const MAX_PERIOD: f64 = 10_000.0;

/// Sinusoidal timestep features: `sin(t f_k)` then `cos(t f_k)` for
/// geometrically spaced `f_k = MAX_PERIOD^(-k/8)`.
pub fn timestep_embedding(t: usize) -> [f64; EMBEDDING_DIM] {
    let half = EMBEDDING_DIM / 2;
    let mut out = [0.0; EMBEDDING_DIM];
    for k in 0..half {
        let freq = MAX_PERIOD.powf(-(k as f64) / half as f64);
        let arg = t as f64 * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    out
}

/// MLP noise predictor over `[z_t, embedding(t)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    latent_dim: usize,
    mlp: Mlp,
}

impl Denoiser {
    pub fn new(latent_dim: usize, hidden: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mlp = Mlp::new(latent_dim + EMBEDDING_DIM, hidden, latent_dim, activation, rng)?;
        Ok(Self { latent_dim, mlp })
    }

    pub fn from_mlp(latent_dim: usize, mlp: Mlp) -> Result<Self> {
        check_dim(latent_dim + EMBEDDING_DIM, mlp.input_dim())?;
        check_dim(latent_dim, mlp.output_dim())?;
        Ok(Self { latent_dim, mlp })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub(crate) fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn network_input(&self, z_t: &[f64], t: usize) -> Result<Vec<f64>> {
        check_dim(self.latent_dim, z_t.len())?;
        let mut x = Vec::with_capacity(self.latent_dim + EMBEDDING_DIM);
        x.extend_from_slice(z_t);
        x.extend_from_slice(&timestep_embedding(t));
        Ok(x)
    }
}

impl NoisePredictor for Denoiser {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn predict_noise(&self, z_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self.mlp.forward(&self.network_input(z_t, t)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub final_loss: Option<f64>,
}

/// Versioned on-disk form of a trained denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserCheckpoint {
    pub format: String,
    pub version: u32,
    pub schedule: ScheduleParams,
    pub latent_dim: usize,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub mlp: Mlp,
    pub training: TrainingMeta,
}

pub const DENOISER_FORMAT: &str = "lcg-denoiser";
pub const CHECKPOINT_VERSION: u32 = 1;

impl DenoiserCheckpoint {
    pub fn new(schedule: ScheduleParams, net: &Denoiser, training: TrainingMeta) -> Self {
        let activation = net
            .mlp
            .layers()
            .first()
            .filter(|_| net.mlp.layers().len() > 1)
            .map_or(Activation::Identity, |l| l.activation);
        Self {
            format: DENOISER_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            schedule,
            latent_dim: net.latent_dim,
            embedding_dim: EMBEDDING_DIM,
            hidden: net.mlp.hidden_widths(),
            activation,
            mlp: net.mlp.clone(),
            training,
        }
    }

    pub fn denoiser(&self) -> Result<Denoiser> {
        Denoiser::from_mlp(self.latent_dim, self.mlp.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.format != DENOISER_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "denoiser checkpoint",
                format!("unsupported format {} v{}", ck.format, ck.version),
            ));
        }
        if ck.embedding_dim != EMBEDDING_DIM {
            return Err(Error::format("denoiser checkpoint", "embedding size"));
        }
        ck.denoiser()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_shape() {
        let e = timestep_embedding(0);
        assert_eq!(&e[..8], &[0.0; 8]);
        assert_eq!(&e[8..], &[1.0; 8]);
        assert_ne!(timestep_embedding(3), timestep_embedding(4));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = Rng::new(9);
        let net = Denoiser::new(2, &[8, 8], Activation::Relu, &mut rng).unwrap();
        let ck = DenoiserCheckpoint::new(
            ScheduleParams::default(),
            &net,
            TrainingMeta {
                seed: 9,
                steps: 0,
                batch: 1,
                lr: 1e-3,
                final_loss: None,
            },
        );
        assert_eq!(ck.activation, Activation::Relu);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        ck.save(&p).unwrap();
        let back = DenoiserCheckpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.denoiser().unwrap(), net);
    }

    #[test]
    fn output_dimension_is_latent_dimension() {
        let mut rng = Rng::new(1);
        let net = Denoiser::new(3, &[4], Activation::Tanh, &mut rng).unwrap();
        assert_eq!(net.predict_noise(&[0.1, 0.2, 0.3], 5).unwrap().len(), 3);
        assert!(net.predict_noise(&[0.1], 5).is_err());
    }
}
