//! Training and inference loops, evaluation, experiments and checkpoints.

mod checkpoint;
mod config;
mod experiment;
mod infer;
mod metrics;
mod train;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, read_posteriors, save_checkpoint, write_posteriors,
    CHECKPOINT_VERSION,
};
pub use config::{HyperGrid, ModelKind, TrainConfig};
pub use experiment::{
    cell_mean, experiment1, experiment2, DataSource, Exp2Mode, ExperimentConfig, ExperimentData, ExperimentOutput,
    Selection,
};
pub use infer::{decode_means, evaluate_lower_bound, impute, impute_rows, infer, infer_from, InferOutput};
pub use metrics::{eval_mse, write_metrics_csv, CategoryMse, MetricsRecord, METRICS_HEADER};
pub use train::{train, EpochStats, TrainOutput};

use crate::error::{Result, VadError};
use crate::models::{DecoderMLP, EncoderMLP};
use crate::tensor::Tensor;

/// A trained generative model: the decoder, plus the encoder for the VAE.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: TrainConfig,
    pub decoder: DecoderMLP,
    pub encoder: Option<EncoderMLP>,
}

impl ModelBundle {
    /// Freshly initialized networks for data of width `data_dim`.
    pub fn init(cfg: &TrainConfig, data_dim: usize) -> Result<Self> {
        cfg.validate()?;
        if data_dim == 0 {
            return Err(VadError::config("data width must be positive"));
        }
        let decoder = DecoderMLP::new(
            &cfg.decoder_dims(data_dim),
            cfg.hidden_activation,
            cfg.output_activation,
            derive_seed(cfg.seed, streams::DECODER_INIT),
        )?;
        let encoder = match cfg.model {
            ModelKind::Vad => None,
            ModelKind::Vae => Some(EncoderMLP::new(
                data_dim,
                &cfg.encoder_hidden,
                cfg.latent_dim,
                cfg.hidden_activation,
                cfg.encoder_uses_mask,
                derive_seed(cfg.seed, streams::ENCODER_INIT),
            )?),
        };
        Ok(ModelBundle {
            config: cfg.clone(),
            decoder,
            encoder,
        })
    }

    pub fn kind(&self) -> ModelKind {
        if self.encoder.is_some() {
            ModelKind::Vae
        } else {
            ModelKind::Vad
        }
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.latent_dim()
    }

    pub fn param_count(&self) -> usize {
        self.decoder.param_count() + self.encoder.as_ref().map_or(0, EncoderMLP::param_count)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.decode(z)
    }
}

pub(crate) mod streams {
    pub const DECODER_INIT: u64 = 1;
    pub const ENCODER_INIT: u64 = 2;
    pub const BANK_INIT: u64 = 3;
    pub const TRAIN_NOISE: u64 = 4;
    pub const VAL_BANK_INIT: u64 = 5;
    pub const INFER_BANK_INIT: u64 = 6;
    pub const INFER_NOISE: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent child seed for a named random stream.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0x5851_f42d_4c95_7f2d)))
}
