use serde::{Deserialize, Serialize};

use crate::distributions::ElboMode;
use crate::error::{Result, VadError};
use crate::models::SigmaMode;
use crate::optim::PlateauConfig;
use crate::tensor::Activation;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Vad,
    Vae,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Vad => "vad",
            ModelKind::Vae => "vae",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = VadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vad" => Ok(ModelKind::Vad),
            "vae" => Ok(ModelKind::Vae),
            other => Err(VadError::config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Everything needed to train one model. Unset keys in a TOML file fall
/// back to these defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub latent_dim: usize,
    /// Hidden widths of the decoder, between `latent_dim` and the data width.
    pub decoder_hidden: Vec<usize>,
    /// Hidden widths of the encoder trunk (VAE only).
    pub encoder_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Feed the mask to the encoder next to the zero-imputed row.
    pub encoder_uses_mask: bool,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub mc_samples: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub elbo_mode: ElboMode,
    pub sigma: SigmaMode,
    /// Likelihood variance on every observed dimension.
    pub lambda: f64,
    pub plateau: PlateauConfig,
    /// Step budget for test-time VAD posterior optimization.
    pub infer_max_steps: usize,
    pub infer_plateau: PlateauConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Vad,
            latent_dim: 8,
            decoder_hidden: vec![50, 50],
            encoder_hidden: vec![50, 50],
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
            encoder_uses_mask: true,
            lr_theta: 1e-3,
            lr_phi: 1e-2,
            mc_samples: 1,
            batch_size: 64,
            max_epochs: 200,
            elbo_mode: ElboMode::ReconOnly,
            sigma: SigmaMode::Fixed(0.1),
            lambda: 1.0,
            plateau: PlateauConfig::default(),
            infer_max_steps: 2000,
            infer_plateau: PlateauConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VadError::config(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.decoder_hidden.contains(&0) || self.encoder_hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        for (name, lr) in [("lr_theta", self.lr_theta), ("lr_phi", self.lr_phi)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.mc_samples == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("mc_samples, batch_size and max_epochs must be positive".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        for p in [self.plateau, self.infer_plateau] {
            if !(p.rel_tol > 0.0) || p.patience == 0 {
                return bad(format!("invalid plateau settings {p:?}"));
            }
        }
        self.sigma.validate()
    }

    pub fn decoder_dims(&self, data_dim: usize) -> Vec<usize> {
        let mut dims = vec![self.latent_dim];
        dims.extend_from_slice(&self.decoder_hidden);
        dims.push(data_dim);
        dims
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| VadError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Cartesian hyperparameter grid applied on top of a base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub latent_dims: Vec<usize>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    /// Network learning rates; also used for the posteriors unless
    /// `posterior_learning_rates` is non-empty.
    pub learning_rates: Vec<f64>,
    pub posterior_learning_rates: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            latent_dims: vec![8, 25],
            widths: vec![50, 100],
            depths: vec![2, 4],
            learning_rates: vec![1e-2, 1e-3],
            posterior_learning_rates: vec![],
            sigmas: vec![0.01, 0.1, 0.5],
        }
    }
}

impl HyperGrid {
    /// A grid holding exactly the settings of `cfg`.
    pub fn single(cfg: &TrainConfig) -> Self {
        let width = cfg.decoder_hidden.first().copied().unwrap_or(50);
        HyperGrid {
            latent_dims: vec![cfg.latent_dim],
            widths: vec![width],
            depths: vec![cfg.decoder_hidden.len()],
            learning_rates: vec![cfg.lr_theta],
            posterior_learning_rates: vec![cfg.lr_phi],
            sigmas: match cfg.sigma {
                SigmaMode::Fixed(s) => vec![s],
                SigmaMode::Learnable => vec![],
            },
        }
    }

    /// Every grid point, in a fixed order. Encoder and decoder share depth and width.
    pub fn expand(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let sigmas: Vec<SigmaMode> = if self.sigmas.is_empty() {
            vec![base.sigma]
        } else {
            self.sigmas.iter().map(|&s| SigmaMode::Fixed(s)).collect()
        };
        let mut out = Vec::new();
        for &dz in &self.latent_dims {
            for &w in &self.widths {
                for &depth in &self.depths {
                    for &lr in &self.learning_rates {
                        let phi_rates = if self.posterior_learning_rates.is_empty() {
                            vec![lr]
                        } else {
                            self.posterior_learning_rates.clone()
                        };
                        for lr_phi in phi_rates {
                            for &sigma in &sigmas {
                                let mut c = base.clone();
                                c.latent_dim = dz;
                                c.decoder_hidden = vec![w; depth];
                                c.encoder_hidden = vec![w; depth];
                                c.lr_theta = lr;
                                c.lr_phi = lr_phi;
                                c.sigma = sigma;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = TrainConfig {
            model: ModelKind::Vae,
            sigma: SigmaMode::Fixed(0.5),
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);

        let partial = TrainConfig::from_toml("model = \"vae\"\nlatent_dim = 3\nsigma = \"learnable\"\n").unwrap();
        assert_eq!(partial.latent_dim, 3);
        assert_eq!(partial.sigma, SigmaMode::Learnable);
        assert_eq!(partial.batch_size, TrainConfig::default().batch_size);

        assert!(TrainConfig::from_toml("latent_dim = 0").is_err());
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert!(TrainConfig::from_toml("sigma = { fixed = -1.0 }").is_err());
    }

    #[test]
    fn default_grid_size() {
        assert_eq!(HyperGrid::default().expand(&TrainConfig::default()).len(), 48);
        let single = HyperGrid::single(&TrainConfig::default()).expand(&TrainConfig::default());
        assert_eq!(single, vec![TrainConfig::default()]);
    }
}
