use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::{lower_bound_rows, vad_step, vae_lower_bound, Batch, PosteriorOptimizer, EVAL_CHUNK};
use super::{derive_seed, streams, ModelBundle, ModelKind};
use crate::data::Dataset;
use crate::distributions::DiagGaussianParams;
use crate::error::{Result, VadError};
use crate::models::{PosteriorBank, SigmaMode};
use crate::optim::{PlateauDecision, PlateauState};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug)]
pub struct InferOutput {
    pub posteriors: PosteriorBank,
    /// Mean per-row lower bound reached on the new rows.
    pub lower_bound: f64,
    /// Optimization passes over the rows; 0 for the VAE.
    pub steps: usize,
}

fn check_width(bundle: &ModelBundle, data: &Dataset) -> Result<()> {
    if data.dim() != bundle.data_dim() {
        return Err(VadError::dim(format!(
            "data has {} columns but the model expects {}",
            data.dim(),
            bundle.data_dim()
        )));
    }
    if data.is_empty() {
        return Err(VadError::config("nothing to infer: no rows"));
    }
    Ok(())
}

/// Posteriors for new rows. The decoder is never modified: the VAD optimizes a
/// fresh bank against it, the VAE runs one encoder pass.
pub fn infer(bundle: &ModelBundle, data: &Dataset, seed: u64) -> Result<InferOutput> {
    check_width(bundle, data)?;
    match bundle.kind() {
        ModelKind::Vad => {
            let cfg = &bundle.config;
            let bank = PosteriorBank::new(
                data.len(),
                bundle.latent_dim(),
                cfg.sigma,
                derive_seed(seed, streams::INFER_BANK_INIT),
            )?;
            infer_from(bundle, data, bank, seed)
        }
        ModelKind::Vae => {
            let encoder = bundle.encoder.as_ref().expect("vae bundle");
            let (mu, ls) = encoder.encode_batch(data.x().data(), data.masks().bits())?;
            let n = data.len();
            let dz = bundle.latent_dim();
            let ls = match bundle.config.sigma {
                SigmaMode::Fixed(s) => vec![s.ln(); n * dz],
                SigmaMode::Learnable => ls.into_data(),
            };
            let mu = mu.into_data();
            let rows = (0..n)
                .map(|i| DiagGaussianParams::new(mu[i * dz..(i + 1) * dz].to_vec(), ls[i * dz..(i + 1) * dz].to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let posteriors = PosteriorBank::from_rows(&rows, bundle.config.sigma)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::INFER_NOISE));
            let lower_bound = vae_lower_bound(bundle, data, &mut rng)?;
            Ok(InferOutput {
                posteriors,
                lower_bound,
                steps: 0,
            })
        }
    }
}

/// VAD inference starting from the given bank instead of a fresh one.
pub fn infer_from(bundle: &ModelBundle, data: &Dataset, mut bank: PosteriorBank, seed: u64) -> Result<InferOutput> {
    check_width(bundle, data)?;
    if bundle.kind() != ModelKind::Vad {
        return Err(VadError::config("posterior optimization applies to VAD models only"));
    }
    if bank.len() != data.len() || bank.latent_dim() != bundle.latent_dim() {
        return Err(VadError::dim(format!(
            "bank is {}×{} but data has {} rows and the decoder takes {} latents",
            bank.len(),
            bank.latent_dim(),
            data.len(),
            bundle.latent_dim()
        )));
    }
    let cfg = &bundle.config;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::INFER_NOISE));
    let mut opt = PosteriorOptimizer::new(&bank, cfg.lr_phi);
    let mut plateau = PlateauState::new(cfg.infer_plateau)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut lower_bound = f64::NAN;
    let mut steps = 0;
    while steps < cfg.infer_max_steps {
        let mut total = 0.0;
        for chunk in all.chunks(EVAL_CHUNK) {
            total += vad_step(&bundle.decoder, false, &mut bank, &mut opt, data, chunk, cfg, &mut rng)
                .map_err(|e| VadError::Numeric(format!("inference step {steps}: {e}")))?
                .0;
        }
        steps += 1;
        lower_bound = total / data.len() as f64;
        if plateau.check(lower_bound)? == PlateauDecision::Stop {
            break;
        }
    }
    Ok(InferOutput {
        posteriors: bank,
        lower_bound,
        steps,
    })
}

/// Mean per-row lower bound of fixed posteriors, without updating anything.
pub fn evaluate_lower_bound(bundle: &ModelBundle, data: &Dataset, bank: &PosteriorBank, seed: u64) -> Result<f64> {
    check_width(bundle, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::INFER_NOISE));
    let all: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = Batch::gather(data, chunk);
        let mut tape = Tape::new();
        let vars = bundle.decoder.register(&mut tape, false)?;
        let (mu, ls) = bank.gather(chunk);
        let mu = tape.constant(mu)?;
        let ls = tape.constant(ls)?;
        let rows = lower_bound_rows(&mut tape, &bundle.decoder, &vars, mu, ls, &batch, &bundle.config, &mut rng)?;
        let s = tape.sum(rows)?;
        total += tape.value(s).item().expect("scalar");
    }
    Ok(total / data.len() as f64)
}

/// Decoded means `decode(mu)` of every posterior, `[N, d]`.
pub fn decode_means(bundle: &ModelBundle, posteriors: &PosteriorBank) -> Result<Tensor> {
    if posteriors.latent_dim() != bundle.latent_dim() {
        return Err(VadError::dim(format!(
            "posteriors have {} latents, decoder takes {}",
            posteriors.latent_dim(),
            bundle.latent_dim()
        )));
    }
    bundle.decode(&posteriors.mu_tensor())
}

/// Keeps the observed entries of `x` and fills the rest from `decode(mu)`.
pub fn impute(bundle: &ModelBundle, posterior: &DiagGaussianParams, x: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if posterior.dim() != bundle.latent_dim() {
        return Err(VadError::dim(format!(
            "posterior has {} latents, decoder takes {}",
            posterior.dim(),
            bundle.latent_dim()
        )));
    }
    if x.len() != bundle.data_dim() || mask.len() != x.len() {
        return Err(VadError::dim(format!(
            "row of {} values with {} mask bits for a {}-wide model",
            x.len(),
            mask.len(),
            bundle.data_dim()
        )));
    }
    let decoded = bundle.decode(&Tensor::matrix(1, posterior.dim(), posterior.mu.clone())?)?;
    Ok(fill(x, mask, decoded.data()))
}

fn fill(x: &[f64], mask: &[bool], decoded: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(mask)
        .zip(decoded)
        .map(|((&v, &m), &d)| if m { v } else { d })
        .collect()
}

/// Completed `[N, d]` matrix for a whole dataset.
pub fn impute_rows(bundle: &ModelBundle, posteriors: &PosteriorBank, data: &Dataset) -> Result<Tensor> {
    check_width(bundle, data)?;
    if posteriors.len() != data.len() {
        return Err(VadError::dim(format!(
            "{} posteriors for {} rows",
            posteriors.len(),
            data.len()
        )));
    }
    let decoded = decode_means(bundle, posteriors)?;
    let d = data.dim();
    let mut out = Vec::with_capacity(data.len() * d);
    for i in 0..data.len() {
        out.extend(fill(data.x_row(i), data.mask_row(i), decoded.row(i)));
    }
    Tensor::matrix(data.len(), d, out)
}
