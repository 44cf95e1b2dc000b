use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{derive_seed, streams, ModelBundle, ModelKind, TrainConfig};
use crate::data::Dataset;
use crate::distributions::{kl_to_std_normal_var, masked_gauss_loglik_var, reparameterize_var, ElboMode};
use crate::error::{Result, VadError};
use crate::models::{DecoderMLP, EncoderMLP, ParamVars, PosteriorBank};
use crate::optim::{AdamState, PlateauDecision, PlateauState};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-datapoint lower bound over the epoch's steps.
    pub train_lower_bound: f64,
    pub val_lower_bound: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub bundle: ModelBundle,
    /// The trained per-datapoint posteriors (VAD only).
    pub posteriors: Option<PosteriorBank>,
    pub curve: Vec<EpochStats>,
    pub final_lower_bound: f64,
}

pub(crate) struct Batch {
    pub x: Vec<f64>,
    pub mask: Vec<bool>,
    pub n: usize,
}

impl Batch {
    pub fn gather(data: &Dataset, indices: &[usize]) -> Self {
        let d = data.dim();
        let mut x = Vec::with_capacity(indices.len() * d);
        let mut mask = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            x.extend_from_slice(data.x_row(i));
            mask.extend_from_slice(data.mask_row(i));
        }
        Batch {
            x,
            mask,
            n: indices.len(),
        }
    }
}

pub(crate) fn standard_noise(rng: &mut ChaCha8Rng, n: usize, dz: usize) -> Tensor {
    let data = (0..n * dz).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(n, dz, data).expect("noise shape")
}

/// Per-row Monte-Carlo lower bound, `[n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lower_bound_rows(
    tape: &mut Tape,
    decoder: &DecoderMLP,
    dec_vars: &ParamVars,
    mu: Var,
    log_sigma: Var,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let dz = decoder.latent_dim();
    let lambda = vec![cfg.lambda; decoder.output_dim()];
    let mut recon: Option<Var> = None;
    for _ in 0..cfg.mc_samples {
        let eps = tape.constant(standard_noise(rng, batch.n, dz))?;
        let z = reparameterize_var(tape, mu, log_sigma, eps)?;
        let decoded = decoder.forward(tape, dec_vars, z)?;
        let ll = masked_gauss_loglik_var(tape, decoded, &batch.x, &batch.mask, &lambda)?;
        recon = Some(match recon {
            Some(r) => tape.add(r, ll)?,
            None => ll,
        });
    }
    let mut recon = recon.expect("mc_samples ≥ 1");
    if cfg.mc_samples > 1 {
        recon = tape.scale(recon, 1.0 / cfg.mc_samples as f64)?;
    }
    match cfg.elbo_mode {
        ElboMode::ReconOnly => Ok(recon),
        ElboMode::Full => {
            let kl = kl_to_std_normal_var(tape, mu, log_sigma)?;
            tape.sub(recon, kl)
        }
    }
}

/// Adam state for every row of a posterior bank.
pub(crate) struct PosteriorOptimizer {
    mu: Vec<AdamState>,
    log_sigma: Option<Vec<AdamState>>,
}

impl PosteriorOptimizer {
    pub fn new(bank: &PosteriorBank, lr: f64) -> Self {
        let dz = bank.latent_dim();
        let states = || (0..bank.len()).map(|_| AdamState::new(dz, lr)).collect();
        PosteriorOptimizer {
            mu: states(),
            log_sigma: bank.sigma_mode().is_learnable().then(states),
        }
    }
}

/// One gradient step on the rows `indices` of `bank`. Returns the summed lower
/// bound of the batch before the update, and the decoder gradient of the
/// batch-mean loss when `decoder_grad` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn vad_step(
    decoder: &DecoderMLP,
    decoder_grad: bool,
    bank: &mut PosteriorBank,
    opt: &mut PosteriorOptimizer,
    data: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Option<Vec<f64>>)> {
    let batch = Batch::gather(data, indices);
    let mut tape = Tape::new();
    let dec_vars = decoder.register(&mut tape, decoder_grad)?;
    let (mu_t, ls_t) = bank.gather(indices);
    let mu = tape.leaf(mu_t, true)?;
    let ls = tape.leaf(ls_t, bank.sigma_mode().is_learnable())?;
    let rows = lower_bound_rows(&mut tape, decoder, &dec_vars, mu, ls, &batch, cfg, rng)?;
    let total = tape.sum(rows)?;
    let lb_sum = tape.value(total).item().expect("scalar");
    let loss = tape.scale(total, -1.0 / batch.n as f64)?;
    tape.backward(loss)?;

    let theta_grad = decoder_grad.then(|| dec_vars.gradient(&tape));
    let dz = bank.latent_dim();
    let g_mu = tape.grad(mu).expect("mu is trainable").to_vec();
    let g_ls = tape.grad(ls).map(<[f64]>::to_vec);
    for (k, &i) in indices.iter().enumerate() {
        let (row_mu, row_ls) = bank.row_mut(i);
        opt.mu[i].step(row_mu, &g_mu[k * dz..(k + 1) * dz])?;
        if let (Some(states), Some(g)) = (opt.log_sigma.as_mut(), g_ls.as_ref()) {
            states[i].step(row_ls, &g[k * dz..(k + 1) * dz])?;
        }
    }
    Ok((lb_sum, theta_grad))
}

fn fixed_log_sigma(cfg: &TrainConfig, n: usize) -> Option<Tensor> {
    match cfg.sigma {
        crate::models::SigmaMode::Fixed(s) => {
            Some(Tensor::matrix(n, cfg.latent_dim, vec![s.ln(); n * cfg.latent_dim]).expect("shape"))
        }
        crate::models::SigmaMode::Learnable => None,
    }
}

/// Encoder posterior for a batch, as tape nodes `(mu, log_sigma)`.
pub(crate) fn encoder_posterior(
    tape: &mut Tape,
    encoder: &EncoderMLP,
    trainable: bool,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<(Var, Var, crate::models::EncoderVars)> {
    let enc_vars = encoder.register(tape, trainable)?;
    let input = tape.constant(encoder.build_input(&batch.x, &batch.mask)?)?;
    let (mu, ls_head) = encoder.forward(tape, &enc_vars, input)?;
    let ls = match fixed_log_sigma(cfg, batch.n) {
        Some(t) => tape.constant(t)?,
        None => ls_head,
    };
    Ok((mu, ls, enc_vars))
}

#[allow(clippy::too_many_arguments)]
fn vae_step(
    decoder: &mut DecoderMLP,
    encoder: &mut EncoderMLP,
    theta: &mut AdamState,
    phi: &mut AdamState,
    data: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let batch = Batch::gather(data, indices);
    let mut tape = Tape::new();
    let dec_vars = decoder.register(&mut tape, true)?;
    let (mu, ls, enc_vars) = encoder_posterior(&mut tape, encoder, true, &batch, cfg)?;
    let rows = lower_bound_rows(&mut tape, decoder, &dec_vars, mu, ls, &batch, cfg, rng)?;
    let total = tape.sum(rows)?;
    let lb_sum = tape.value(total).item().expect("scalar");
    let loss = tape.scale(total, -1.0 / batch.n as f64)?;
    tape.backward(loss)?;
    theta.step(decoder.params_mut(), &dec_vars.gradient(&tape))?;
    phi.step(encoder.params_mut(), &enc_vars.gradient(&tape))?;
    Ok(lb_sum)
}

/// Mean per-row lower bound of a VAE on `data`, without updates.
pub(crate) fn vae_lower_bound(bundle: &ModelBundle, data: &Dataset, rng: &mut ChaCha8Rng) -> Result<f64> {
    let encoder = bundle.encoder.as_ref().expect("vae bundle");
    let mut total = 0.0;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = Batch::gather(data, chunk);
        let mut tape = Tape::new();
        let dec_vars = bundle.decoder.register(&mut tape, false)?;
        let (mu, ls, _) = encoder_posterior(&mut tape, encoder, false, &batch, &bundle.config)?;
        let rows = lower_bound_rows(&mut tape, &bundle.decoder, &dec_vars, mu, ls, &batch, &bundle.config, rng)?;
        let s = tape.sum(rows)?;
        total += tape.value(s).item().expect("scalar");
    }
    Ok(total / data.len() as f64)
}

pub(crate) const EVAL_CHUNK: usize = 512;

/// Attaches the epoch and batch (`None` for the validation pass) to numeric errors.
fn with_context(epoch: usize, batch: Option<usize>) -> impl Fn(VadError) -> VadError {
    move |e| match e {
        VadError::NonFinite { .. } | VadError::Numeric(_) => match batch {
            Some(b) => VadError::Numeric(format!("epoch {epoch}, batch {b}: {e}")),
            None => VadError::Numeric(format!("epoch {epoch}, validation: {e}")),
        },
        other => other,
    }
}

/// Maximizes the lower bound on `data`. With a validation set, plateau
/// detection watches the validation lower bound; otherwise the training one.
pub fn train(data: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(VadError::config("cannot train on an empty dataset"));
    }
    if let Some(v) = val {
        if v.dim() != data.dim() {
            return Err(VadError::dim(format!(
                "validation width {} differs from training width {}",
                v.dim(),
                data.dim()
            )));
        }
    }
    let val = val.filter(|v| !v.is_empty());
    let mut bundle = ModelBundle::init(cfg, data.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::TRAIN_NOISE));
    let mut theta = AdamState::new(bundle.decoder.param_count(), cfg.lr_theta);
    let mut plateau = PlateauState::new(cfg.plateau)?;
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();

    match cfg.model {
        ModelKind::Vad => {
            let mut bank = PosteriorBank::new(
                data.len(),
                cfg.latent_dim,
                cfg.sigma,
                derive_seed(cfg.seed, streams::BANK_INIT),
            )?;
            let mut opt = PosteriorOptimizer::new(&bank, cfg.lr_phi);
            let mut val_state = match val {
                Some(v) => {
                    let b = PosteriorBank::new(
                        v.len(),
                        cfg.latent_dim,
                        cfg.sigma,
                        derive_seed(cfg.seed, streams::VAL_BANK_INIT),
                    )?;
                    let o = PosteriorOptimizer::new(&b, cfg.lr_phi);
                    Some((b, o, (0..v.len()).collect::<Vec<_>>()))
                }
                None => None,
            };
            for epoch in 0..cfg.max_epochs {
                order.shuffle(&mut rng);
                let mut total = 0.0;
                for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                    let ctx = with_context(epoch, Some(b));
                    let (lb, grad) =
                        vad_step(&bundle.decoder, true, &mut bank, &mut opt, data, chunk, cfg, &mut rng).map_err(&ctx)?;
                    theta
                        .step(bundle.decoder.params_mut(), &grad.expect("requested"))
                        .map_err(&ctx)?;
                    total += lb;
                }
                let train_lb = total / data.len() as f64;
                // Validation posteriors follow the decoder with one φ-only pass per epoch.
                let val_lb = match (&mut val_state, val) {
                    (Some((vb, vo, vorder)), Some(v)) => {
                        let mut vt = 0.0;
                        for chunk in vorder.chunks(EVAL_CHUNK) {
                            vt += vad_step(&bundle.decoder, false, vb, vo, v, chunk, cfg, &mut rng)
                                .map_err(with_context(epoch, None))?
                                .0;
                        }
                        Some(vt / v.len() as f64)
                    }
                    _ => None,
                };
                curve.push(EpochStats {
                    epoch,
                    train_lower_bound: train_lb,
                    val_lower_bound: val_lb,
                });
                if plateau.check(val_lb.unwrap_or(train_lb))? == PlateauDecision::Stop {
                    break;
                }
            }
            let final_lower_bound = curve.last().map_or(f64::NAN, |s| s.train_lower_bound);
            Ok(TrainOutput {
                bundle,
                posteriors: Some(bank),
                curve,
                final_lower_bound,
            })
        }
        ModelKind::Vae => {
            let mut encoder = bundle.encoder.take().expect("vae bundle has an encoder");
            let mut phi = AdamState::new(encoder.param_count(), cfg.lr_phi);
            for epoch in 0..cfg.max_epochs {
                order.shuffle(&mut rng);
                let mut total = 0.0;
                for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                    total += vae_step(
                        &mut bundle.decoder,
                        &mut encoder,
                        &mut theta,
                        &mut phi,
                        data,
                        chunk,
                        cfg,
                        &mut rng,
                    )
                    .map_err(with_context(epoch, Some(b)))?;
                }
                let train_lb = total / data.len() as f64;
                bundle.encoder = Some(encoder);
                let val_lb = match val {
                    Some(v) => Some(vae_lower_bound(&bundle, v, &mut rng).map_err(with_context(epoch, None))?),
                    None => None,
                };
                encoder = bundle.encoder.take().expect("just restored");
                curve.push(EpochStats {
                    epoch,
                    train_lower_bound: train_lb,
                    val_lower_bound: val_lb,
                });
                if plateau.check(val_lb.unwrap_or(train_lb))? == PlateauDecision::Stop {
                    break;
                }
            }
            bundle.encoder = Some(encoder);
            let final_lower_bound = curve.last().map_or(f64::NAN, |s| s.train_lower_bound);
            Ok(TrainOutput {
                bundle,
                posteriors: None,
                curve,
                final_lower_bound,
            })
        }
    }
}
