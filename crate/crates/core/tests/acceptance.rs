//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to the
//! real stdout (not the captured test output) and then asserts.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use vad::data::{gen_synthetic, load_idx, mean_baseline, sample_mcar, Dataset, SplitFractions, SyntheticConfig};
use vad::distributions::{
    kl_to_std_normal, kl_to_std_normal_var, masked_gauss_loglik, masked_gauss_loglik_var, reparameterize_var,
    std_normal_log_pdf, DiagGaussianParams, MaskedLikelihoodSpec,
};
use vad::engine::{
    cell_mean, checkpoint_bytes, checkpoint_from_bytes, experiment1, experiment2, infer, load_checkpoint,
    save_checkpoint, train, DataSource, Exp2Mode, ExperimentConfig, ExperimentData, ExperimentOutput, HyperGrid,
    MetricsRecord, ModelKind, TrainConfig,
};
use vad::models::DecoderMLP;
use vad::optim::PlateauConfig;
use vad::tensor::{finite_diff_check, Activation, Tape, Tensor, Var};
use vad::Result;

/// The long criteria share one CPU; running them one at a time keeps their
/// wall-clock budgets meaningful.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {id} [{}] {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| uniform(rng, lo, hi)).collect()).unwrap()
}

fn constant(t: &mut Tape, v: Tensor) -> Var {
    t.constant(v).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

fn gradient_case(case: usize, rng: &mut ChaCha8Rng) -> Result<(String, f64)> {
    const EPS: f64 = 1e-6;
    let n = rng.random_range(1..4);
    let d = rng.random_range(1..5);
    let dz = rng.random_range(1..4);
    match case % 7 {
        0 => {
            // Affine map, differentiated with respect to the weights.
            let x = random_tensor(rng, &[n, d], -1.0, 1.0);
            let b = random_tensor(rng, &[dz], -1.0, 1.0);
            let c = random_tensor(rng, &[n, dz], -1.0, 1.0);
            let w = random_tensor(rng, &[d, dz], -1.0, 1.0);
            let err = finite_diff_check(
                |t, w| {
                    let x = constant(t, x.clone());
                    let b = constant(t, b.clone());
                    let c = constant(t, c.clone());
                    let h = t.matmul(x, w)?;
                    let h = t.add(h, b)?;
                    let h = t.mul(h, c)?;
                    t.sum(h)
                },
                &w,
                EPS,
            )?;
            Ok(("affine".into(), err))
        }
        1..=3 => {
            let act = [Activation::Tanh, Activation::Sigmoid, Activation::Relu][case % 7 - 1];
            let mut x = random_tensor(rng, &[n, d], -2.0, 2.0);
            // Keep relu inputs away from the kink.
            for v in x.data_mut() {
                if v.abs() < 0.05 {
                    *v += 0.1;
                }
            }
            let c = random_tensor(rng, &[n, d], -1.0, 1.0);
            let err = finite_diff_check(
                |t, x| {
                    let c = constant(t, c.clone());
                    let h = t.activation(act, x)?;
                    let h = t.mul(h, c)?;
                    t.sum(h)
                },
                &x,
                EPS,
            )?;
            Ok((format!("{act:?}").to_lowercase(), err))
        }
        4 => {
            let decoded = random_tensor(rng, &[n, d], -2.0, 2.0);
            let x: Vec<f64> = (0..n * d).map(|_| uniform(rng, -2.0, 2.0)).collect();
            let mask: Vec<bool> = (0..n * d).map(|_| rng.random_bool(0.6)).collect();
            let lambda: Vec<f64> = (0..d).map(|_| uniform(rng, 0.2, 2.0)).collect();
            let err = finite_diff_check(
                |t, dec| {
                    let ll = masked_gauss_loglik_var(t, dec, &x, &mask, &lambda)?;
                    t.sum(ll)
                },
                &decoded,
                EPS,
            )?;
            Ok(("masked log-likelihood".into(), err))
        }
        5 => {
            let mu = random_tensor(rng, &[n, dz], -2.0, 2.0);
            let ls = random_tensor(rng, &[n, dz], -1.0, 1.0);
            let e1 = finite_diff_check(
                |t, mu| {
                    let ls = constant(t, ls.clone());
                    let kl = kl_to_std_normal_var(t, mu, ls)?;
                    t.sum(kl)
                },
                &mu,
                EPS,
            )?;
            let e2 = finite_diff_check(
                |t, ls| {
                    let mu = constant(t, mu.clone());
                    let kl = kl_to_std_normal_var(t, mu, ls)?;
                    t.sum(kl)
                },
                &ls,
                EPS,
            )?;
            Ok(("kl".into(), e1.max(e2)))
        }
        _ => {
            // Reparameterized lower bound through a decoder, with respect to
            // the posterior mean, the posterior log-scale and a decoder weight.
            let dec = DecoderMLP::new(&[dz, 4, d], Activation::Tanh, Activation::Identity, rng.random())?;
            let mu = random_tensor(rng, &[n, dz], -1.0, 1.0);
            let ls = random_tensor(rng, &[n, dz], -1.5, 0.0);
            let eps = random_tensor(rng, &[n, dz], -2.0, 2.0);
            let x: Vec<f64> = (0..n * d).map(|_| uniform(rng, -1.0, 1.0)).collect();
            let mask: Vec<bool> = (0..n * d).map(|_| rng.random_bool(0.7)).collect();
            let lambda = vec![1.0; d];
            let elbo = |t: &mut Tape, mu: Var, ls: Var, w_out: Option<Var>| -> Result<Var> {
                let vars = dec.register(t, false)?;
                let e = t.constant(eps.clone())?;
                let z = reparameterize_var(t, mu, ls, e)?;
                let out = match w_out {
                    None => dec.forward(t, &vars, z)?,
                    Some(w) => {
                        let (w1, b1) = dec.layer(0);
                        let w1 = t.constant(Tensor::matrix(dz, 4, w1.to_vec())?)?;
                        let b1 = t.constant(Tensor::vector(b1.to_vec()))?;
                        let h = t.matmul(z, w1)?;
                        let h = t.add(h, b1)?;
                        let h = t.activation(Activation::Tanh, h)?;
                        t.matmul(h, w)?
                    }
                };
                let ll = masked_gauss_loglik_var(t, out, &x, &mask, &lambda)?;
                let kl = kl_to_std_normal_var(t, mu, ls)?;
                let lb = t.sub(ll, kl)?;
                t.sum(lb)
            };
            let e1 = finite_diff_check(
                |t, mu| {
                    let ls = t.constant(ls.clone())?;
                    elbo(t, mu, ls, None)
                },
                &mu,
                EPS,
            )?;
            let e2 = finite_diff_check(
                |t, ls| {
                    let mu = t.constant(mu.clone())?;
                    elbo(t, mu, ls, None)
                },
                &ls,
                EPS,
            )?;
            let w2 = random_tensor(rng, &[4, d], -1.0, 1.0);
            let e3 = finite_diff_check(
                |t, w| {
                    let mu = t.constant(mu.clone())?;
                    let ls = t.constant(ls.clone())?;
                    elbo(t, mu, ls, Some(w))
                },
                &w2,
                EPS,
            )?;
            Ok(("reparameterized lower bound".into(), e1.max(e2).max(e3)))
        }
    }
}

#[test]
fn criterion_1_gradient_suite() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = (String::new(), 0.0f64);
    let mut failures = Vec::new();
    for case in 0..100 {
        let (name, err) = gradient_case(case, &mut rng).unwrap();
        if !(err < 1e-5) {
            failures.push(format!("case {case} ({name}): {err:.3e}"));
        }
        if err > worst.1 {
            worst = (name, err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 30.0;
    report(
        1,
        "gradient suite",
        pass,
        &format!(
            "100 cases, worst relative error {:.2e} ({}), {secs:.2}s{}",
            worst.1,
            worst.0,
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. Closed-form KL against Monte Carlo

#[test]
fn criterion_2_kl_monte_carlo() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    const SAMPLES: usize = 100_000;
    let mut worst_z = 0.0f64;
    let mut all_within = true;
    for _ in 0..20 {
        let dz = rng.random_range(1..=6);
        let q = DiagGaussianParams::new(
            (0..dz).map(|_| uniform(&mut rng, -2.0, 2.0)).collect(),
            (0..dz).map(|_| uniform(&mut rng, -1.5, 1.0)).collect(),
        )
        .unwrap();
        let sigma: Vec<f64> = q.sigma().collect();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut z = vec![0.0; dz];
        for _ in 0..SAMPLES {
            for k in 0..dz {
                let e: f64 = rng.sample(StandardNormal);
                z[k] = q.mu[k] + sigma[k] * e;
            }
            let v = q.log_pdf(&z) - std_normal_log_pdf(&z);
            sum += v;
            sum_sq += v * v;
        }
        let n = SAMPLES as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt();
        let z_score = (mean - kl_to_std_normal(&q)).abs() / se;
        worst_z = worst_z.max(z_score);
        all_within &= z_score <= 3.0;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = all_within && secs < 30.0;
    report(
        2,
        "closed-form KL vs Monte Carlo",
        pass,
        &format!("20 posteriors × 1e5 samples, worst deviation {worst_z:.2} SE (limit 3), {secs:.2}s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. Mask semantics

fn tape_loss_and_grads(dec: &DecoderMLP, z: &Tensor, x: &[f64], mask: &[bool]) -> (u64, Vec<u64>, Vec<u64>) {
    let (n, d) = (z.dims2().0, x.len() / z.dims2().0);
    let mut t = Tape::new();
    let vars = dec.register(&mut t, true).unwrap();
    let zv = t.leaf(z.clone(), true).unwrap();
    let out = dec.forward(&mut t, &vars, zv).unwrap();
    let ll = masked_gauss_loglik_var(&mut t, out, x, mask, &vec![0.7; d]).unwrap();
    let l = t.sum(ll).unwrap();
    t.backward(l).unwrap();
    let bits = |g: &[f64]| g.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let theta = bits(&vars.gradient(&t));
    assert_eq!(t.value(out).dims2(), (n, d));
    (t.value(l).item().unwrap().to_bits(), bits(t.grad(zv).unwrap()), theta)
}

#[test]
fn criterion_3_mask_semantics() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_ones = 0.0f64;
    let mut zeros_exact = true;
    let mut perturb_blind = true;
    for _ in 0..50 {
        let d = rng.random_range(1..12);
        let dec: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let lambda: Vec<f64> = (0..d).map(|_| uniform(&mut rng, 0.1, 3.0)).collect();
        let ones = MaskedLikelihoodSpec::new(vec![true; d], lambda.clone()).unwrap();
        let reference = DiagGaussianParams::new(dec.clone(), lambda.iter().map(|l| 0.5 * l.ln()).collect())
            .unwrap()
            .log_pdf(&x);
        let got = masked_gauss_loglik(&dec, &x, &ones).unwrap();
        worst_ones = worst_ones.max((got - reference).abs());
        let zeros = MaskedLikelihoodSpec::new(vec![false; d], lambda).unwrap();
        zeros_exact &= masked_gauss_loglik(&dec, &x, &zeros).unwrap().to_bits() == 0.0f64.to_bits();
    }
    for _ in 0..20 {
        let (n, d, dz) = (rng.random_range(1..5), rng.random_range(2..8), rng.random_range(1..4));
        let dec = DecoderMLP::new(&[dz, 6, d], Activation::Tanh, Activation::Identity, rng.random()).unwrap();
        let z = random_tensor(&mut rng, &[n, dz], -1.0, 1.0);
        let x: Vec<f64> = (0..n * d).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
        let mask: Vec<bool> = (0..n * d).map(|_| rng.random_bool(0.5)).collect();
        let perturbed: Vec<f64> = x
            .iter()
            .zip(&mask)
            .map(|(&v, &o)| if o { v } else { v + uniform(&mut rng, -1e3, 1e3) })
            .collect();
        perturb_blind &= tape_loss_and_grads(&dec, &z, &x, &mask) == tape_loss_and_grads(&dec, &z, &perturbed, &mask);
    }
    // Whole training runs: values behind the mask never reach either model.
    let truth = gen_synthetic(&SyntheticConfig {
        n_rows: 64,
        dim: 8,
        n_independent: 4,
        seed: 5,
    })
    .unwrap()
    .dataset
    .ground_truth()
    .unwrap()
    .clone();
    let mask = sample_mcar(64, 8, 0.4, 6).unwrap();
    let mut scrambled = truth.clone();
    for (v, &o) in scrambled.data_mut().iter_mut().zip(mask.bits()) {
        if !o {
            *v = -7.0 * *v + 100.0;
        }
    }
    let a = Dataset::apply_mask(truth, mask.clone()).unwrap();
    let b = Dataset::apply_mask(scrambled, mask).unwrap();
    for model in [ModelKind::Vad, ModelKind::Vae] {
        let cfg = TrainConfig {
            model,
            latent_dim: 3,
            decoder_hidden: vec![10],
            encoder_hidden: vec![10],
            max_epochs: 10,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let ra = train(&a, None, &cfg).unwrap();
        let rb = train(&b, None, &cfg).unwrap();
        perturb_blind &= ra.bundle == rb.bundle && ra.curve == rb.curve;
    }
    let pass = worst_ones <= 1e-12 && zeros_exact && perturb_blind;
    report(
        3,
        "mask semantics",
        pass,
        &format!(
            "all-ones vs unmasked log-pdf max |Δ| {worst_ones:.1e}; all-zeros exactly 0: {zeros_exact}; \
             masked-out perturbations leave losses, gradients and trained models bitwise equal: {perturb_blind}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4 and 5. Experiments on desk-scale synthetic data

const DESK_SEED: u64 = 0;
const DESK_RATES: [f64; 3] = [0.2, 0.5, 0.8];

fn desk_data() -> ExperimentData {
    let source = DataSource::Synthetic(SyntheticConfig {
        n_rows: 5000,
        dim: 30,
        n_independent: 10,
        seed: DESK_SEED,
    });
    ExperimentData::load(&source, SplitFractions::default(), None, DESK_SEED).unwrap()
}

/// The reduced grid both experiments search. Architecture and posterior
/// scale come from the desk-scale grid; see the README for the budget.
fn desk_experiment(rates: Vec<f64>) -> ExperimentConfig {
    let base = TrainConfig {
        max_epochs: 300,
        batch_size: 64,
        lr_theta: 1e-3,
        lr_phi: 1e-2,
        plateau: PlateauConfig {
            rel_tol: 1e-4,
            patience: 20,
        },
        ..TrainConfig::default()
    };
    ExperimentConfig {
        rates,
        n_test_runs: 5,
        grid: HyperGrid {
            latent_dims: vec![8],
            widths: vec![50, 100],
            depths: vec![2],
            learning_rates: vec![1e-3],
            posterior_learning_rates: vec![1e-2],
            sigmas: vec![0.1],
        },
        base,
        models: vec![ModelKind::Vad, ModelKind::Vae],
        seed: DESK_SEED,
        record_time: false,
    }
}

struct Exp1Run {
    out: ExperimentOutput,
    elapsed: Duration,
}

fn exp1() -> &'static Exp1Run {
    static RUN: OnceLock<Exp1Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let data = desk_data();
        let out = experiment1(&desk_experiment(DESK_RATES.to_vec()), &data).unwrap();
        Exp1Run {
            out,
            elapsed: start.elapsed(),
        }
    })
}

fn mean_of(records: &[MetricsRecord], model: ModelKind, r_train: f64, r_test: f64, f: fn(&MetricsRecord) -> Option<f64>) -> f64 {
    cell_mean(records, model, r_train, r_test, f).unwrap_or(f64::NAN)
}

fn full(m: &MetricsRecord) -> Option<f64> {
    m.mse.full
}

fn incomplete(m: &MetricsRecord) -> Option<f64> {
    m.mse.incomplete
}

fn missing(m: &MetricsRecord) -> Option<f64> {
    m.mse.missing
}

#[test]
fn criterion_4_experiment1_trend() {
    let _g = serial();
    let run = exp1();
    let recs = &run.out.records;
    let threshold = run.out.threshold;
    let mut lines = Vec::new();
    let mut incomplete_ok = true;
    for &r in &DESK_RATES {
        let vad = mean_of(recs, ModelKind::Vad, r, r, incomplete);
        let vae = mean_of(recs, ModelKind::Vae, r, r, incomplete);
        incomplete_ok &= vad <= vae;
        lines.push(format!(
            "r={r}: incomplete VAD {vad:.4} / VAE {vae:.4}, missing VAD {:.4} / VAE {:.4}, full VAD {:.4} / VAE {:.4}",
            mean_of(recs, ModelKind::Vad, r, r, missing),
            mean_of(recs, ModelKind::Vae, r, r, missing),
            mean_of(recs, ModelKind::Vad, r, r, full),
            mean_of(recs, ModelKind::Vae, r, r, full),
        ));
    }
    let gap = |r: f64| mean_of(recs, ModelKind::Vae, r, r, full) - mean_of(recs, ModelKind::Vad, r, r, full);
    let (gap_lo, gap_hi) = (gap(0.2), gap(0.8));
    let gap_ok = gap_hi >= gap_lo;
    let baseline_ok = [ModelKind::Vad, ModelKind::Vae].iter().all(|&m| {
        [full, missing, incomplete]
            .iter()
            .all(|&f| mean_of(recs, m, 0.2, 0.2, f) < threshold)
    });
    let secs = run.elapsed.as_secs_f64();
    let time_ok = secs < 15.0 * 60.0;
    let pass = incomplete_ok && gap_ok && baseline_ok && time_ok;
    for s in &run.out.selections {
        lines.push(format!(
            "selected {} r={}: d_z={} hidden={:?} lr={}/{} sigma={:?} score={:.4}",
            s.model,
            s.r_train,
            s.config.latent_dim,
            s.config.decoder_hidden,
            s.config.lr_theta,
            s.config.lr_phi,
            s.config.sigma,
            s.score
        ));
    }
    report(
        4,
        "experiment 1 trend",
        pass,
        &format!(
            "VAD incomplete ≤ VAE at every r: {incomplete_ok}; full-MSE advantage of VAD (VAE − VAD) \
             {gap_lo:.4} at r=0.2 vs {gap_hi:.4} at r=0.8: {gap_ok}; both below mean baseline {threshold:.4} \
             at r=0.2: {baseline_ok}; {secs:.0}s (limit 900)\n    {}",
            lines.join("\n    ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_experiment2_test_only() {
    let _g = serial();
    let exp1_recs = &exp1().out.records;
    let start = Instant::now();
    let data = desk_data();
    let out = experiment2(&desk_experiment(vec![0.1, 0.8]), Exp2Mode::TestOnly, &data).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let change = |m: ModelKind| {
        let before = mean_of(exp1_recs, m, 0.8, 0.8, full);
        let after = mean_of(&out.records, m, 0.0, 0.8, full);
        (before, after, (after - before) / before)
    };
    let (vae_before, vae_after, vae_change) = change(ModelKind::Vae);
    let (vad_before, vad_after, vad_change) = change(ModelKind::Vad);
    let vad_low = mean_of(&out.records, ModelKind::Vad, 0.0, 0.1, full);
    let pass = vae_change >= 0.25 && vad_change.abs() < 0.25 && secs < 600.0;
    report(
        5,
        "experiment 2 test-only missingness",
        pass,
        &format!(
            "VAE full MSE at r=0.8 {vae_before:.4} → {vae_after:.4} ({:+.1}%, need ≥ +25%); \
             VAD {vad_before:.4} → {vad_after:.4} ({:+.1}%, need within ±25%); \
             VAD r_test 0.1 → 0.8: {vad_low:.4} → {vad_after:.4}; {secs:.0}s (limit 600)",
            100.0 * vae_change,
            100.0 * vad_change
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6. Frozen decoder during inference

fn decoder_hash(dec: &DecoderMLP) -> String {
    let mut h = Sha256::new();
    for p in dec.params() {
        h.update(p.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn small_trained(model: ModelKind, rows: usize) -> (vad::engine::ModelBundle, Dataset) {
    let s = gen_synthetic(&SyntheticConfig {
        n_rows: rows,
        dim: 12,
        n_independent: 5,
        seed: 8,
    })
    .unwrap();
    let ds = s.dataset.remask(sample_mcar(rows, 12, 0.3, 9).unwrap()).unwrap();
    let cfg = TrainConfig {
        model,
        latent_dim: 4,
        decoder_hidden: vec![20],
        encoder_hidden: vec![20],
        max_epochs: 15,
        infer_max_steps: 100,
        ..TrainConfig::default()
    };
    (train(&ds, None, &cfg).unwrap().bundle, ds)
}

#[test]
fn criterion_6_frozen_decoder_inference() {
    let _g = serial();
    let (bundle, ds) = small_trained(ModelKind::Vad, 1000);
    let before = decoder_hash(&bundle.decoder);
    let q = infer(&bundle, &ds, 11).unwrap();
    let after = decoder_hash(&bundle.decoder);
    let pass = before == after && q.posteriors.len() == 1000 && q.steps > 0;
    report(
        6,
        "frozen decoder during inference",
        pass,
        &format!(
            "sha256 {}… before and {}… after {} inference steps over {} rows",
            &before[..16],
            &after[..16],
            q.steps,
            q.posteriors.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 7. Fashion-MNIST mean baseline

#[test]
fn criterion_7_fashion_mnist_threshold() {
    let _g = serial();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/fashion-mnist");
    let start = Instant::now();
    let train = load_idx(&dir.join("train-images-idx3-ubyte.gz")).unwrap();
    let test = load_idx(&dir.join("t10k-images-idx3-ubyte.gz")).unwrap();
    let unit = mean_baseline(train.ground_truth().unwrap(), test.ground_truth().unwrap()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let raw = unit * 255.0 * 255.0;
    let hundredths = 100.0 * unit;
    let rel = (hundredths - 8.64).abs() / 8.64;
    let pass = train.len() == 60_000 && test.len() == 10_000 && rel < 0.10 && secs < 120.0;
    report(
        7,
        "Fashion-MNIST mean baseline",
        pass,
        &format!(
            "{}/{} images; per-pixel MSE {raw:.1} on the 0..255 scale, {unit:.5} on [0,1] \
             ({hundredths:.3} in units of 1e-2 vs 8.64, {:.1}% off, limit 10%); {secs:.1}s",
            train.len(),
            test.len(),
            100.0 * rel
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 8. Byte-identical experiment output

#[test]
fn criterion_8_experiment_is_deterministic() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.toml"),
        "latent_dim = 3\ndecoder_hidden = [16]\nencoder_hidden = [16]\nmax_epochs = 20\ninfer_max_steps = 100\n",
    )
    .unwrap();
    let run = |out: &str| {
        let output = Command::new(env!("CARGO_BIN_EXE_vad"))
            .current_dir(dir.path())
            .args([
                "experiment", "--id", "1", "--rows", "300", "--dim", "10", "--independent", "4", "--rates",
                "0,0.3,0.6", "--runs", "3", "--config", "cfg.toml", "--seed", "17", "--out", out,
            ])
            .output()
            .unwrap();
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("a.csv");
    let b = run("b.csv");
    let digest = |v: &[u8]| Sha256::digest(v).iter().take(8).map(|b| format!("{b:02x}")).collect::<String>();
    let rows = a.iter().filter(|&&c| c == b'\n').count();
    let pass = a == b && rows == 1 + 3 * 2 * 3;
    report(
        8,
        "experiment determinism",
        pass,
        &format!("two runs of `experiment --id 1`: {} bytes, {rows} lines, sha256 {}… vs {}…", a.len(), digest(&a), digest(&b)),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 9. Checkpoint round trip

#[test]
fn criterion_9_checkpoint_round_trip() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut pass = true;
    let mut details = Vec::new();
    for model in [ModelKind::Vad, ModelKind::Vae] {
        let (bundle, _) = small_trained(model, 200);
        let path = dir.path().join(format!("{model}.ckpt"));
        save_checkpoint(&path, &bundle).unwrap();
        let from_file = load_checkpoint(&path).unwrap();
        let from_bytes = checkpoint_from_bytes(&checkpoint_bytes(&bundle).unwrap()).unwrap();
        let z = Tensor::matrix(
            100,
            bundle.latent_dim(),
            (0..100 * bundle.latent_dim()).map(|_| rng.sample(StandardNormal)).collect(),
        )
        .unwrap();
        let bits = |t: Tensor| t.into_data().into_iter().map(f64::to_bits).collect::<Vec<_>>();
        let original = bits(bundle.decode(&z).unwrap());
        let same = original == bits(from_file.decode(&z).unwrap()) && original == bits(from_bytes.decode(&z).unwrap());
        pass &= same && from_file == bundle;
        details.push(format!("{model}: {} decoded values bitwise equal: {same}", original.len()));
    }
    report(9, "checkpoint round trip", pass, &details.join("; "));
    assert!(pass);
}
