//! Gaussian pieces of the variational lower bound: the reparameterized
//! diagonal posterior, the masked Gaussian likelihood, the KL term against a
//! standard-normal prior and their combination.
//!
//! Each quantity exists twice: as a plain function over slices (used for
//! evaluation and as a reference) and as a batched tape op (used for
//! training). Batched ops work on `[n, d]` tensors and return one value per row.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};
use crate::tensor::{Axis, ReduceKind, Tape, Tensor, Var};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal Gaussian `N(mu, diag(exp(log_sigma))^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussianParams {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl DiagGaussianParams {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            return Err(VadError::dim(format!(
                "mu has {} entries but log_sigma has {}",
                mu.len(),
                log_sigma.len()
            )));
        }
        if let Some(bad) = log_sigma.iter().find(|ls| {
            let s = ls.exp();
            !(s.is_finite() && s > 0.0)
        }) {
            return Err(VadError::Numeric(format!("sigma = exp({bad}) is not positive and finite")));
        }
        Ok(DiagGaussianParams { mu, log_sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_sigma.iter().map(|ls| ls.exp())
    }

    /// Log-density of `z` under this Gaussian.
    pub fn log_pdf(&self, z: &[f64]) -> f64 {
        self.mu
            .iter()
            .zip(&self.log_sigma)
            .zip(z)
            .map(|((m, ls), zv)| {
                let s = ls.exp();
                let r = (zv - m) / s;
                -0.5 * r * r - ls - 0.5 * LN_2PI
            })
            .sum()
    }
}

/// Diagonal of the likelihood covariance together with the observation mask.
///
/// `lambda` has one entry per dimension; entries at missing dimensions are
/// never read.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedLikelihoodSpec {
    lambda: Vec<f64>,
    mask: Vec<bool>,
}

impl MaskedLikelihoodSpec {
    pub fn new(mask: Vec<bool>, lambda: Vec<f64>) -> Result<Self> {
        if mask.len() != lambda.len() {
            return Err(VadError::dim(format!(
                "mask has {} entries but lambda has {}",
                mask.len(),
                lambda.len()
            )));
        }
        for (j, (&m, &l)) in mask.iter().zip(&lambda).enumerate() {
            if m && !(l > 0.0 && l.is_finite()) {
                return Err(VadError::InvalidCovariance { dim: j, value: l });
            }
        }
        Ok(MaskedLikelihoodSpec { lambda, mask })
    }

    /// Same `lambda` on every observed dimension.
    pub fn uniform(mask: Vec<bool>, lambda: f64) -> Result<Self> {
        let d = mask.len();
        MaskedLikelihoodSpec::new(mask, vec![lambda; d])
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElboMode {
    Full,
    #[default]
    ReconOnly,
}

impl std::str::FromStr for ElboMode {
    type Err = VadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ElboMode::Full),
            "recon_only" | "recon-only" => Ok(ElboMode::ReconOnly),
            other => Err(VadError::config(format!("unknown lower-bound mode `{other}`"))),
        }
    }
}

/// `z = mu + eps ⊙ exp(log_sigma)`.
pub fn reparameterize(q: &DiagGaussianParams, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != q.dim() {
        return Err(VadError::dim(format!(
            "noise has {} entries, posterior has {}",
            eps.len(),
            q.dim()
        )));
    }
    Ok(q.mu
        .iter()
        .zip(&q.log_sigma)
        .zip(eps)
        .map(|((m, ls), e)| m + e * ls.exp())
        .collect())
}

/// Gaussian log-likelihood of `x` around `decoded` with missing dimensions
/// marginalized out. Missing dimensions contribute exactly zero and the value
/// of `x` there is never read.
pub fn masked_gauss_loglik(decoded: &[f64], x: &[f64], spec: &MaskedLikelihoodSpec) -> Result<f64> {
    let d = spec.mask.len();
    if decoded.len() != d || x.len() != d {
        return Err(VadError::dim(format!(
            "decoded ({}) and x ({}) must both have length {d}",
            decoded.len(),
            x.len()
        )));
    }
    let mut total = 0.0;
    for j in 0..d {
        if spec.mask[j] {
            let l = spec.lambda[j];
            let r = decoded[j] - x[j];
            total += -0.5 * r * r / l - 0.5 * (2.0 * PI * l).ln();
        }
    }
    Ok(total)
}

/// Closed-form `KL(q || N(0, I))`.
pub fn kl_to_std_normal(q: &DiagGaussianParams) -> f64 {
    q.mu
        .iter()
        .zip(&q.log_sigma)
        .map(|(m, ls)| 0.5 * ((2.0 * ls).exp() + m * m - 1.0 - 2.0 * ls))
        .sum()
}

/// Log-density of the standard-normal prior.
pub fn std_normal_log_pdf(z: &[f64]) -> f64 {
    z.iter().map(|v| -0.5 * v * v - 0.5 * LN_2PI).sum()
}

pub fn lower_bound(recon: f64, kl: f64, mode: ElboMode) -> Result<f64> {
    if !(kl >= 0.0) {
        return Err(VadError::InvalidKl(kl));
    }
    Ok(match mode {
        ElboMode::Full => recon - kl,
        ElboMode::ReconOnly => recon,
    })
}

/// Batched reparameterization on the tape: `mu + eps ⊙ exp(log_sigma)`.
pub fn reparameterize_var(tape: &mut Tape, mu: Var, log_sigma: Var, eps: Var) -> Result<Var> {
    let sigma = tape.exp(log_sigma)?;
    let noise = tape.mul(eps, sigma)?;
    tape.add(mu, noise)
}

/// Batched masked log-likelihood. `decoded` is `[n, d]`; `x` and `mask` are
/// row-major `n·d` buffers and `lambda` holds one variance per column.
/// Returns an `[n]` tensor of per-row log-likelihoods.
pub fn masked_gauss_loglik_var(
    tape: &mut Tape,
    decoded: Var,
    x: &[f64],
    mask: &[bool],
    lambda: &[f64],
) -> Result<Var> {
    let (n, d) = tape.value(decoded).dims2();
    if x.len() != n * d || mask.len() != n * d || lambda.len() != d {
        return Err(VadError::dim(format!(
            "masked likelihood on [{n}, {d}] with x {} / mask {} / lambda {}",
            x.len(),
            mask.len(),
            lambda.len()
        )));
    }
    for (j, &l) in lambda.iter().enumerate() {
        if !(l > 0.0 && l.is_finite()) && mask.iter().skip(j).step_by(d.max(1)).any(|&m| m) {
            return Err(VadError::InvalidCovariance { dim: j, value: l });
        }
    }
    let mut filled = vec![0.0; n * d];
    let mut weight = vec![0.0; n * d];
    let mut constant = vec![0.0; n];
    for i in 0..n {
        for j in 0..d {
            let k = i * d + j;
            if mask[k] {
                filled[k] = x[k];
                weight[k] = -0.5 / lambda[j];
                constant[i] += -0.5 * (2.0 * PI * lambda[j]).ln();
            }
        }
    }
    let filled = tape.constant(Tensor::matrix(n, d, filled)?)?;
    let weight = tape.constant(Tensor::matrix(n, d, weight)?)?;
    let constant = tape.constant(Tensor::new(&[n], constant)?)?;
    let resid = tape.sub(decoded, filled)?;
    let sq = tape.mul(resid, resid)?;
    let weighted = tape.mul(sq, weight)?;
    let per_row = tape.reduce(ReduceKind::Sum, weighted, Axis::Rows)?;
    tape.add(per_row, constant)
}

/// Batched closed-form KL to `N(0, I)`; `[n, d_z]` inputs, `[n]` output.
pub fn kl_to_std_normal_var(tape: &mut Tape, mu: Var, log_sigma: Var) -> Result<Var> {
    let (_, dz) = tape.value(mu).dims2();
    let two_ls = tape.scale(log_sigma, 2.0)?;
    let var = tape.exp(two_ls)?;
    let mu_sq = tape.mul(mu, mu)?;
    let t = tape.add(var, mu_sq)?;
    let t = tape.sub(t, two_ls)?;
    let per_row = tape.reduce(ReduceKind::Sum, t, Axis::Rows)?;
    let half = tape.scale(per_row, 0.5)?;
    tape.offset(half, -0.5 * dz as f64)
}
