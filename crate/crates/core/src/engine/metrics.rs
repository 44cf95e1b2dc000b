use std::io::Write;

use serde::Serialize;

use super::ModelKind;
use crate::data::MaskMatrix;
use crate::error::{Result, VadError};
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str =
    "model,r_train,r_test,seed,mse_incomplete,mse_missing,mse_full,lower_bound,seconds,threshold";

/// Per-entry MSE over observed, missing and all entries. A category without
/// entries is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CategoryMse {
    pub incomplete: Option<f64>,
    pub missing: Option<f64>,
    pub full: Option<f64>,
}

pub fn eval_mse(decoded: &Tensor, x_hat: &Tensor, masks: &MaskMatrix) -> Result<CategoryMse> {
    if decoded.shape() != x_hat.shape() || x_hat.dims2() != (masks.rows(), masks.cols()) {
        return Err(VadError::dim(format!(
            "decoded {:?}, truth {:?} and mask {}×{} must agree",
            decoded.shape(),
            x_hat.shape(),
            masks.rows(),
            masks.cols()
        )));
    }
    let (mut sse_obs, mut sse_mis) = (0.0, 0.0);
    let (mut n_obs, mut n_mis) = (0usize, 0usize);
    for ((d, t), &m) in decoded.data().iter().zip(x_hat.data()).zip(masks.bits()) {
        let e = (d - t) * (d - t);
        if m {
            sse_obs += e;
            n_obs += 1;
        } else {
            sse_mis += e;
            n_mis += 1;
        }
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    Ok(CategoryMse {
        incomplete: mean(sse_obs, n_obs),
        missing: mean(sse_mis, n_mis),
        full: mean(sse_obs + sse_mis, n_obs + n_mis),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub model: ModelKind,
    pub r_train: f64,
    pub r_test: f64,
    pub seed: u64,
    pub mse: CategoryMse,
    pub lower_bound: f64,
    /// Wall-clock time, only recorded on request so that output stays reproducible.
    pub seconds: Option<f64>,
    /// Mean-baseline MSE on the same test split.
    pub threshold: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:?}"))
}

impl MetricsRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:?},{:?},{},{},{},{},{:?},{},{}",
            self.model,
            self.r_train,
            self.r_test,
            self.seed,
            cell(self.mse.incomplete),
            cell(self.mse.missing),
            cell(self.mse.full),
            self.lower_bound,
            cell(self.seconds),
            cell(self.threshold)
        )
    }
}

/// Header plus one LF-terminated line per record; undefined values are empty cells.
pub fn write_metrics_csv<W: Write>(mut out: W, records: &[MetricsRecord]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_line())?;
    }
    out.flush()?;
    Ok(())
}
