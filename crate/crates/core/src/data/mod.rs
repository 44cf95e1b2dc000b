//! Datasets with explicit observation masks.
//!
//! A [`Dataset`] carries the incomplete view `x` (missing entries hold NaN),
//! the mask (`true` = observed) and, when known, the ground truth `x_hat`.
//! Ground truth is only ever read by evaluation code.

mod io;
mod masks;
mod synthetic;

pub use io::{load_dataset, load_idx, read_csv_matrix, read_mask_csv, write_csv_matrix, write_mask_csv, write_pgm};
pub use masks::{sample_block_mask, sample_block_masks, sample_mcar};
pub use synthetic::{gen_synthetic, ColumnSpec, Synthetic, SyntheticConfig, Univariate};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VadError};
use crate::tensor::Tensor;

/// Marker stored in `x` at missing entries.
pub const MISSING: f64 = f64::NAN;

/// Row-major `rows × cols` observation mask; `true` means observed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(VadError::dim(format!(
                "mask {rows}×{cols} needs {} entries, got {}",
                rows * cols,
                bits.len()
            )));
        }
        Ok(MaskMatrix { rows, cols, bits })
    }

    pub fn all_observed(rows: usize, cols: usize) -> Self {
        MaskMatrix {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    pub fn observed_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn observed_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return f64::NAN;
        }
        self.observed_count() as f64 / self.bits.len() as f64
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut bits = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            bits.extend_from_slice(self.row(i));
        }
        MaskMatrix {
            rows: indices.len(),
            cols: self.cols,
            bits,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    x_hat: Option<Tensor>,
    masks: MaskMatrix,
    x: Tensor,
}

impl Dataset {
    /// Removes information from `x_hat` wherever the mask is `false`.
    pub fn apply_mask(x_hat: Tensor, masks: MaskMatrix) -> Result<Self> {
        let (n, d) = x_hat.dims2();
        if x_hat.rank() != 2 || masks.rows != n || masks.cols != d {
            return Err(VadError::dim(format!(
                "ground truth {:?} and mask {}×{} differ",
                x_hat.shape(),
                masks.rows,
                masks.cols
            )));
        }
        let data = x_hat
            .data()
            .iter()
            .zip(&masks.bits)
            .map(|(&v, &m)| if m { v } else { MISSING })
            .collect();
        let x = Tensor::matrix(n, d, data)?;
        Ok(Dataset {
            x_hat: Some(x_hat),
            masks,
            x,
        })
    }

    pub fn fully_observed(x_hat: Tensor) -> Result<Self> {
        let (n, d) = x_hat.dims2();
        Dataset::apply_mask(x_hat, MaskMatrix::all_observed(n, d))
    }

    /// Dataset with no ground truth. Entries that are NaN in `x` are treated as
    /// missing regardless of the mask.
    pub fn from_incomplete(x: Tensor, masks: MaskMatrix) -> Result<Self> {
        let (n, d) = x.dims2();
        if x.rank() != 2 || masks.rows != n || masks.cols != d {
            return Err(VadError::dim("incomplete data and mask shapes differ"));
        }
        let bits: Vec<bool> = x
            .data()
            .iter()
            .zip(&masks.bits)
            .map(|(v, &m)| m && !v.is_nan())
            .collect();
        let data = x
            .data()
            .iter()
            .zip(&bits)
            .map(|(&v, &m)| if m { v } else { MISSING })
            .collect();
        Ok(Dataset {
            x_hat: None,
            masks: MaskMatrix::new(n, d, bits)?,
            x: Tensor::matrix(n, d, data)?,
        })
    }

    pub fn len(&self) -> usize {
        self.masks.rows
    }

    pub fn is_empty(&self) -> bool {
        self.masks.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.masks.cols
    }

    /// Incomplete view; missing entries hold [`MISSING`].
    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn masks(&self) -> &MaskMatrix {
        &self.masks
    }

    /// Ground truth, for evaluation only.
    pub fn ground_truth(&self) -> Option<&Tensor> {
        self.x_hat.as_ref()
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn mask_row(&self, i: usize) -> &[bool] {
        self.masks.row(i)
    }

    /// Same ground truth under a different mask.
    pub fn remask(&self, masks: MaskMatrix) -> Result<Self> {
        let x_hat = self
            .x_hat
            .clone()
            .ok_or_else(|| VadError::config("re-masking needs ground truth"))?;
        Dataset::apply_mask(x_hat, masks)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let d = self.dim();
        let gather = |t: &Tensor| {
            let mut out = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                out.extend_from_slice(t.row(i));
            }
            Tensor::matrix(indices.len(), d, out).expect("row gather")
        };
        Dataset {
            x_hat: self.x_hat.as_ref().map(gather),
            masks: self.masks.select(indices),
            x: gather(&self.x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Row-disjoint train/val/test split. Train and val sizes are
/// `floor(fraction · N)`; test takes the remainder.
pub fn split(dataset: &Dataset, fractions: SplitFractions, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let SplitFractions { train, val, test } = fractions;
    if !(train > 0.0 && val > 0.0 && test > 0.0) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(VadError::config(format!(
            "split fractions must be positive and sum to 1, got {train}/{val}/{test}"
        )));
    }
    let n = dataset.len();
    let n_train = (train * n as f64 + 1e-9).floor() as usize;
    let n_val = (val * n as f64 + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (tr, rest) = order.split_at(n_train.min(n));
    let (va, te) = rest.split_at(n_val.min(rest.len()));
    Ok((dataset.select(tr), dataset.select(va), dataset.select(te)))
}

/// MSE of predicting every test entry by its training column mean.
pub fn mean_baseline(train_x_hat: &Tensor, test_x_hat: &Tensor) -> Result<f64> {
    let (n_train, d) = train_x_hat.dims2();
    let (n_test, d_test) = test_x_hat.dims2();
    if n_train == 0 || train_x_hat.is_empty() {
        return Err(VadError::config("mean baseline needs a non-empty training set"));
    }
    if d != d_test {
        return Err(VadError::dim(format!("train width {d} vs test width {d_test}")));
    }
    if n_test == 0 {
        return Err(VadError::config("mean baseline needs a non-empty test set"));
    }
    let means = column_means(train_x_hat);
    let mut sse = 0.0;
    for i in 0..n_test {
        for (v, m) in test_x_hat.row(i).iter().zip(&means) {
            sse += (v - m) * (v - m);
        }
    }
    Ok(sse / (n_test * d) as f64)
}

pub fn column_means(t: &Tensor) -> Vec<f64> {
    let (n, d) = t.dims2();
    let mut means = vec![0.0; d];
    for i in 0..n {
        for (m, v) in means.iter_mut().zip(t.row(i)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    means
}
