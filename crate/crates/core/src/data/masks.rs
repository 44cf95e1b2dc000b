use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MaskMatrix;
use crate::error::{Result, VadError};

/// MCAR mask: every entry goes missing independently with probability `rate`.
pub fn sample_mcar(rows: usize, cols: usize, rate: f64, seed: u64) -> Result<MaskMatrix> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(VadError::config(format!("missing rate must lie in [0, 1], got {rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = (0..rows * cols).map(|_| rng.random::<f64>() >= rate).collect();
    MaskMatrix::new(rows, cols, bits)
}

/// `n_blocks` uniformly placed (possibly overlapping) missing blocks on an
/// otherwise observed `rows × cols` grid, flattened row-major.
pub fn sample_block_mask(
    rows: usize,
    cols: usize,
    block_h: usize,
    block_w: usize,
    n_blocks: usize,
    seed: u64,
) -> Result<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    block_mask_with(rows, cols, block_h, block_w, n_blocks, &mut rng)
}

fn block_mask_with(
    rows: usize,
    cols: usize,
    block_h: usize,
    block_w: usize,
    n_blocks: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<bool>> {
    if n_blocks == 0 {
        return Err(VadError::config("block mask needs at least one block"));
    }
    if block_h == 0 || block_w == 0 || block_h > rows || block_w > cols {
        return Err(VadError::config(format!(
            "{block_h}×{block_w} block does not fit a {rows}×{cols} grid"
        )));
    }
    let mut bits = vec![true; rows * cols];
    for _ in 0..n_blocks {
        let top = rng.random_range(0..=rows - block_h);
        let left = rng.random_range(0..=cols - block_w);
        for r in top..top + block_h {
            bits[r * cols + left..r * cols + left + block_w].fill(false);
        }
    }
    Ok(bits)
}

/// One independent block mask per image, stacked into an `n × (rows·cols)` mask.
pub fn sample_block_masks(
    n: usize,
    rows: usize,
    cols: usize,
    block: usize,
    n_blocks: usize,
    seed: u64,
) -> Result<MaskMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = Vec::with_capacity(n * rows * cols);
    for _ in 0..n {
        bits.extend(block_mask_with(rows, cols, block, block, n_blocks, &mut rng)?);
    }
    MaskMatrix::new(n, rows * cols, bits)
}
