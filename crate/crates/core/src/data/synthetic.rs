//! Synthetic tabular data: a block of independent columns drawn from five
//! univariate families with random parameters, followed by columns that mix
//! random subsets of the independent ones.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Result, VadError};
use crate::tensor::{Activation, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_rows: usize,
    pub dim: usize,
    pub n_independent: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_rows: 5_000,
            dim: 30,
            n_independent: 10,
            seed: 0,
        }
    }
}

/// Independent column families with their drawn parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Univariate {
    Normal { mu: f64, sigma: f64 },
    Uniform { a: f64, b: f64 },
    Beta { alpha: f64, beta: f64 },
    Logistic { mu: f64, s: f64 },
    Gumbel { mu: f64, beta: f64 },
}

/// Draws a value in `(0, hi]`.
fn open_closed(rng: &mut ChaCha8Rng, hi: f64) -> f64 {
    hi * (1.0 - rng.random::<f64>())
}

impl Univariate {
    /// Draws a family uniformly, then its parameters from the generator ranges.
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        match rng.random_range(0..5) {
            0 => Univariate::Normal {
                mu: rng.random_range(-1.0..=1.0),
                sigma: open_closed(rng, 2.0),
            },
            1 => {
                let a = rng.random_range(-2.0..=2.0);
                let b = rng.random_range(a..=2.0);
                Univariate::Uniform { a, b }
            }
            2 => Univariate::Beta {
                alpha: 0.05 + open_closed(rng, 2.95),
                beta: 0.05 + open_closed(rng, 2.95),
            },
            3 => Univariate::Logistic {
                mu: rng.random_range(-1.0..=1.0),
                s: open_closed(rng, 2.0),
            },
            _ => Univariate::Gumbel {
                mu: rng.random_range(-1.0..=1.0),
                beta: open_closed(rng, 2.0),
            },
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Univariate::Normal { mu, sigma } => Normal::new(mu, sigma).expect("sigma > 0").sample(rng),
            Univariate::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            Univariate::Beta { alpha, beta } => Beta::new(alpha, beta).expect("positive shape").sample(rng),
            Univariate::Logistic { mu, s } => {
                let u: f64 = loop {
                    let u = rng.random::<f64>();
                    if u > 0.0 {
                        break u;
                    }
                };
                mu + s * (u / (1.0 - u)).ln()
            }
            Univariate::Gumbel { mu, beta } => Gumbel::new(mu, beta).expect("beta > 0").sample(rng),
        }
    }

    /// Cumulative distribution function; Beta is left to callers with a
    /// special-function library.
    pub fn cdf(&self, x: f64) -> Option<f64> {
        match *self {
            Univariate::Normal { .. } | Univariate::Beta { .. } => None,
            Univariate::Uniform { a, b } => Some(if x < a {
                0.0
            } else if x >= b {
                1.0
            } else {
                (x - a) / (b - a)
            }),
            Univariate::Logistic { mu, s } => Some(1.0 / (1.0 + (-(x - mu) / s).exp())),
            Univariate::Gumbel { mu, beta } => Some((-(-(x - mu) / beta).exp()).exp()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColumnSpec {
    Independent(Univariate),
    /// `act( Π_k w_k·x_{s_k} + Σ_k w'_k·x_{s_k} + bias )` over source columns `s`.
    Dependent {
        sources: Vec<usize>,
        product_weights: Vec<f64>,
        affine_weights: Vec<f64>,
        bias: f64,
        activation: Activation,
    },
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub columns: Vec<ColumnSpec>,
}

/// Fully observed synthetic dataset; a pure function of the config.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Synthetic> {
    let SyntheticConfig {
        n_rows,
        dim,
        n_independent,
        seed,
    } = *cfg;
    if n_independent < 2 {
        return Err(VadError::config("synthetic data needs at least 2 independent columns"));
    }
    if dim < n_independent {
        return Err(VadError::config(format!(
            "dimension {dim} is smaller than the {n_independent} independent columns"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = Vec::with_capacity(dim);
    for _ in 0..n_independent {
        columns.push(ColumnSpec::Independent(Univariate::draw(&mut rng)));
    }
    let max_subset = n_independent.min(5);
    for _ in n_independent..dim {
        let k = rng.random_range(2..=max_subset);
        let mut sources = sample(&mut rng, n_independent, k).into_vec();
        sources.sort_unstable();
        let product_weights = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let affine_weights = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let bias = rng.random_range(-1.0..=1.0);
        let activation = [Activation::Tanh, Activation::Sigmoid, Activation::Identity][rng.random_range(0..3)];
        columns.push(ColumnSpec::Dependent {
            sources,
            product_weights,
            affine_weights,
            bias,
            activation,
        });
    }

    let mut data = vec![0.0; n_rows * dim];
    for (j, col) in columns.iter().enumerate().take(n_independent) {
        let ColumnSpec::Independent(dist) = col else { unreachable!() };
        for i in 0..n_rows {
            data[i * dim + j] = dist.sample(&mut rng);
        }
    }
    for i in 0..n_rows {
        for (j, col) in columns.iter().enumerate().skip(n_independent) {
            let ColumnSpec::Dependent {
                sources,
                product_weights,
                affine_weights,
                bias,
                activation,
            } = col
            else {
                unreachable!()
            };
            let row = &data[i * dim..i * dim + n_independent];
            let mut product = 1.0;
            let mut affine = *bias;
            for ((&s, pw), aw) in sources.iter().zip(product_weights).zip(affine_weights) {
                product *= pw * row[s];
                affine += aw * row[s];
            }
            data[i * dim + j] = activation.apply(product + affine);
        }
    }
    let dataset = Dataset::fully_observed(Tensor::matrix(n_rows, dim, data)?)?;
    Ok(Synthetic { dataset, columns })
}
