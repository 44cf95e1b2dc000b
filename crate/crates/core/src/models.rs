//! The decoder `F(z; θ)`, the per-datapoint posterior bank used by VAD and
//! the amortizing encoder used by the VAE baseline.
//!
//! Network parameters live in one flat `Vec<f64>` per network, laid out layer
//! by layer as `W[fan_in, fan_out]` (row-major) followed by `b[fan_out]`. The
//! same order is used for gradients, optimizer state and checkpoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distributions::DiagGaussianParams;
use crate::error::{Result, VadError};
use crate::tensor::{Activation, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct DenseLayout {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl DenseLayout {
    fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    fn weight(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }
}

fn chain_layouts(dims: &[usize], start: usize) -> Vec<DenseLayout> {
    let mut offset = start;
    dims.windows(2)
        .map(|w| {
            let l = DenseLayout {
                fan_in: w[0],
                fan_out: w[1],
                offset,
            };
            offset += l.len();
            l
        })
        .collect()
}

fn glorot_fill(params: &mut [f64], layout: &DenseLayout, rng: &mut ChaCha8Rng) {
    let bound = glorot_bound(layout.fan_in, layout.fan_out);
    for w in &mut params[layout.weight()] {
        *w = rng.random_range(-bound..=bound);
    }
}

/// `√(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Parameter count of a fully connected chain over `dims`.
pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Tape handles of one network's parameters, in layout order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    layers: Vec<(Var, Var)>,
}

impl ParamVars {
    /// Flat gradient in parameter order; zeros where nothing flowed back.
    pub fn gradient(&self, tape: &Tape) -> Vec<f64> {
        let mut out = Vec::new();
        for &(w, b) in &self.layers {
            for v in [w, b] {
                match tape.grad(v) {
                    Some(g) => out.extend_from_slice(g),
                    None => out.extend(std::iter::repeat_n(0.0, tape.value(v).len())),
                }
            }
        }
        out
    }
}

fn register(tape: &mut Tape, params: &[f64], layouts: &[DenseLayout], trainable: bool) -> Result<ParamVars> {
    let mut layers = Vec::with_capacity(layouts.len());
    for l in layouts {
        let w = tape.leaf(
            Tensor::matrix(l.fan_in, l.fan_out, params[l.weight()].to_vec())?,
            trainable,
        )?;
        let b = tape.leaf(Tensor::vector(params[l.bias()].to_vec()), trainable)?;
        layers.push((w, b));
    }
    Ok(ParamVars { layers })
}

fn dense(tape: &mut Tape, input: Var, (w, b): (Var, Var), act: Activation) -> Result<Var> {
    let h = tape.matmul(input, w)?;
    let h = tape.add(h, b)?;
    if act == Activation::Identity {
        Ok(h)
    } else {
        tape.activation(act, h)
    }
}

fn check_dims(dims: &[usize], what: &str) -> Result<()> {
    if dims.len() < 2 {
        return Err(VadError::config(format!(
            "{what} needs at least an input and an output width, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(VadError::config(format!("{what} widths must be positive, got {dims:?}")));
    }
    Ok(())
}

/// Feedforward decoder `F(z; θ)` with dims `[d_z, h_1, …, h_L, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderMLP {
    dims: Vec<usize>,
    layouts: Vec<DenseLayout>,
    params: Vec<f64>,
    hidden_activation: Activation,
    output_activation: Activation,
}

impl DecoderMLP {
    /// Glorot-uniform weights, zero biases.
    pub fn new(dims: &[usize], hidden_activation: Activation, output_activation: Activation, seed: u64) -> Result<Self> {
        check_dims(dims, "decoder")?;
        let layouts = chain_layouts(dims, 0);
        let mut params = vec![0.0; param_count(dims)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layouts {
            glorot_fill(&mut params, l, &mut rng);
        }
        Ok(DecoderMLP {
            dims: dims.to_vec(),
            layouts,
            params,
            hidden_activation,
            output_activation,
        })
    }

    pub fn from_params(
        dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        check_dims(dims, "decoder")?;
        if params.len() != param_count(dims) {
            return Err(VadError::dim(format!(
                "decoder {dims:?} needs {} parameters, got {}",
                param_count(dims),
                params.len()
            )));
        }
        Ok(DecoderMLP {
            dims: dims.to_vec(),
            layouts: chain_layouts(dims, 0),
            params,
            hidden_activation,
            output_activation,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn latent_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("checked non-empty")
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Weight matrix `[fan_in, fan_out]` and bias of layer `i`.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let l = &self.layouts[i];
        (&self.params[l.weight()], &self.params[l.bias()])
    }

    pub fn layer_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let l = self.layouts[i];
        let (head, tail) = self.params.split_at_mut(l.bias().start);
        (&mut head[l.weight()], &mut tail[..l.fan_out])
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Result<ParamVars> {
        register(tape, &self.params, &self.layouts, trainable)
    }

    /// Batched forward pass of `z: [n, d_z]` into `[n, d]`.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, z: Var) -> Result<Var> {
        let zv = tape.value(z);
        if zv.rank() != 2 || zv.shape()[1] != self.latent_dim() {
            return Err(VadError::dim(format!(
                "decoder expects [n, {}] latents, got {:?}",
                self.latent_dim(),
                zv.shape()
            )));
        }
        let last = self.layouts.len() - 1;
        let mut h = z;
        for (i, &lv) in vars.layers.iter().enumerate() {
            let act = if i == last {
                self.output_activation
            } else {
                self.hidden_activation
            };
            h = dense(tape, h, lv, act)?;
        }
        Ok(h)
    }

    /// Gradient-free decode of `z: [n, d_z]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false)?;
        let zv = tape.constant(z.clone())?;
        let out = self.forward(&mut tape, &vars, zv)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Learnable,
    /// Posterior standard deviation held at this value and never trained.
    Fixed(f64),
}

impl Default for SigmaMode {
    fn default() -> Self {
        SigmaMode::Fixed(0.1)
    }
}

impl SigmaMode {
    pub fn validate(self) -> Result<()> {
        match self {
            SigmaMode::Fixed(s) if !(s > 0.0 && s.is_finite()) => {
                Err(VadError::config(format!("fixed posterior sigma must be positive, got {s}")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_learnable(self) -> bool {
        matches!(self, SigmaMode::Learnable)
    }
}

pub const POSTERIOR_MU_INIT_STD: f64 = 0.01;
pub const POSTERIOR_SIGMA_INIT: f64 = 0.1;

/// Free approximate-posterior parameters, one diagonal Gaussian per datapoint.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorBank {
    n: usize,
    latent_dim: usize,
    mu: Vec<f64>,
    log_sigma: Vec<f64>,
    sigma_mode: SigmaMode,
}

impl PosteriorBank {
    pub fn new(n: usize, latent_dim: usize, sigma_mode: SigmaMode, seed: u64) -> Result<Self> {
        if n == 0 || latent_dim == 0 {
            return Err(VadError::config(format!(
                "posterior bank needs N ≥ 1 and d_z ≥ 1, got N={n}, d_z={latent_dim}"
            )));
        }
        sigma_mode.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, POSTERIOR_MU_INIT_STD).expect("valid std");
        let mu = (0..n * latent_dim).map(|_| normal.sample(&mut rng)).collect();
        let ls = match sigma_mode {
            SigmaMode::Learnable => POSTERIOR_SIGMA_INIT.ln(),
            SigmaMode::Fixed(s) => s.ln(),
        };
        Ok(PosteriorBank {
            n,
            latent_dim,
            mu,
            log_sigma: vec![ls; n * latent_dim],
            sigma_mode,
        })
    }

    pub fn from_rows(rows: &[DiagGaussianParams], sigma_mode: SigmaMode) -> Result<Self> {
        let first = rows.first().ok_or_else(|| VadError::config("empty posterior list"))?;
        let latent_dim = first.dim();
        let mut mu = Vec::with_capacity(rows.len() * latent_dim);
        let mut log_sigma = Vec::with_capacity(rows.len() * latent_dim);
        for r in rows {
            if r.dim() != latent_dim {
                return Err(VadError::dim("posterior rows differ in latent width"));
            }
            mu.extend_from_slice(&r.mu);
            log_sigma.extend_from_slice(&r.log_sigma);
        }
        Ok(PosteriorBank {
            n: rows.len(),
            latent_dim,
            mu,
            log_sigma,
            sigma_mode,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn sigma_mode(&self) -> SigmaMode {
        self.sigma_mode
    }

    pub fn mu_row(&self, i: usize) -> &[f64] {
        &self.mu[i * self.latent_dim..(i + 1) * self.latent_dim]
    }

    pub fn log_sigma_row(&self, i: usize) -> &[f64] {
        &self.log_sigma[i * self.latent_dim..(i + 1) * self.latent_dim]
    }

    pub fn get(&self, i: usize) -> DiagGaussianParams {
        DiagGaussianParams {
            mu: self.mu_row(i).to_vec(),
            log_sigma: self.log_sigma_row(i).to_vec(),
        }
    }

    pub fn rows(&self) -> Vec<DiagGaussianParams> {
        (0..self.n).map(|i| self.get(i)).collect()
    }

    /// All means as an `[N, d_z]` tensor.
    pub fn mu_tensor(&self) -> Tensor {
        Tensor::matrix(self.n, self.latent_dim, self.mu.clone()).expect("bank shape")
    }

    /// Means and log-sigmas of the selected rows as `[b, d_z]` tensors.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let dz = self.latent_dim;
        let mut mu = Vec::with_capacity(indices.len() * dz);
        let mut ls = Vec::with_capacity(indices.len() * dz);
        for &i in indices {
            mu.extend_from_slice(self.mu_row(i));
            ls.extend_from_slice(self.log_sigma_row(i));
        }
        (
            Tensor::matrix(indices.len(), dz, mu).expect("gather shape"),
            Tensor::matrix(indices.len(), dz, ls).expect("gather shape"),
        )
    }

    /// Mutable view of row `i` as `(mu, log_sigma)`.
    pub fn row_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let r = i * self.latent_dim..(i + 1) * self.latent_dim;
        (&mut self.mu[r.clone()], &mut self.log_sigma[r])
    }
}

/// Amortized posterior for the VAE baseline. The input is the zero-imputed
/// row, concatenated with its mask unless `use_mask` is off. A shared trunk
/// feeds two linear heads for `mu` and `log_sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderMLP {
    data_dim: usize,
    latent_dim: usize,
    use_mask: bool,
    trunk_dims: Vec<usize>,
    trunk: Vec<DenseLayout>,
    mu_head: DenseLayout,
    log_sigma_head: DenseLayout,
    params: Vec<f64>,
    hidden_activation: Activation,
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    trunk: ParamVars,
    mu_head: (Var, Var),
    log_sigma_head: (Var, Var),
    all: ParamVars,
}

impl EncoderVars {
    pub fn gradient(&self, tape: &Tape) -> Vec<f64> {
        self.all.gradient(tape)
    }
}

impl EncoderMLP {
    pub fn new(
        data_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        hidden_activation: Activation,
        use_mask: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut enc = EncoderMLP::layout(data_dim, hidden, latent_dim, hidden_activation, use_mask)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layouts: Vec<DenseLayout> = enc
            .trunk
            .iter()
            .copied()
            .chain([enc.mu_head, enc.log_sigma_head])
            .collect();
        for l in &layouts {
            glorot_fill(&mut enc.params, l, &mut rng);
        }
        let ls_bias = enc.log_sigma_head.bias();
        enc.params[ls_bias].fill(POSTERIOR_SIGMA_INIT.ln());
        Ok(enc)
    }

    pub fn from_params(
        data_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        hidden_activation: Activation,
        use_mask: bool,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut enc = EncoderMLP::layout(data_dim, hidden, latent_dim, hidden_activation, use_mask)?;
        if params.len() != enc.params.len() {
            return Err(VadError::dim(format!(
                "encoder needs {} parameters, got {}",
                enc.params.len(),
                params.len()
            )));
        }
        enc.params = params;
        Ok(enc)
    }

    fn layout(
        data_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        hidden_activation: Activation,
        use_mask: bool,
    ) -> Result<Self> {
        if data_dim == 0 || latent_dim == 0 || hidden.contains(&0) {
            return Err(VadError::config("encoder widths must be positive"));
        }
        let input = if use_mask { 2 * data_dim } else { data_dim };
        let mut trunk_dims = vec![input];
        trunk_dims.extend_from_slice(hidden);
        let trunk = chain_layouts(&trunk_dims, 0);
        let head_in = *trunk_dims.last().expect("non-empty");
        let mut offset = param_count(&trunk_dims);
        let mu_head = DenseLayout {
            fan_in: head_in,
            fan_out: latent_dim,
            offset,
        };
        offset += mu_head.len();
        let log_sigma_head = DenseLayout { offset, ..mu_head };
        offset += log_sigma_head.len();
        Ok(EncoderMLP {
            data_dim,
            latent_dim,
            use_mask,
            trunk_dims,
            trunk,
            mu_head,
            log_sigma_head,
            params: vec![0.0; offset],
            hidden_activation,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn uses_mask(&self) -> bool {
        self.use_mask
    }

    pub fn input_dim(&self) -> usize {
        self.trunk_dims[0]
    }

    /// Hidden widths of the trunk (excluding the input width).
    pub fn hidden_dims(&self) -> &[usize] {
        &self.trunk_dims[1..]
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Zero-imputed encoder input for `n` rows of width `d`, as `[n, input_dim]`.
    pub fn build_input(&self, x: &[f64], mask: &[bool]) -> Result<Tensor> {
        let d = self.data_dim;
        if x.len() != mask.len() || x.len() % d != 0 {
            return Err(VadError::dim(format!(
                "encoder input of width {d}: x has {} entries, mask {}",
                x.len(),
                mask.len()
            )));
        }
        let n = x.len() / d;
        let width = self.input_dim();
        let mut data = Vec::with_capacity(n * width);
        for i in 0..n {
            let xr = &x[i * d..(i + 1) * d];
            let mr = &mask[i * d..(i + 1) * d];
            data.extend(xr.iter().zip(mr).map(|(&v, &m)| if m { v } else { 0.0 }));
            if self.use_mask {
                data.extend(mr.iter().map(|&m| if m { 1.0 } else { 0.0 }));
            }
        }
        Tensor::matrix(n, width, data)
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Result<EncoderVars> {
        let layouts: Vec<DenseLayout> = self
            .trunk
            .iter()
            .copied()
            .chain([self.mu_head, self.log_sigma_head])
            .collect();
        let all = register(tape, &self.params, &layouts, trainable)?;
        let k = self.trunk.len();
        Ok(EncoderVars {
            trunk: ParamVars {
                layers: all.layers[..k].to_vec(),
            },
            mu_head: all.layers[k],
            log_sigma_head: all.layers[k + 1],
            all,
        })
    }

    /// `input: [n, input_dim]` to `(mu, log_sigma)`, each `[n, d_z]`.
    pub fn forward(&self, tape: &mut Tape, vars: &EncoderVars, input: Var) -> Result<(Var, Var)> {
        let iv = tape.value(input);
        if iv.rank() != 2 || iv.shape()[1] != self.input_dim() {
            return Err(VadError::dim(format!(
                "encoder expects [n, {}] input, got {:?}",
                self.input_dim(),
                iv.shape()
            )));
        }
        let mut h = input;
        for &lv in &vars.trunk.layers {
            h = dense(tape, h, lv, self.hidden_activation)?;
        }
        let mu = dense(tape, h, vars.mu_head, Activation::Identity)?;
        let ls = dense(tape, h, vars.log_sigma_head, Activation::Identity)?;
        Ok((mu, ls))
    }

    /// Posterior for a single row.
    pub fn encode(&self, x: &[f64], mask: &[bool]) -> Result<DiagGaussianParams> {
        if x.len() != self.data_dim || mask.len() != self.data_dim {
            return Err(VadError::dim(format!(
                "encoder expects rows of width {}, got x {} / mask {}",
                self.data_dim,
                x.len(),
                mask.len()
            )));
        }
        let (mu, ls) = self.encode_batch(x, mask)?;
        DiagGaussianParams::new(mu.into_data(), ls.into_data())
    }

    /// Posterior means and log-sigmas for a batch of rows, each `[n, d_z]`.
    pub fn encode_batch(&self, x: &[f64], mask: &[bool]) -> Result<(Tensor, Tensor)> {
        let input = self.build_input(x, mask)?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false)?;
        let iv = tape.constant(input)?;
        let (mu, ls) = self.forward(&mut tape, &vars, iv)?;
        Ok((tape.value(mu).clone(), tape.value(ls).clone()))
    }
}
