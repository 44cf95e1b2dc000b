//! Learning generative models from incomplete data with auto-encoding
//! variational Bayes, either encoder-less (VAD: every datapoint owns free
//! posterior parameters) or with an amortizing encoder (VAE baseline).

pub mod distributions;
pub mod error;
pub mod data;
pub mod engine;
pub mod models;
pub mod optim;
pub mod tensor;

pub use error::{Result, VadError};
