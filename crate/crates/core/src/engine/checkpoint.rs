//! Checkpoint layout:
//!
//! ```text
//! VADCKPT 1\n
//! <TOML header>\n
//! %%BLOB\n
//! <little-endian f64 parameters: decoder layers, then encoder trunk, mu head, log-sigma head>
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelBundle, ModelKind, TrainConfig};
use crate::distributions::DiagGaussianParams;
use crate::error::{Result, VadError};
use crate::models::{param_count, DecoderMLP, EncoderMLP, PosteriorBank, SigmaMode};
use crate::tensor::Activation;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "VADCKPT";
const BLOB_MARKER: &str = "%%BLOB\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderHeader {
    data_dim: usize,
    hidden: Vec<usize>,
    latent_dim: usize,
    use_mask: bool,
    hidden_activation: Activation,
    param_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelKind,
    decoder_dims: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    decoder_param_count: usize,
    encoder: Option<EncoderHeader>,
    blob_bytes: usize,
    /// How every random stream is seeded.
    rng: String,
    config: TrainConfig,
}

const RNG_DESCRIPTION: &str = "chacha8, one stream per purpose seeded by splitmix64(config.seed, stream id)";

pub fn checkpoint_bytes(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let d = &bundle.decoder;
    let encoder = bundle.encoder.as_ref().map(|e| EncoderHeader {
        data_dim: e.data_dim(),
        hidden: e.hidden_dims().to_vec(),
        latent_dim: e.latent_dim(),
        use_mask: e.uses_mask(),
        hidden_activation: e.hidden_activation(),
        param_count: e.param_count(),
    });
    let n_params = bundle.param_count();
    let header = Header {
        model: bundle.kind(),
        decoder_dims: d.dims().to_vec(),
        hidden_activation: d.hidden_activation(),
        output_activation: d.output_activation(),
        decoder_param_count: d.param_count(),
        encoder,
        blob_bytes: 8 * n_params,
        rng: RNG_DESCRIPTION.to_string(),
        config: bundle.config.clone(),
    };
    let text = toml::to_string(&header).map_err(|e| VadError::config(e.to_string()))?;
    let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\n{text}\n{BLOB_MARKER}").into_bytes();
    out.reserve(8 * n_params);
    let enc_params = bundle.encoder.as_ref().map_or(&[][..], |e| e.params());
    for v in d.params().iter().chain(enc_params) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, bundle: &ModelBundle) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&checkpoint_bytes(bundle)?)?;
    out.flush()?;
    Ok(())
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn read_blob(bytes: &[u8], start: usize, count: usize) -> Vec<f64> {
    bytes[start..start + 8 * count]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    let first_nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| VadError::format(0, "missing checkpoint signature line"))?;
    let first = std::str::from_utf8(&bytes[..first_nl]).map_err(|_| VadError::format(0, "signature is not UTF-8"))?;
    let version = first
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| VadError::format(0, format!("expected `{MAGIC} <version>`, found `{first}`")))?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(VadError::format(
            MAGIC.len() as u64 + 1,
            format!("unsupported checkpoint version `{version}`, this build reads {CHECKPOINT_VERSION}"),
        ));
    }
    let header_start = first_nl + 1;
    let marker = format!("\n{BLOB_MARKER}");
    let rel = find(&bytes[header_start..], marker.as_bytes())
        .ok_or_else(|| VadError::format(header_start as u64, "header is not terminated by the blob marker"))?;
    let header_end = header_start + rel;
    let text = std::str::from_utf8(&bytes[header_start..header_end])
        .map_err(|e| VadError::format((header_start + e.valid_up_to()) as u64, "header is not UTF-8"))?;
    let header: Header = toml::from_str(text).map_err(|e| {
        let at = e.span().map_or(0, |s| s.start);
        VadError::format((header_start + at) as u64, e.message().to_string())
    })?;
    let blob_start = header_end + marker.len();

    let dec_count = param_count(&header.decoder_dims);
    let enc_count = header.encoder.as_ref().map_or(0, |e| e.param_count);
    if header.decoder_param_count != dec_count || header.blob_bytes != 8 * (dec_count + enc_count) {
        return Err(VadError::format(
            header_start as u64,
            format!(
                "header declares {} blob bytes but its layer dims imply {}",
                header.blob_bytes,
                8 * (dec_count + enc_count)
            ),
        ));
    }
    let actual = bytes.len() - blob_start;
    if actual != header.blob_bytes {
        return Err(VadError::format(
            (blob_start + actual.min(header.blob_bytes)) as u64,
            format!("expected {} blob bytes, found {actual}", header.blob_bytes),
        ));
    }
    if header.model != header.config.model || (header.model == ModelKind::Vae) != header.encoder.is_some() {
        return Err(VadError::format(header_start as u64, "model kind disagrees with the stored networks"));
    }

    let decoder = DecoderMLP::from_params(
        &header.decoder_dims,
        header.hidden_activation,
        header.output_activation,
        read_blob(bytes, blob_start, dec_count),
    )?;
    let encoder = match &header.encoder {
        Some(e) => Some(EncoderMLP::from_params(
            e.data_dim,
            &e.hidden,
            e.latent_dim,
            e.hidden_activation,
            e.use_mask,
            read_blob(bytes, blob_start + 8 * dec_count, enc_count),
        )?),
        None => None,
    };
    Ok(ModelBundle {
        config: header.config,
        decoder,
        encoder,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

/// Posteriors as CSV with columns `mu_0.., log_sigma_0..`.
pub fn write_posteriors(path: &Path, bank: &PosteriorBank) -> Result<()> {
    let dz = bank.latent_dim();
    let mut out = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..dz)
        .map(|j| format!("mu_{j}"))
        .chain((0..dz).map(|j| format!("log_sigma_{j}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..bank.len() {
        let cells: Vec<String> = bank
            .mu_row(i)
            .iter()
            .chain(bank.log_sigma_row(i))
            .map(|v| format!("{v:?}"))
            .collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_posteriors(path: &Path, sigma_mode: SigmaMode) -> Result<PosteriorBank> {
    let where_ = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| VadError::parse(&where_, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| VadError::parse(format!("{where_}, byte 0"), e.to_string()))?
        .clone();
    let width = headers.len();
    let dz = width / 2;
    let expected: Vec<String> = (0..dz)
        .map(|j| format!("mu_{j}"))
        .chain((0..dz).map(|j| format!("log_sigma_{j}")))
        .collect();
    if width == 0 || width % 2 != 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(VadError::parse(
            format!("{where_}, byte 0"),
            "header must be mu_0..mu_{k}, log_sigma_0..log_sigma_{k}",
        ));
    }
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let loc = || format!("{where_}, row {}", r + 1);
        let record = record.map_err(|e| VadError::parse(loc(), e.to_string()))?;
        let values = record
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| VadError::parse(loc(), e.to_string()))?;
        let q = DiagGaussianParams::new(values[..dz].to_vec(), values[dz..].to_vec())
            .map_err(|e| VadError::parse(loc(), e.to_string()))?;
        rows.push(q);
    }
    PosteriorBank::from_rows(&rows, sigma_mode)
}
