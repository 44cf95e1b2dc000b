use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, MaskMatrix};
use crate::error::{Result, VadError};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

fn header_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("dim_{j}")).collect()
}

fn write_rows<F>(path: &Path, rows: usize, cols: usize, mut cell: F) -> Result<()>
where
    F: FnMut(usize, usize) -> String,
{
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header_names(cols).join(","))?;
    let mut line = String::new();
    for i in 0..rows {
        line.clear();
        for j in 0..cols {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&cell(i, j));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a `[n, d]` matrix as CSV; NaN entries become empty cells.
pub fn write_csv_matrix(path: &Path, m: &Tensor) -> Result<()> {
    let (n, d) = m.dims2();
    write_rows(path, n, d, |i, j| {
        let v = m.data()[i * d + j];
        if v.is_nan() {
            String::new()
        } else {
            format!("{v:?}")
        }
    })
}

pub fn write_mask_csv(path: &Path, mask: &MaskMatrix) -> Result<()> {
    write_rows(path, mask.rows(), mask.cols(), |i, j| {
        if mask.row(i)[j] { "1" } else { "0" }.to_string()
    })
}

fn read_cells<T, F>(path: &Path, mut parse: F) -> Result<(usize, usize, Vec<T>)>
where
    F: FnMut(&str) -> std::result::Result<T, String>,
{
    let where_ = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| VadError::parse(&where_, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| VadError::parse(format!("{where_}, byte 0"), e.to_string()))?
        .clone();
    let d = headers.len();
    for (j, h) in headers.iter().enumerate() {
        if h != format!("dim_{j}") {
            let offset = headers.position().map_or(0, |p| p.byte());
            return Err(VadError::parse(
                format!("{where_}, byte {offset}"),
                format!("header column {j} is `{h}`, expected `dim_{j}`"),
            ));
        }
    }
    let mut cells = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| VadError::parse(format!("{where_}, row {}", r + 1), e.to_string()))?;
        if record.len() != d {
            return Err(VadError::parse(
                format!("{where_}, row {}", r + 1),
                format!("expected {d} cells, found {}", record.len()),
            ));
        }
        for (j, cell) in record.iter().enumerate() {
            let v = parse(cell.trim()).map_err(|m| VadError::parse(format!("{where_}, row {}, column {j}", r + 1), m))?;
            cells.push(v);
        }
        rows += 1;
    }
    Ok((rows, d, cells))
}

/// Reads a `dim_*` CSV into an `[n, d]` matrix; empty cells become NaN.
pub fn read_csv_matrix(path: &Path) -> Result<Tensor> {
    let (n, d, cells) = read_cells(path, |s| {
        if s.is_empty() {
            Ok(f64::NAN)
        } else {
            s.parse::<f64>()
                .map_err(|e| format!("`{s}`: {e}"))
                .and_then(|v| if v.is_finite() { Ok(v) } else { Err(format!("non-finite value `{s}`")) })
        }
    })?;
    Tensor::matrix(n, d, cells)
}

pub fn read_mask_csv(path: &Path) -> Result<MaskMatrix> {
    let (n, d, bits) = read_cells(path, |s| match s {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(format!("mask cell `{other}` is not 0 or 1")),
    })?;
    MaskMatrix::new(n, d, bits)
}

/// Loads a data CSV and an optional mask CSV. When the data has no empty
/// cells it is kept as ground truth for evaluation.
pub fn load_dataset(data: &Path, masks: Option<&Path>) -> Result<Dataset> {
    let x = read_csv_matrix(data)?;
    let (n, d) = x.dims2();
    let mask = match masks {
        Some(p) => read_mask_csv(p)?,
        None => MaskMatrix::all_observed(n, d),
    };
    if mask.rows() != n || mask.cols() != d {
        return Err(VadError::dim(format!(
            "data is {n}×{d} but mask is {}×{}",
            mask.rows(),
            mask.cols()
        )));
    }
    if x.data().iter().any(|v| v.is_nan()) {
        Dataset::from_incomplete(x, mask)
    } else {
        Dataset::apply_mask(x, mask)
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| VadError::parse(format!("{}, gzip stream", path.display()), e.to_string()))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Loads an IDX image file (optionally gzipped) as a fully observed dataset
/// of `[N, rows·cols]` pixels scaled to `[0, 1]`.
pub fn load_idx(path: &Path) -> Result<Dataset> {
    let bytes = read_maybe_gz(path)?;
    let where_ = path.display();
    let word = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| VadError::parse(format!("{where_}, byte {offset}"), "header truncated"))
    };
    let magic = word(0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(VadError::parse(
            format!("{where_}, byte 0"),
            format!("magic 0x{magic:08x} is not an unsigned-byte image file (0x{IDX_IMAGES_MAGIC:08x})"),
        ));
    }
    let n = word(4)? as usize;
    let rows = word(8)? as usize;
    let cols = word(12)? as usize;
    let pixels = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != n * pixels {
        return Err(VadError::parse(
            format!("{where_}, byte {}", 16 + payload.len().min(n * pixels)),
            format!("expected {} payload bytes, found {}", n * pixels, payload.len()),
        ));
    }
    let data = payload.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::fully_observed(Tensor::matrix(n, pixels, data)?)
}

/// Binary PGM of a `[0, 1]` image; NaN pixels are drawn mid-grey.
pub fn write_pgm(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if values.len() != rows * cols {
        return Err(VadError::dim(format!("{rows}×{cols} image from {} values", values.len())));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{cols} {rows}\n255\n")?;
    let bytes: Vec<u8> = values
        .iter()
        .map(|v| if v.is_nan() { 128 } else { (v.clamp(0.0, 1.0) * 255.0).round() as u8 })
        .collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}
