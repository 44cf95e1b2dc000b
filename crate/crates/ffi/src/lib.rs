//! C interface to trained VAD/VAE models.
//!
//! Models are opaque `VadModel` handles created by `vad_model_load`,
//! `vad_model_from_bytes`, `vad_model_init` or `vad_model_train`, and released
//! with `vad_model_free`. Every fallible call returns a `VadStatus`; on failure
//! `vad_last_error_message` describes the error for the calling thread.
//!
//! Matrices are dense row-major `double` arrays. Masks are `uint8_t` arrays of
//! the same shape, nonzero meaning observed. Values at missing entries are ignored.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use vad::data::{Dataset, MaskMatrix};
use vad::engine::{
    checkpoint_from_bytes, decode_means, eval_mse, impute_rows, infer, load_checkpoint, save_checkpoint, train,
    ModelBundle, ModelKind, TrainConfig,
};
use vad::tensor::Tensor;
use vad::VadError;

/// Call status. Codes 2-4 match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VadStatus {
    Ok = 0,
    ConfigError = 2,
    DataError = 3,
    NumericError = 4,
    NullPointer = 10,
    InvalidArgument = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VadModelKind {
    Vad = 0,
    Vae = 1,
}

/// Per-entry MSE by category; NaN marks a category without entries.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VadCategoryMse {
    pub incomplete: f64,
    pub missing: f64,
    pub full: f64,
}

/// Opaque model handle.
pub struct VadModel {
    bundle: ModelBundle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Core(VadError),
    Null(&'static str),
    Invalid(String),
}

impl From<VadError> for Failure {
    fn from(e: VadError) -> Self {
        Failure::Core(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard<F: FnOnce() -> FfiResult<()>>(f: F) -> VadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VadStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            let status = match e.exit_code() {
                2 => VadStatus::ConfigError,
                3 => VadStatus::DataError,
                _ => VadStatus::NumericError,
            };
            set_error(e.to_string());
            status
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            VadStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            VadStatus::InvalidArgument
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            VadStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> FfiResult<()> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(())
    }
}

unsafe fn model_ref<'a>(model: *const VadModel) -> FfiResult<&'a VadModel> {
    non_null(model, "model")?;
    Ok(&*model)
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, what)?;
    Ok(slice::from_raw_parts_mut(p, len))
}

fn elems(rows: usize, cols: usize) -> FfiResult<usize> {
    rows.checked_mul(cols)
        .ok_or_else(|| Failure::Invalid(format!("{rows}×{cols} overflows")))
}

unsafe fn dataset(x: *const f64, mask: *const u8, rows: usize, cols: usize) -> FfiResult<Dataset> {
    let n = elems(rows, cols)?;
    let x = input(x, n, "x")?;
    let mask = input(mask, n, "mask")?;
    let bits: Vec<bool> = mask.iter().map(|&m| m != 0).collect();
    if let Some(i) = (0..n).find(|&i| bits[i] && !x[i].is_finite()) {
        return Err(VadError::parse(format!("row {}, column {}", i / cols, i % cols), "observed value is not finite").into());
    }
    let data = x.iter().zip(&bits).map(|(&v, &m)| if m { v } else { f64::NAN }).collect();
    Ok(Dataset::from_incomplete(
        Tensor::matrix(rows, cols, data)?,
        MaskMatrix::new(rows, cols, bits)?,
    )?)
}

fn boxed(bundle: ModelBundle) -> *mut VadModel {
    Box::into_raw(Box::new(VadModel { bundle }))
}

unsafe fn store(out: *mut *mut VadModel, bundle: ModelBundle) -> FfiResult<()> {
    non_null(out, "out")?;
    *out = boxed(bundle);
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vad_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vad_model_load(path: *const c_char, out: *mut *mut VadModel) -> VadStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        store(out, load_checkpoint(Path::new(path))?)
    })
}

/// Reads a checkpoint from memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vad_model_from_bytes(bytes: *const u8, len: usize, out: *mut *mut VadModel) -> VadStatus {
    guard(|| {
        let bytes = input(bytes, len, "bytes")?;
        store(out, checkpoint_from_bytes(bytes)?)
    })
}

/// Freshly initialized model from a TOML config (NULL for defaults).
///
/// # Safety
/// `config_toml` must be NULL or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vad_model_init(
    config_toml: *const c_char,
    kind: VadModelKind,
    data_dim: usize,
    seed: u64,
    out: *mut *mut VadModel,
) -> VadStatus {
    guard(|| {
        let mut cfg = parse_config(config_toml)?;
        cfg.model = model_kind(kind);
        cfg.seed = seed;
        store(out, ModelBundle::init(&cfg, data_dim)?)
    })
}

unsafe fn parse_config(config_toml: *const c_char) -> FfiResult<TrainConfig> {
    if config_toml.is_null() {
        Ok(TrainConfig::default())
    } else {
        Ok(TrainConfig::from_toml(c_str(config_toml, "config_toml")?)?)
    }
}

fn model_kind(kind: VadModelKind) -> ModelKind {
    match kind {
        VadModelKind::Vad => ModelKind::Vad,
        VadModelKind::Vae => ModelKind::Vae,
    }
}

/// Trains a model on `rows × cols` incomplete data.
///
/// # Safety
/// `x` and `mask` must hold `rows·cols` elements; `config_toml` must be NULL or
/// NUL-terminated; `out` must be valid. `final_lower_bound` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn vad_model_train(
    config_toml: *const c_char,
    kind: VadModelKind,
    x: *const f64,
    mask: *const u8,
    rows: usize,
    cols: usize,
    seed: u64,
    out: *mut *mut VadModel,
    final_lower_bound: *mut f64,
) -> VadStatus {
    guard(|| {
        let mut cfg = parse_config(config_toml)?;
        cfg.model = model_kind(kind);
        cfg.seed = seed;
        non_null(out, "out")?;
        let ds = dataset(x, mask, rows, cols)?;
        let trained = train(&ds, None, &cfg)?;
        if !final_lower_bound.is_null() {
            *final_lower_bound = trained.final_lower_bound;
        }
        store(out, trained.bundle)
    })
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vad_model_free(model: *mut VadModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes a checkpoint file.
///
/// # Safety
/// `model` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vad_model_save(model: *const VadModel, path: *const c_char) -> VadStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = c_str(path, "path")?;
        Ok(save_checkpoint(Path::new(path), &m.bundle)?)
    })
}

/// Latent width, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vad_model_latent_dim(model: *const VadModel) -> usize {
    model.as_ref().map_or(0, |m| m.bundle.latent_dim())
}

/// Data width, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vad_model_data_dim(model: *const VadModel) -> usize {
    model.as_ref().map_or(0, |m| m.bundle.data_dim())
}

/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vad_model_kind(model: *const VadModel) -> VadModelKind {
    match model.as_ref().map(|m| m.bundle.kind()) {
        Some(ModelKind::Vae) => VadModelKind::Vae,
        _ => VadModelKind::Vad,
    }
}

/// Decodes `rows` latent vectors into `out` (`rows × data_dim`).
///
/// # Safety
/// `z` must hold `rows·latent_dim` values and `out` room for `rows·data_dim`.
#[no_mangle]
pub unsafe extern "C" fn vad_model_decode(model: *const VadModel, z: *const f64, rows: usize, out: *mut f64) -> VadStatus {
    guard(|| {
        let m = model_ref(model)?;
        let dz = m.bundle.latent_dim();
        let z = input(z, elems(rows, dz)?, "z")?;
        let out = output(out, elems(rows, m.bundle.data_dim())?, "out")?;
        if rows == 0 {
            return Ok(());
        }
        let decoded = m.bundle.decode(&Tensor::matrix(rows, dz, z.to_vec())?)?;
        out.copy_from_slice(decoded.data());
        Ok(())
    })
}

/// Posterior means and log-sigmas (`rows × latent_dim` each) for new rows.
/// The model is not modified.
///
/// # Safety
/// `x`/`mask` must hold `rows·data_dim` elements, the outputs room for
/// `rows·latent_dim`; `lower_bound` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn vad_model_infer(
    model: *const VadModel,
    x: *const f64,
    mask: *const u8,
    rows: usize,
    seed: u64,
    mu_out: *mut f64,
    log_sigma_out: *mut f64,
    lower_bound: *mut f64,
) -> VadStatus {
    guard(|| {
        let m = model_ref(model)?;
        let ds = dataset(x, mask, rows, m.bundle.data_dim())?;
        let n = elems(rows, m.bundle.latent_dim())?;
        let mu_out = output(mu_out, n, "mu_out")?;
        let ls_out = output(log_sigma_out, n, "log_sigma_out")?;
        let q = infer(&m.bundle, &ds, seed)?;
        for i in 0..rows {
            let dz = m.bundle.latent_dim();
            mu_out[i * dz..(i + 1) * dz].copy_from_slice(q.posteriors.mu_row(i));
            ls_out[i * dz..(i + 1) * dz].copy_from_slice(q.posteriors.log_sigma_row(i));
        }
        if !lower_bound.is_null() {
            *lower_bound = q.lower_bound;
        }
        Ok(())
    })
}

/// Infers posteriors, then writes the rows with missing entries filled from
/// the decoded means.
///
/// # Safety
/// `x`, `mask` and `out` must each hold `rows·data_dim` elements.
#[no_mangle]
pub unsafe extern "C" fn vad_model_impute(
    model: *const VadModel,
    x: *const f64,
    mask: *const u8,
    rows: usize,
    seed: u64,
    out: *mut f64,
) -> VadStatus {
    guard(|| {
        let m = model_ref(model)?;
        let ds = dataset(x, mask, rows, m.bundle.data_dim())?;
        let out = output(out, elems(rows, m.bundle.data_dim())?, "out")?;
        let q = infer(&m.bundle, &ds, seed)?;
        out.copy_from_slice(impute_rows(&m.bundle, &q.posteriors, &ds)?.data());
        Ok(())
    })
}

/// Decoded posterior means for new rows, `rows × data_dim`.
///
/// # Safety
/// As for `vad_model_impute`.
#[no_mangle]
pub unsafe extern "C" fn vad_model_reconstruct(
    model: *const VadModel,
    x: *const f64,
    mask: *const u8,
    rows: usize,
    seed: u64,
    out: *mut f64,
) -> VadStatus {
    guard(|| {
        let m = model_ref(model)?;
        let ds = dataset(x, mask, rows, m.bundle.data_dim())?;
        let out = output(out, elems(rows, m.bundle.data_dim())?, "out")?;
        let q = infer(&m.bundle, &ds, seed)?;
        out.copy_from_slice(decode_means(&m.bundle, &q.posteriors)?.data());
        Ok(())
    })
}

/// Per-category MSE of `decoded` against `truth` under `mask`.
///
/// # Safety
/// The three arrays must hold `rows·cols` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vad_eval_mse(
    decoded: *const f64,
    truth: *const f64,
    mask: *const u8,
    rows: usize,
    cols: usize,
    out: *mut VadCategoryMse,
) -> VadStatus {
    guard(|| {
        non_null(out, "out")?;
        let n = elems(rows, cols)?;
        let d = Tensor::matrix(rows, cols, input(decoded, n, "decoded")?.to_vec())?;
        let t = Tensor::matrix(rows, cols, input(truth, n, "truth")?.to_vec())?;
        let bits = input(mask, n, "mask")?.iter().map(|&m| m != 0).collect();
        let mse = eval_mse(&d, &t, &MaskMatrix::new(rows, cols, bits)?)?;
        *out = VadCategoryMse {
            incomplete: mse.incomplete.unwrap_or(f64::NAN),
            missing: mse.missing.unwrap_or(f64::NAN),
            full: mse.full.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}
