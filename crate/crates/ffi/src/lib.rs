//! C interface to `dynaug`.
//!
//! Every fallible function returns a [`DynaugStatus`]. On failure a message
//! is kept per thread and can be read with [`dynaug_last_error`]. Series are
//! passed channel-major: `values[c * length + t]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use ndarray::{Array2, ArrayView1};

use dynaug::augment::{AugmentConfig, AugmentedBundle, Method};
use dynaug::checkpoint::{self, CheckpointMeta};
use dynaug::loss::consistency_loss;
use dynaug::model::{GatedModel, Variant};
use dynaug::nn::Mode;
use dynaug::rng::RngStream;
use dynaug::series::TimeSeries;
use dynaug::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynaugStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Shape = 5,
    NoGate = 6,
    Internal = 7,
}

/// Augmentation methods in bundle order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynaugMethod {
    Identity = 0,
    Jitter = 1,
    MagnitudeWarp = 2,
    TimeWarp = 3,
    WindowWarp = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynaugVariant {
    Proposed = 0,
    NoAug = 1,
    Concat = 2,
}

/// Shape information of a loaded model.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DynaugModelInfo {
    pub variant: DynaugVariant,
    pub channels: usize,
    pub length: usize,
    pub n_classes: usize,
    /// Number of expert views the model consumes.
    pub n_experts: usize,
    pub has_gate: bool,
    pub has_normalizer: bool,
}

/// Opaque model handle.
pub struct DynaugModel {
    model: GatedModel,
    meta: CheckpointMeta,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("no interior nul")));
}

fn status_of(e: &Error) -> DynaugStatus {
    match e {
        Error::Io { .. } | Error::IoBare(_) => DynaugStatus::Io,
        Error::Checkpoint(_) => DynaugStatus::Checkpoint,
        Error::Shape { .. } => DynaugStatus::Shape,
        Error::NoGate(_) => DynaugStatus::NoGate,
        _ => DynaugStatus::InvalidArgument,
    }
}

struct Fail(DynaugStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DynaugStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DynaugStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DynaugStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DynaugStatus::Internal
        }
    }
}

unsafe fn input_series(
    values: *const f64,
    channels: usize,
    length: usize,
) -> Result<Array2<f64>, Fail> {
    if values.is_null() {
        return Err(null("values"));
    }
    let n = channels
        .checked_mul(length)
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Fail(
                DynaugStatus::InvalidArgument,
                "channels and length must be positive".into(),
            )
        })?;
    let data = slice::from_raw_parts(values, n).to_vec();
    Ok(Array2::from_shape_vec((channels, length), data).expect("length checked"))
}

unsafe fn output<'a>(
    ptr: *mut f64,
    len: usize,
    needed: usize,
    what: &str,
) -> Result<&'a mut [f64], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len < needed {
        return Err(Fail(
            DynaugStatus::Shape,
            format!("{what} holds {len} values, need {needed}"),
        ));
    }
    Ok(slice::from_raw_parts_mut(ptr, needed))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dynaug_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn dynaug_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by the `dynaug` CLI or library.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dynaug_model_load(
    path: *const c_char,
    out: *mut *mut DynaugModel,
) -> DynaugStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(DynaugStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let (model, meta) = checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(DynaugModel { model, meta }));
        Ok(())
    })
}

/// Releases a handle from [`dynaug_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must come from [`dynaug_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dynaug_model_free(model: *mut DynaugModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `info` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dynaug_model_info(
    model: *const DynaugModel,
    info: *mut DynaugModelInfo,
) -> DynaugStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let info = info.as_mut().ok_or_else(|| null("info"))?;
        let arch = &m.model.arch;
        *info = DynaugModelInfo {
            variant: match m.model.variant {
                Variant::Proposed => DynaugVariant::Proposed,
                Variant::NoAug => DynaugVariant::NoAug,
                Variant::Concat => DynaugVariant::Concat,
            },
            channels: arch.input_channels,
            length: arch.input_length,
            n_classes: arch.n_classes,
            n_experts: m.model.n_views(),
            has_gate: m.model.gate.is_some(),
            has_normalizer: m.meta.normalizer.is_some(),
        };
        Ok(())
    })
}

/// Maps raw values in place with the normalizer stored in the checkpoint.
/// Missing values (NaN) become 0.
///
/// # Safety
/// `values` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dynaug_model_normalize(
    model: *const DynaugModel,
    values: *mut f64,
    len: usize,
) -> DynaugStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let norm = m.meta.normalizer.ok_or_else(|| {
            Fail(
                DynaugStatus::InvalidArgument,
                "checkpoint has no normalizer".into(),
            )
        })?;
        let v = output(values, len, len, "values")?;
        for x in v {
            *x = if x.is_nan() {
                0.0
            } else {
                norm.apply_value(*x)
            };
        }
        Ok(())
    })
}

/// Eval-mode forward of one normalized series. Writes `n_classes` logits and,
/// when `alphas` is non-null and the model has a gate, `n_experts` gating
/// weights.
///
/// # Safety
/// `values` must hold `channels * length` doubles; output buffers must hold
/// at least the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn dynaug_model_predict(
    model: *const DynaugModel,
    values: *const f64,
    channels: usize,
    length: usize,
    logits: *mut f64,
    logits_len: usize,
    alphas: *mut f64,
    alphas_len: usize,
) -> DynaugStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = TimeSeries::new(input_series(values, channels, length)?, 0)?;
        let bundle = AugmentedBundle::identity(&x, m.model.n_views());
        let out = m.model.forward_bundle(&bundle, Mode::Eval)?;
        output(logits, logits_len, out.logits.len(), "logits")?
            .copy_from_slice(out.logits.as_slice().expect("contiguous"));
        if !alphas.is_null() {
            let a = out.alphas.ok_or_else(|| {
                Fail(
                    DynaugStatus::NoGate,
                    format!("variant {} has no gate", m.model.variant),
                )
            })?;
            output(alphas, alphas_len, a.len(), "alphas")?
                .copy_from_slice(a.as_slice().expect("contiguous"));
        }
        Ok(())
    })
}

/// Applies one augmentation with default settings, seeded by `seed`.
/// `method` is a [`DynaugMethod`] value.
///
/// # Safety
/// `values` and `out` must each hold `channels * length` doubles.
#[no_mangle]
pub unsafe extern "C" fn dynaug_augment(
    method: u32,
    values: *const f64,
    channels: usize,
    length: usize,
    seed: u64,
    out: *mut f64,
) -> DynaugStatus {
    guard(|| {
        let x = input_series(values, channels, length)?;
        if length < 2 {
            return Err(Fail(
                DynaugStatus::InvalidArgument,
                "length must be at least 2".into(),
            ));
        }
        let method = *Method::ALL.get(method as usize).ok_or_else(|| {
            Fail(
                DynaugStatus::InvalidArgument,
                format!("unknown method {method}"),
            )
        })?;
        let y = method.apply(&x, &AugmentConfig::default(), &mut RngStream::new(seed))?;
        output(out, x.len(), x.len(), "out")?.copy_from_slice(y.as_slice().expect("contiguous"));
        Ok(())
    })
}

/// `0.5 * sum_n ||f_n - mean(f)||^2` over `n` row-major feature vectors of
/// width `dim`.
///
/// # Safety
/// `features` must hold `n * dim` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dynaug_consistency_loss(
    features: *const f64,
    n: usize,
    dim: usize,
    out: *mut f64,
) -> DynaugStatus {
    guard(|| {
        let f = input_series(features, n, dim)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let rows: Vec<ArrayView1<'_, f64>> = f.rows().into_iter().collect();
        *out = consistency_loss(&rows)?;
        Ok(())
    })
}
