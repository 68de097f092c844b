//! C ABI over the rugnn surrogate.
//!
//! Models and samples are opaque heap handles created by `*_load` and
//! released by `*_free`. Every fallible call returns a [`RugnnStatus`];
//! on failure [`rugnn_last_error`] describes the cause for the calling
//! thread. Arrays cross the boundary as caller-owned `double` buffers in
//! row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rugnn::eval::{rollout, SurrogateStepper};
use rugnn::oracle::{load_sample, FormingSample};
use rugnn::train::{Checkpoint, Surrogate};
use rugnn::{Error, ErrorKind};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RugnnStatus {
    Ok = 0,
    NullPointer = 1,
    ConfigError = 2,
    DataError = 3,
    NumericalError = 4,
    BufferTooSmall = 5,
    InvalidString = 6,
    Panic = 7,
}

/// A trained surrogate loaded from a checkpoint file.
pub struct RugnnModel {
    surrogate: Surrogate,
}

/// A forming sample loaded from a dataset sample directory.
pub struct RugnnSample {
    sample: FormingSample,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: RugnnStatus, msg: impl Into<String>) -> RugnnStatus {
    set_error(msg.into());
    status
}

fn from_core(e: Error) -> RugnnStatus {
    let status = match e.kind() {
        ErrorKind::Config => RugnnStatus::ConfigError,
        ErrorKind::Data => RugnnStatus::DataError,
        ErrorKind::Numerical => RugnnStatus::NumericalError,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting panics into [`RugnnStatus::Panic`].
fn guard(f: impl FnOnce() -> RugnnStatus) -> RugnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(RugnnStatus::Panic, "internal panic"),
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn path_arg(s: *const c_char) -> Result<PathBuf, RugnnStatus> {
    if s.is_null() {
        return Err(fail(RugnnStatus::NullPointer, "path is null"));
    }
    // SAFETY: non-null and NUL-terminated per the caller contract.
    let c = unsafe { CStr::from_ptr(s) };
    c.to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(RugnnStatus::InvalidString, "path is not valid UTF-8"))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rugnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rugnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rugnn_model_load(path: *const c_char, out: *mut *mut RugnnModel) -> RugnnStatus {
    guard(|| {
        if out.is_null() {
            return fail(RugnnStatus::NullPointer, "output handle pointer is null");
        }
        // SAFETY: forwarded caller contract.
        let path = match unsafe { path_arg(path) } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::read(&path).and_then(|ck| ck.surrogate()) {
            Ok(surrogate) => {
                // SAFETY: `out` is non-null and valid per the contract.
                unsafe { *out = Box::into_raw(Box::new(RugnnModel { surrogate })) };
                RugnnStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`rugnn_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rugnn_model_free(model: *mut RugnnModel) {
    if !model.is_null() {
        // SAFETY: created by `Box::into_raw` in `rugnn_model_load`.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of mesh nodes the model was built for.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rugnn_model_n_nodes(model: *const RugnnModel, out: *mut usize) -> RugnnStatus {
    guard(|| {
        // SAFETY: null-checked; otherwise live per the contract.
        let Some(m) = (unsafe { model.as_ref() }) else {
            return fail(RugnnStatus::NullPointer, "model handle is null");
        };
        if out.is_null() {
            return fail(RugnnStatus::NullPointer, "output pointer is null");
        }
        // SAFETY: non-null and valid per the contract.
        unsafe { *out = m.surrogate.model.n_nodes() };
        RugnnStatus::Ok
    })
}

/// Loads one sample directory (manifest, meshes and positions).
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rugnn_sample_load(dir: *const c_char, out: *mut *mut RugnnSample) -> RugnnStatus {
    guard(|| {
        if out.is_null() {
            return fail(RugnnStatus::NullPointer, "output handle pointer is null");
        }
        // SAFETY: forwarded caller contract.
        let dir = match unsafe { path_arg(dir) } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_sample(&dir) {
            Ok(sample) => {
                // SAFETY: `out` is non-null and valid per the contract.
                unsafe { *out = Box::into_raw(Box::new(RugnnSample { sample })) };
                RugnnStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Releases a sample handle. Null is ignored.
///
/// # Safety
/// `sample` must come from [`rugnn_sample_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rugnn_sample_free(sample: *mut RugnnSample) {
    if !sample.is_null() {
        // SAFETY: created by `Box::into_raw` in `rugnn_sample_load`.
        drop(unsafe { Box::from_raw(sample) });
    }
}

/// Node count and number of time intervals `T` of a sample.
///
/// # Safety
/// `sample` must be a live handle; `n_nodes` and `intervals` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rugnn_sample_dims(
    sample: *const RugnnSample,
    n_nodes: *mut usize,
    intervals: *mut usize,
) -> RugnnStatus {
    guard(|| {
        // SAFETY: null-checked; otherwise live per the contract.
        let Some(s) = (unsafe { sample.as_ref() }) else {
            return fail(RugnnStatus::NullPointer, "sample handle is null");
        };
        if n_nodes.is_null() || intervals.is_null() {
            return fail(RugnnStatus::NullPointer, "output pointer is null");
        }
        // SAFETY: non-null and valid per the contract.
        unsafe {
            *n_nodes = s.sample.n_nodes();
            *intervals = s.sample.intervals();
        }
        RugnnStatus::Ok
    })
}

/// Autoregressive rollout of `model` over `sample`.
///
/// Writes `(T + 1) * N * 3` predicted coordinates into `positions` and the
/// `T` per-timestep mean Euclidean errors into `mee`. Either buffer may be
/// null to skip it; a non-null buffer that is too short fails with
/// [`RugnnStatus::BufferTooSmall`] before any work is done.
///
/// # Safety
/// Handles must be live; non-null buffers must hold their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn rugnn_rollout(
    model: *const RugnnModel,
    sample: *const RugnnSample,
    positions: *mut f64,
    positions_len: usize,
    mee: *mut f64,
    mee_len: usize,
) -> RugnnStatus {
    guard(|| {
        // SAFETY: null-checked; otherwise live per the contract.
        let (Some(m), Some(s)) = (unsafe { model.as_ref() }, unsafe { sample.as_ref() }) else {
            return fail(RugnnStatus::NullPointer, "model or sample handle is null");
        };
        let t = s.sample.intervals();
        let need = (t + 1) * s.sample.n_nodes() * 3;
        if !positions.is_null() && positions_len < need {
            return fail(
                RugnnStatus::BufferTooSmall,
                format!("positions buffer holds {positions_len} values, {need} needed"),
            );
        }
        if !mee.is_null() && mee_len < t {
            return fail(RugnnStatus::BufferTooSmall, format!("mee buffer holds {mee_len} values, {t} needed"));
        }
        let result = m
            .surrogate
            .context(&s.sample)
            .and_then(|ctx| rollout(&mut SurrogateStepper::new(&m.surrogate), &ctx));
        let r = match result {
            Ok(r) => r,
            Err(e) => return from_core(e),
        };
        if !positions.is_null() {
            // SAFETY: non-null with at least `need` elements, checked above.
            let out = unsafe { std::slice::from_raw_parts_mut(positions, need) };
            for (o, v) in out.iter_mut().zip(r.positions.iter().flat_map(|a| a.data())) {
                *o = *v as f64;
            }
        }
        if !mee.is_null() {
            // SAFETY: non-null with at least `t` elements, checked above.
            let out = unsafe { std::slice::from_raw_parts_mut(mee, t) };
            for (o, v) in out.iter_mut().zip(&r.mee) {
                *o = *v as f64;
            }
        }
        RugnnStatus::Ok
    })
}
