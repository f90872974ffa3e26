//! C ABI over `splat4d`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns a
//! [`Splat4dStatus`]; on failure [`splat4d_last_error`] describes it until the
//! next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use splat4d::checkpoint::{load_checkpoint, save_checkpoint};
use splat4d::error::Error;
use splat4d::harness::{evaluate, generate_synthetic, load_dataset, save_dataset, SceneDataset, SyntheticSceneSpec};
use splat4d::primitives::GaussianSet;
use splat4d::raster::render;
use splat4d::trainer::{train_with, TrainConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Splat4dStatus {
    Ok = 0,
    /// Null pointer, non-UTF-8 string or undersized buffer.
    InvalidArgument = 1,
    /// Input rejected by the engine (bad data, config or file contents).
    Validation = 2,
    Io = 3,
    /// Numerical failure or internal error.
    Internal = 4,
    Panic = 5,
}

/// A Gaussian scene representation.
pub struct Splat4dSet(GaussianSet);

/// A loaded or generated dataset.
pub struct Splat4dDataset(SceneDataset);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Fail(Splat4dStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => Splat4dStatus::Io,
            e if e.is_validation() => Splat4dStatus::Validation,
            _ => Splat4dStatus::Internal,
        };
        Fail(code, e.to_string())
    }
}

fn arg(msg: &str) -> Fail {
    Fail(Splat4dStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> Splat4dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Splat4dStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside splat4d");
            Splat4dStatus::Panic
        }
    }
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(arg(&format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| arg(&format!("{what} is not UTF-8")))
}

unsafe fn to_path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    string(p, what).map(PathBuf::from)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| arg(&format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(arg(&format!("{what} is null")));
    }
    *out = v;
    Ok(())
}

/// Message of the last failure on this thread; empty if none. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn splat4d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn splat4d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn splat4d_set_load(path: *const c_char, out: *mut *mut Splat4dSet) -> Splat4dStatus {
    guard(|| {
        let set = load_checkpoint(&to_path(path, "path")?)?;
        put(out, Box::into_raw(Box::new(Splat4dSet(set))), "out")
    })
}

/// # Safety
/// `set` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn splat4d_set_save(set: *const Splat4dSet, path: *const c_char) -> Splat4dStatus {
    guard(|| Ok(save_checkpoint(&handle(set, "set")?.0, &to_path(path, "path")?)?))
}

/// Population sizes and frame count. Any output pointer may be null.
///
/// # Safety
/// `set` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn splat4d_set_counts(
    set: *const Splat4dSet,
    n_static: *mut usize,
    n_rigid: *mut usize,
    n_transient: *mut usize,
    n_frames: *mut usize,
) -> Splat4dStatus {
    guard(|| {
        let s = &handle(set, "set")?.0;
        for (p, v) in [
            (n_static, s.statics.len()),
            (n_rigid, s.rigids.len()),
            (n_transient, s.transients.len()),
            (n_frames, s.num_frames()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `set` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn splat4d_set_free(set: *mut Splat4dSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `dir` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn splat4d_dataset_load(dir: *const c_char, out: *mut *mut Splat4dDataset) -> Splat4dStatus {
    guard(|| {
        let ds = load_dataset(&to_path(dir, "dir")?)?;
        put(out, Box::into_raw(Box::new(Splat4dDataset(ds))), "out")
    })
}

/// Generates a synthetic dataset from a JSON scene spec.
///
/// # Safety
/// `spec_json` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn splat4d_dataset_synth(spec_json: *const c_char, out: *mut *mut Splat4dDataset) -> Splat4dStatus {
    guard(|| {
        let spec: SyntheticSceneSpec = serde_json::from_str(string(spec_json, "spec_json")?)
            .map_err(|e| Fail(Splat4dStatus::Validation, format!("scene spec: {e}")))?;
        let ds = generate_synthetic(&spec)?;
        put(out, Box::into_raw(Box::new(Splat4dDataset(ds))), "out")
    })
}

/// # Safety
/// `ds` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn splat4d_dataset_save(ds: *const Splat4dDataset, dir: *const c_char) -> Splat4dStatus {
    guard(|| Ok(save_dataset(&handle(ds, "dataset")?.0, &to_path(dir, "dir")?)?))
}

/// Image size and frame count. Any output pointer may be null.
///
/// # Safety
/// `ds` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn splat4d_dataset_shape(
    ds: *const Splat4dDataset,
    width: *mut usize,
    height: *mut usize,
    frames: *mut usize,
) -> Splat4dStatus {
    guard(|| {
        let d = &handle(ds, "dataset")?.0;
        for (p, v) in [(width, d.width), (height, d.height), (frames, d.num_frames())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn splat4d_dataset_free(ds: *mut Splat4dDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Renders `set` at `frame` through the dataset camera of that frame into
/// `rgb`, row-major `height × width × 3` doubles in [0,1].
///
/// # Safety
/// Handles must come from this library; `rgb` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn splat4d_render(
    set: *const Splat4dSet,
    ds: *const Splat4dDataset,
    frame: usize,
    rgb: *mut f64,
    len: usize,
) -> Splat4dStatus {
    guard(|| {
        let (s, d) = (&handle(set, "set")?.0, &handle(ds, "dataset")?.0);
        if frame >= d.num_frames() || frame >= s.num_frames() {
            return Err(Fail(Splat4dStatus::Validation, format!("frame {frame} out of range")));
        }
        let need = d.width * d.height * 3;
        if rgb.is_null() || len < need {
            return Err(arg(&format!("rgb buffer needs {need} doubles")));
        }
        let color = render(s, &d.frames[frame].camera, frame, None)?.color();
        std::slice::from_raw_parts_mut(rgb, need).copy_from_slice(&color.data);
        Ok(())
    })
}

/// Trains on `ds`. `config_json` may be null for defaults; `out_dir` may be
/// null to skip the log and checkpoints.
///
/// # Safety
/// `ds` must come from this library; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn splat4d_train(
    ds: *const Splat4dDataset,
    config_json: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut Splat4dSet,
) -> Splat4dStatus {
    guard(|| {
        let d = &handle(ds, "dataset")?.0;
        let cfg: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(string(config_json, "config_json")?)
                .map_err(|e| Fail(Splat4dStatus::Validation, format!("train config: {e}")))?
        };
        let dir = if out_dir.is_null() { None } else { Some(to_path(out_dir, "out_dir")?) };
        let (set, _) = train_with(d, &cfg, None, dir.as_deref())?;
        put(out, Box::into_raw(Box::new(Splat4dSet(set))), "out")
    })
}

/// Mean PSNR and SSIM over `frames` (all frames when `frames` is null).
///
/// # Safety
/// Handles must come from this library; `frames` must hold `n_frames` entries.
#[no_mangle]
pub unsafe extern "C" fn splat4d_evaluate(
    set: *const Splat4dSet,
    ds: *const Splat4dDataset,
    frames: *const usize,
    n_frames: usize,
    psnr: *mut f64,
    ssim: *mut f64,
) -> Splat4dStatus {
    guard(|| {
        let (s, d) = (&handle(set, "set")?.0, &handle(ds, "dataset")?.0);
        let list: Vec<usize> = if frames.is_null() {
            (0..d.num_frames()).collect()
        } else {
            std::slice::from_raw_parts(frames, n_frames).to_vec()
        };
        let r = evaluate(s, d, &list)?;
        put(psnr, r.mean_psnr, "psnr")?;
        put(ssim, r.mean_ssim, "ssim")
    })
}
