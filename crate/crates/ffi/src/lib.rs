//! C ABI over trained `mmwlab` models, live rolling-window prediction and
//! dataset files.
//!
//! Every fallible call returns an [`MmwStatus`]; on failure a message for
//! the calling thread is available from [`mmw_last_error`]. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use mmwlab::dataset::{read_dataset_file, Dataset, Dims, RollingBuffer};
use mmwlab::depthcam::SmallFrame;
use mmwlab::ml::{read_model_file, Model, ModelKind, Regressor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Model kind codes reported by [`mmw_model_kind`].
pub const MMW_KIND_FOREST: u32 = 1;
pub const MMW_KIND_MLP: u32 = 2;

/// A trained forest or MLP.
pub struct MmwModel {
    inner: Arc<Model>,
}

/// A model plus the buffer of the `s` most recent frames.
pub struct MmwPredictor {
    model: Arc<Model>,
    buffer: RollingBuffer,
    next_index: u64,
}

/// A parsed dataset file.
pub struct MmwDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: MmwStatus, msg: impl Into<String>) -> MmwStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting panics into [`MmwStatus::Panic`].
fn guard(f: impl FnOnce() -> MmwStatus) -> MmwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MmwStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, MmwStatus> {
    if path.is_null() {
        return Err(fail(MmwStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(path).to_str().map_err(|_| fail(MmwStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(Path::new(s))
}

/// Message describing the last failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mmw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mmw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmw_model_load(path: *const c_char, out: *mut *mut MmwModel) -> MmwStatus {
    guard(|| {
        if out.is_null() {
            return fail(MmwStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match read_model_file(path) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(MmwModel { inner: Arc::new(m) }));
                MmwStatus::Ok
            }
            Err(mmwlab::ml::ModelFormatError::Io(e)) => fail(MmwStatus::Io, e.to_string()),
            Err(e) => fail(MmwStatus::Format, e.to_string()),
        }
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`mmw_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mmw_model_free(model: *mut MmwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of features the model expects (`s·h·w`).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmw_model_input_dim(model: *const MmwModel, out: *mut usize) -> MmwStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(MmwStatus::NullPointer, "null argument");
        }
        *out = (*model).inner.input_dim();
        MmwStatus::Ok
    })
}

/// Writes [`MMW_KIND_FOREST`] or [`MMW_KIND_MLP`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmw_model_kind(model: *const MmwModel, out: *mut u32) -> MmwStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(MmwStatus::NullPointer, "null argument");
        }
        *out = match (*model).inner.kind() {
            ModelKind::Forest => MMW_KIND_FOREST,
            _ => MMW_KIND_MLP,
        };
        MmwStatus::Ok
    })
}

/// Predicts received power (dBm) from one flattened stack of `len` floats.
///
/// # Safety
/// `x` must point to `len` readable floats; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmw_model_predict(
    model: *const MmwModel,
    x: *const f32,
    len: usize,
    out_dbm: *mut f64,
) -> MmwStatus {
    guard(|| {
        if model.is_null() || x.is_null() || out_dbm.is_null() {
            return fail(MmwStatus::NullPointer, "null argument");
        }
        let xs = std::slice::from_raw_parts(x, len);
        match (*model).inner.predict(xs) {
            Ok(v) => {
                *out_dbm = v;
                MmwStatus::Ok
            }
            Err(e) => fail(MmwStatus::DimensionMismatch, e.to_string()),
        }
    })
}

/// Creates a live predictor holding `s` frames of `h x w`. The model is
/// shared, so it may be freed independently.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmw_predictor_new(
    model: *const MmwModel,
    s: usize,
    h: usize,
    w: usize,
    out: *mut *mut MmwPredictor,
) -> MmwStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(MmwStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        if s == 0 || h == 0 || w == 0 {
            return fail(MmwStatus::InvalidArgument, "s, h and w must be positive");
        }
        let model = Arc::clone(&(*model).inner);
        let dims = Dims::new(s, h, w);
        if model.input_dim() != dims.feature_len() {
            return fail(
                MmwStatus::DimensionMismatch,
                format!("model expects {} features, s*h*w = {}", model.input_dim(), dims.feature_len()),
            );
        }
        *out = Box::into_raw(Box::new(MmwPredictor { model, buffer: RollingBuffer::new(dims), next_index: 0 }));
        MmwStatus::Ok
    })
}

/// Pushes one reduced frame (`h·w` normalized depths, row-major). Once `s`
/// frames have arrived, writes 1 to `ready` and the forecast to `out_dbm`;
/// before that writes 0 and leaves `out_dbm` untouched.
///
/// # Safety
/// `frame` must point to `len` readable floats; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmw_predictor_push(
    pred: *mut MmwPredictor,
    frame: *const f32,
    len: usize,
    ready: *mut i32,
    out_dbm: *mut f64,
) -> MmwStatus {
    guard(|| {
        if pred.is_null() || frame.is_null() || ready.is_null() || out_dbm.is_null() {
            return fail(MmwStatus::NullPointer, "null argument");
        }
        let p = &mut *pred;
        let dims = p.buffer.dims();
        if len != dims.frame_len() {
            return fail(MmwStatus::DimensionMismatch, format!("frame has {len} values, expected {}", dims.frame_len()));
        }
        let data = std::slice::from_raw_parts(frame, len).to_vec();
        let small = SmallFrame { frame_index: p.next_index, height: dims.h, width: dims.w, data };
        p.next_index += 1;
        match p.buffer.push(small) {
            Ok(None) => {
                *ready = 0;
                MmwStatus::Ok
            }
            Ok(Some(t)) => match p.model.predict(&t.data) {
                Ok(v) => {
                    *ready = 1;
                    *out_dbm = v;
                    MmwStatus::Ok
                }
                Err(e) => fail(MmwStatus::DimensionMismatch, e.to_string()),
            },
            Err(e) => fail(MmwStatus::DimensionMismatch, e.to_string()),
        }
    })
}

/// Empties the frame buffer.
///
/// # Safety
/// `pred` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmw_predictor_reset(pred: *mut MmwPredictor) -> MmwStatus {
    guard(|| {
        if pred.is_null() {
            return fail(MmwStatus::NullPointer, "null argument");
        }
        (*pred).buffer.clear();
        MmwStatus::Ok
    })
}

/// Releases a predictor. Null is ignored.
///
/// # Safety
/// `pred` must come from [`mmw_predictor_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mmw_predictor_free(pred: *mut MmwPredictor) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}

/// Loads a dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmw_dataset_load(path: *const c_char, out: *mut *mut MmwDataset) -> MmwStatus {
    guard(|| {
        if out.is_null() {
            return fail(MmwStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match read_dataset_file(path) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(MmwDataset { inner: d }));
                MmwStatus::Ok
            }
            Err(mmwlab::dataset::FormatError::Io(e)) => fail(MmwStatus::Io, e.to_string()),
            Err(e) => fail(MmwStatus::Format, e.to_string()),
        }
    })
}

/// Sample count and tensor shape.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmw_dataset_shape(
    ds: *const MmwDataset,
    n: *mut usize,
    s: *mut usize,
    h: *mut usize,
    w: *mut usize,
) -> MmwStatus {
    guard(|| {
        if ds.is_null() || n.is_null() || s.is_null() || h.is_null() || w.is_null() {
            return fail(MmwStatus::NullPointer, "null argument");
        }
        let d = &(*ds).inner;
        let dims = d.dims();
        *n = d.len();
        *s = dims.s;
        *h = dims.h;
        *w = dims.w;
        MmwStatus::Ok
    })
}

/// Borrowed view of sample `i`: its label (dBm) and a pointer to its
/// `s·h·w` features, valid until the dataset is freed.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmw_dataset_sample(
    ds: *const MmwDataset,
    i: usize,
    label: *mut f32,
    features: *mut *const f32,
    len: *mut usize,
) -> MmwStatus {
    guard(|| {
        if ds.is_null() || label.is_null() || features.is_null() || len.is_null() {
            return fail(MmwStatus::NullPointer, "null argument");
        }
        let d = &(*ds).inner;
        if i >= d.len() {
            return fail(MmwStatus::OutOfRange, format!("sample {i} of {}", d.len()));
        }
        let f = d.features(i);
        *label = d.label(i);
        *features = f.as_ptr();
        *len = f.len();
        MmwStatus::Ok
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must come from [`mmw_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mmw_dataset_free(ds: *mut MmwDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}
