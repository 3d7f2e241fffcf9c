//! C ABI over trained urbanfuse models and the haversine distance.
//!
//! Every fallible call returns a [`UfStatus`]. On failure the message is kept
//! per thread and can be read with [`uf_last_error_message`]. Models are
//! opaque handles released with [`uf_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use urbanfuse::classify::{argmax, route_probabilities, ClassifierModel, RoutingDecision};
use urbanfuse::dataset::LatLon;
use urbanfuse::fusion::FusionModel;
use urbanfuse::geo::haversine_m;
use urbanfuse::ingest::model_from_str;
use urbanfuse::{Error, Matrix};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Version = 5,
    Corrupt = 6,
    Shape = 7,
    Panic = 8,
}

/// Routing outcome for one row. `automatic` is 1 when the top class
/// probability reached the threshold, in which case `class_index` names it.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UfRouting {
    pub automatic: i32,
    pub class_index: usize,
    pub probability: f64,
}

enum Inner {
    Classifier(ClassifierModel),
    Fusion(FusionModel),
}

/// A loaded model. Opaque to C callers.
pub struct UfModel {
    inner: Inner,
    labels: Vec<CString>,
}

impl UfModel {
    fn num_features(&self) -> usize {
        match &self.inner {
            Inner::Classifier(m) => m.num_features(),
            Inner::Fusion(m) => m.input_width(),
        }
    }

    fn num_classes(&self) -> usize {
        self.labels.len()
    }

    fn predict_proba(&self, x: &Matrix) -> urbanfuse::Result<Matrix> {
        match &self.inner {
            Inner::Classifier(m) => m.predict_proba(x),
            Inner::Fusion(m) => m.predict_proba_flat(x),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> UfStatus {
    match e {
        Error::Io { .. } => UfStatus::Io,
        Error::Version { .. } => UfStatus::Version,
        Error::Corrupt(_) => UfStatus::Corrupt,
        Error::Shape { .. } => UfStatus::Shape,
        Error::Format(_) | Error::Parse { .. } => UfStatus::Format,
        _ => UfStatus::InvalidArgument,
    }
}

fn fail(status: UfStatus, msg: impl Into<String>) -> UfStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> UfStatus) -> UfStatus {
    clear_error();
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(UfStatus::Panic, "internal panic"),
    }
}

fn load(path: &Path) -> urbanfuse::Result<UfModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let inner = match model_from_str::<ClassifierModel>(&text) {
        Ok(m) => Inner::Classifier(m),
        Err(Error::Format(_)) => Inner::Fusion(model_from_str::<FusionModel>(&text)?),
        Err(e) => return Err(e),
    };
    let names = match &inner {
        Inner::Classifier(m) => m.class_labels(),
        Inner::Fusion(m) => m.final_model.class_labels(),
    };
    let labels = names
        .iter()
        .map(|l| CString::new(l.replace('\0', " ")).expect("nul bytes replaced"))
        .collect();
    Ok(UfModel { inner, labels })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn uf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a classifier or fusion model container from `path`. On success
/// `*out` receives a handle to release with [`uf_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uf_model_load(path: *const c_char, out: *mut *mut UfModel) -> UfStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(UfStatus::NullPointer, "path and out must not be NULL");
        }
        // SAFETY: checked non-null; the caller guarantees NUL termination.
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(p) => p,
            Err(_) => return fail(UfStatus::InvalidArgument, "path is not valid UTF-8"),
        };
        match load(Path::new(path)) {
            Ok(model) => {
                // SAFETY: checked non-null above.
                unsafe { *out = Box::into_raw(Box::new(model)) };
                UfStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle from [`uf_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uf_model_free(model: *mut UfModel) {
    if !model.is_null() {
        // SAFETY: the caller passes a live handle created by Box::into_raw.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of classes, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uf_model_num_classes(model: *const UfModel) -> usize {
    // SAFETY: the caller passes NULL or a live handle.
    unsafe { model.as_ref() }.map_or(0, UfModel::num_classes)
}

/// Number of input values per row, or 0 for NULL. For fusion models a row
/// is the raw blocks followed by each probability block's inputs.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uf_model_num_features(model: *const UfModel) -> usize {
    // SAFETY: the caller passes NULL or a live handle.
    unsafe { model.as_ref() }.map_or(0, UfModel::num_features)
}

/// Label of class `index`, or NULL when out of range. The string lives as
/// long as the model.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uf_model_class_label(model: *const UfModel, index: usize) -> *const c_char {
    // SAFETY: the caller passes NULL or a live handle.
    unsafe { model.as_ref() }
        .and_then(|m| m.labels.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Reads `n_rows` rows of `n_features` values (row-major) and writes
/// `n_rows * num_classes` probabilities to `out`, whose capacity is
/// `out_len` values.
///
/// # Safety
/// `rows` must point to `n_rows * n_features` readable doubles and `out` to
/// `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn uf_model_predict_proba(
    model: *const UfModel,
    rows: *const f64,
    n_rows: usize,
    n_features: usize,
    out: *mut f64,
    out_len: usize,
) -> UfStatus {
    guard(|| {
        // SAFETY: the caller passes NULL or a live handle.
        let Some(model) = (unsafe { model.as_ref() }) else {
            return fail(UfStatus::NullPointer, "model is NULL");
        };
        if rows.is_null() || out.is_null() {
            return fail(UfStatus::NullPointer, "rows and out must not be NULL");
        }
        if n_features != model.num_features() {
            return fail(
                UfStatus::Shape,
                format!("expected {} features per row, got {n_features}", model.num_features()),
            );
        }
        let Some(needed) = n_rows.checked_mul(model.num_classes()) else {
            return fail(UfStatus::InvalidArgument, "row count overflows");
        };
        if out_len < needed {
            return fail(UfStatus::InvalidArgument, format!("output holds {out_len} values, need {needed}"));
        }
        let Some(total) = n_rows.checked_mul(n_features) else {
            return fail(UfStatus::InvalidArgument, "row count overflows");
        };
        // SAFETY: the caller guarantees `total` readable doubles.
        let input = unsafe { std::slice::from_raw_parts(rows, total) };
        if input.iter().any(|v| !v.is_finite()) {
            return fail(UfStatus::InvalidArgument, "non-finite input value");
        }
        let x = match Matrix::from_vec(n_rows, n_features, input.to_vec()) {
            Ok(x) => x,
            Err(e) => return fail(status_of(&e), e.to_string()),
        };
        match model.predict_proba(&x) {
            Ok(p) => {
                // SAFETY: the caller guarantees `out_len >= needed` writable doubles.
                let dst = unsafe { std::slice::from_raw_parts_mut(out, needed) };
                dst.copy_from_slice(p.data());
                UfStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Routes one row: automatic when the top probability reaches `threshold`.
///
/// # Safety
/// `row` must point to `n_features` readable doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn uf_model_route(
    model: *const UfModel,
    row: *const f64,
    n_features: usize,
    threshold: f64,
    out: *mut UfRouting,
) -> UfStatus {
    guard(|| {
        // SAFETY: the caller passes NULL or a live handle.
        let Some(m) = (unsafe { model.as_ref() }) else {
            return fail(UfStatus::NullPointer, "model is NULL");
        };
        if out.is_null() {
            return fail(UfStatus::NullPointer, "out is NULL");
        }
        if !threshold.is_finite() {
            return fail(UfStatus::InvalidArgument, "threshold must be finite");
        }
        let mut probs = vec![0.0; m.num_classes()];
        // SAFETY: forwarded caller guarantees; `probs` holds one row of output.
        let status = unsafe { uf_model_predict_proba(model, row, 1, n_features, probs.as_mut_ptr(), probs.len()) };
        if status != UfStatus::Ok {
            return status;
        }
        let routing = match route_probabilities(&probs, threshold) {
            RoutingDecision::Auto { class, probability } => UfRouting {
                automatic: 1,
                class_index: class,
                probability,
            },
            RoutingDecision::Defer { probability } => UfRouting {
                automatic: 0,
                class_index: argmax(&probs),
                probability,
            },
        };
        // SAFETY: checked non-null above.
        unsafe { *out = routing };
        UfStatus::Ok
    })
}

/// Great-circle distance in meters, or NaN for out-of-range coordinates.
#[no_mangle]
pub extern "C" fn uf_haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let a = LatLon::new(lat1, lon1);
    let b = LatLon::new(lat2, lon2);
    if a.is_valid() && b.is_valid() {
        haversine_m(a, b)
    } else {
        f64::NAN
    }
}
