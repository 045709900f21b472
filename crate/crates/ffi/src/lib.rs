//! C ABI for the `kolmogorov` crate.
//!
//! Observation sets and models are opaque heap handles owned by the caller
//! and released with their `_free` function. Every fallible call returns a
//! [`KmStatus`]; on failure `km_last_error` describes the most recent error
//! on the calling thread. Strings handed out by the library are released with
//! `km_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kolmogorov::data::load_ratings_file;
use kolmogorov::model::Observation;
use kolmogorov::{mine_rules, train, KmError, KolmogorovModel, ObservationSet, RunConfig};

/// Result codes. The non-zero values match the command-line exit codes where
/// they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmStatus {
    Ok = 0,
    /// Invalid configuration or unsupported dimension.
    Config = 1,
    /// Malformed input data, model or identifiers, or an I/O failure.
    Input = 2,
    /// A solver produced non-finite values or received an asymmetric matrix.
    Numerical = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Opaque set of `(user, item, probability)` observations.
pub struct KmObservations(ObservationSet);

/// Opaque trained model.
pub struct KmModel(KolmogorovModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: KmStatus, msg: impl Into<String>) -> KmStatus {
    set_error(msg.into());
    status
}

fn from_error(e: KmError) -> KmStatus {
    let status = match e.exit_code() {
        1 => KmStatus::Config,
        3 => KmStatus::Numerical,
        _ => KmStatus::Input,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> KmStatus) -> KmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(KmStatus::Panic, "panic inside kolmogorov"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, KmStatus> {
    if s.is_null() {
        return Err(fail(KmStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(KmStatus::InvalidUtf8, "string argument is not UTF-8"))
}

fn give_string(s: String, out: *mut *mut c_char) -> KmStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            KmStatus::Ok
        }
        Err(_) => fail(KmStatus::Input, "output contains a nul byte"),
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn km_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn km_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a whitespace-separated `user item rating [timestamp]` file,
/// mapping ratings to `rating / r_max`.
///
/// # Safety
/// `path` is a nul-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn km_observations_load(
    path: *const c_char,
    r_max: u32,
    out: *mut *mut KmObservations,
) -> KmStatus {
    guard(|| {
        if out.is_null() {
            return fail(KmStatus::NullPointer, "null output pointer");
        }
        let path = match read_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_ratings_file(Path::new(path), r_max) {
            Ok(obs) => {
                *out = Box::into_raw(Box::new(KmObservations(obs)));
                KmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Builds an observation set from `n` parallel arrays. Probabilities must
/// lie in [0, 1] and `(user, item)` pairs must be unique.
///
/// # Safety
/// Each array holds at least `n` elements; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn km_observations_from_arrays(
    users: *const u64,
    items: *const u64,
    probs: *const f64,
    n: usize,
    out: *mut *mut KmObservations,
) -> KmStatus {
    guard(|| {
        if out.is_null() || (n > 0 && (users.is_null() || items.is_null() || probs.is_null())) {
            return fail(KmStatus::NullPointer, "null array or output pointer");
        }
        let records = (0..n)
            .map(|k| Observation {
                user: *users.add(k),
                item: *items.add(k),
                p: *probs.add(k),
            })
            .collect();
        match ObservationSet::new(records) {
            Ok(obs) => {
                *out = Box::into_raw(Box::new(KmObservations(obs)));
                KmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of records, or 0 for null.
///
/// # Safety
/// `obs` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_observations_len(obs: *const KmObservations) -> usize {
    obs.as_ref().map_or(0, |o| o.0.len())
}

/// # Safety
/// `obs` is null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn km_observations_free(obs: *mut KmObservations) {
    if !obs.is_null() {
        drop(Box::from_raw(obs));
    }
}

/// Trains a model. `config_toml` uses the command-line configuration format
/// and may be null for defaults.
///
/// # Safety
/// `obs` is a live handle, `config_toml` is null or nul-terminated, `out`
/// is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn km_train(
    obs: *const KmObservations,
    config_toml: *const c_char,
    out: *mut *mut KmModel,
) -> KmStatus {
    guard(|| {
        let Some(obs) = obs.as_ref() else {
            return fail(KmStatus::NullPointer, "null observations");
        };
        if out.is_null() {
            return fail(KmStatus::NullPointer, "null output pointer");
        }
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            let text = match read_str(config_toml) {
                Ok(t) => t,
                Err(s) => return s,
            };
            match RunConfig::from_toml_str(text) {
                Ok(c) => c,
                Err(e) => return from_error(e),
            }
        };
        match train(&obs.0, &cfg.train_config()) {
            Ok(outcome) => {
                *out = Box::into_raw(Box::new(KmModel(outcome.model)));
                KmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Parses a model document.
///
/// # Safety
/// `json` is nul-terminated; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn km_model_from_json(json: *const c_char, out: *mut *mut KmModel) -> KmStatus {
    guard(|| {
        if out.is_null() {
            return fail(KmStatus::NullPointer, "null output pointer");
        }
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match KolmogorovModel::from_json_str(text) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(KmModel(m)));
                KmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Serializes a model; free the result with `km_string_free`.
///
/// # Safety
/// `model` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn km_model_to_json(model: *const KmModel, out: *mut *mut c_char) -> KmStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(KmStatus::NullPointer, "null model");
        };
        if out.is_null() {
            return fail(KmStatus::NullPointer, "null output pointer");
        }
        match model.0.to_json_string() {
            Ok(s) => give_string(s, out),
            Err(e) => from_error(e),
        }
    })
}

/// Number of elementary events, or 0 for null.
///
/// # Safety
/// `model` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_model_dim(model: *const KmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Probability that `user` likes `item`. Unknown ids are an error.
///
/// # Safety
/// `model` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn km_predict(model: *const KmModel, user: u64, item: u64, out: *mut f64) -> KmStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(KmStatus::NullPointer, "null model");
        };
        if out.is_null() {
            return fail(KmStatus::NullPointer, "null output pointer");
        }
        match model.0.predict(user, item) {
            Ok(p) => {
                *out = p;
                KmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Mined rules as a JSON document; free with `km_string_free`.
///
/// # Safety
/// `model` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn km_rules_json(model: *const KmModel, min_beta: f64, out: *mut *mut c_char) -> KmStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(KmStatus::NullPointer, "null model");
        };
        if out.is_null() {
            return fail(KmStatus::NullPointer, "null output pointer");
        }
        match mine_rules(&model.0, min_beta).and_then(|r| r.to_json_string()) {
            Ok(s) => give_string(s, out),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` is null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn km_model_free(model: *mut KmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
