//! C ABI over prepared datasets, trained checkpoints and training runs.
//!
//! All handles are opaque and owned by the caller once returned; release
//! them with the matching `*_free` function. Every fallible call returns a
//! [`GidStatus`]; on failure a message is available from
//! [`gid_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use libc::{c_char, size_t};

use groupid::model::Checkpoint;
use groupid::pipeline::{train_prepared, Prepared, RunConfig, Scorer};
use groupid::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    CountMismatch = 6,
    OutOfRange = 7,
    BufferTooSmall = 8,
    Numerical = 9,
    Panic = 99,
}

/// A loaded prepared directory.
pub struct GidDataset {
    prepared: Prepared,
}

/// A checkpoint bound to its prepared split, ready for scoring.
pub struct GidSession {
    scorer: Scorer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> GidStatus {
    match err {
        Error::Io { .. } => GidStatus::Io,
        Error::Parse { .. } | Error::Json(_) => GidStatus::Parse,
        Error::CountMismatch(_) | Error::Shape { .. } => GidStatus::CountMismatch,
        Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => GidStatus::Numerical,
        _ => GidStatus::InvalidArgument,
    }
}

struct Failure(GidStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> GidStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GidStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            GidStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    str_arg(p, name).map(PathBuf::from)
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(GidStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GidStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(GidStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn gid_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a prepared directory.
///
/// # Safety
/// `prepared_dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gid_dataset_open(
    prepared_dir: *const c_char,
    out: *mut *mut GidDataset,
) -> GidStatus {
    guard(|| {
        non_null(out, "out")?;
        let dir = path_arg(prepared_dir, "prepared_dir")?;
        let prepared = Prepared::load(&dir)?;
        *out = Box::into_raw(Box::new(GidDataset { prepared }));
        Ok(())
    })
}

/// Entity counts of a dataset. Any output pointer may be null.
///
/// # Safety
/// `ds` must come from [`gid_dataset_open`]; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn gid_dataset_counts(
    ds: *const GidDataset,
    users: *mut size_t,
    groups: *mut size_t,
    items: *mut size_t,
) -> GidStatus {
    guard(|| {
        non_null(ds, "dataset")?;
        let g = &(*ds).prepared.graph;
        for (p, v) in [(users, g.num_users), (groups, g.num_groups), (items, g.num_items)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Number of training user-group edges.
///
/// # Safety
/// `ds` must come from [`gid_dataset_open`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gid_dataset_train_edges(ds: *const GidDataset, out: *mut size_t) -> GidStatus {
    guard(|| {
        non_null(ds, "dataset")?;
        non_null(out, "out")?;
        *out = (*ds).prepared.split.train.user_group_edges().len();
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`gid_dataset_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gid_dataset_free(ds: *mut GidDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Opens a checkpoint against the prepared split it was trained on.
///
/// # Safety
/// Both paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gid_session_open(
    prepared_dir: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut GidSession,
) -> GidStatus {
    guard(|| {
        non_null(out, "out")?;
        let dir = path_arg(prepared_dir, "prepared_dir")?;
        let ck_path = path_arg(checkpoint_path, "checkpoint_path")?;
        let prepared = Prepared::load(&dir)?;
        let ck = Checkpoint::load(&ck_path)?;
        let scorer = Scorer::new(&prepared, &ck)?;
        *out = Box::into_raw(Box::new(GidSession { scorer }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from [`gid_session_open`].
#[no_mangle]
pub unsafe extern "C" fn gid_session_num_groups(s: *const GidSession) -> size_t {
    if s.is_null() {
        0
    } else {
        (*s).scorer.num_groups()
    }
}

/// # Safety
/// `s` must come from [`gid_session_open`].
#[no_mangle]
pub unsafe extern "C" fn gid_session_num_users(s: *const GidSession) -> size_t {
    if s.is_null() {
        0
    } else {
        (*s).scorer.num_users()
    }
}

/// Writes the score of every group for `user` into `out_scores`, which
/// must hold at least `gid_session_num_groups` values.
///
/// # Safety
/// `s` must come from [`gid_session_open`]; `out_scores` must be valid for
/// `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gid_score_user(
    s: *const GidSession,
    user: size_t,
    out_scores: *mut f64,
    len: size_t,
) -> GidStatus {
    guard(|| {
        non_null(s, "session")?;
        non_null(out_scores, "out_scores")?;
        let scorer = &(*s).scorer;
        if user >= scorer.num_users() {
            return Err(Failure(
                GidStatus::OutOfRange,
                format!("user {user} out of range for {} users", scorer.num_users()),
            ));
        }
        let scores = scorer.scores(user)?;
        if len < scores.len() {
            return Err(Failure(
                GidStatus::BufferTooSmall,
                format!("buffer holds {len} scores, need {}", scores.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out_scores, scores.len()).copy_from_slice(&scores);
        Ok(())
    })
}

/// Best `k` groups for `user`, excluding groups joined in training. Writes
/// up to `k` ids (and scores, if `out_scores` is non-null) and the count
/// actually written to `out_len`.
///
/// # Safety
/// `s` must come from [`gid_session_open`]; `out_ids` and non-null
/// `out_scores` must be valid for `k` writes; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gid_top_k(
    s: *const GidSession,
    user: size_t,
    k: size_t,
    out_ids: *mut size_t,
    out_scores: *mut f64,
    out_len: *mut size_t,
) -> GidStatus {
    guard(|| {
        non_null(s, "session")?;
        non_null(out_ids, "out_ids")?;
        non_null(out_len, "out_len")?;
        let scorer = &(*s).scorer;
        if user >= scorer.num_users() {
            return Err(Failure(
                GidStatus::OutOfRange,
                format!("user {user} out of range for {} users", scorer.num_users()),
            ));
        }
        let top = scorer.top_k(user, k)?;
        for (i, &(g, score)) in top.iter().enumerate() {
            *out_ids.add(i) = g;
            if !out_scores.is_null() {
                *out_scores.add(i) = score;
            }
        }
        *out_len = top.len();
        Ok(())
    })
}

/// # Safety
/// `s` must come from [`gid_session_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gid_session_free(s: *mut GidSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Trains on a prepared directory and writes the run artifacts to
/// `output_dir`. `config_json` is an optional flat JSON object of config
/// overrides and may be null.
///
/// # Safety
/// String arguments must be NUL-terminated; `config_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn gid_train_prepared(
    prepared_dir: *const c_char,
    config_json: *const c_char,
    output_dir: *const c_char,
) -> GidStatus {
    guard(|| {
        let dir = path_arg(prepared_dir, "prepared_dir")?;
        let out = path_arg(output_dir, "output_dir")?;
        let prepared = Prepared::load(&dir)?;
        let mut sets = Vec::new();
        if !config_json.is_null() {
            let text = str_arg(config_json, "config_json")?;
            let value: serde_json::Value = serde_json::from_str(text)
                .map_err(|e| Failure(GidStatus::Parse, format!("config_json: {e}")))?;
            let obj = value.as_object().ok_or_else(|| {
                Failure(GidStatus::Parse, "config_json must be a JSON object".into())
            })?;
            sets.extend(obj.iter().map(|(k, v)| format!("{k}={v}")));
        }
        sets.push(format!("output_dir={}", serde_json::Value::from(out.display().to_string())));
        let cfg: RunConfig = prepared.config_with(None, &sets)?;
        train_prepared(&prepared, &cfg)?;
        Ok(())
    })
}
