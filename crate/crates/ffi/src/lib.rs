//! C ABI over the tierkite engine.
//!
//! Every fallible call returns a [`TkStatus`]; on failure the message is
//! available from [`tk_last_error`] on the same thread. Strings handed out
//! by the library are owned by the caller and released with
//! [`tk_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use tierkite::engine::{config_from_env, resolve_config, Channels, Engine, HostInfo, QueryOptions};
use tierkite::fusion::AlphaMode;
use tierkite::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TkStatus {
    Ok = 0,
    InvalidArgument = 1,
    NotReady = 2,
    WouldBlock = 3,
    BudgetExceeded = 4,
    Io = 5,
    Corrupt = 6,
    Internal = 7,
    Panic = 8,
}

/// Opaque engine handle.
pub struct TkEngine {
    inner: Engine,
}

/// Use adaptive fusion weighting instead of the fixed weight.
pub const TK_QUERY_ADAPTIVE: u32 = 1;
/// Bypass the semantic cache.
pub const TK_QUERY_NO_CACHE: u32 = 1 << 1;
/// Search the dense channel only.
pub const TK_QUERY_DENSE_ONLY: u32 = 1 << 2;
/// Search the sparse channel only.
pub const TK_QUERY_SPARSE_ONLY: u32 = 1 << 3;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> TkStatus {
    match e {
        Error::InvalidConfig(_) | Error::EmptyInput(_) | Error::Shape { .. } => TkStatus::InvalidArgument,
        Error::NotReady(_) => TkStatus::NotReady,
        Error::WouldBlock => TkStatus::WouldBlock,
        Error::BudgetExceeded(_) => TkStatus::BudgetExceeded,
        Error::Io { .. } | Error::RawIo(_) | Error::EmptyCorpus(_) => TkStatus::Io,
        Error::Format(_) | Error::CorruptShard(_) | Error::Json(_) => TkStatus::Corrupt,
        _ => TkStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), TkStatus>) -> TkStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TkStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TkStatus::Panic
        }
    }
}

fn fail(e: Error) -> TkStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn invalid(msg: &str) -> TkStatus {
    set_error(msg);
    TkStatus::InvalidArgument
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, TkStatus> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, TkStatus> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn engine_ref<'a>(p: *const TkEngine) -> Result<&'a Engine, TkStatus> {
    p.as_ref().map(|e| &e.inner).ok_or_else(|| invalid("engine is null"))
}

unsafe fn put_json(out: *mut *mut c_char, v: &serde_json::Value) -> Result<(), TkStatus> {
    let s = CString::new(v.to_string()).map_err(|_| {
        set_error("result contains a NUL byte");
        TkStatus::Internal
    })?;
    *out = s.into_raw();
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn tk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Open (or create) an engine directory.
///
/// With `config_path` and `profile` both NULL the configuration comes from
/// `TIERKITE_CONFIG` and `TIERKITE_PROFILE`.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_engine_open(
    dir: *const c_char,
    config_path: *const c_char,
    profile: *const c_char,
    out: *mut *mut TkEngine,
) -> TkStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = ptr::null_mut();
        let dir = str_arg(dir, "dir")?;
        let config = opt_str_arg(config_path, "config_path")?;
        let profile = opt_str_arg(profile, "profile")?;
        let cfg = if config.is_none() && profile.is_none() {
            config_from_env()
        } else {
            resolve_config(HostInfo::detect(), profile, config.map(Path::new))
        }
        .map_err(fail)?;
        let inner = Engine::open(Path::new(dir), cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(TkEngine { inner }));
        Ok(())
    })
}

/// Release an engine. NULL is ignored.
///
/// # Safety
/// `engine` must come from [`tk_engine_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tk_engine_free(engine: *mut TkEngine) {
    if !engine.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(engine))));
    }
}

/// Run a query and return `{"hits": [...], "cache_hit", "alpha", "timings"}`
/// as JSON in `*out_json`. A not-ready engine returns [`TkStatus::NotReady`].
///
/// # Safety
/// `engine` must be live, `query` NUL-terminated and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn tk_engine_query(
    engine: *const TkEngine,
    query: *const c_char,
    k: u32,
    flags: u32,
    out_json: *mut *mut c_char,
) -> TkStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(invalid("out_json is null"));
        }
        *out_json = ptr::null_mut();
        let engine = engine_ref(engine)?;
        let q = str_arg(query, "query")?;
        if q.trim().is_empty() {
            return Err(invalid("query is empty"));
        }
        if k == 0 {
            return Err(invalid("k must be positive"));
        }
        let channels = match (flags & TK_QUERY_DENSE_ONLY != 0, flags & TK_QUERY_SPARSE_ONLY != 0) {
            (true, true) => return Err(invalid("dense-only and sparse-only are exclusive")),
            (true, false) => Channels::DenseOnly,
            (false, true) => Channels::SparseOnly,
            (false, false) => Channels::Hybrid,
        };
        let opts = QueryOptions {
            k: k as usize,
            alpha_mode: if flags & TK_QUERY_ADAPTIVE != 0 {
                AlphaMode::Adaptive
            } else {
                AlphaMode::Fixed
            },
            use_cache: flags & TK_QUERY_NO_CACHE == 0,
            channels,
            ..QueryOptions::default()
        };
        let res = engine.query(q, &opts).map_err(fail)?;
        let views = engine.views(&engine.snapshot(), &res.hits).map_err(fail)?;
        put_json(
            out_json,
            &serde_json::json!({
                "hits": views,
                "cache_hit": res.cache_hit,
                "alpha": res.alpha,
                "generation": res.generation,
                "timings": res.timings,
            }),
        )
    })
}

/// Ingest a corpus directory synchronously and return the job report as
/// JSON. Fails with [`TkStatus::WouldBlock`] while another write job runs.
///
/// # Safety
/// `engine` must be live, `corpus_dir` NUL-terminated, `out_json` NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tk_engine_ingest(
    engine: *const TkEngine,
    corpus_dir: *const c_char,
    out_json: *mut *mut c_char,
) -> TkStatus {
    guard(|| {
        if !out_json.is_null() {
            *out_json = ptr::null_mut();
        }
        let engine = engine_ref(engine)?;
        let corpus = PathBuf::from(str_arg(corpus_dir, "corpus_dir")?);
        let rep = engine.ingest(&corpus).map_err(fail)?;
        if out_json.is_null() {
            return Ok(());
        }
        let v = serde_json::to_value(&rep).map_err(|e| fail(e.into()))?;
        put_json(out_json, &v)
    })
}

/// Engine statistics as JSON.
///
/// # Safety
/// `engine` must be live and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn tk_engine_stats(engine: *const TkEngine, out_json: *mut *mut c_char) -> TkStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(invalid("out_json is null"));
        }
        *out_json = ptr::null_mut();
        let engine = engine_ref(engine)?;
        put_json(out_json, &engine.stats())
    })
}

/// Number of chunks in the current snapshot, or 0 for NULL.
///
/// # Safety
/// `engine` must be NULL or live.
#[no_mangle]
pub unsafe extern "C" fn tk_engine_chunk_count(engine: *const TkEngine) -> u64 {
    engine
        .as_ref()
        .map_or(0, |e| e.inner.snapshot().chunk_count() as u64)
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
