//! C ABI over `lufy-core`.
//!
//! Every function returns a [`LufyStatus`]. Results come back through out
//! pointers; strings are NUL-terminated UTF-8 JSON owned by the caller and
//! released with [`lufy_string_free`]. On failure the message is available
//! from [`lufy_last_error`] on the same thread.
//!
//! An engine handle is not thread safe; callers serialize access to it.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lufy_core::memory::MetricValues;
use lufy_core::{ChatEngine, EngineConfig, Error, WeightVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LufyStatus {
    Ok = 0,
    InvalidInput = 1,
    ProviderUnavailable = 2,
    Parse = 3,
    Generation = 4,
    Consistency = 5,
    Lifecycle = 6,
    Persistence = 7,
    Config = 8,
    NullPointer = 9,
    Panic = 10,
}

/// Opaque engine handle.
pub struct LufyEngine {
    inner: ChatEngine,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LufyStatus {
    match e {
        Error::InvalidInput(_) => LufyStatus::InvalidInput,
        Error::ProviderUnavailable(_) => LufyStatus::ProviderUnavailable,
        Error::Parse { .. } => LufyStatus::Parse,
        Error::Generation(_) => LufyStatus::Generation,
        Error::Consistency(_) => LufyStatus::Consistency,
        Error::Lifecycle(_) => LufyStatus::Lifecycle,
        Error::Persistence { .. } | Error::Io(_) => LufyStatus::Persistence,
        Error::Config(_) => LufyStatus::Config,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> LufyStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LufyStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("{what} is null"));
            LufyStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            LufyStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidInput(format!("{what} is not UTF-8"))))
}

unsafe fn engine<'a>(p: *mut LufyEngine) -> Result<&'a mut ChatEngine, Fail> {
    p.as_mut().map(|e| &mut e.inner).ok_or(Fail::Null("engine"))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

fn json<T: serde::Serialize>(v: &T) -> Result<*mut c_char, Fail> {
    let s = serde_json::to_string(v).map_err(|e| Error::Consistency(e.to_string()))?;
    Ok(CString::new(s).map_err(|e| Error::Consistency(e.to_string()))?.into_raw())
}

/// Create an engine from a JSON config. `config_json` may be null for the
/// defaults (in-memory store, stub providers).
///
/// # Safety
/// `config_json` is null or a NUL-terminated string; `out_engine` is writable.
#[no_mangle]
pub unsafe extern "C" fn lufy_engine_new(config_json: *const c_char, out_engine: *mut *mut LufyEngine) -> LufyStatus {
    guard(|| {
        let slot = out(out_engine, "out_engine")?;
        *slot = ptr::null_mut();
        let config = if config_json.is_null() {
            EngineConfig::default()
        } else {
            EngineConfig::from_json(text(config_json, "config_json")?)?
        };
        let inner = ChatEngine::from_config(config)?;
        *slot = Box::into_raw(Box::new(LufyEngine { inner }));
        Ok(())
    })
}

/// Release an engine. Null is ignored.
///
/// # Safety
/// `engine` came from [`lufy_engine_new`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lufy_engine_free(engine: *mut LufyEngine) {
    if !engine.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(engine))));
    }
}

/// Open the next session and write its index to `out_session`.
///
/// # Safety
/// `engine` is a live handle; `out_session` is writable.
#[no_mangle]
pub unsafe extern "C" fn lufy_session_open(engine: *mut LufyEngine, out_session: *mut u32) -> LufyStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let slot = out(out_session, "out_session")?;
        *slot = e.open_session()?;
        Ok(())
    })
}

/// Run one turn. `out_json` receives the turn result.
///
/// # Safety
/// `engine` is a live handle; `user_text` is NUL-terminated; `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn lufy_turn(
    engine: *mut LufyEngine,
    session: u32,
    user_text: *const c_char,
    out_json: *mut *mut c_char,
) -> LufyStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let slot = out(out_json, "out_json")?;
        *slot = ptr::null_mut();
        let t = e.handle_turn(session, text(user_text, "user_text")?)?;
        *slot = json(&t)?;
        Ok(())
    })
}

/// Close a session. `out_json` receives the forgetting report.
///
/// # Safety
/// `engine` is a live handle; `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn lufy_session_close(
    engine: *mut LufyEngine,
    session: u32,
    out_json: *mut *mut c_char,
) -> LufyStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let slot = out(out_json, "out_json")?;
        *slot = ptr::null_mut();
        let r = e.close_session(session)?;
        *slot = json(&r)?;
        Ok(())
    })
}

/// All memories with their breakdowns, as a JSON array.
///
/// # Safety
/// `engine` is a live handle; `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn lufy_memories(engine: *mut LufyEngine, out_json: *mut *mut c_char) -> LufyStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let slot = out(out_json, "out_json")?;
        *slot = ptr::null_mut();
        *slot = json(&e.memories()?)?;
        Ok(())
    })
}

/// Answer a question without recording anything.
///
/// # Safety
/// `engine` is a live handle; `question` is NUL-terminated; `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn lufy_answer(
    engine: *mut LufyEngine,
    question: *const c_char,
    out_json: *mut *mut c_char,
) -> LufyStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let slot = out(out_json, "out_json")?;
        *slot = ptr::null_mut();
        *slot = json(&e.answer(text(question, "question")?)?)?;
        Ok(())
    })
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` came from this library and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lufy_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn lufy_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Strength from metrics `[A, P, L, R1, R2]` and weights
/// `[w_A, w_P, w_L, w_R1, w_R2]`.
///
/// # Safety
/// `metrics` and `weights` point to 5 doubles; `out_strength` is writable.
#[no_mangle]
pub unsafe extern "C" fn lufy_compute_strength(
    metrics: *const f64,
    weights: *const f64,
    out_strength: *mut f64,
) -> LufyStatus {
    guard(|| {
        if metrics.is_null() {
            return Err(Fail::Null("metrics"));
        }
        if weights.is_null() {
            return Err(Fail::Null("weights"));
        }
        let slot = out(out_strength, "out_strength")?;
        let mut m = [0.0; 5];
        let mut w = [0.0; 5];
        ptr::copy_nonoverlapping(metrics, m.as_mut_ptr(), 5);
        ptr::copy_nonoverlapping(weights, w.as_mut_ptr(), 5);
        *slot = lufy_core::compute_strength(
            &MetricValues::from_array(m),
            &WeightVector::from_metric_weights(w, 0.0),
        )?;
        Ok(())
    })
}

/// `exp(-delta_t / strength)`, zero for non-positive strength.
///
/// # Safety
/// `out_importance` is writable.
#[no_mangle]
pub unsafe extern "C" fn lufy_compute_importance(strength: f64, delta_t: f64, out_importance: *mut f64) -> LufyStatus {
    guard(|| {
        let slot = out(out_importance, "out_importance")?;
        *slot = lufy_core::compute_importance(strength, delta_t)?;
        Ok(())
    })
}

/// Cosine similarity of two `len`-element vectors.
///
/// # Safety
/// `a` and `b` point to `len` floats; `out_cos` is writable.
#[no_mangle]
pub unsafe extern "C" fn lufy_cosine_similarity(a: *const f32, b: *const f32, len: usize, out_cos: *mut f64) -> LufyStatus {
    guard(|| {
        if a.is_null() {
            return Err(Fail::Null("a"));
        }
        if b.is_null() {
            return Err(Fail::Null("b"));
        }
        let slot = out(out_cos, "out_cos")?;
        let (a, b) = (std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len));
        *slot = lufy_core::cosine_similarity(a, b)?;
        Ok(())
    })
}
