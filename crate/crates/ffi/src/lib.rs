//! C ABI over the `kvclust` cache pipeline.
//!
//! Handles are opaque and owned by the caller, who must release them with the
//! matching `*_free` function. Every fallible call returns a [`KvcStatus`];
//! on failure [`kvc_last_error`] describes the most recent error on the
//! calling thread. Matrices are passed as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use kvclust::pipeline::{decode_step, prefill, CacheState, CompressionConfig};
use kvclust::theory::{random_valid_score, verify_theorem};
use kvclust::{Error, Matrix};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    NonConvergence = 5,
    Io = 6,
    Format = 7,
    VerificationFailed = 8,
    Panic = 9,
}

/// Compression settings.
pub struct KvcConfig {
    inner: CompressionConfig,
}

/// One head's compressed key/value cache.
pub struct KvcCache {
    state: CacheState,
    dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> KvcStatus {
    match e {
        Error::Config(_) => KvcStatus::Config,
        Error::Dimension(_) => KvcStatus::Dimension,
        Error::NonFinite(_) | Error::Contract(_) => KvcStatus::InvalidArgument,
        Error::NonConvergence { .. } => KvcStatus::NonConvergence,
        Error::Io { .. } => KvcStatus::Io,
        Error::Format { .. } => KvcStatus::Format,
    }
}

fn fail(status: KvcStatus, msg: impl Into<String>) -> KvcStatus {
    set_last_error(msg);
    status
}

/// Runs `f`, mapping library errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), KvcStatus>) -> KvcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KvcStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(KvcStatus::Panic, "internal panic"),
    }
}

fn lib<T>(r: kvclust::Result<T>) -> Result<T, KvcStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), KvcStatus> {
    if p.is_null() {
        Err(fail(KvcStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, name: &str) -> Result<Matrix, KvcStatus> {
    non_null(p, name)?;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(KvcStatus::InvalidArgument, format!("{name} size overflows")))?;
    let data = unsafe { std::slice::from_raw_parts(p, len) }.to_vec();
    lib(Matrix::new(rows, cols, data))
}

/// Returns the message for the last failed call on this thread, or "".
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kvc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Default settings: ratio 0.2, 16 sinks, 64 recent, chunk 256. Never null.
#[no_mangle]
pub extern "C" fn kvc_config_default() -> *mut KvcConfig {
    Box::into_raw(Box::new(KvcConfig {
        inner: CompressionConfig::default(),
    }))
}

/// Parses a flat `key = value` config document.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kvc_config_parse(
    text: *const c_char,
    out: *mut *mut KvcConfig,
) -> KvcStatus {
    guard(|| {
        non_null(text, "text")?;
        non_null(out, "out")?;
        let text = unsafe { CStr::from_ptr(text) }
            .to_str()
            .map_err(|_| fail(KvcStatus::InvalidArgument, "config text is not UTF-8"))?;
        let inner = lib(CompressionConfig::from_config_str(text))?;
        unsafe { *out = Box::into_raw(Box::new(KvcConfig { inner })) };
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn kvc_config_free(cfg: *mut KvcConfig) {
    if !cfg.is_null() {
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Sets the cache ratio `R` in `(0, 1]`.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn kvc_config_set_ratio(cfg: *mut KvcConfig, ratio: f64) -> KvcStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        let cfg = unsafe { &mut *cfg };
        let mut next = cfg.inner.clone();
        next.cache_ratio = ratio;
        lib(next.validate())?;
        cfg.inner = next;
        Ok(())
    })
}

/// Sets the decode allowance used in the budget, `max_decode`.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn kvc_config_set_max_decode(
    cfg: *mut KvcConfig,
    max_decode: usize,
) -> KvcStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        unsafe { (*cfg).inner.max_decode = max_decode };
        Ok(())
    })
}

/// Writes the cache budget for a prompt of `prompt_len` tokens.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kvc_config_budget(
    cfg: *const KvcConfig,
    prompt_len: usize,
    out: *mut usize,
) -> KvcStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        non_null(out, "out")?;
        let b = lib(unsafe { &*cfg }.inner.budget(prompt_len))?;
        unsafe { *out = b };
        Ok(())
    })
}

/// Runs the prompt through exact causal attention and seeds a cache.
///
/// `q`, `k`, `v` hold `n * d` values each. `outputs` may be null; otherwise it
/// receives `n * d` attention outputs.
///
/// # Safety
/// All non-null pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn kvc_prefill(
    cfg: *const KvcConfig,
    q: *const f64,
    k: *const f64,
    v: *const f64,
    n: usize,
    d: usize,
    outputs: *mut f64,
    out_cache: *mut *mut KvcCache,
) -> KvcStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        non_null(out_cache, "out_cache")?;
        let cfg = &unsafe { &*cfg }.inner;
        let (q, k, v) = unsafe {
            (
                matrix(q, n, d, "q")?,
                matrix(k, n, d, "k")?,
                matrix(v, n, d, "v")?,
            )
        };
        let p = lib(prefill(&q, &k, &v, cfg, None))?;
        if !outputs.is_null() {
            unsafe { std::slice::from_raw_parts_mut(outputs, n * d) }
                .copy_from_slice(p.outputs.as_slice());
        }
        let cache = KvcCache {
            state: p.state,
            dim: d,
        };
        unsafe { *out_cache = Box::into_raw(Box::new(cache)) };
        Ok(())
    })
}

/// Appends one token, writes its `d` attention outputs and compresses if due.
///
/// `compressed` may be null; otherwise it is set to 1 when compression ran.
///
/// # Safety
/// `cache` and `cfg` must be live handles; buffers must hold `d` values.
#[no_mangle]
pub unsafe extern "C" fn kvc_decode(
    cache: *mut KvcCache,
    cfg: *const KvcConfig,
    q: *const f64,
    k: *const f64,
    v: *const f64,
    out: *mut f64,
    compressed: *mut u8,
) -> KvcStatus {
    guard(|| {
        non_null(cache, "cache")?;
        non_null(cfg, "cfg")?;
        non_null(out, "out")?;
        for (p, name) in [(q, "q"), (k, "k"), (v, "v")] {
            non_null(p, name)?;
        }
        let cache = unsafe { &mut *cache };
        let d = cache.dim;
        let row = |p: *const f64| unsafe { std::slice::from_raw_parts(p, d) };
        let step = lib(decode_step(
            &mut cache.state,
            row(q),
            row(k),
            row(v),
            &unsafe { &*cfg }.inner,
        ))?;
        unsafe { std::slice::from_raw_parts_mut(out, d) }.copy_from_slice(&step.out);
        if !compressed.is_null() {
            unsafe { *compressed = u8::from(step.event.is_some()) };
        }
        Ok(())
    })
}

/// Number of cached rows, or 0 for a null handle.
///
/// # Safety
/// `cache` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kvc_cache_len(cache: *const KvcCache) -> usize {
    unsafe { cache.as_ref() }.map_or(0, |c| c.state.len())
}

/// Total degree, i.e. tokens represented by the cache, or 0 for a null handle.
///
/// # Safety
/// `cache` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kvc_cache_degree_sum(cache: *const KvcCache) -> u64 {
    unsafe { cache.as_ref() }.map_or(0, |c| c.state.degree_total())
}

/// # Safety
/// `cache` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn kvc_cache_free(cache: *mut KvcCache) {
    if !cache.is_null() {
        drop(unsafe { Box::from_raw(cache) });
    }
}

/// Checks the alternating partition against `trials` random valid score
/// functions of size `n` (1..=8). Writes the number of failing trials.
///
/// # Safety
/// `failures` must be null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kvc_verify_theorem(
    n: usize,
    trials: usize,
    seed: u64,
    failures: *mut usize,
) -> KvcStatus {
    guard(|| {
        let mut failed = 0;
        for t in 0..trials {
            let f = random_valid_score(n.max(1), seed.wrapping_add(t as u64));
            if !lib(verify_theorem(n, &f))?.holds {
                failed += 1;
            }
        }
        if !failures.is_null() {
            unsafe { *failures = failed };
        }
        if failed > 0 {
            return Err(fail(
                KvcStatus::VerificationFailed,
                format!("{failed} of {trials} trials failed"),
            ));
        }
        Ok(())
    })
}
