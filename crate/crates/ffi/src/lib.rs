//! C interface to `trapwalk`.
//!
//! Environments cross the boundary as opaque handles owned by the caller and
//! released with [`tw_env_free`]. Every fallible call returns a [`TwStatus`];
//! the message of the most recent failure on the calling thread is available
//! through [`tw_last_error_message`]. Sites are passed as `int32_t` arrays
//! whose length must equal the environment dimension.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use trapwalk::percolation::{
    chemical_distance, generate_with_origin_in_spanning, restricted_component,
};
use trapwalk::spectral::principal_eigen;
use trapwalk::survival::{survival_probability, SurvivalQuery};
use trapwalk::{persist, BoxSpec, Environment, Error, Site};

/// Result codes. `TW_STATUS_OK` is zero; every other value names an error
/// kind.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TwStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Capacity = 3,
    NoSurvivingPath = 4,
    Convergence = 5,
    Consistency = 6,
    Format = 7,
    Io = 8,
    InvalidUtf8 = 9,
    Panic = 10,
}

/// Opaque obstacle environment.
pub struct TwEnvironment {
    inner: Environment,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> TwStatus {
    match e {
        Error::Domain(_) => TwStatus::Domain,
        Error::Capacity { .. } => TwStatus::Capacity,
        Error::NoSurvivingPath { .. } => TwStatus::NoSurvivingPath,
        Error::Convergence { .. } => TwStatus::Convergence,
        Error::Consistency(_) => TwStatus::Consistency,
        Error::Format(_) => TwStatus::Format,
        Error::Io(_) => TwStatus::Io,
    }
}

struct Fail(TwStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TwStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording failures and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TwStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside trapwalk".into());
            TwStatus::Panic
        }
    }
}

unsafe fn env_ref<'a>(env: *const TwEnvironment) -> Result<&'a Environment, Fail> {
    // SAFETY: caller passes a handle from this library or null.
    unsafe { env.as_ref() }
        .map(|e| &e.inner)
        .ok_or_else(|| null("environment"))
}

unsafe fn site_arg(env: &Environment, coords: *const i32, len: usize) -> Result<Site, Fail> {
    if coords.is_null() {
        return Err(null("coordinates"));
    }
    if len != env.dim() {
        return Err(Fail(
            TwStatus::Domain,
            format!(
                "site has {len} coordinates, environment dimension is {}",
                env.dim()
            ),
        ));
    }
    // SAFETY: caller guarantees `len` readable values.
    let c = unsafe { std::slice::from_raw_parts(coords, len) };
    Ok(Site::try_new(c)?)
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    // SAFETY: caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|e| Fail(TwStatus::InvalidUtf8, format!("path is not UTF-8: {e}")))
}

fn hand_out(env: Environment, out: *mut *mut TwEnvironment) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    let h = Box::into_raw(Box::new(TwEnvironment { inner: env }));
    // SAFETY: checked non-null; caller provides a writable slot.
    unsafe { *out = h };
    Ok(())
}

fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output"));
    }
    // SAFETY: checked non-null; caller provides a writable slot.
    unsafe { *out = v };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated and
/// NUL-terminated when `cap > 0`). Returns the full message length in bytes,
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn tw_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            // SAFETY: `n + 1 <= cap` bytes are writable.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Bernoulli environment on `[-half_width, half_width]^dim`; sites are open
/// with probability `p`.
///
/// # Safety
/// `out` must point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn tw_env_generate(
    dim: u32,
    half_width: i32,
    p: f64,
    seed: u64,
    out: *mut *mut TwEnvironment,
) -> TwStatus {
    guard(|| {
        let bx = BoxSpec::new(dim as usize, half_width)?;
        hand_out(Environment::generate(bx, p, seed)?, out)
    })
}

/// Hand-built environment on `[-half_width, half_width]^dim` from one byte
/// per site (nonzero = open), ordered with axis 0 varying fastest.
///
/// # Safety
/// `open` must point to `len` readable bytes; `out` to a writable handle
/// slot.
#[no_mangle]
pub unsafe extern "C" fn tw_env_from_mask(
    dim: u32,
    half_width: i32,
    open: *const u8,
    len: usize,
    out: *mut *mut TwEnvironment,
) -> TwStatus {
    guard(|| {
        let bx = BoxSpec::new(dim as usize, half_width)?;
        if open.is_null() {
            return Err(null("mask"));
        }
        if len != bx.volume() {
            return Err(Fail(
                TwStatus::Domain,
                format!("mask has {len} entries, box has {} sites", bx.volume()),
            ));
        }
        // SAFETY: caller guarantees `len` readable bytes.
        let mask = unsafe { std::slice::from_raw_parts(open, len) };
        let env = Environment::from_fn(bx, |s| mask[bx.index(s).unwrap()] != 0)?;
        hand_out(env, out)
    })
}

/// Like [`tw_env_generate`], regenerating until the origin lies in the
/// spanning cluster. `attempts` (nullable) receives the number of retries.
///
/// # Safety
/// `out` must point to a writable handle slot; `attempts` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tw_env_generate_spanning(
    dim: u32,
    half_width: i32,
    p: f64,
    seed: u64,
    max_attempts: u32,
    out: *mut *mut TwEnvironment,
    attempts: *mut u32,
) -> TwStatus {
    guard(|| {
        let bx = BoxSpec::new(dim as usize, half_width)?;
        let (env, _, k) = generate_with_origin_in_spanning(bx, p, seed, max_attempts)?;
        hand_out(env, out)?;
        if !attempts.is_null() {
            // SAFETY: checked non-null.
            unsafe { *attempts = k };
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn tw_env_load(
    path: *const c_char,
    out: *mut *mut TwEnvironment,
) -> TwStatus {
    guard(|| {
        let p = unsafe { path_arg(path) }?;
        hand_out(persist::load_environment(p)?, out)
    })
}

/// # Safety
/// `env` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tw_env_save(env: *const TwEnvironment, path: *const c_char) -> TwStatus {
    guard(|| {
        let e = unsafe { env_ref(env) }?;
        let p = unsafe { path_arg(path) }?;
        Ok(persist::save_environment(e, p)?)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `env` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tw_env_free(env: *mut TwEnvironment) {
    if !env.is_null() {
        // SAFETY: handle came from Box::into_raw in this library.
        drop(unsafe { Box::from_raw(env) });
    }
}

/// # Safety
/// `env` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tw_env_dim(env: *const TwEnvironment, out: *mut u32) -> TwStatus {
    guard(|| write_out(out, unsafe { env_ref(env) }?.dim() as u32))
}

/// # Safety
/// `env` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tw_env_open_count(env: *const TwEnvironment, out: *mut u64) -> TwStatus {
    guard(|| write_out(out, unsafe { env_ref(env) }?.open_count() as u64))
}

/// Whether a site is open; sites outside the box are closed.
///
/// # Safety
/// `env` must be a live handle, `coords` must hold `len` values and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn tw_env_is_open(
    env: *const TwEnvironment,
    coords: *const i32,
    len: usize,
    out: *mut bool,
) -> TwStatus {
    guard(|| {
        let e = unsafe { env_ref(env) }?;
        let s = unsafe { site_arg(e, coords, len) }?;
        write_out(out, e.is_open(&s))
    })
}

/// Probability that the walk started at `start` survives `horizon` steps.
///
/// # Safety
/// `env` must be a live handle, `start` must hold `len` values and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn tw_survival_probability(
    env: *const TwEnvironment,
    start: *const i32,
    len: usize,
    horizon: u64,
    out: *mut f64,
) -> TwStatus {
    guard(|| {
        let e = unsafe { env_ref(env) }?;
        let s = unsafe { site_arg(e, start, len) }?;
        let q = SurvivalQuery::new(horizon as usize);
        write_out(out, survival_probability(e, &s, &q)?)
    })
}

/// Principal eigenvalue of the walk restricted to the open component of
/// `center` within Euclidean distance `radius`. Zero at a closed site.
///
/// # Safety
/// `env` must be a live handle, `center` must hold `len` values and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn tw_principal_lambda(
    env: *const TwEnvironment,
    center: *const i32,
    len: usize,
    radius: f64,
    tol: f64,
    out: *mut f64,
) -> TwStatus {
    guard(|| {
        let e = unsafe { env_ref(env) }?;
        let c = unsafe { site_arg(e, center, len) }?;
        if !(radius >= 0.0) {
            return Err(Fail(TwStatus::Domain, "radius must be nonnegative".into()));
        }
        let comp = restricted_component(e, &c, radius);
        write_out(out, principal_eigen(e, &comp, tol)?.lambda)
    })
}

/// Length of the shortest open path from `u` to `v`, or -1 when they are not
/// connected.
///
/// # Safety
/// `env` must be a live handle, `u` and `v` must hold `len` values each and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tw_chemical_distance(
    env: *const TwEnvironment,
    u: *const i32,
    v: *const i32,
    len: usize,
    out: *mut i64,
) -> TwStatus {
    guard(|| {
        let e = unsafe { env_ref(env) }?;
        let a = unsafe { site_arg(e, u, len) }?;
        let b = unsafe { site_arg(e, v, len) }?;
        write_out(out, chemical_distance(e, &a, &b).map_or(-1, |d| d as i64))
    })
}
