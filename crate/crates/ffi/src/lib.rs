//! C ABI over the LUCBRank engine and the Bernoulli math kernels.
//!
//! Every fallible entry point returns a [`LucbStatus`]; on failure a message
//! is available from [`lucb_last_error_message`] on the same thread. Engines
//! are opaque handles created by [`lucb_engine_new`] or
//! [`lucb_engine_from_json`] and released with [`lucb_engine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use lucbrank::{ClusterSpec, EngineError, EngineState, ExplorationSchedule, MathError, SpecError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LucbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A numeric argument lies outside the function's domain.
    Domain = 3,
    /// An output buffer is too small.
    BufferTooSmall = 4,
    Serialization = 5,
    /// A panic was caught at the boundary. The handle involved should be freed.
    Panic = 6,
}

/// Opaque engine handle.
pub struct LucbEngine {
    state: EngineState,
}

struct Failure(LucbStatus, String);

impl From<MathError> for Failure {
    fn from(e: MathError) -> Self {
        Failure(LucbStatus::Domain, e.to_string())
    }
}

impl From<SpecError> for Failure {
    fn from(e: SpecError) -> Self {
        Failure(LucbStatus::InvalidArgument, e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match e {
            EngineError::Corrupt(_) => LucbStatus::Serialization,
            _ => LucbStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LucbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LucbStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("panic: {message}"));
            LucbStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(LucbStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` must be valid for `len` reads unless `len` is 0.
unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or point to a live engine.
unsafe fn engine<'a>(ptr: *const LucbEngine) -> Result<&'a LucbEngine, Failure> {
    ptr.as_ref().ok_or_else(|| null("engine"))
}

/// # Safety
/// `out` must be null or valid for one write.
unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn lucb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates an engine from cluster boundaries and one initial reward per arm.
///
/// `boundaries` lists cumulative cluster sizes; the final entry (the number
/// of arms) may be omitted. Rewards must lie in `[0, 1]`.
///
/// # Safety
/// `boundaries` and `first_rewards` must be valid for the given lengths and
/// `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lucb_engine_new(
    boundaries: *const usize,
    n_boundaries: usize,
    epsilon: f64,
    delta: f64,
    first_rewards: *const f64,
    n_arms: usize,
    out: *mut *mut LucbEngine,
) -> LucbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mut b = input(boundaries, n_boundaries, "boundaries")?.to_vec();
        let rewards = input(first_rewards, n_arms, "first_rewards")?;
        if b.last().is_some_and(|&last| last < n_arms) {
            b.push(n_arms);
        }
        let spec = ClusterSpec::new(b)?;
        spec.check_arms(n_arms)?;
        let schedule = ExplorationSchedule::with_delta(delta, n_arms, spec.num_clusters())?;
        let state = EngineState::init(spec, epsilon, schedule, rewards)?;
        write(out, Box::into_raw(Box::new(LucbEngine { state })))
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lucb_engine_free(engine: *mut LucbEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Arms to sample this round, in the order rewards are expected by
/// [`lucb_engine_apply_round`]. `boundaries_out` may be null; otherwise it
/// receives the 0-based inner boundary each sample serves.
///
/// Writes the request count to `len_out`. If `capacity` is smaller, nothing
/// else is written and `BufferTooSmall` is returned; pass a capacity of 0 to
/// query the length.
///
/// # Safety
/// Output buffers must be valid for `capacity` writes, `len_out` for one.
#[no_mangle]
pub unsafe extern "C" fn lucb_engine_round_requests(
    engine: *const LucbEngine,
    arms_out: *mut usize,
    boundaries_out: *mut usize,
    capacity: usize,
    len_out: *mut usize,
) -> LucbStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let requests = e.state.round_requests();
        write(len_out, requests.len())?;
        if capacity < requests.len() {
            return Err(Failure(
                LucbStatus::BufferTooSmall,
                format!("need room for {} requests, got {capacity}", requests.len()),
            ));
        }
        if requests.is_empty() {
            return Ok(());
        }
        if arms_out.is_null() {
            return Err(null("arms_out"));
        }
        for (i, r) in requests.iter().enumerate() {
            arms_out.add(i).write(r.arm);
            if !boundaries_out.is_null() {
                boundaries_out.add(i).write(r.boundary);
            }
        }
        Ok(())
    })
}

/// Feeds one reward per request of the current round.
///
/// # Safety
/// `rewards` must be valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn lucb_engine_apply_round(engine: *mut LucbEngine, rewards: *const f64, len: usize) -> LucbStatus {
    guard(|| {
        let e = engine.as_mut().ok_or_else(|| null("engine"))?;
        let r = input(rewards, len, "rewards")?;
        e.state.apply_round(r)?;
        Ok(())
    })
}

/// # Safety
/// `engine` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lucb_engine_is_done(engine: *const LucbEngine, out: *mut bool) -> LucbStatus {
    guard(|| write(out, self::engine(engine)?.state.is_done()))
}

/// # Safety
/// `engine` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lucb_engine_num_arms(engine: *const LucbEngine, out: *mut usize) -> LucbStatus {
    guard(|| write(out, self::engine(engine)?.state.spec().num_arms()))
}

/// # Safety
/// `engine` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lucb_engine_total_samples(engine: *const LucbEngine, out: *mut u64) -> LucbStatus {
    guard(|| write(out, self::engine(engine)?.state.total_samples()))
}

/// Current 1-based rank of each arm (by empirical mean). Needs `capacity`
/// of at least the number of arms.
///
/// # Safety
/// `ranks_out` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn lucb_engine_ranks(engine: *const LucbEngine, ranks_out: *mut usize, capacity: usize) -> LucbStatus {
    guard(|| {
        let ranking = self::engine(engine)?.state.ranking();
        copy_out(&ranking.ranks, ranks_out, capacity)
    })
}

/// Current 0-based cluster of each arm. Needs `capacity` of at least the
/// number of arms.
///
/// # Safety
/// `labels_out` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn lucb_engine_cluster_labels(
    engine: *const LucbEngine,
    labels_out: *mut usize,
    capacity: usize,
) -> LucbStatus {
    guard(|| {
        let labels = self::engine(engine)?.state.ranking().cluster_labels();
        copy_out(&labels, labels_out, capacity)
    })
}

unsafe fn copy_out(values: &[usize], out: *mut usize, capacity: usize) -> Result<(), Failure> {
    if capacity < values.len() {
        return Err(Failure(
            LucbStatus::BufferTooSmall,
            format!("need room for {} values, got {capacity}", values.len()),
        ));
    }
    if out.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Serializes the engine state as JSON. Free the string with
/// [`lucb_string_free`].
///
/// # Safety
/// `engine` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lucb_engine_to_json(engine: *const LucbEngine, out: *mut *mut c_char) -> LucbStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let text = serde_json::to_string(&e.state).map_err(|err| Failure(LucbStatus::Serialization, err.to_string()))?;
        let c = CString::new(text).map_err(|err| Failure(LucbStatus::Serialization, err.to_string()))?;
        write(out, c.into_raw())
    })
}

/// Restores an engine from [`lucb_engine_to_json`] output. The state is
/// checked for internal consistency.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lucb_engine_from_json(json: *const c_char, out: *mut *mut LucbEngine) -> LucbStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|err| Failure(LucbStatus::Serialization, err.to_string()))?;
        let state: EngineState =
            serde_json::from_str(text).map_err(|err| Failure(LucbStatus::Serialization, err.to_string()))?;
        state
            .validate()
            .map_err(|err| Failure(LucbStatus::Serialization, err.to_string()))?;
        write(out, Box::into_raw(Box::new(LucbEngine { state })))
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lucb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `d(x, y)` between Bernoulli distributions. Infinite divergences are
/// reported as `Domain`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lucb_kl_bernoulli(x: f64, y: f64, out: *mut f64) -> LucbStatus {
    guard(|| write(out, lucbrank::kl_bernoulli(x, y)?))
}

/// Largest `q >= p_hat` with `n d(p_hat, q) <= beta`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lucb_kl_ucb_upper(p_hat: f64, n: u64, beta: f64, out: *mut f64) -> LucbStatus {
    guard(|| write(out, lucbrank::kl_ucb_upper(p_hat, n, beta)?))
}

/// Smallest `q <= p_hat` with `n d(p_hat, q) <= beta`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lucb_kl_ucb_lower(p_hat: f64, n: u64, beta: f64, out: *mut f64) -> LucbStatus {
    guard(|| write(out, lucbrank::kl_ucb_lower(p_hat, n, beta)?))
}

/// Chernoff information between `Bernoulli(x)` and `Bernoulli(y)`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lucb_chernoff_information(x: f64, y: f64, out: *mut f64) -> LucbStatus {
    guard(|| write(out, lucbrank::chernoff_information(x, y)?))
}
