//! C ABI over the scoring primitives of `reward-lab`.
//!
//! Every fallible function returns an [`RlStatus`]; on failure a message is
//! available from [`rl_last_error`] on the same thread until the next call.
//! Output pointers are written only on success. Specs are opaque handles
//! owned by the caller and released with [`rl_reward_spec_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use reward_lab::grpo::{group_advantages, GrpoError};
use reward_lab::metrics::{main_score, plcc, srocc, MetricsError, PairedSeries};
use reward_lab::reward::{
    accuracy_reward, composite_reward, derive_params, parse_response, RewardError, RewardKind,
    RewardSpec,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// A spec parameter (r_min, d_0, lambda) or the kind is out of range.
    InvalidSpec = 3,
    /// Ground truth outside [1, 5] or a non-finite prediction.
    InvalidScore = 4,
    /// Too few values, mismatched lengths, non-finite or constant input.
    InvalidSeries = 5,
    /// A Rust panic was caught at the boundary; this is a bug.
    Internal = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlRewardKind {
    L1 = 0,
    L2 = 1,
    Laplacian = 2,
    Gaussian = 3,
}

impl RlRewardKind {
    // enums arrive from C as plain integers; matching on an invalid
    // discriminant would be undefined, so decode explicitly
    fn decode(raw: u32) -> Option<RewardKind> {
        Some(match raw {
            0 => RewardKind::L1,
            1 => RewardKind::L2,
            2 => RewardKind::Laplacian,
            3 => RewardKind::Gaussian,
            _ => return None,
        })
    }

    fn encode(kind: RewardKind) -> Self {
        match kind {
            RewardKind::L1 => RlRewardKind::L1,
            RewardKind::L2 => RlRewardKind::L2,
            RewardKind::Laplacian => RlRewardKind::Laplacian,
            RewardKind::Gaussian => RlRewardKind::Gaussian,
        }
    }
}

/// Opaque reward configuration.
pub struct RlRewardSpec {
    inner: RewardSpec,
}

/// Decomposed composite reward. `parsed_score` is meaningful only when
/// `format_ok` is true.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlRewardBreakdown {
    pub format_ok: bool,
    pub parsed_score: f64,
    pub r_acc: f64,
    pub r_fmt: f64,
    pub r_total: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlCorrelation {
    pub plcc: f64,
    pub srocc: f64,
    pub main_score: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    // interior NULs cannot cross the boundary
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(RlStatus, String);

impl From<RewardError> for Failure {
    fn from(e: RewardError) -> Self {
        let status = match e {
            RewardError::GroundTruthRange(_) | RewardError::NonFinitePrediction(_) => RlStatus::InvalidScore,
            _ => RlStatus::InvalidSpec,
        };
        Failure(status, e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure(RlStatus::InvalidSeries, e.to_string())
    }
}

impl From<GrpoError> for Failure {
    fn from(e: GrpoError) -> Self {
        Failure(RlStatus::InvalidSeries, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RlStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RlStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RlStatus::Internal
        }
    }
}

unsafe fn spec_ref<'a>(spec: *const RlRewardSpec) -> Result<&'a RewardSpec, Failure> {
    spec.as_ref().map(|s| &s.inner).ok_or_else(|| null("spec"))
}

unsafe fn out_mut<'a, T>(out: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    out.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| Failure(RlStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn rl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Static NUL-terminated version string.
#[no_mangle]
pub extern "C" fn rl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Validates and allocates a spec. `kind` is an `RlRewardKind` value.
/// Free with `rl_reward_spec_free`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn rl_reward_spec_new(
    kind: u32,
    r_min: f64,
    d_0: f64,
    lambda: f64,
    out: *mut *mut RlRewardSpec,
) -> RlStatus {
    guard(|| {
        let out = out_mut(out, "out")?;
        let kind = RlRewardKind::decode(kind)
            .ok_or_else(|| Failure(RlStatus::InvalidSpec, format!("unknown reward kind {kind}")))?;
        let inner = RewardSpec {
            kind,
            r_min,
            d_0,
            lambda,
            normalize_linear_error: false,
        };
        inner.validate()?;
        *out = Box::into_raw(Box::new(RlRewardSpec { inner }));
        Ok(())
    })
}

/// Allocates the default spec (l1, r_min 0.05, d_0 1, lambda 1).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn rl_reward_spec_default(out: *mut *mut RlRewardSpec) -> RlStatus {
    guard(|| {
        let out = out_mut(out, "out")?;
        *out = Box::into_raw(Box::new(RlRewardSpec {
            inner: RewardSpec::default(),
        }));
        Ok(())
    })
}

/// Releases a spec. NULL is a no-op.
///
/// # Safety
/// `spec` must come from `rl_reward_spec_new`/`_default` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rl_reward_spec_free(spec: *mut RlRewardSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// # Safety
/// `spec` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_reward_spec_kind(spec: *const RlRewardSpec, out: *mut RlRewardKind) -> RlStatus {
    guard(|| {
        let spec = spec_ref(spec)?;
        *out_mut(out, "out")? = RlRewardKind::encode(spec.kind);
        Ok(())
    })
}

/// Closed-form shape parameter: alpha for l1/l2, tau for laplacian, sigma
/// for gaussian.
///
/// # Safety
/// `spec` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_derive_param(spec: *const RlRewardSpec, out: *mut f64) -> RlStatus {
    guard(|| {
        let spec = spec_ref(spec)?;
        let out = out_mut(out, "out")?;
        *out = derive_params(spec)?.value();
        Ok(())
    })
}

/// Shaped accuracy reward in `[r_min, 1]`.
///
/// # Safety
/// `spec` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_accuracy_reward(
    spec: *const RlRewardSpec,
    s_pred: f64,
    s_gt: f64,
    out: *mut f64,
) -> RlStatus {
    guard(|| {
        let spec = spec_ref(spec)?;
        let out = out_mut(out, "out")?;
        *out = accuracy_reward(s_pred, s_gt, spec)?;
        Ok(())
    })
}

/// Parses a think/answer response. `score` is written only when the
/// format is valid.
///
/// # Safety
/// `text` must be a NUL-terminated string; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_parse_response(
    text: *const c_char,
    format_ok: *mut bool,
    score: *mut f64,
) -> RlStatus {
    guard(|| {
        let text = c_str(text, "text")?;
        let format_ok = out_mut(format_ok, "format_ok")?;
        let score = out_mut(score, "score")?;
        let parsed = parse_response(text);
        *format_ok = parsed.format_ok;
        if let Some(s) = parsed.score {
            *score = s;
        }
        Ok(())
    })
}

/// Full composite reward for one response.
///
/// # Safety
/// `spec` must be a live handle, `response` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rl_composite_reward(
    spec: *const RlRewardSpec,
    response: *const c_char,
    s_gt: f64,
    out: *mut RlRewardBreakdown,
) -> RlStatus {
    guard(|| {
        let spec = spec_ref(spec)?;
        let response = c_str(response, "response")?;
        let out = out_mut(out, "out")?;
        let b = composite_reward(response, s_gt, spec)?;
        *out = RlRewardBreakdown {
            format_ok: b.parsed.format_ok,
            parsed_score: b.parsed.score.unwrap_or(f64::NAN),
            r_acc: b.r_acc,
            r_fmt: b.r_fmt,
            r_total: b.r_total,
        };
        Ok(())
    })
}

/// PLCC, SROCC and their mean over `n` paired values.
///
/// # Safety
/// `pred` and `gt` must each point to `n` readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rl_correlation(
    pred: *const f64,
    gt: *const f64,
    n: usize,
    out: *mut RlCorrelation,
) -> RlStatus {
    guard(|| {
        let pred = slice(pred, n, "pred")?;
        let gt = slice(gt, n, "gt")?;
        let out = out_mut(out, "out")?;
        let series = PairedSeries::new(pred.to_vec(), gt.to_vec())?;
        let (p, s) = (plcc(&series)?, srocc(&series)?);
        *out = RlCorrelation {
            plcc: p,
            srocc: s,
            main_score: main_score(p, s),
        };
        Ok(())
    })
}

/// Group-standardized advantages; `out` receives `n` values. A flat group
/// yields zeros.
///
/// # Safety
/// `rewards` must point to `n` readable doubles and `out` to `n` writable ones.
#[no_mangle]
pub unsafe extern "C" fn rl_group_advantages(rewards: *const f64, n: usize, out: *mut f64) -> RlStatus {
    guard(|| {
        let rewards = slice(rewards, n, "rewards")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let adv = group_advantages(rewards)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&adv);
        Ok(())
    })
}
