//! C ABI over `ncp-core`.
//!
//! Conventions:
//! * every fallible function returns an [`NcpStatus`]; on failure a message
//!   is available from [`ncp_last_error`] on the same thread;
//! * codes cross the boundary as arrays of 27 doubles in normalized `[0, 1]`
//!   coordinates, or 27 `uint32_t` in raw units (channels, block counts);
//! * handles are opaque and must be released with their `_free` function;
//! * panics never cross the boundary; they surface as `NCP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ncp::coding::{self, ArchCode, Head, InputGeometry, RawCode, CODE_DIM};
use ncp::netmodel::{self, FlopsTable};
use ncp::predictor::{LossTerm, Predictor};
use ncp::propagation::{self, PropagationConfig, Strategy};
use ncp::Error;

/// Result of every fallible call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or malformed.
    InvalidArgument = 2,
    /// The predictor or configuration cannot serve the request.
    Config = 3,
    /// A file could not be read or parsed.
    Io = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// Values for `head` arguments. Functions take a plain `int32_t` and reject
/// unknown values instead of trusting the caller with an enum.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcpHead {
    Classification = 0,
    Segmentation = 1,
}

/// Values for [`NcpConfig::strategy`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcpStrategy {
    Continuous = 0,
    WinnerTakesAll = 1,
}

/// Propagation settings; obtain defaults from [`ncp_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcpConfig {
    /// An `NcpStrategy` value.
    pub strategy: i32,
    /// Weight of the FLOPs term.
    pub lambda: f64,
    pub eta: f64,
    pub max_iters: u32,
    pub delta_acc: f64,
    pub delta_flops: f64,
    /// Non-zero: re-derive targets from the predictions every iteration.
    pub retarget: i32,
    pub tolerance: f64,
}

/// Loaded predictor.
pub struct NcpPredictor {
    inner: Predictor,
    names: Vec<CString>,
}

/// FLOPs lookup table for one head and input size.
pub struct NcpFlopsTable {
    inner: FlopsTable,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs removed"));
}

struct Fail(NcpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            _ if e.is_io() => NcpStatus::Io,
            Error::Config(_) => NcpStatus::Config,
            _ => NcpStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NcpStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(NcpStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status and a thread-local message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NcpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NcpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            NcpStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn code_arg(p: *const f64) -> Result<ArchCode, Fail> {
    let v = slice(p, CODE_DIM, "code")?;
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(invalid("normalized code values must lie in [0, 1]"));
    }
    Ok(ArchCode::from_slice(v)?)
}

unsafe fn raw_arg(p: *const u32) -> Result<RawCode, Fail> {
    let v = slice(p, CODE_DIM, "raw code")?;
    Ok(RawCode::new(v.try_into().expect("27 entries"))?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ncp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ncp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Length of an architecture code (27).
#[no_mangle]
pub extern "C" fn ncp_code_dim() -> usize {
    CODE_DIM
}

/// Maps 27 raw-unit values (within bounds, not necessarily on the grid) to
/// normalized coordinates.
///
/// # Safety
/// `raw` and `out` must point to 27 doubles.
#[no_mangle]
pub unsafe extern "C" fn ncp_normalize(raw: *const f64, out: *mut f64) -> NcpStatus {
    guard(|| {
        let code = coding::normalize(slice(raw, CODE_DIM, "raw")?)?;
        slice_mut(out, CODE_DIM, "out")?.copy_from_slice(code.as_slice());
        Ok(())
    })
}

/// Rounds a normalized code to the nearest grid point, in raw units.
///
/// # Safety
/// `code` must point to 27 doubles and `out_raw` to 27 `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn ncp_round(code: *const f64, out_raw: *mut u32) -> NcpStatus {
    guard(|| {
        let raw = coding::round_code(&code_arg(code)?);
        slice_mut(out_raw, CODE_DIM, "out_raw")?.copy_from_slice(raw.values());
        Ok(())
    })
}

/// Loads a predictor file. On success `*out` owns a new handle; on failure
/// it is set to null.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ncp_predictor_load(
    path: *const c_char,
    out: *mut *mut NcpPredictor,
) -> NcpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let inner = Predictor::load(path)?;
        let names = inner
            .metric_names()
            .iter()
            .map(|n| CString::new(n.replace('\0', " ")).expect("NULs removed"))
            .collect();
        *out = Box::into_raw(Box::new(NcpPredictor { inner, names }));
        Ok(())
    })
}

/// Releases a predictor; null is ignored.
///
/// # Safety
/// `p` must come from [`ncp_predictor_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ncp_predictor_free(p: *mut NcpPredictor) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Input length the predictor expects; 0 for null.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ncp_predictor_input_dim(p: *const NcpPredictor) -> usize {
    p.as_ref().map_or(0, |p| p.inner.input_dim())
}

/// Number of output metrics; 0 for null.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ncp_predictor_num_metrics(p: *const NcpPredictor) -> usize {
    p.as_ref().map_or(0, |p| p.names.len())
}

/// Name of metric `index`, owned by the handle; null when out of range.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ncp_predictor_metric_name(
    p: *const NcpPredictor,
    index: usize,
) -> *const c_char {
    p.as_ref()
        .and_then(|p| p.names.get(index))
        .map_or(ptr::null(), |n| n.as_ptr())
}

unsafe fn input_arg<'a>(p: &NcpPredictor, code: *const f64, len: usize) -> Result<&'a [f64], Fail> {
    if len != p.inner.input_dim() {
        return Err(invalid(format!(
            "code has {len} entries, predictor takes {}",
            p.inner.input_dim()
        )));
    }
    let v = slice(code, len, "code")?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("code contains a non-finite value"));
    }
    Ok(v)
}

/// Predicts every metric for one code; `out` receives `out_len` values,
/// which must equal the metric count.
///
/// # Safety
/// `code` must hold `len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ncp_predictor_predict(
    p: *const NcpPredictor,
    code: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> NcpStatus {
    guard(|| {
        let p = deref(p, "predictor")?;
        let code = input_arg(p, code, len)?;
        if out_len != p.names.len() {
            return Err(invalid(format!(
                "out has {out_len} slots for {} metrics",
                p.names.len()
            )));
        }
        slice_mut(out, out_len, "out")?.copy_from_slice(&p.inner.predict_values(code));
        Ok(())
    })
}

/// Loss `sum_k weights[k] * smoothL1(p_k - targets[k])` over all metrics
/// (a zero weight drops a metric) and its gradient with respect to the
/// code. `targets` and `weights` hold one entry per metric; `out_grad`
/// receives `len` values; `out_loss` may be null.
///
/// # Safety
/// Array arguments must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ncp_predictor_input_gradient(
    p: *const NcpPredictor,
    code: *const f64,
    len: usize,
    targets: *const f64,
    weights: *const f64,
    num_metrics: usize,
    out_grad: *mut f64,
    out_loss: *mut f64,
) -> NcpStatus {
    guard(|| {
        let p = deref(p, "predictor")?;
        let code = input_arg(p, code, len)?;
        if num_metrics != p.names.len() {
            return Err(invalid(format!(
                "{num_metrics} targets for {} metrics",
                p.names.len()
            )));
        }
        let targets = slice(targets, num_metrics, "targets")?;
        let weights = slice(weights, num_metrics, "weights")?;
        let terms: Vec<LossTerm> = (0..num_metrics)
            .filter(|&k| weights[k] != 0.0)
            .map(|k| LossTerm {
                metric: k,
                target: targets[k],
                weight: weights[k],
            })
            .collect();
        let (loss, grad) = p.inner.input_gradient(code, &terms);
        slice_mut(out_grad, len, "out_grad")?.copy_from_slice(&grad);
        if !out_loss.is_null() {
            *out_loss = loss;
        }
        Ok(())
    })
}

fn geometry(height: u32, width: u32) -> InputGeometry {
    InputGeometry::new(height, width)
}

fn head(h: i32) -> Result<Head, Fail> {
    match h {
        x if x == NcpHead::Classification as i32 => Ok(Head::Classification),
        x if x == NcpHead::Segmentation as i32 => Ok(Head::Segmentation),
        _ => Err(invalid(format!("unknown head {h}"))),
    }
}

/// Creates a FLOPs table for a head and an input size (both multiples of 32).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ncp_flops_table_new(
    head_kind: i32,
    height: u32,
    width: u32,
    out: *mut *mut NcpFlopsTable,
) -> NcpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let inner = FlopsTable::new(head(head_kind)?, geometry(height, width))?;
        *out = Box::into_raw(Box::new(NcpFlopsTable { inner }));
        Ok(())
    })
}

/// Releases a table; null is ignored.
///
/// # Safety
/// `t` must come from [`ncp_flops_table_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ncp_flops_table_free(t: *mut NcpFlopsTable) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// GFLOPs of a normalized code after rounding.
///
/// # Safety
/// `code` must point to 27 doubles and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn ncp_flops_lookup(
    t: *const NcpFlopsTable,
    code: *const f64,
    out: *mut f64,
) -> NcpStatus {
    guard(|| {
        let t = deref(t, "table")?;
        let v = t.inner.lookup(&code_arg(code)?);
        *slice_mut(out, 1, "out")?.first_mut().expect("one slot") = v;
        Ok(())
    })
}

/// GFLOPs of a raw-unit code.
///
/// # Safety
/// `raw` must point to 27 `uint32_t` and `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn ncp_flops_lookup_raw(
    t: *const NcpFlopsTable,
    raw: *const u32,
    out: *mut f64,
) -> NcpStatus {
    guard(|| {
        let t = deref(t, "table")?;
        let v = t.inner.lookup_raw(&raw_arg(raw)?);
        *slice_mut(out, 1, "out")?.first_mut().expect("one slot") = v;
        Ok(())
    })
}

/// Full cost of a raw-unit code: GFLOPs (multiply-accumulates / 1e9) and
/// millions of parameters. Either output may be null.
///
/// # Safety
/// `raw` must point to 27 `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn ncp_cost(
    head_kind: i32,
    height: u32,
    width: u32,
    raw: *const u32,
    out_gflops: *mut f64,
    out_mparams: *mut f64,
) -> NcpStatus {
    guard(|| {
        let spec = coding::decode_raw(&raw_arg(raw)?, head(head_kind)?, geometry(height, width));
        let report = netmodel::cost(&spec)?;
        if !out_gflops.is_null() {
            *out_gflops = report.flops;
        }
        if !out_mparams.is_null() {
            *out_mparams = report.params;
        }
        Ok(())
    })
}

/// Default propagation settings: continuous, lambda 0.5, eta 3, 70 iterations.
#[no_mangle]
pub extern "C" fn ncp_config_default() -> NcpConfig {
    let d = PropagationConfig::default();
    NcpConfig {
        strategy: NcpStrategy::Continuous as i32,
        lambda: d.lambda,
        eta: d.eta,
        max_iters: d.max_iters as u32,
        delta_acc: d.delta_acc,
        delta_flops: d.delta_flops,
        retarget: d.retarget as i32,
        tolerance: d.tolerance,
    }
}

fn config(c: &NcpConfig) -> Result<PropagationConfig, Fail> {
    let strategy = match c.strategy {
        x if x == NcpStrategy::Continuous as i32 => Strategy::Continuous,
        x if x == NcpStrategy::WinnerTakesAll as i32 => Strategy::WinnerTakesAll,
        other => return Err(invalid(format!("unknown strategy {other}"))),
    };
    Ok(PropagationConfig {
        strategy,
        lambda: c.lambda,
        eta: c.eta,
        max_iters: c.max_iters as usize,
        delta_acc: c.delta_acc,
        delta_flops: c.delta_flops,
        retarget: c.retarget != 0,
        tolerance: c.tolerance,
        ..Default::default()
    })
}

/// Runs propagation from the normalized code `init`. The predictor needs
/// `acc` and (when lambda > 0) `flops` heads. Winner-takes-all requires
/// `table`; continuous search ignores it. `out_code` receives the final
/// normalized code; `out_raw` (27 `uint32_t`) and `out_iterations` may be
/// null. A null `cfg` uses the defaults.
///
/// # Safety
/// Pointers must be null where allowed or point to the stated storage.
#[no_mangle]
pub unsafe extern "C" fn ncp_propagate(
    p: *const NcpPredictor,
    table: *const NcpFlopsTable,
    cfg: *const NcpConfig,
    init: *const f64,
    out_code: *mut f64,
    out_raw: *mut u32,
    out_iterations: *mut usize,
) -> NcpStatus {
    guard(|| {
        let p = deref(p, "predictor")?;
        let cfg = config(cfg.as_ref().unwrap_or(&ncp_config_default()))?;
        let init = code_arg(init)?;
        let out_code = slice_mut(out_code, CODE_DIM, "out_code")?;
        let table = table.as_ref().map(|t| &t.inner);
        let (code, trace) =
            propagation::propagate_multitask(&[&p.inner], None, &init, &cfg, table)?;
        out_code.copy_from_slice(code.as_slice());
        if !out_raw.is_null() {
            slice_mut(out_raw, CODE_DIM, "out_raw")?
                .copy_from_slice(coding::round_code(&code).values());
        }
        if !out_iterations.is_null() {
            *out_iterations = trace.iterations();
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, NcpStatus::Panic);
        let msg = unsafe { CStr::from_ptr(ncp_last_error()) }
            .to_str()
            .unwrap();
        assert_eq!(msg, "panic: boom");
    }

    #[test]
    fn error_kinds_map_to_status() {
        assert_eq!(Fail::from(Error::Config("x".into())).0, NcpStatus::Config);
        assert_eq!(
            Fail::from(Error::Validation("x".into())).0,
            NcpStatus::InvalidArgument
        );
        let io = Error::Corrupt {
            path: "f".into(),
            detail: "d".into(),
        };
        assert_eq!(Fail::from(io).0, NcpStatus::Io);
    }

    #[test]
    fn config_round_trips_defaults() {
        assert_eq!(
            config(&ncp_config_default()).ok(),
            Some(PropagationConfig::default())
        );
        let bad = NcpConfig {
            strategy: 9,
            ..ncp_config_default()
        };
        assert!(config(&bad).is_err());
    }
}
