//! C ABI for the pulse-optimization toolkit.
//!
//! Conventions: handles are opaque pointers created and released by this
//! library; functions that can fail either return null (constructors) or a
//! `QfgStatus` code. The most recent failure message on the calling thread is
//! available through `qfg_last_error` until the next failing call. Strings
//! returned as `char*` are owned by the caller and must be released with
//! `qfg_string_free`; `const char*` results are borrowed and must not be
//! freed. No call blows through the boundary: panics are caught and reported
//! as `QFG_STATUS_PANICKED`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qfi_grape::config::RunConfig;
use qfi_grape::encoding::ControlGrid;
use qfi_grape::optimizer::{run_grape, run_grape_exp, run_hqc_grape, OptimizationTrace};
use qfi_grape::sensor::Sensor;

/// Outcome code for fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QfgStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Arguments were readable but invalid (wrong length, bad UTF-8, ...).
    InvalidArgument = 2,
    /// The underlying computation reported an error; see qfg_last_error.
    RuntimeError = 3,
    /// A panic was caught at the boundary; see qfg_last_error.
    Panicked = 4,
}

/// Opaque run configuration handle.
pub struct QfgConfig {
    inner: RunConfig,
}

/// Opaque optimization trace handle.
pub struct QfgTrace {
    inner: OptimizationTrace,
}

/// Opaque simulated-sensor handle.
pub struct QfgSensor {
    sensor: Sensor,
    geometry: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let stored = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error message unavailable").expect("no interior nul"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(stored));
}

fn guard<T>(fallback: T, body: impl FnOnce() -> Result<T, (QfgStatus, String)>) -> (QfgStatus, T) {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(value)) => (QfgStatus::Ok, value),
        Ok(Err((status, message))) => {
            set_last_error(&message);
            (status, fallback)
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".into());
            set_last_error(&message);
            (QfgStatus::Panicked, fallback)
        }
    }
}

fn runtime_err<E: std::fmt::Display>(e: E) -> (QfgStatus, String) {
    (QfgStatus::RuntimeError, e.to_string())
}

/// Message for the most recent failure on this thread, or null if none.
/// Borrowed; valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qfg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |s| s.as_ptr())
    })
}

/// Library version string. Borrowed; do not free.
#[no_mangle]
pub extern "C" fn qfg_version() -> *const c_char {
    const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Releases a string returned by this library as `char*`.
///
/// # Safety
/// `s` must be a pointer previously returned by a qfg function documented to
/// transfer ownership, or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The built-in two-qubit configuration with the full noise stack.
#[no_mangle]
pub extern "C" fn qfg_config_preset_paper_2q() -> *mut QfgConfig {
    let (_, handle) = guard(ptr::null_mut(), || {
        Ok(Box::into_raw(Box::new(QfgConfig {
            inner: RunConfig::paper_2q(),
        })))
    });
    handle
}

/// Parses a configuration from JSON. Returns null on error.
///
/// # Safety
/// `json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qfg_config_from_json(json: *const c_char) -> *mut QfgConfig {
    let (_, handle) = guard(ptr::null_mut(), || {
        if json.is_null() {
            return Err((QfgStatus::NullArgument, "json is null".into()));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (QfgStatus::InvalidArgument, format!("invalid UTF-8: {e}")))?;
        let inner = RunConfig::from_json(text).map_err(runtime_err)?;
        Ok(Box::into_raw(Box::new(QfgConfig { inner })))
    });
    handle
}

/// Serializes a configuration to JSON. Caller frees with qfg_string_free.
///
/// # Safety
/// `config` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_config_to_json(config: *const QfgConfig) -> *mut c_char {
    let (_, text) = guard(ptr::null_mut(), || {
        let config = config
            .as_ref()
            .ok_or((QfgStatus::NullArgument, "config is null".to_string()))?;
        let json = config.inner.to_json();
        CString::new(json)
            .map(CString::into_raw)
            .map_err(|e| (QfgStatus::RuntimeError, e.to_string()))
    });
    text
}

/// Sets the root seed used by every run on this configuration.
///
/// # Safety
/// `config` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_config_set_seed(config: *mut QfgConfig, seed: u64) -> QfgStatus {
    let (status, _) = guard((), || {
        let config = config
            .as_mut()
            .ok_or((QfgStatus::NullArgument, "config is null".to_string()))?;
        config.inner.optimizer.seed = seed;
        Ok(())
    });
    status
}

/// Sets how many sensor runs back each reported QFI statistic.
///
/// # Safety
/// `config` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_config_set_repeats(config: *mut QfgConfig, repeats: usize) -> QfgStatus {
    let (status, _) = guard((), || {
        let config = config
            .as_mut()
            .ok_or((QfgStatus::NullArgument, "config is null".to_string()))?;
        if repeats == 0 {
            return Err((QfgStatus::InvalidArgument, "repeats must be at least 1".into()));
        }
        config.inner.repeats = repeats;
        Ok(())
    });
    status
}

/// Releases a configuration handle.
///
/// # Safety
/// `config` must be a live handle from this library or null; it must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qfg_config_free(config: *mut QfgConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

unsafe fn run_mode(
    config: *const QfgConfig,
    run: impl FnOnce(&RunConfig) -> qfi_grape::Result<OptimizationTrace>,
) -> *mut QfgTrace {
    let (_, handle) = guard(ptr::null_mut(), || {
        let config = config
            .as_ref()
            .ok_or((QfgStatus::NullArgument, "config is null".to_string()))?;
        config.inner.validate().map_err(runtime_err)?;
        let inner = run(&config.inner).map_err(runtime_err)?;
        Ok(Box::into_raw(Box::new(QfgTrace { inner })))
    });
    handle
}

/// Ideal-model gradient ascent. Returns null on error.
///
/// # Safety
/// `config` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_run_grape(config: *const QfgConfig) -> *mut QfgTrace {
    run_mode(config, |cfg| run_grape(&cfg.problem()?, &cfg.optimizer))
}

/// Ideal-model optimization replayed on the configured noisy sensor.
/// Returns null on error.
///
/// # Safety
/// `config` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_run_grape_exp(config: *const QfgConfig) -> *mut QfgTrace {
    run_mode(config, |cfg| {
        let problem = cfg.problem()?;
        let source = run_grape(&problem, &cfg.optimizer)?;
        run_grape_exp(&problem, &cfg.noise, &source, cfg.optimizer.seed, cfg.repeats)
    })
}

/// Closed-loop optimization on the configured noisy sensor.
/// Returns null on error.
///
/// # Safety
/// `config` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_run_hqc_grape(config: *const QfgConfig) -> *mut QfgTrace {
    run_mode(config, |cfg| {
        run_hqc_grape(&cfg.problem()?, &cfg.noise, &cfg.optimizer, cfg.repeats)
    })
}

/// Number of trace rows (accepted and rejected, initial row included).
///
/// # Safety
/// `trace` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_trace_len(trace: *const QfgTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.rows.len())
}

/// Reported QFI of the final accepted controls; NaN for a null handle.
///
/// # Safety
/// `trace` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_trace_final_qfi(trace: *const QfgTrace) -> f64 {
    trace.as_ref().map_or(f64::NAN, |t| t.inner.final_qfi)
}

/// Copies the per-row reported QFI values into `out` (capacity `cap`).
/// Returns the number of values written.
///
/// # Safety
/// `trace` must be a live handle or null; `out` must point to at least `cap`
/// doubles unless `cap` is 0.
#[no_mangle]
pub unsafe extern "C" fn qfg_trace_qfi_series(
    trace: *const QfgTrace,
    out: *mut f64,
    cap: usize,
) -> usize {
    let Some(trace) = trace.as_ref() else {
        return 0;
    };
    if out.is_null() {
        return 0;
    }
    let n = trace.inner.rows.len().min(cap);
    for (i, row) in trace.inner.rows.iter().take(n).enumerate() {
        *out.add(i) = row.qfi;
    }
    n
}

/// Control-grid shape of the final controls.
///
/// # Safety
/// `trace` must be a live handle or null; `k_out`/`m_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn qfg_trace_controls_shape(
    trace: *const QfgTrace,
    k_out: *mut usize,
    m_out: *mut usize,
) -> QfgStatus {
    let Some(trace) = trace.as_ref() else {
        return QfgStatus::NullArgument;
    };
    if !k_out.is_null() {
        *k_out = trace.inner.final_controls.k();
    }
    if !m_out.is_null() {
        *m_out = trace.inner.final_controls.m();
    }
    QfgStatus::Ok
}

/// Copies the final control amplitudes row-major (line-by-line) into `out`.
/// Returns the number of values written (k*m when `cap` suffices).
///
/// # Safety
/// `trace` must be a live handle or null; `out` must point to at least `cap`
/// doubles unless `cap` is 0.
#[no_mangle]
pub unsafe extern "C" fn qfg_trace_final_controls(
    trace: *const QfgTrace,
    out: *mut f64,
    cap: usize,
) -> usize {
    let Some(trace) = trace.as_ref() else {
        return 0;
    };
    if out.is_null() {
        return 0;
    }
    let amps = trace.inner.final_controls.amplitudes();
    let n = amps.len().min(cap);
    ptr::copy_nonoverlapping(amps.as_ptr(), out, n);
    n
}

/// Releases a trace handle.
///
/// # Safety
/// `trace` must be a live handle from this library or null; it must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qfg_trace_free(trace: *mut QfgTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// A sensor over the configured system and noise model, with its own stream.
/// Returns null on error.
///
/// # Safety
/// `config` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_sensor_new(config: *const QfgConfig, seed: u64) -> *mut QfgSensor {
    let (_, handle) = guard(ptr::null_mut(), || {
        let config = config
            .as_ref()
            .ok_or((QfgStatus::NullArgument, "config is null".to_string()))?;
        let problem = config.inner.problem().map_err(runtime_err)?;
        let sensor_config = problem.sensor_config(&config.inner.noise).map_err(runtime_err)?;
        Ok(Box::into_raw(Box::new(QfgSensor {
            sensor: Sensor::new(sensor_config, seed),
            geometry: config.inner.clone(),
        })))
    });
    handle
}

/// One noisy evolution and measurement of the pulse given as `k*m` row-major
/// amplitudes; writes the normalized QFI estimate to `out_qfi`.
///
/// # Safety
/// `sensor` must be a live handle or null; `amplitudes` must point to `len`
/// doubles; `out_qfi` must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_sensor_measure_qfi(
    sensor: *mut QfgSensor,
    amplitudes: *const f64,
    len: usize,
    out_qfi: *mut f64,
) -> QfgStatus {
    let (status, value) = guard(f64::NAN, || {
        let handle = sensor
            .as_mut()
            .ok_or((QfgStatus::NullArgument, "sensor is null".to_string()))?;
        if amplitudes.is_null() {
            return Err((QfgStatus::NullArgument, "amplitudes is null".into()));
        }
        let k = handle.geometry.control_lines.len();
        let m = handle.geometry.slices;
        if len != k * m {
            return Err((
                QfgStatus::InvalidArgument,
                format!("expected {} amplitudes ({k}x{m}), got {len}", k * m),
            ));
        }
        let amps = std::slice::from_raw_parts(amplitudes, len).to_vec();
        let grid = ControlGrid::new(
            k,
            m,
            handle.geometry.total_time,
            handle.geometry.a_max,
            amps,
        )
        .map_err(runtime_err)?;
        let record = handle.sensor.measure_qfi(&grid).map_err(runtime_err)?;
        Ok(record.qfi_normalized)
    });
    if status == QfgStatus::Ok && !out_qfi.is_null() {
        *out_qfi = value;
    }
    status
}

/// Total sensor evolutions consumed so far.
///
/// # Safety
/// `sensor` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qfg_sensor_evolutions_used(sensor: *const QfgSensor) -> u64 {
    sensor.as_ref().map_or(0, |s| s.sensor.evolutions_used())
}

/// Releases a sensor handle.
///
/// # Safety
/// `sensor` must be a live handle from this library or null; it must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qfg_sensor_free(sensor: *mut QfgSensor) {
    if !sensor.is_null() {
        drop(Box::from_raw(sensor));
    }
}
