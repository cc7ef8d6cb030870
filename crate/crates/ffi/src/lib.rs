//! C ABI over the `dppv` crate.
//!
//! Every function returns a [`DppvStatus`]; results come back through out
//! pointers. Objects are opaque handles released with their `_free`
//! function. On failure a message is kept per thread and can be read with
//! [`dppv_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dppv::metrics::{comfort_violation_count, max_abs_residual, tracking_rmse, RunReport};
use dppv::privacy::{generate_noise_trace, laplace_pdf, DpParams, NoiseTrace};
use dppv::scenario::ScenarioConfig;
use dppv::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DppvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    SolverGuard = 5,
    Internal = 6,
}

/// Series selectable in [`dppv_report_copy_series`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DppvSeries {
    Pv = 0,
    Noise = 1,
    NetPv = 2,
    Reference = 3,
    Aggregate = 4,
    Residual = 5,
}

impl DppvSeries {
    fn from_raw(v: u32) -> Option<Self> {
        Some(match v {
            0 => DppvSeries::Pv,
            1 => DppvSeries::Noise,
            2 => DppvSeries::NetPv,
            3 => DppvSeries::Reference,
            4 => DppvSeries::Aggregate,
            5 => DppvSeries::Residual,
            _ => return None,
        })
    }
}

/// Sampled Laplace noise.
pub struct DppvNoiseTrace(NoiseTrace);

/// Parsed scenario configuration.
pub struct DppvScenario(ScenarioConfig);

/// Result of one closed-loop run.
pub struct DppvReport {
    report: RunReport,
    band: (f64, f64),
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DppvStatus, message: impl Into<String>) -> DppvStatus {
    set_last_error(message.into());
    status
}

fn status_of(err: &Error) -> DppvStatus {
    match err {
        Error::InvalidParameter(_) | Error::DimensionMismatch(_) => DppvStatus::InvalidArgument,
        Error::Parse { .. } | Error::TraceFormat { .. } | Error::Config(_) => DppvStatus::Config,
        Error::MissingFile(_) | Error::Io { .. } => DppvStatus::Io,
        Error::SolverGuard { .. } => DppvStatus::SolverGuard,
    }
}

/// Runs `body`, turning errors and panics into a status plus message.
fn guard(body: impl FnOnce() -> Result<(), DppvStatus>) -> DppvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DppvStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(DppvStatus::Internal, "internal panic"),
    }
}

fn lift<T>(r: dppv::Result<T>) -> Result<T, DppvStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, DppvStatus> {
    p.as_mut()
        .ok_or_else(|| fail(DppvStatus::NullPointer, format!("{name} is null")))
}

unsafe fn in_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, DppvStatus> {
    p.as_ref()
        .ok_or_else(|| fail(DppvStatus::NullPointer, format!("{name} is null")))
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, buf_len: usize) -> Result<(), DppvStatus> {
    if buf.is_null() {
        return Err(fail(DppvStatus::NullPointer, "buffer is null"));
    }
    if buf_len < src.len() {
        return Err(fail(
            DppvStatus::InvalidArgument,
            format!("buffer holds {buf_len} values, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn dppv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Laplace scale `sensitivity / epsilon`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn dppv_laplace_scale(epsilon: f64, sensitivity: f64, out: *mut f64) -> DppvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let params = lift(DpParams::new(epsilon, 0.0, sensitivity, 0))?;
        *out = params.scale();
        Ok(())
    })
}

/// Laplace(0, scale) density at `x`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn dppv_laplace_pdf(x: f64, scale: f64, out: *mut f64) -> DppvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = lift(laplace_pdf(x, scale))?;
        Ok(())
    })
}

/// Samples `length` noise values. Free the handle with
/// [`dppv_noise_trace_free`].
///
/// # Safety
/// `out` must be null or point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dppv_noise_trace_new(
    epsilon: f64,
    delta: f64,
    sensitivity: f64,
    seed: u64,
    length: usize,
    step_seconds: u32,
    out: *mut *mut DppvNoiseTrace,
) -> DppvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let params = lift(DpParams::new(epsilon, delta, sensitivity, seed))?;
        let trace = lift(generate_noise_trace(&params, length, step_seconds))?;
        *out = Box::into_raw(Box::new(DppvNoiseTrace(trace)));
        Ok(())
    })
}

/// # Safety
/// `trace` must come from [`dppv_noise_trace_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dppv_noise_trace_len(trace: *const DppvNoiseTrace, out: *mut usize) -> DppvStatus {
    guard(|| {
        let trace = in_ref(trace, "trace")?;
        *out_ref(out, "out")? = trace.0.len();
        Ok(())
    })
}

/// Copies the samples into `buf`, which must hold at least the trace length.
///
/// # Safety
/// `trace` must come from [`dppv_noise_trace_new`]; `buf` must be writable
/// for `buf_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dppv_noise_trace_copy(
    trace: *const DppvNoiseTrace,
    buf: *mut f64,
    buf_len: usize,
) -> DppvStatus {
    guard(|| copy_out(&in_ref(trace, "trace")?.0.values, buf, buf_len))
}

/// # Safety
/// `trace` must be null or come from [`dppv_noise_trace_new`] and not be
/// freed twice.
#[no_mangle]
pub unsafe extern "C" fn dppv_noise_trace_free(trace: *mut DppvNoiseTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Built-in default scenario.
///
/// # Safety
/// `out` must be null or point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dppv_scenario_default(out: *mut *mut DppvScenario) -> DppvStatus {
    guard(|| {
        *out_ref(out, "out")? = Box::into_raw(Box::new(DppvScenario(ScenarioConfig::default())));
        Ok(())
    })
}

/// Parses a scenario from NUL-terminated UTF-8 TOML. Relative trace paths
/// resolve against the process working directory.
///
/// # Safety
/// `toml` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dppv_scenario_from_toml(toml: *const c_char, out: *mut *mut DppvScenario) -> DppvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if toml.is_null() {
            return Err(fail(DppvStatus::NullPointer, "toml is null"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| fail(DppvStatus::InvalidArgument, format!("toml is not UTF-8: {e}")))?;
        let config = lift(ScenarioConfig::from_toml_str(text))?;
        *out = Box::into_raw(Box::new(DppvScenario(config)));
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a live handle, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn dppv_scenario_free(scenario: *mut DppvScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the closed loop in memory. Free the report with
/// [`dppv_report_free`].
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dppv_simulate(scenario: *const DppvScenario, out: *mut *mut DppvReport) -> DppvStatus {
    guard(|| {
        let config = &in_ref(scenario, "scenario")?.0;
        let out = out_ref(out, "out")?;
        let report = lift(dppv::simulate(config))?;
        *out = Box::into_raw(Box::new(DppvReport {
            report,
            band: (config.mpc.comfort_min, config.mpc.comfort_max),
        }));
        Ok(())
    })
}

/// Number of simulated steps.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dppv_report_len(report: *const DppvReport, out: *mut usize) -> DppvStatus {
    guard(|| {
        *out_ref(out, "out")? = in_ref(report, "report")?.report.len();
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dppv_report_n_buildings(report: *const DppvReport, out: *mut usize) -> DppvStatus {
    guard(|| {
        *out_ref(out, "out")? = in_ref(report, "report")?.report.temps.len();
        Ok(())
    })
}

/// Root-mean-square tracking residual, kW.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dppv_report_rmse(report: *const DppvReport, out: *mut f64) -> DppvStatus {
    guard(|| {
        *out_ref(out, "out")? = tracking_rmse(&in_ref(report, "report")?.report);
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dppv_report_max_abs_residual(report: *const DppvReport, out: *mut f64) -> DppvStatus {
    guard(|| {
        *out_ref(out, "out")? = max_abs_residual(&in_ref(report, "report")?.report);
        Ok(())
    })
}

/// Building-steps outside the comfort band.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dppv_report_comfort_violations(report: *const DppvReport, out: *mut usize) -> DppvStatus {
    guard(|| {
        let r = in_ref(report, "report")?;
        *out_ref(out, "out")? = comfort_violation_count(&r.report, r.band);
        Ok(())
    })
}

/// Steps where some unit had no comfort-feasible action.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dppv_report_infeasible_steps(report: *const DppvReport, out: *mut usize) -> DppvStatus {
    guard(|| {
        let r = &in_ref(report, "report")?.report;
        *out_ref(out, "out")? = r.infeasible.iter().filter(|&&f| f).count();
        Ok(())
    })
}

/// Copies one per-step series (length [`dppv_report_len`]) into `buf`.
/// `series` is a `DppvSeries` value.
///
/// # Safety
/// `report` must be a live handle; `buf` must be writable for `buf_len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn dppv_report_copy_series(
    report: *const DppvReport,
    series: u32,
    buf: *mut f64,
    buf_len: usize,
) -> DppvStatus {
    guard(|| {
        let r = &in_ref(report, "report")?.report;
        let series = DppvSeries::from_raw(series)
            .ok_or_else(|| fail(DppvStatus::InvalidArgument, format!("unknown series {series}")))?;
        let values = match series {
            DppvSeries::Pv => &r.pv_kw,
            DppvSeries::Noise => &r.noise_kw,
            DppvSeries::NetPv => &r.net_pv_kw,
            DppvSeries::Reference => &r.reference_kw,
            DppvSeries::Aggregate => &r.aggregate_kw,
            DppvSeries::Residual => &r.residual_kw,
        };
        copy_out(values, buf, buf_len)
    })
}

/// Copies the `len + 1` temperatures of one building into `buf`.
///
/// # Safety
/// `report` must be a live handle; `buf` must be writable for `buf_len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn dppv_report_copy_temperatures(
    report: *const DppvReport,
    building: usize,
    buf: *mut f64,
    buf_len: usize,
) -> DppvStatus {
    guard(|| {
        let r = &in_ref(report, "report")?.report;
        let temps = r.temps.get(building).ok_or_else(|| {
            fail(
                DppvStatus::InvalidArgument,
                format!("building {building} out of range ({} buildings)", r.temps.len()),
            )
        })?;
        copy_out(temps, buf, buf_len)
    })
}

/// # Safety
/// `report` must be null or a live handle, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn dppv_report_free(report: *mut DppvReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
