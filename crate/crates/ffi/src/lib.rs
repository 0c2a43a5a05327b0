//! C ABI over `subcycle`.
//!
//! Objects are opaque handles created by `*_new`/`*_load` style calls and
//! released with the matching `*_free`. Every fallible call returns an
//! [`ScStatus`]; on failure a description is kept per thread and can be read
//! with [`sc_last_error_message`]. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use subcycle::clock::{ClockConfig, DelaySpec};
use subcycle::config::{ConfigError, ExperimentConfig};
use subcycle::dacsim::{max_edge_error, measure_edges, render, DEFAULT_EDGE_THRESHOLD};
use subcycle::sequencer::{compile, CompiledProgram};
use subcycle::specfit::{fit_pipeline, FitReport};
use subcycle::spinmodel::{px_analytic, CpmgTrace, FieldConfig, HyperfinePair};
use subcycle::waveform::WaveformBank;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Sequence = 4,
    Render = 5,
    Model = 6,
    Fit = 7,
    Io = 8,
    OutOfRange = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScSpinStatus {
    Fitted = 0,
    Rejected = 1,
    LinearOnly = 2,
}

/// One row of a fit report. Frequencies in kHz.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScSpinEstimate {
    pub a_khz: f64,
    pub a_err_khz: f64,
    pub b_khz: f64,
    pub b_err_khz: f64,
    pub linear_a_khz: f64,
    pub chi2_red: f64,
    pub windows_used: u32,
    pub status: ScSpinStatus,
}

pub struct ScClock(ClockConfig);

pub struct ScExperiment(ExperimentConfig);

pub struct ScProgram {
    compiled: CompiledProgram,
    banks: Vec<WaveformBank>,
}

pub struct ScTrace(CpmgTrace);

pub struct ScFitReport(FitReport);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

struct Failure(ScStatus, String);

type Res<T> = Result<T, Failure>;

fn fail<T>(status: ScStatus, msg: impl Into<String>) -> Res<T> {
    Err(Failure(status, msg.into()))
}

fn config_failure(e: ConfigError) -> Failure {
    let status = match e {
        ConfigError::Io { .. } => ScStatus::Io,
        ConfigError::Model(_) => ScStatus::Model,
        _ => ScStatus::Config,
    };
    Failure(status, e.to_string())
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut v = e.borrow_mut();
        v.clear();
        v.extend(msg.bytes().filter(|&b| b != 0));
    });
}

fn guard(f: impl FnOnce() -> Res<()>) -> ScStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ScStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ScStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Res<&'a T> {
    // SAFETY: the caller hands us a pointer obtained from this library or null.
    match unsafe { p.as_ref() } {
        Some(r) => Ok(r),
        None => fail(ScStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Res<()> {
    if out.is_null() {
        return fail(ScStatus::NullPointer, format!("{what} is null"));
    }
    // SAFETY: non-null and, per the API contract, valid for writes.
    unsafe { out.write(value) };
    Ok(())
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Res<&'a str> {
    if p.is_null() {
        return fail(ScStatus::NullPointer, format!("{what} is null"));
    }
    // SAFETY: non-null, and the caller promises a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .or_else(|_| fail(ScStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `boxed` and is released exactly once.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the size needed including the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn sc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: `buf` holds at least `len > n` bytes.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len() + 1
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_clock_new(dac_rate_hz: u64, seq_rate_hz: u64, pulse_overhead_cycles: u32, out: *mut *mut ScClock) -> ScStatus {
    guard(|| {
        let c = ClockConfig::new(dac_rate_hz, seq_rate_hz, pulse_overhead_cycles)
            .or_else(|e| fail(ScStatus::InvalidArgument, e.to_string()))?;
        unsafe { put(out, boxed(ScClock(c)), "out") }
    })
}

/// # Safety
/// `clock` must be null or a handle from [`sc_clock_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sc_clock_free(clock: *mut ScClock) {
    unsafe { free(clock) }
}

/// Split a delay in DAC samples into sequencer cycles and a fine remainder.
///
/// # Safety
/// `clock` must be a live handle; `coarse` and `fine` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_clock_decompose(clock: *const ScClock, delay_samples: u64, coarse: *mut u64, fine: *mut u32) -> ScStatus {
    guard(|| {
        let c = unsafe { get(clock, "clock") }?;
        let s = c.0.decompose(delay_samples);
        if coarse.is_null() || fine.is_null() {
            return fail(ScStatus::NullPointer, "output pointer is null");
        }
        unsafe {
            put(coarse, s.coarse, "coarse")?;
            put(fine, s.fine, "fine")
        }
    })
}

/// # Safety
/// `clock` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_clock_recompose(clock: *const ScClock, coarse: u64, fine: u32, out: *mut u64) -> ScStatus {
    guard(|| {
        let c = unsafe { get(clock, "clock") }?;
        let spec = DelaySpec { total_samples: 0, coarse, fine };
        let d = c.0.recompose(&spec).or_else(|e| fail(ScStatus::InvalidArgument, e.to_string()))?;
        unsafe { put(out, d, "out") }
    })
}

/// Load an experiment config file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_experiment_load(path: *const c_char, out: *mut *mut ScExperiment) -> ScStatus {
    guard(|| {
        let p = unsafe { string(path, "path") }?;
        let cfg = ExperimentConfig::load(Path::new(p)).map_err(config_failure)?;
        unsafe { put(out, boxed(ScExperiment(cfg)), "out") }
    })
}

/// Parse an experiment config from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_experiment_parse(text: *const c_char, out: *mut *mut ScExperiment) -> ScStatus {
    guard(|| {
        let t = unsafe { string(text, "text") }?;
        let cfg = ExperimentConfig::from_toml(t).map_err(config_failure)?;
        unsafe { put(out, boxed(ScExperiment(cfg)), "out") }
    })
}

/// # Safety
/// `exp` must be null or a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn sc_experiment_free(exp: *mut ScExperiment) {
    unsafe { free(exp) }
}

/// Number of sweep points.
///
/// # Safety
/// `exp` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_experiment_point_count(exp: *const ScExperiment, out: *mut usize) -> ScStatus {
    guard(|| {
        let e = unsafe { get(exp, "experiment") }?;
        let n = e.0.sequence().and_then(|s| s.sweep.samples(&e.0.clock)).map_err(config_failure)?.len();
        unsafe { put(out, n, "out") }
    })
}

/// Build and compile sweep point `index`.
///
/// # Safety
/// `exp` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_experiment_compile(exp: *const ScExperiment, index: usize, out: *mut *mut ScProgram) -> ScStatus {
    guard(|| {
        let e = unsafe { get(exp, "experiment") }?;
        let mut programs = e.0.programs().map_err(config_failure)?;
        if index >= programs.len() {
            return fail(ScStatus::OutOfRange, format!("point {index} of {}", programs.len()));
        }
        let (_, prog) = programs.swap_remove(index);
        let (layout, banks) = e.0.channel(&prog).map_err(config_failure)?;
        let compiled = compile(&prog, &layout).or_else(|err| fail(ScStatus::Sequence, err.to_string()))?;
        unsafe { put(out, boxed(ScProgram { compiled, banks }), "out") }
    })
}

/// Compile, render and measure every sweep point; `max_error` receives the
/// largest |measured - predicted| pulse start in samples.
///
/// # Safety
/// `exp` must be a live handle; `max_error` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_experiment_verify(exp: *const ScExperiment, max_error: *mut u64) -> ScStatus {
    guard(|| {
        let e = unsafe { get(exp, "experiment") }?;
        let threshold = DEFAULT_EDGE_THRESHOLD * e.0.pulses.amplitude;
        let mut worst = 0;
        for (_, prog) in e.0.programs().map_err(config_failure)? {
            let (layout, banks) = e.0.channel(&prog).map_err(config_failure)?;
            let c = compile(&prog, &layout).or_else(|err| fail(ScStatus::Sequence, err.to_string()))?;
            if c.predicted_edges.is_empty() {
                continue;
            }
            let stream = render(&c, &banks).or_else(|err| fail(ScStatus::Render, err.to_string()))?;
            let m = measure_edges(&stream, threshold).or_else(|err| fail(ScStatus::Render, err.to_string()))?;
            worst = worst.max(max_edge_error(&c.predicted_edges, &m.measured_starts).map_or(u64::MAX, |x| x));
        }
        unsafe { put(max_error, worst, "max_error") }
    })
}

/// # Safety
/// `prog` must be null or a live program handle.
#[no_mangle]
pub unsafe extern "C" fn sc_program_free(prog: *mut ScProgram) {
    unsafe { free(prog) }
}

/// Copy up to `len` predicted pulse starts into `buf`; `count` receives the
/// total number available.
///
/// # Safety
/// `prog` must be a live handle; `buf` null or valid for `len` writes;
/// `count` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_program_predicted_edges(prog: *const ScProgram, buf: *mut u64, len: usize, count: *mut usize) -> ScStatus {
    guard(|| {
        let p = unsafe { get(prog, "program") }?;
        unsafe { copy_out(&p.compiled.predicted_edges, buf, len, count) }
    })
}

/// Render the program and copy up to `len` measured pulse starts into `buf`.
///
/// # Safety
/// As for [`sc_program_predicted_edges`].
#[no_mangle]
pub unsafe extern "C" fn sc_program_measured_edges(
    prog: *const ScProgram,
    threshold: f64,
    buf: *mut u64,
    len: usize,
    count: *mut usize,
) -> ScStatus {
    guard(|| {
        let p = unsafe { get(prog, "program") }?;
        let stream = render(&p.compiled, &p.banks).or_else(|e| fail(ScStatus::Render, e.to_string()))?;
        let m = measure_edges(&stream, threshold).or_else(|e| fail(ScStatus::Render, e.to_string()))?;
        unsafe { copy_out(&m.measured_starts, buf, len, count) }
    })
}

unsafe fn copy_out(src: &[u64], buf: *mut u64, len: usize, count: *mut usize) -> Res<()> {
    if !buf.is_null() {
        let n = src.len().min(len);
        // SAFETY: `buf` holds at least `len >= n` elements.
        unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, n) };
    }
    unsafe { put(count, src.len(), "count") }
}

/// Closed-form single-nucleus CPMG signal. Couplings in kHz, field in gauss.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_px_analytic(a_khz: f64, b_khz: f64, b_field_gauss: f64, tau_s: f64, n_pulses: u32, out: *mut f64) -> ScStatus {
    guard(|| {
        let field = FieldConfig::new(b_field_gauss).or_else(|e| fail(ScStatus::InvalidArgument, e.to_string()))?;
        let p = px_analytic(&HyperfinePair::from_khz(a_khz, b_khz), &field, tau_s, n_pulses)
            .or_else(|e| fail(ScStatus::InvalidArgument, e.to_string()))?;
        unsafe { put(out, p, "out") }
    })
}

/// Synthetic trace for the experiment's sweep; `seed` replaces `noise.seed`.
///
/// # Safety
/// `exp` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_trace_simulate(exp: *const ScExperiment, seed: u64, out: *mut *mut ScTrace) -> ScStatus {
    guard(|| {
        let e = unsafe { get(exp, "experiment") }?;
        let t = e.0.simulate(Some(seed)).map_err(config_failure)?;
        unsafe { put(out, boxed(ScTrace(t)), "out") }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_trace_read_csv(path: *const c_char, out: *mut *mut ScTrace) -> ScStatus {
    guard(|| {
        let p = unsafe { string(path, "path") }?;
        let f = std::fs::File::open(p).or_else(|e| fail(ScStatus::Io, format!("{p}: {e}")))?;
        let t = CpmgTrace::read_csv(std::io::BufReader::new(f)).or_else(|e| fail(ScStatus::InvalidArgument, format!("{p}: {e}")))?;
        unsafe { put(out, boxed(ScTrace(t)), "out") }
    })
}

/// # Safety
/// `trace` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sc_trace_write_csv(trace: *const ScTrace, path: *const c_char) -> ScStatus {
    guard(|| {
        let t = unsafe { get(trace, "trace") }?;
        let p = unsafe { string(path, "path") }?;
        let f = std::fs::File::create(p).or_else(|e| fail(ScStatus::Io, format!("{p}: {e}")))?;
        t.0.write_csv(std::io::BufWriter::new(f)).or_else(|e| fail(ScStatus::Io, e.to_string()))
    })
}

/// # Safety
/// `trace` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_trace_len(trace: *const ScTrace, out: *mut usize) -> ScStatus {
    guard(|| {
        let t = unsafe { get(trace, "trace") }?;
        unsafe { put(out, t.0.len(), "out") }
    })
}

/// # Safety
/// `trace` must be a live handle; the three outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_trace_point(trace: *const ScTrace, index: usize, tau_s: *mut f64, px: *mut f64, px_err: *mut f64) -> ScStatus {
    guard(|| {
        let t = unsafe { get(trace, "trace") }?;
        let Some(p) = t.0.points.get(index) else {
            return fail(ScStatus::OutOfRange, format!("point {index} of {}", t.0.len()));
        };
        if tau_s.is_null() || px.is_null() || px_err.is_null() {
            return fail(ScStatus::NullPointer, "output pointer is null");
        }
        unsafe {
            put(tau_s, p.tau_s, "tau_s")?;
            put(px, p.px_est, "px")?;
            put(px_err, p.px_err, "px_err")
        }
    })
}

/// # Safety
/// `trace` must be null or a live trace handle.
#[no_mangle]
pub unsafe extern "C" fn sc_trace_free(trace: *mut ScTrace) {
    unsafe { free(trace) }
}

/// Run the fit pipeline with the experiment's field, pulse count and fit settings.
///
/// # Safety
/// `exp` and `trace` must be live handles; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_fit(exp: *const ScExperiment, trace: *const ScTrace, out: *mut *mut ScFitReport) -> ScStatus {
    guard(|| {
        let e = unsafe { get(exp, "experiment") }?;
        let t = unsafe { get(trace, "trace") }?;
        let n = e.0.n_pulses().map_err(config_failure)?;
        let field = e.0.system().and_then(|s| s.field()).map_err(config_failure)?;
        let cfg = e.0.fit_config().map_err(config_failure)?;
        let r = fit_pipeline(&t.0, &field, n, &cfg).or_else(|err| fail(ScStatus::Fit, err.to_string()))?;
        unsafe { put(out, boxed(ScFitReport(r)), "out") }
    })
}

/// # Safety
/// `report` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_spin_count(report: *const ScFitReport, out: *mut usize) -> ScStatus {
    guard(|| {
        let r = unsafe { get(report, "report") }?;
        unsafe { put(out, r.0.spins.len(), "out") }
    })
}

/// # Safety
/// `report` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_spin(report: *const ScFitReport, index: usize, out: *mut ScSpinEstimate) -> ScStatus {
    guard(|| {
        let r = unsafe { get(report, "report") }?;
        let Some(s) = r.0.spins.get(index) else {
            return fail(ScStatus::OutOfRange, format!("spin {index} of {}", r.0.spins.len()));
        };
        let status = match s.status {
            subcycle::specfit::pipeline::SpinStatus::Fitted => ScSpinStatus::Fitted,
            subcycle::specfit::pipeline::SpinStatus::Rejected => ScSpinStatus::Rejected,
            subcycle::specfit::pipeline::SpinStatus::LinearOnly => ScSpinStatus::LinearOnly,
        };
        let est = ScSpinEstimate {
            a_khz: s.a_khz,
            a_err_khz: s.a_err_khz,
            b_khz: s.b_khz,
            b_err_khz: s.b_err_khz,
            linear_a_khz: s.linear_a_khz,
            chi2_red: s.chi2_red,
            windows_used: s.windows_used as u32,
            status,
        };
        unsafe { put(out, est, "out") }
    })
}

/// # Safety
/// `report` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_free(report: *mut ScFitReport) {
    unsafe { free(report) }
}
