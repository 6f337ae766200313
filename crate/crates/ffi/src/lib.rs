//! C ABI over the `ness` library.
//!
//! Every fallible call returns a [`NessStatus`]; on failure the message is
//! available from [`ness_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new`-style calls and released by the matching
//! `*_free`. Matrices cross the boundary as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ness::adapter::{self, AdapterPair};
use ness::harness::{self, AccuracyMatrix, RunConfig, RunReport};
use ness::spectral::{self, CovarianceAccumulator};
use ness::tasks::{self, SuiteKind, SuiteSpec};
use ness::{Error, ErrorClass, Matrix};

/// Status codes; the nonzero error classes match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NessStatus {
    Ok = 0,
    Config = 2,
    Data = 3,
    Numeric = 4,
    NullPointer = 10,
    Internal = 11,
}

/// Streaming input covariance for one layer.
pub struct NessAccumulator(CovarianceAccumulator);

/// Frozen null basis `U` and its trainable factor `V`.
pub struct NessAdapter(AdapterPair);

/// Aggregated result of a multi-seed run.
pub struct NessReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: Error) -> NessStatus {
    let status = match e.class() {
        ErrorClass::Config => NessStatus::Config,
        ErrorClass::Data => NessStatus::Data,
        ErrorClass::Numeric => NessStatus::Numeric,
        ErrorClass::Internal => NessStatus::Internal,
    };
    let mut message = e.to_string();
    let mut source = std::error::Error::source(&e);
    while let Some(s) = source {
        message.push_str(": ");
        message.push_str(&s.to_string());
        source = s.source();
    }
    set_error(message);
    status
}

fn null(what: &str) -> NessStatus {
    set_error(format!("{what} is null"));
    NessStatus::NullPointer
}

fn guard(f: impl FnOnce() -> NessStatus) -> NessStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".into());
            NessStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, NessStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        NessStatus::Config
    })
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! try_ness {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return fail(e),
        }
    };
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ness_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ness_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ness_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ness_accumulator_new(dim: usize, out: *mut *mut NessAccumulator) -> NessStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let acc = try_ness!(CovarianceAccumulator::new(dim));
        *out = Box::into_raw(Box::new(NessAccumulator(acc)));
        NessStatus::Ok
    })
}

/// Adds `rows` samples of length `dim` (row-major).
///
/// # Safety
/// `data` must point to `rows * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn ness_accumulator_push(acc: *mut NessAccumulator, data: *const f64, rows: usize) -> NessStatus {
    guard(|| {
        let Some(acc) = acc.as_mut() else {
            return null("accumulator");
        };
        if rows == 0 {
            return NessStatus::Ok;
        }
        if data.is_null() {
            return null("data");
        }
        let dim = acc.0.dim();
        let values = std::slice::from_raw_parts(data, rows * dim).to_vec();
        let m = try_ness!(Matrix::new(rows, dim, values));
        try_ness!(acc.0.accumulate_rows(&m));
        NessStatus::Ok
    })
}

/// `‖X‖_F` of everything pushed so far.
///
/// # Safety
/// `acc` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ness_accumulator_frobenius(acc: *const NessAccumulator, out: *mut f64) -> NessStatus {
    guard(|| {
        let Some(acc) = acc.as_ref() else {
            return null("accumulator");
        };
        if out.is_null() {
            return null("out");
        }
        *out = spectral::frobenius_from_accumulator(&acc.0);
        NessStatus::Ok
    })
}

/// Number of samples pushed so far.
///
/// # Safety
/// `acc` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ness_accumulator_samples(acc: *const NessAccumulator) -> usize {
    acc.as_ref().map_or(0, |a| a.0.sample_count())
}

/// # Safety
/// `acc` must come from [`ness_accumulator_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ness_accumulator_free(acc: *mut NessAccumulator) {
    if !acc.is_null() {
        drop(Box::from_raw(acc));
    }
}

/// Builds a zero-initialized adapter for a layer with `d_out` outputs from
/// the accumulated inputs.
///
/// # Safety
/// `acc` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ness_adapter_new(
    acc: *const NessAccumulator,
    eps1: f64,
    d_out: usize,
    out: *mut *mut NessAdapter,
) -> NessStatus {
    guard(|| {
        let Some(acc) = acc.as_ref() else {
            return null("accumulator");
        };
        if out.is_null() {
            return null("out");
        }
        let pair = try_ness!(adapter::get_uv(&acc.0, eps1, d_out));
        *out = Box::into_raw(Box::new(NessAdapter(pair)));
        NessStatus::Ok
    })
}

/// Columns of `U`; zero when no direction fell below the threshold.
///
/// # Safety
/// `a` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ness_adapter_rank(a: *const NessAdapter) -> usize {
    a.as_ref().map_or(0, |a| a.0.rank())
}

/// Copies `U` (`d_in × rank`, row-major) into `buf` of length `len`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ness_adapter_basis(a: *const NessAdapter, buf: *mut f64, len: usize) -> NessStatus {
    guard(|| {
        let Some(a) = a.as_ref() else { return null("adapter") };
        copy_out(a.0.basis(), buf, len)
    })
}

/// Replaces `V` (`rank × d_out`, row-major).
///
/// # Safety
/// `data` must hold `rank * d_out` doubles.
#[no_mangle]
pub unsafe extern "C" fn ness_adapter_set_v(a: *mut NessAdapter, data: *const f64, len: usize) -> NessStatus {
    guard(|| {
        let Some(a) = a.as_mut() else { return null("adapter") };
        let (r, c) = a.0.v().shape();
        if r * c == 0 {
            return NessStatus::Ok;
        }
        if data.is_null() {
            return null("data");
        }
        if len != r * c {
            return fail(Error::Shape(format!("V needs {} values, got {len}", r * c)));
        }
        let v = try_ness!(Matrix::new(r, c, std::slice::from_raw_parts(data, len).to_vec()));
        try_ness!(a.0.set_v(v));
        NessStatus::Ok
    })
}

/// Writes `W + U·V` into `out`, where `w` is `d_in × d_out` row-major.
///
/// # Safety
/// `w` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ness_adapter_merge(
    a: *const NessAdapter,
    w: *const f64,
    out: *mut f64,
    len: usize,
) -> NessStatus {
    guard(|| {
        let Some(a) = a.as_ref() else { return null("adapter") };
        if w.is_null() {
            return null("w");
        }
        let (d_in, d_out) = (a.0.basis().rows(), a.0.v().cols());
        if len != d_in * d_out {
            return fail(Error::Shape(format!("W needs {} values, got {len}", d_in * d_out)));
        }
        let w = try_ness!(Matrix::new(d_in, d_out, std::slice::from_raw_parts(w, len).to_vec()));
        let merged = try_ness!(adapter::merge(&w, &a.0));
        copy_out(&merged, out, len)
    })
}

/// # Safety
/// `a` must come from [`ness_adapter_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ness_adapter_free(a: *mut NessAdapter) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

unsafe fn copy_out(m: &Matrix, buf: *mut f64, len: usize) -> NessStatus {
    let n = m.rows() * m.cols();
    if len != n {
        return fail(Error::Shape(format!("buffer holds {len} values, need {n}")));
    }
    if n == 0 {
        return NessStatus::Ok;
    }
    if buf.is_null() {
        return null("buffer");
    }
    std::slice::from_raw_parts_mut(buf, n).copy_from_slice(m.as_slice());
    NessStatus::Ok
}

unsafe fn accuracy_arg(values: *const f64, tasks: usize) -> Result<AccuracyMatrix, NessStatus> {
    if values.is_null() {
        return Err(null("values"));
    }
    let v = std::slice::from_raw_parts(values, tasks * tasks);
    let rows: Vec<Vec<f64>> = (0..tasks).map(|t| v[t * tasks..=t * tasks + t].to_vec()).collect();
    AccuracyMatrix::from_rows(&rows).map_err(fail)
}

/// Mean of the last row of a `tasks × tasks` row-major accuracy matrix
/// (entries above the diagonal are ignored).
///
/// # Safety
/// `values` must hold `tasks * tasks` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ness_compute_acc(values: *const f64, tasks: usize, out: *mut f64) -> NessStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let a = try_status!(accuracy_arg(values, tasks));
        *out = try_ness!(harness::compute_acc(&a));
        NessStatus::Ok
    })
}

/// Backward transfer of a row-major accuracy matrix; needs two tasks.
///
/// # Safety
/// `values` must hold `tasks * tasks` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ness_compute_bwt(values: *const f64, tasks: usize, out: *mut f64) -> NessStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let a = try_status!(accuracy_arg(values, tasks));
        *out = try_ness!(harness::compute_bwt(&a));
        NessStatus::Ok
    })
}

/// Runs every seed of a TOML run config.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ness_run(config_toml: *const c_char, out: *mut *mut NessReport) -> NessStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let text = try_status!(str_arg(config_toml, "config"));
        let cfg = try_ness!(RunConfig::from_toml_str(text));
        let report = try_ness!(harness::run_suite(&cfg));
        *out = Box::into_raw(Box::new(NessReport(report)));
        NessStatus::Ok
    })
}

/// Mean and standard deviation of ACC over successful seeds.
///
/// # Safety
/// `r` must be a live handle; `mean` and `std` valid.
#[no_mangle]
pub unsafe extern "C" fn ness_report_acc(r: *const NessReport, mean: *mut f64, std: *mut f64) -> NessStatus {
    guard(|| {
        let Some(r) = r.as_ref() else { return null("report") };
        if mean.is_null() || std.is_null() {
            return null("out");
        }
        *mean = r.0.acc.mean;
        *std = r.0.acc.std;
        NessStatus::Ok
    })
}

/// Mean and standard deviation of BWT; a data error for single-task suites.
///
/// # Safety
/// `r` must be a live handle; `mean` and `std` valid.
#[no_mangle]
pub unsafe extern "C" fn ness_report_bwt(r: *const NessReport, mean: *mut f64, std: *mut f64) -> NessStatus {
    guard(|| {
        let Some(r) = r.as_ref() else { return null("report") };
        if mean.is_null() || std.is_null() {
            return null("out");
        }
        let Some(b) = r.0.bwt else {
            return fail(Error::UndefinedMetric(
                "backward transfer needs at least two tasks".into(),
            ));
        };
        *mean = b.mean;
        *std = b.std;
        NessStatus::Ok
    })
}

/// The report as JSON; free with [`ness_string_free`].
///
/// # Safety
/// `r` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ness_report_json(r: *const NessReport, out: *mut *mut c_char) -> NessStatus {
    guard(|| {
        let Some(r) = r.as_ref() else { return null("report") };
        if out.is_null() {
            return null("out");
        }
        let json = match serde_json::to_string(&r.0) {
            Ok(j) => j,
            Err(e) => return fail(Error::State(e.to_string())),
        };
        *out = CString::new(json).unwrap_or_default().into_raw();
        NessStatus::Ok
    })
}

/// Writes the per-seed CSVs and `summary.json` into `dir`.
///
/// # Safety
/// `r` must be a live handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn ness_report_write(r: *const NessReport, dir: *const c_char) -> NessStatus {
    guard(|| {
        let Some(r) = r.as_ref() else { return null("report") };
        let dir = try_status!(str_arg(dir, "dir"));
        try_ness!(harness::emit_reports(&r.0, Path::new(dir)));
        NessStatus::Ok
    })
}

/// # Safety
/// `r` must come from [`ness_run`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ness_report_free(r: *mut NessReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Generates a preset synthetic suite (`rotated-gaussians`,
/// `permuted-features` or `split-classes`) and writes it in suite-file format.
///
/// # Safety
/// `kind` and `path` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ness_gen_tasks(kind: *const c_char, seed: u64, path: *const c_char) -> NessStatus {
    guard(|| {
        let kind: SuiteKind = try_ness!(try_status!(str_arg(kind, "kind")).parse());
        if kind == SuiteKind::File {
            return fail(Error::Config("a synthetic suite kind is required".into()));
        }
        let path = try_status!(str_arg(path, "path"));
        let data = try_ness!(tasks::generate(&SuiteSpec::preset(kind, seed)));
        try_ness!(tasks::write_suite_file(Path::new(path), &data));
        NessStatus::Ok
    })
}
