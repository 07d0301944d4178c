// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! C ABI over the experiment runner.
//!
//! Every call returns a [`ZwStatus`]. On failure the message is kept per
//! thread and read back with [`zw_last_error`]. Handles are opaque and owned
//! by the caller until passed to the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use zonewaf::expctl::{self, ExpError, ExperimentConfig, ReportFormat, RunReport};
use zonewaf::flashsim::DeviceConfig;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZwStatus {
    Ok = 0,
    /// A required pointer was null.
    NullArg = 1,
    /// Bad key, value or configuration.
    Config = 2,
    /// The simulation broke one of its own invariants.
    Invariant = 3,
    Io = 4,
    /// A string argument was not UTF-8.
    Utf8 = 5,
    /// Results were requested before a successful run.
    NotRun = 6,
    Panic = 7,
}

/// Headline numbers of the last run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ZwResult {
    pub evicted_pages: u64,
    pub user_pages: u64,
    pub dwb_pages: u64,
    pub db_gc_pages: u64,
    pub comp_pages: u64,
    pub ssd_gc_pages: u64,
    pub db_waf: f64,
    pub ssd_waf: f64,
    pub total_waf: f64,
    pub hit_ratio: f64,
    pub logical_bytes_per_op: f64,
    pub physical_bytes_per_op: f64,
}

/// Opaque experiment handle.
pub struct ZwExperiment {
    config: ExperimentConfig,
    report: Option<RunReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: ZwStatus, msg: impl Into<String>) -> ZwStatus {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn from_exp(e: ExpError) -> ZwStatus {
    let status = match e {
        ExpError::Config(_) => ZwStatus::Config,
        ExpError::Invariant(_) => ZwStatus::Invariant,
        ExpError::Io(_) => ZwStatus::Io,
    };
    fail(status, e.to_string())
}

fn guarded(f: impl FnOnce() -> ZwStatus) -> ZwStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(ZwStatus::Panic, "panic inside zonewaf"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, ZwStatus> {
    if p.is_null() {
        return Err(fail(ZwStatus::NullArg, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(ZwStatus::Utf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a>(h: *mut ZwExperiment) -> Result<&'a mut ZwExperiment, ZwStatus> {
    h.as_mut().ok_or_else(|| fail(ZwStatus::NullArg, "experiment handle is null"))
}

/// Message for the last failed call on this thread, or "" if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn zw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// New experiment with default settings. Free with [`zw_experiment_free`].
#[no_mangle]
pub extern "C" fn zw_experiment_new() -> *mut ZwExperiment {
    Box::into_raw(Box::new(ZwExperiment { config: ExperimentConfig::default(), report: None }))
}

/// # Safety
/// `h` must come from [`zw_experiment_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn zw_experiment_free(h: *mut ZwExperiment) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Sets one config key, using the same names as config files.
///
/// # Safety
/// `h` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn zw_experiment_set(h: *mut ZwExperiment, key: *const c_char, value: *const c_char) -> ZwStatus {
    guarded(|| {
        let run = || -> Result<(), ZwStatus> {
            let h = handle(h)?;
            let (k, v) = (text(key, "key")?, text(value, "value")?);
            h.config.set(k, v).map_err(|m| fail(ZwStatus::Config, m))
        };
        run().err().unwrap_or(ZwStatus::Ok)
    })
}

/// Replaces the config with one parsed from `key = value` text.
///
/// # Safety
/// `h` must be a live handle; `config` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn zw_experiment_load_config(h: *mut ZwExperiment, config: *const c_char) -> ZwStatus {
    guarded(|| {
        let run = || -> Result<(), ZwStatus> {
            let h = handle(h)?;
            let t = text(config, "config")?;
            h.config = ExperimentConfig::parse_text(t).map_err(|e| fail(ZwStatus::Config, e.to_string()))?;
            h.report = None;
            Ok(())
        };
        run().err().unwrap_or(ZwStatus::Ok)
    })
}

/// Runs the experiment. Blocks until the measurement window closes.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn zw_experiment_run(h: *mut ZwExperiment) -> ZwStatus {
    guarded(|| {
        let h = match handle(h) {
            Ok(h) => h,
            Err(s) => return s,
        };
        h.report = None;
        match expctl::run_experiment(&h.config) {
            Ok(r) => {
                h.report = Some(r);
                ZwStatus::Ok
            }
            Err(e) => from_exp(e),
        }
    })
}

/// Copies the last run's numbers into `out`.
///
/// # Safety
/// `h` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zw_experiment_result(h: *const ZwExperiment, out: *mut ZwResult) -> ZwStatus {
    let (Some(h), false) = (h.as_ref(), out.is_null()) else {
        return fail(ZwStatus::NullArg, "null argument");
    };
    let Some(r) = &h.report else {
        return fail(ZwStatus::NotRun, "no completed run");
    };
    let d = r.drilldown;
    *out = ZwResult {
        evicted_pages: d.evicted_pages,
        user_pages: d.user_pages,
        dwb_pages: d.dwb_pages,
        db_gc_pages: d.db_gc_pages,
        comp_pages: d.compensation_pages,
        ssd_gc_pages: d.ssd_gc_pages,
        db_waf: d.db_waf,
        ssd_waf: d.ssd_waf,
        total_waf: d.total_waf,
        hit_ratio: r.hit_ratio,
        logical_bytes_per_op: r.logical_bytes_per_op,
        physical_bytes_per_op: r.physical_bytes_per_op,
    };
    ZwStatus::Ok
}

/// Renders the last run as JSON (`as_csv` false) or as CSV with header.
/// On success `*out` owns a string to release with [`zw_string_free`].
///
/// # Safety
/// `h` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zw_experiment_report(h: *const ZwExperiment, as_csv: bool, out: *mut *mut c_char) -> ZwStatus {
    guarded(|| {
        let (Some(h), false) = (h.as_ref(), out.is_null()) else {
            return fail(ZwStatus::NullArg, "null argument");
        };
        let Some(r) = &h.report else {
            return fail(ZwStatus::NotRun, "no completed run");
        };
        let format = if as_csv { ReportFormat::Csv } else { ReportFormat::Json };
        let mut buf = Vec::new();
        if let Err(e) = expctl::emit_report(std::slice::from_ref(r), format, &mut buf) {
            return from_exp(e);
        }
        *out = CString::new(buf).map(CString::into_raw).unwrap_or(ptr::null_mut());
        ZwStatus::Ok
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn zw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Infers a standard device's GC unit from zone overwrite tests.
/// `candidates` must be ascending. `*found` is false when no candidate
/// passed, in which case `*unit_pages` is `ceiling`.
///
/// # Safety
/// `candidates` must point at `len` values; `unit_pages` and `found` writable.
#[no_mangle]
pub unsafe extern "C" fn zw_infer_gc_unit(
    capacity_pages: u64,
    superblock_pages: u32,
    candidates: *const u32,
    len: usize,
    ceiling: u64,
    seed: u64,
    unit_pages: *mut u64,
    found: *mut bool,
) -> ZwStatus {
    guarded(|| {
        if candidates.is_null() || unit_pages.is_null() || found.is_null() {
            return fail(ZwStatus::NullArg, "null argument");
        }
        let list = std::slice::from_raw_parts(candidates, len);
        let dev = DeviceConfig { capacity_pages, superblock_pages, ..Default::default() };
        match expctl::infer_gc_unit(&dev, list, ceiling, seed) {
            Ok(r) => {
                *unit_pages = r.unit_pages;
                *found = r.found;
                ZwStatus::Ok
            }
            Err(e) => from_exp(e),
        }
    })
}
