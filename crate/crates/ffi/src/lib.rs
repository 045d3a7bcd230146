//! C ABI over the nullfwe experiment harness.
//!
//! Every function returns an [`NfStatus`]. Objects cross the boundary as
//! opaque handles that the caller releases with the matching `*_free`.
//! After a failure, [`nf_last_error`] describes it until the next call on
//! the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nullfwe::biblio::{estimate_affected, BiblioInputs};
use nullfwe::harness::{run_experiment, wilson_ci, ExperimentConfig, RunOptions};
use nullfwe::volcore::{read_volume, write_volume, Volume};
use nullfwe::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Validation = 3,
    Io = 4,
    Domain = 5,
    Runtime = 6,
    Panic = 7,
}

/// Parsed, validated experiment configuration.
pub struct NfConfig {
    inner: ExperimentConfig,
}

/// A volume on a regular grid.
pub struct NfVolume {
    inner: Volume,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NfFweReport {
    pub n_analyses: u64,
    pub n_significant: u64,
    pub fwe: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub excluded: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NfBiblioEstimate {
    pub n_cluster_corrected: u64,
    pub frac_cdt_ge_01: f64,
    pub n_affected: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> NfStatus {
    match e {
        Error::Validation { .. } | Error::Parse { .. } => NfStatus::Validation,
        Error::Io { .. } | Error::Corruption { .. } => NfStatus::Io,
        Error::Domain(_) | Error::Dimension(_) => NfStatus::Domain,
        _ => NfStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), NfStatus>) -> NfStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            NfStatus::Panic
        }
    }
}

fn fail(e: Error) -> NfStatus {
    set_error(e.to_string());
    status_of(&e)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, NfStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(NfStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        NfStatus::InvalidUtf8
    })
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), NfStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        Err(NfStatus::NullPointer)
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn nf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parse and validate a JSON experiment config.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_config_parse(json: *const c_char, out: *mut *mut NfConfig) -> NfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(json, "json")?;
        let inner = ExperimentConfig::from_json_str(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(NfConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`nf_config_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn nf_config_free(cfg: *mut NfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Run the experiment. `workers = 0` uses all available cores.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_run_fwe(cfg: *const NfConfig, workers: u32, out: *mut NfFweReport) -> NfStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        non_null(out, "out")?;
        let opts = RunOptions {
            workers: (workers > 0).then_some(workers as usize),
            ..Default::default()
        };
        let r = run_experiment(&(*cfg).inner, &opts).map_err(fail)?.report;
        *out = NfFweReport {
            n_analyses: r.n_analyses as u64,
            n_significant: r.n_significant as u64,
            fwe: r.fwe,
            ci_lo: r.ci95.0,
            ci_hi: r.ci95.1,
            excluded: r.excluded as u64,
        };
        Ok(())
    })
}

/// Results-CSV row for a report of this config. Release with
/// [`nf_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `report` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nf_fwe_csv_row(
    cfg: *const NfConfig,
    report: *const NfFweReport,
    out: *mut *mut c_char,
) -> NfStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        non_null(report, "report")?;
        non_null(out, "out")?;
        let r = &*report;
        let full = nullfwe::harness::FweReport {
            config_digest: (*cfg).inner.digest(),
            n_analyses: r.n_analyses as usize,
            n_significant: r.n_significant as usize,
            fwe: r.fwe,
            ci95: (r.ci_lo, r.ci_hi),
            excluded: r.excluded as usize,
            wall_time_s: 0.0,
        };
        let row = full.csv_row(&(*cfg).inner);
        *out = CString::new(row).expect("csv has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn nf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Wilson score 95% interval.
///
/// # Safety
/// `lo` and `hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_wilson_ci(n_sig: u64, n: u64, lo: *mut f64, hi: *mut f64) -> NfStatus {
    guard(|| {
        non_null(lo, "lo")?;
        non_null(hi, "hi")?;
        let (a, b) = wilson_ci(n_sig as usize, n as usize).map_err(fail)?;
        *lo = a;
        *hi = b;
        Ok(())
    })
}

/// Bibliometric estimate from the embedded published inputs.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_biblio_defaults(out: *mut NfBiblioEstimate) -> NfStatus {
    guard(|| {
        non_null(out, "out")?;
        let e = estimate_affected(&BiblioInputs::published_default()).map_err(fail)?;
        *out = NfBiblioEstimate {
            n_cluster_corrected: e.n_cluster_corrected,
            frac_cdt_ge_01: e.frac_cdt_ge_01,
            n_affected: e.n_affected,
        };
        Ok(())
    })
}

/// Read a volume from `<base>.vhdr` / `<base>.vraw`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nf_volume_read(path: *const c_char, out: *mut *mut NfVolume) -> NfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let p = str_arg(path, "path")?;
        let inner = read_volume(p).map_err(fail)?;
        *out = Box::into_raw(Box::new(NfVolume { inner }));
        Ok(())
    })
}

/// # Safety
/// `vol` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nf_volume_write(vol: *const NfVolume, path: *const c_char) -> NfStatus {
    guard(|| {
        non_null(vol, "vol")?;
        let p = str_arg(path, "path")?;
        write_volume(&(*vol).inner, p).map_err(fail)
    })
}

/// Grid dimensions and voxel sizes.
///
/// # Safety
/// `vol` must be a live handle; `dims` and `voxel_mm` point to 3 writable
/// elements each.
#[no_mangle]
pub unsafe extern "C" fn nf_volume_shape(vol: *const NfVolume, dims: *mut u64, voxel_mm: *mut f64) -> NfStatus {
    guard(|| {
        non_null(vol, "vol")?;
        non_null(dims, "dims")?;
        non_null(voxel_mm, "voxel_mm")?;
        let m = (*vol).inner.meta();
        for (k, (d, v)) in m.dims().iter().zip(m.voxel_mm()).enumerate() {
            *dims.add(k) = *d as u64;
            *voxel_mm.add(k) = v;
        }
        Ok(())
    })
}

/// Borrowed pointer to the x-fastest voxel values and their count. Valid
/// while the handle lives.
///
/// # Safety
/// `vol` must be a live handle; `data` and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn nf_volume_data(vol: *const NfVolume, data: *mut *const f64, len: *mut u64) -> NfStatus {
    guard(|| {
        non_null(vol, "vol")?;
        non_null(data, "data")?;
        non_null(len, "len")?;
        let d = (*vol).inner.data();
        *data = d.as_ptr();
        *len = d.len() as u64;
        Ok(())
    })
}

/// # Safety
/// `vol` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn nf_volume_free(vol: *mut NfVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}
