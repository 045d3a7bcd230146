use std::ffi::{CStr, CString};
use std::ptr;

use nullfwe_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(nf_last_error()) }.to_string_lossy().into_owned()
}

const CONFIG: &str = r#"{
  "site": "cambridge-like", "grid_dims": [16, 16, 16], "n_t": 60,
  "acf": {"kind": "gaussian", "fwhm_mm": 6.0}, "design": "B1", "smoothing_mm": 6,
  "test": "one-sample", "group_size": 8, "pool_size": 20,
  "method": {"kind": "grft"}, "cdt_p": 0.01, "n_analyses": 6, "master_seed": 3
}"#;

#[test]
fn wilson_matches_reference() {
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(unsafe { nf_wilson_ci(50, 1000, &mut lo, &mut hi) }, NfStatus::Ok);
    assert!((lo - 0.038_13).abs() < 5e-5 && (hi - 0.065_31).abs() < 5e-5, "{lo} {hi}");
    assert_eq!(unsafe { nf_wilson_ci(0, 0, &mut lo, &mut hi) }, NfStatus::Domain);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { nf_wilson_ci(1, 2, ptr::null_mut(), &mut hi) }, NfStatus::NullPointer);
}

#[test]
fn biblio_defaults() {
    let mut e = NfBiblioEstimate::default();
    assert_eq!(unsafe { nf_biblio_defaults(&mut e) }, NfStatus::Ok);
    assert_eq!((e.n_cluster_corrected, e.n_affected), (10_720, 2_573));
    assert_eq!(e.frac_cdt_ge_01, 0.24);
}

#[test]
fn config_errors_are_reported() {
    let mut cfg = ptr::null_mut();
    let bad = CString::new(CONFIG.replace("\"cdt_p\": 0.01", "\"cdt_p\": 1.5")).unwrap();
    assert_eq!(unsafe { nf_config_parse(bad.as_ptr(), &mut cfg) }, NfStatus::Validation);
    assert!(cfg.is_null());
    assert!(last_error().contains("cdt_p"), "{}", last_error());
    assert_eq!(unsafe { nf_config_parse(ptr::null(), &mut cfg) }, NfStatus::NullPointer);
    let invalid = [0xffu8, 0];
    assert_eq!(unsafe { nf_config_parse(invalid.as_ptr().cast(), &mut cfg) }, NfStatus::InvalidUtf8);
}

#[test]
fn run_and_format() {
    let json = CString::new(CONFIG).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { nf_config_parse(json.as_ptr(), &mut cfg) }, NfStatus::Ok, "{}", last_error());
    let mut a = NfFweReport::default();
    let mut b = NfFweReport::default();
    assert_eq!(unsafe { nf_run_fwe(cfg, 1, &mut a) }, NfStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { nf_run_fwe(cfg, 2, &mut b) }, NfStatus::Ok);
    assert_eq!(a, b);
    assert_eq!(a.n_analyses + a.excluded, 6);
    assert!(a.ci_lo <= a.fwe && a.fwe <= a.ci_hi);
    let mut row = ptr::null_mut();
    assert_eq!(unsafe { nf_fwe_csv_row(cfg, &a, &mut row) }, NfStatus::Ok);
    let text = unsafe { CStr::from_ptr(row) }.to_str().unwrap().to_owned();
    unsafe { nf_string_free(row) };
    assert!(text.starts_with("cambridge-like,B1,6,one-sample,grft,none,one,0.01,0.05,none,"), "{text}");
    assert_eq!(text.split(',').count(), 17);
    unsafe { nf_config_free(cfg) };
}

#[test]
fn volume_round_trip() {
    let meta = nullfwe::volcore::GridMeta::new([3, 4, 5], [1.0, 2.0, 3.0]).unwrap();
    let vol = nullfwe::volcore::Volume::new(meta, (0..60).map(|i| i as f64 * 0.5).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("v");
    nullfwe::volcore::write_volume(&vol, &base).unwrap();
    let path = CString::new(base.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { nf_volume_read(path.as_ptr(), &mut h) }, NfStatus::Ok, "{}", last_error());
    let (mut dims, mut vox) = ([0u64; 3], [0.0; 3]);
    assert_eq!(unsafe { nf_volume_shape(h, dims.as_mut_ptr(), vox.as_mut_ptr()) }, NfStatus::Ok);
    assert_eq!((dims, vox), ([3, 4, 5], [1.0, 2.0, 3.0]));
    let (mut data, mut len) = (ptr::null(), 0u64);
    assert_eq!(unsafe { nf_volume_data(h, &mut data, &mut len) }, NfStatus::Ok);
    let values = unsafe { std::slice::from_raw_parts(data, len as usize) };
    assert_eq!(values, vol.data());
    let copy = CString::new(dir.path().join("w").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { nf_volume_write(h, copy.as_ptr()) }, NfStatus::Ok);
    unsafe { nf_volume_free(h) };
    let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { nf_volume_read(missing.as_ptr(), &mut h) }, NfStatus::Io);
    assert!(h.is_null());
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/nullfwe.h");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
}
