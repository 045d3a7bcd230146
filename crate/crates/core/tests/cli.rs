use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nullfwe::harness::RESULTS_HEADER;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nullfwe"))
}

fn run(args: &[&str]) -> Output {
    bin().env_remove("NULLFWE_OUT").args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.json");
    std::fs::write(
        &p,
        r#"{"site": "oulu-like", "grid_dims": [14, 14, 14], "n_t": 60,
            "acf": {"kind": "gaussian", "fwhm_mm": 8.0}, "design": "E1", "smoothing_mm": 6,
            "test": "one-sample", "group_size": 6, "pool_size": 12,
            "method": {"kind": "signflip", "n_perm": 100}, "cdt_p": 0.01, "n_analyses": 8, "master_seed": 2}"#,
    )
    .unwrap();
    p
}

#[test]
fn biblio_defaults_prints_published_numbers() {
    let o = run(&["biblio", "--defaults"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    for needle in ["10,720", "0.24", "2,573", "69.6%", "26.7%", "TOTAL=480"] {
        assert!(s.contains(needle), "missing {needle} in {s}");
    }
}

#[test]
fn fwe_appends_row_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    for _ in 0..2 {
        let o = run(&["fwe", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], RESULTS_HEADER);
    assert_eq!(lines[1], lines[2]);
    assert!(lines[1].starts_with("oulu-like,E1,6,one-sample,signflip,plain,one,0.01,0.05,none,8,"));
    let ckpts: Vec<_> = std::fs::read_dir(out.join("checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 1);
}

#[test]
fn env_sets_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("env-out");
    let o = bin()
        .env("NULLFWE_OUT", &out)
        .args(["fwe", "--config", cfg.to_str().unwrap(), "--set", "n_analyses=2"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("results.csv").exists());
}

#[test]
fn validation_errors_exit_2_and_name_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let c = cfg.to_str().unwrap();
    let o = run(&["fwe", "--config", c, "--set", "cdt_p=1.5", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cdt_p"));
    let o = run(&["fwe", "--config", c, "--set", "colour=blue", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
    let o = run(&["fwe", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&["fwe"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["fwe", "--config", "x.json", "--workers", "many"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn dry_run_touches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("never");
    for sub in ["synth", "analyze", "fwe", "prevalence", "pca"] {
        let o = run(&[sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dry-run"]);
        assert_eq!(o.status.code(), Some(0), "{sub}: {}", stderr(&o));
        assert!(stdout(&o).starts_with("ok "));
    }
    assert!(!out.exists());
}

#[test]
fn synth_analyze_prevalence_pca_write_volumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("o");
    let o_ = out.to_str().unwrap();
    let o = run(&["synth", "--config", c, "--out", o_, "--subjects", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = nullfwe::volcore::read_volume(out.join("contrast_001")).unwrap();
    assert_eq!(v.meta().dims(), [14, 14, 14]);
    let o = run(&["analyze", "--config", c, "--out", o_, "--index", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("cluster_id,size,p_fwe"));
    assert!(out.join("significant_0003.vhdr").exists());
    let o = run(&["prevalence", "--config", c, "--out", o_]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&["pca", "--config", c, "--out", o_]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("explained_variance_fraction"));
    let prev = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("prevalence_") && e.file_name().to_string_lossy().ends_with(".vhdr"))
        .count();
    assert_eq!(prev, 1);
}

#[test]
fn report_merges_results() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let row = "beijing-like,B1,8,one-sample,grft,none,one,0.01,0.05,none,10,1,0.1,0.01,0.4,1,0";
    std::fs::write(&a, format!("{RESULTS_HEADER}\n{row}\n")).unwrap();
    std::fs::write(&b, format!("{RESULTS_HEADER}\n{row}\n{row}\n")).unwrap();
    let out = dir.path().join("r");
    let o = run(&["report", a.to_str().unwrap(), b.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let merged = std::fs::read_to_string(out.join("figure_input.csv")).unwrap();
    assert_eq!(merged.lines().count(), 4);
    std::fs::write(&b, "site,fwe\nx,0.1\n").unwrap();
    let o = run(&["report", b.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    let mut n = 0;
    for e in std::fs::read_dir(configs_dir()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().and_then(|x| x.to_str()) != Some("json") {
            continue;
        }
        let o = run(&["fwe", "--config", p.to_str().unwrap(), "--dry-run"]);
        assert_eq!(o.status.code(), Some(0), "{}: {}", p.display(), stderr(&o));
        n += 1;
    }
    assert!(n >= 4);
}
