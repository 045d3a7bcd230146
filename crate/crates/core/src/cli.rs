//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::biblio::{render_report, BiblioInputs, CdtCrosstab};
use crate::error::{Error, Result};
use crate::harness::{
    analyze_once, append_results_row, locus_ratio, pca_first_component, prevalence_from_outcomes, run_on_pool,
    top_fraction_dice, with_workers, ExperimentConfig, Pool, RunOptions, RESULTS_HEADER,
};
use crate::volcore::write_volume;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nullfwe", version, about = "Null-data familywise error experiments for cluster inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config value by dotted key, e.g. `method.variant=robust`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, env = "NULLFWE_OUT", default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Validate only; write nothing.
    #[arg(long)]
    dry_run: bool,
    /// Override `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write smoothed first-level contrast maps of pool subjects.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of subjects to write.
        #[arg(long, default_value_t = 1)]
        subjects: usize,
    },
    /// Run one group analysis and print its clusters.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Estimate FWE and append a row to results.csv.
    Fwe {
        #[command(flatten)]
        common: Common,
    },
    /// Voxelwise count of significant-cluster membership.
    Prevalence {
        #[command(flatten)]
        common: Common,
    },
    /// First principal component of the pool's contrast maps.
    Pca {
        #[command(flatten)]
        common: Common,
    },
    /// Bibliometric estimate of affected studies.
    Biblio {
        /// Use the embedded published inputs.
        #[arg(long, conflicts_with = "crosstab")]
        defaults: bool,
        /// Cross-tabulation CSV replacing the embedded one.
        #[arg(long)]
        crosstab: Option<PathBuf>,
    },
    /// Merge results CSVs into the figure input file.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, env = "NULLFWE_OUT", default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        dry_run: bool,
    },
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation { .. } | Error::Io { .. } | Error::Parse { .. } | Error::Corruption { .. } => {
            EXIT_VALIDATION
        }
        _ => EXIT_RUNTIME,
    }
}

/// Set `path` (dotted) in a JSON object; the value is parsed as JSON and
/// falls back to a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::validation(assignment, "override must look like KEY=VALUE"))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::validation(key, "empty key segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(Error::validation(key, format!("`{part}` is not inside an object")));
        }
        node = node
            .as_object_mut()
            .expect("checked")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::validation(key, "parent is not an object")),
    }
}

pub fn load_config(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| Error::Validation {
        key: "<document>".into(),
        message: format!("{}: {e}", path.display()),
    })?;
    if !doc.is_object() {
        return Err(Error::validation("<document>", "config must be a JSON object"));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(s) = seed {
        doc["master_seed"] = s.into();
    }
    ExperimentConfig::from_value(doc)
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Biblio { defaults: _, crosstab } => {
            let mut inputs = BiblioInputs::published_default();
            if let Some(p) = crosstab {
                inputs.crosstab = CdtCrosstab::load_csv(&p)?;
            }
            print!("{}", render_report(&inputs)?);
            Ok(())
        }
        Command::Report { inputs, out, dry_run } => report(&inputs, &out, dry_run),
        Command::Synth { common, subjects } => {
            let cfg = load_config(&common.config, &common.overrides, common.seed)?;
            if subjects == 0 || subjects > cfg.pool_size {
                return Err(Error::validation("subjects", format!("must lie in 1..={}", cfg.pool_size)));
            }
            if common.dry_run {
                return dry(&cfg);
            }
            let pool = with_workers(common.workers, || Pool::build(&cfg))?;
            prepare_out(&common.out)?;
            write_volume(&pool.mask.to_volume(), common.out.join("mask"))?;
            if let Some(l) = &pool.locus {
                write_volume(&l.to_volume(), common.out.join("locus"))?;
            }
            for k in 0..subjects {
                write_volume(&pool.volume(k), common.out.join(format!("contrast_{k:03}")))?;
            }
            println!("wrote {subjects} contrast maps to {}", common.out.display());
            Ok(())
        }
        Command::Analyze { common, index } => {
            let cfg = load_config(&common.config, &common.overrides, common.seed)?;
            if common.dry_run {
                return dry(&cfg);
            }
            let (pool, outcome) = with_workers(common.workers, || {
                let pool = Pool::build(&cfg)?;
                let o = analyze_once(&pool, &cfg, index)?;
                Ok((pool, o))
            })?;
            println!("cluster_id,size,p_fwe");
            for (i, (size, p)) in outcome.clusters.iter().enumerate() {
                println!("{},{size},{p}", i + 1);
            }
            prepare_out(&common.out)?;
            let mut sig = vec![0.0; pool.graph.len()];
            for &v in outcome.significant_voxels.as_deref().unwrap_or(&[]) {
                sig[v as usize] = 1.0;
            }
            write_volume(&pool.graph.scatter(&sig), common.out.join(format!("significant_{index:04}")))?;
            Ok(())
        }
        Command::Fwe { common } => {
            let cfg = load_config(&common.config, &common.overrides, common.seed)?;
            if common.dry_run {
                return dry(&cfg);
            }
            prepare_out(&common.out)?;
            let ckpt_dir = common.out.join("checkpoints");
            prepare_out(&ckpt_dir)?;
            let opts = RunOptions {
                workers: common.workers,
                checkpoint: Some(ckpt_dir.join(format!("{}.jsonl", cfg.digest()))),
                record_voxels: false,
            };
            let pool = with_workers(common.workers, || Pool::build(&cfg))?;
            let run = run_on_pool(&pool, &cfg, &opts)?;
            let row = run.report.csv_row(&cfg);
            append_results_row(&common.out.join("results.csv"), &row)?;
            println!("{RESULTS_HEADER}");
            println!("{row}");
            Ok(())
        }
        Command::Prevalence { common } => {
            let cfg = load_config(&common.config, &common.overrides, common.seed)?;
            if common.dry_run {
                return dry(&cfg);
            }
            let pool = with_workers(common.workers, || Pool::build(&cfg))?;
            let run = run_on_pool(
                &pool,
                &cfg,
                &RunOptions {
                    workers: common.workers,
                    checkpoint: None,
                    record_voxels: true,
                },
            )?;
            let map = prevalence_from_outcomes(&pool, &run.outcomes)?;
            prepare_out(&common.out)?;
            let base = common.out.join(format!("prevalence_{}", cfg.digest()));
            write_volume(&map.counts, &base)?;
            println!("prevalence: {} analyses -> {}.vhdr", map.n_analyses, base.display());
            if let Some(l) = &pool.locus {
                match locus_ratio(&map, &pool.mask, l)? {
                    Some(r) => println!("locus_ratio: {r}"),
                    None => println!("locus_ratio: undefined (no significant clusters)"),
                }
            }
            Ok(())
        }
        Command::Pca { common } => {
            let cfg = load_config(&common.config, &common.overrides, common.seed)?;
            if common.dry_run {
                return dry(&cfg);
            }
            let pool = with_workers(common.workers, || Pool::build(&cfg))?;
            let maps: Vec<_> = (0..pool.len()).map(|k| pool.volume(k)).collect();
            let (map, frac) = pca_first_component(&maps, &pool.mask)?;
            prepare_out(&common.out)?;
            let base = common.out.join(format!("pca1_{}", cfg.digest()));
            write_volume(&map, &base)?;
            println!("explained_variance_fraction: {frac}");
            if let Some(l) = &pool.locus {
                println!("top_decile_dice: {}", top_fraction_dice(&map, &pool.mask, l, 0.1));
            }
            Ok(())
        }
    }
}

fn dry(cfg: &ExperimentConfig) -> Result<()> {
    println!("ok {}", cfg.digest());
    Ok(())
}

fn report(inputs: &[PathBuf], out: &Path, dry_run: bool) -> Result<()> {
    let mut rows = Vec::new();
    for p in inputs {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == RESULTS_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    field: "header".into(),
                    message: format!("{} is not a results CSV", p.display()),
                })
            }
        }
        let width = RESULTS_HEADER.split(',').count();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            if line.split(',').count() != width {
                return Err(Error::Parse {
                    field: format!("{}:{}", p.display(), i + 2),
                    message: format!("expected {width} fields"),
                });
            }
            rows.push(line.to_string());
        }
    }
    if dry_run {
        println!("ok {} rows", rows.len());
        return Ok(());
    }
    prepare_out(out)?;
    let path = out.join("figure_input.csv");
    let mut text = String::from(RESULTS_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(r);
        text.push('\n');
    }
    let tmp = out.join(".figure_input.csv.tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_override() {
        let mut v = serde_json::json!({"method": {"kind": "perm"}, "cdt_p": 0.01});
        apply_override(&mut v, "method.variant=robust").unwrap();
        apply_override(&mut v, "cdt_p=0.001").unwrap();
        apply_override(&mut v, "cdt_p=0.01").unwrap();
        apply_override(&mut v, "artifact.locus.kind=sinus-tube").unwrap();
        assert_eq!(v["method"]["variant"], "robust");
        assert_eq!(v["cdt_p"], 0.01);
        assert_eq!(v["artifact"]["locus"]["kind"], "sinus-tube");
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "cdt_p.x=1").is_err());
    }
}
