use std::path::Path;

use nullfwe::harness::{run_fwe_experiment, wilson_ci, ExperimentConfig};

#[test]
#[ignore = "20 full experiments; run with --ignored"]
fn matched_mc_acf_covers_alpha_in_most_replications() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mcacf_gauss6_cdt01.json");
    let base = ExperimentConfig::from_json_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let (lo, hi) = wilson_ci(50, 1000).unwrap();
    let mut hits = 0;
    for rep in 0..20u64 {
        let mut cfg = base.clone();
        cfg.master_seed = 1000 + rep;
        let r = run_fwe_experiment(&cfg).unwrap();
        eprintln!("replication {rep}: fwe={:.4}", r.fwe);
        hits += usize::from((lo..=hi).contains(&r.fwe));
    }
    assert!(hits >= 18, "only {hits}/20 replications inside [{lo:.4}, {hi:.4}]");
}
