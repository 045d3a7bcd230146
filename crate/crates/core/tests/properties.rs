use proptest::prelude::*;

use nullfwe::harness::wilson_ci;
use nullfwe::stats::{t_cdf, t_quantile, t_to_z, z_to_t};
use nullfwe::volcore::{
    connected_components, gaussian_smooth_periodic, read_volume, write_volume, Connectivity, GridMeta, Mask, Tail, Volume,
};

fn small_volume() -> impl Strategy<Value = Volume> {
    (2usize..7, 2usize..7, 2usize..6).prop_flat_map(|(x, y, z)| {
        prop::collection::vec(-3.0f64..3.0, x * y * z)
            .prop_map(move |d| Volume::new(GridMeta::new([x, y, z], [2.0; 3]).unwrap(), d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clusters_partition_suprathreshold_voxels(vol in small_volume(), u in 0.0f64..2.0) {
        let mask = Mask::full(*vol.meta());
        let t26 = connected_components(&vol, &mask, u, Connectivity::Vertex26, Tail::Both).unwrap();
        let t6 = connected_components(&vol, &mask, u, Connectivity::Face6, Tail::Both).unwrap();
        let supra = vol.data().iter().filter(|v| v.abs() >= u).count();
        for t in [&t26, &t6] {
            let mut seen: Vec<usize> = t.clusters.iter().flat_map(|c| c.voxels.clone()).collect();
            prop_assert_eq!(seen.len(), supra);
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), supra);
            for c in &t.clusters {
                prop_assert_eq!(c.size, c.voxels.len());
            }
        }
        prop_assert!(t6.clusters.len() >= t26.clusters.len());
        prop_assert!(t6.max_size() <= t26.max_size());
    }

    #[test]
    fn wilson_interval_brackets_estimate(n in 1usize..5000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson_ci(k, n).unwrap();
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
    }

    #[test]
    fn t_quantile_inverts_cdf(p in 0.001f64..0.999, dof in 2.0f64..200.0) {
        let t = t_quantile(p, dof);
        prop_assert!((t_cdf(t, dof) - p).abs() < 1e-9);
    }

    #[test]
    fn t_z_mapping_round_trips(z in -5.0f64..5.0, dof in 3.0f64..100.0) {
        prop_assert!((t_to_z(z_to_t(z, dof), dof) - z).abs() < 1e-6);
    }

    #[test]
    fn periodic_smoothing_preserves_sum(vol in small_volume(), fwhm in 1.0f64..8.0) {
        let s = gaussian_smooth_periodic(&vol, fwhm).unwrap();
        prop_assert!((s.sum() - vol.sum()).abs() < 1e-9 * (1.0 + vol.data().iter().map(|v| v.abs()).sum::<f64>()));
    }

    #[test]
    fn volume_io_round_trips_at_f32_precision(vol in small_volume()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vol");
        write_volume(&vol, &path).unwrap();
        let back = read_volume(&path).unwrap();
        prop_assert_eq!(back.meta(), vol.meta());
        prop_assert!(back.data().iter().zip(vol.data()).all(|(a, b)| *a == f64::from(*b as f32)));
    }
}
