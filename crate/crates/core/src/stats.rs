//! Distribution helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    std_normal().sf(x)
}

pub fn norm_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

fn students_t(dof: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom")
}

pub fn t_cdf(t: f64, dof: f64) -> f64 {
    students_t(dof).cdf(t)
}

pub fn t_sf(t: f64, dof: f64) -> f64 {
    students_t(dof).sf(t)
}

pub fn t_quantile(p: f64, dof: f64) -> f64 {
    students_t(dof).inverse_cdf(p)
}

/// Map a t value to the z value with the same tail probability.
pub fn t_to_z(t: f64, dof: f64) -> f64 {
    if t >= 0.0 {
        -norm_quantile(t_sf(t, dof).max(f64::MIN_POSITIVE))
    } else {
        norm_quantile(t_cdf(t, dof).max(f64::MIN_POSITIVE))
    }
}

/// The t value whose upper tail probability equals that of `z`.
pub fn z_to_t(z: f64, dof: f64) -> f64 {
    t_quantile(norm_cdf(z), dof)
}

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_invert_cdfs() {
        for p in [0.001, 0.01, 0.5, 0.975] {
            let e = (norm_cdf(norm_quantile(p)) - p).abs(); assert!(e < 1e-10, "{p} {e}");
            assert!((t_cdf(t_quantile(p, 19.0), 19.0) - p).abs() < 1e-9);
        }
        assert!((norm_quantile(0.999) - 3.090_232_306_167_813).abs() < 1e-9);
    }

    #[test]
    fn t_to_z_preserves_tail_probability() {
        for t in [-6.0, -2.0, 0.0, 1.5, 4.0, 9.0] {
            let z = t_to_z(t, 12.0);
            assert!((norm_sf(z) - t_sf(t, 12.0)).abs() < 1e-10 * (1.0 + t_sf(t, 12.0)));
        }
        assert!((z_to_t(t_to_z(3.3, 19.0), 19.0) - 3.3).abs() < 1e-7);
    }
}
