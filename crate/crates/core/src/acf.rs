//! Spatial autocorrelation: parametric models, residual-based smoothness
//! estimation, and the long-tail mixed model fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volcore::{Dataset4D, GridMeta, Mask};

const LN2: f64 = std::f64::consts::LN_2;

/// Spatial autocorrelation function.
///
/// `Gaussian` describes white noise smoothed by a Gaussian kernel of the
/// given FWHM, so its correlation is `exp(-2 ln2 r^2 / fwhm^2)`.
/// `Mixed` is `a exp(-r^2 / 2b^2) + (1 - a) exp(-r / c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AcfModel {
    Gaussian { fwhm_mm: f64 },
    Mixed { a: f64, b_mm: f64, c_mm: f64 },
}

impl AcfModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AcfModel::Gaussian { fwhm_mm } if !(fwhm_mm.is_finite() && fwhm_mm > 0.0) => {
                Err(Error::Domain(format!("gaussian ACF needs fwhm_mm > 0, got {fwhm_mm}")))
            }
            AcfModel::Mixed { a, .. } if !(0.0..=1.0).contains(&a) => {
                Err(Error::Domain(format!("mixed ACF needs a in [0, 1], got {a}")))
            }
            AcfModel::Mixed { b_mm, c_mm, .. }
                if !(b_mm.is_finite() && b_mm > 0.0 && c_mm.is_finite() && c_mm > 0.0) =>
            {
                Err(Error::Domain(format!(
                    "mixed ACF needs b_mm, c_mm > 0, got b={b_mm}, c={c_mm}"
                )))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub(crate) fn eval(&self, r_mm: f64) -> f64 {
        match *self {
            AcfModel::Gaussian { fwhm_mm } => (-2.0 * LN2 * r_mm * r_mm / (fwhm_mm * fwhm_mm)).exp(),
            AcfModel::Mixed { a, b_mm, c_mm } => {
                a * (-r_mm * r_mm / (2.0 * b_mm * b_mm)).exp() + (1.0 - a) * (-r_mm / c_mm).exp()
            }
        }
    }

    /// Same shape with every length scale multiplied by `k`.
    pub fn scaled(&self, k: f64) -> AcfModel {
        match *self {
            AcfModel::Gaussian { fwhm_mm } => AcfModel::Gaussian { fwhm_mm: fwhm_mm * k },
            AcfModel::Mixed { a, b_mm, c_mm } => AcfModel::Mixed {
                a,
                b_mm: b_mm * k,
                c_mm: c_mm * k,
            },
        }
    }

    /// Smallest distance at which the correlation drops below `eps`.
    pub fn support_radius_mm(&self, eps: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        while self.eval(hi) >= eps {
            hi *= 2.0;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) >= eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Correlation at lag `r_mm`.
pub fn acf_value(model: &AcfModel, r_mm: f64) -> Result<f64> {
    model.validate()?;
    if !(r_mm >= 0.0) {
        return Err(Error::Domain(format!("lag must be >= 0, got {r_mm}")));
    }
    Ok(model.eval(r_mm))
}

/// Global smoothness of a residual field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimate {
    pub fwhm_mm: [f64; 3],
    /// Search volume in resolution elements.
    pub resels: f64,
}

impl SmoothnessEstimate {
    pub fn from_fwhm(fwhm_mm: [f64; 3], mask_voxels: usize, meta: &GridMeta) -> Result<Self> {
        if fwhm_mm.iter().any(|&f| !(f.is_finite() && f > 0.0)) {
            return Err(Error::Estimation(format!("non-positive FWHM {fwhm_mm:?}")));
        }
        let volume = mask_voxels as f64 * meta.voxel_volume_mm3();
        Ok(SmoothnessEstimate {
            fwhm_mm,
            resels: volume / (fwhm_mm[0] * fwhm_mm[1] * fwhm_mm[2]),
        })
    }
}

/// Per-voxel standardization over time. Returns z (frame-major) and a
/// validity flag per voxel (in mask, non-zero variance).
fn standardize(res: &Dataset4D, mask: &Mask) -> (Vec<f64>, Vec<bool>) {
    let n = res.meta().len();
    let t_len = res.n_t();
    let mut mean = vec![0.0; n];
    for t in 0..t_len {
        for (m, &y) in mean.iter_mut().zip(res.frame(t)) {
            *m += y;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t_len as f64);
    let mut ss = vec![0.0; n];
    for t in 0..t_len {
        for ((s, &y), &m) in ss.iter_mut().zip(res.frame(t)).zip(&mean) {
            *s += (y - m) * (y - m);
        }
    }
    let valid: Vec<bool> = (0..n)
        .map(|i| mask.contains(i) && ss[i] > 1e-300 && ss[i].is_finite())
        .collect();
    let inv_sd: Vec<f64> = (0..n)
        .map(|i| if valid[i] { ((t_len as f64 - 1.0) / ss[i]).sqrt() } else { 0.0 })
        .collect();
    let mut z = vec![0.0; n * t_len];
    for t in 0..t_len {
        let f = res.frame(t);
        let zt = &mut z[t * n..(t + 1) * n];
        for i in 0..n {
            zt[i] = (f[i] - mean[i]) * inv_sd[i];
        }
    }
    (z, valid)
}

/// Residual-derivative smoothness estimate.
///
/// For each axis, `v` is the mean over in-mask neighbor pairs of the
/// time-averaged squared forward difference of standardized residuals, and
/// `FWHM = voxel * sqrt(4 ln2 / v)`.
pub fn estimate_fwhm(residuals: &Dataset4D, mask: &Mask) -> Result<SmoothnessEstimate> {
    let meta = *residuals.meta();
    meta.ensure_same(mask.meta(), "estimate_fwhm")?;
    mask.require_nonempty()?;
    if residuals.n_t() < 3 {
        return Err(Error::Precondition(format!(
            "smoothness estimation needs at least 3 time points, got {}",
            residuals.n_t()
        )));
    }
    let (z, valid) = standardize(residuals, mask);
    if !valid.iter().any(|&b| b) {
        return Err(Error::Estimation("every in-mask voxel has zero variance".into()));
    }
    let n = meta.len();
    let t_len = residuals.n_t();
    let strides = [1, meta.nx, meta.nx * meta.ny];
    let mut fwhm = [0.0; 3];
    for axis in 0..3 {
        let mut pairs = Vec::new();
        for i in 0..n {
            let c = meta.coords(i);
            if c[axis] + 1 < meta.dims()[axis] && valid[i] && valid[i + strides[axis]] {
                pairs.push(i);
            }
        }
        if pairs.is_empty() {
            return Err(Error::Estimation(format!("no valid neighbor pairs along axis {axis}")));
        }
        let mut acc = 0.0;
        for t in 0..t_len {
            let zt = &z[t * n..(t + 1) * n];
            for &i in &pairs {
                let d = zt[i + strides[axis]] - zt[i];
                acc += d * d;
            }
        }
        let v = acc / (pairs.len() as f64 * (t_len as f64 - 1.0));
        if !(v > 0.0) {
            return Err(Error::Estimation(format!("zero derivative variance along axis {axis}")));
        }
        fwhm[axis] = meta.voxel_mm()[axis] * (4.0 * LN2 / v).sqrt();
    }
    SmoothnessEstimate::from_fwhm(fwhm, mask.count(), &meta)
}

/// Radially binned empirical spatial correlation of standardized residuals.
///
/// Bin width is the smallest voxel edge; each returned point is the
/// pair-weighted mean distance and correlation of its bin.
pub fn estimate_acf(residuals: &Dataset4D, mask: &Mask, max_r_mm: f64) -> Result<Vec<(f64, f64)>> {
    let meta = *residuals.meta();
    meta.ensure_same(mask.meta(), "estimate_acf")?;
    mask.require_nonempty()?;
    let width = meta.min_voxel_mm();
    if !(max_r_mm >= width) {
        return Err(Error::Domain(format!(
            "max_r_mm = {max_r_mm} is smaller than one voxel ({width} mm)"
        )));
    }
    if residuals.n_t() < 2 {
        return Err(Error::Precondition("need at least 2 time points".into()));
    }
    let (z, valid) = standardize(residuals, mask);
    let valid_idx: Vec<usize> = (0..meta.len()).filter(|&i| valid[i]).collect();
    if valid_idx.is_empty() {
        return Err(Error::Estimation("every in-mask voxel has zero variance".into()));
    }
    let n = meta.len();
    let t_len = residuals.n_t();
    let vox = meta.voxel_mm();
    let reach = [
        (max_r_mm / vox[0]).floor() as isize,
        (max_r_mm / vox[1]).floor() as isize,
        (max_r_mm / vox[2]).floor() as isize,
    ];
    let n_bins = (max_r_mm / width).round() as usize + 1;
    let mut corr_sum = vec![0.0; n_bins];
    let mut r_sum = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    let dims = [meta.nx as isize, meta.ny as isize, meta.nz as isize];
    for oz in 0..=reach[2] {
        for oy in -reach[1]..=reach[1] {
            for ox in -reach[0]..=reach[0] {
                // half space, plus the zero lag
                if (oz, oy, ox) < (0, 0, 0) {
                    continue;
                }
                let r = ((ox as f64 * vox[0]).powi(2) + (oy as f64 * vox[1]).powi(2) + (oz as f64 * vox[2]).powi(2)).sqrt();
                if r > max_r_mm {
                    continue;
                }
                let bin = (r / width).round() as usize;
                if bin >= n_bins {
                    continue;
                }
                let mut pairs = Vec::new();
                for &i in &valid_idx {
                    let [x, y, zc] = meta.coords(i);
                    let (a, b, c) = (x as isize + ox, y as isize + oy, zc as isize + oz);
                    if a < 0 || b < 0 || a >= dims[0] || b >= dims[1] || c >= dims[2] {
                        continue;
                    }
                    let j = meta.index(a as usize, b as usize, c as usize);
                    if valid[j] {
                        pairs.push((i, j));
                    }
                }
                if pairs.is_empty() {
                    continue;
                }
                let mut acc = 0.0;
                for t in 0..t_len {
                    let zt = &z[t * n..(t + 1) * n];
                    for &(i, j) in &pairs {
                        acc += zt[i] * zt[j];
                    }
                }
                corr_sum[bin] += acc / (t_len as f64 - 1.0);
                r_sum[bin] += r * pairs.len() as f64;
                count[bin] += pairs.len();
            }
        }
    }
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (r_sum[b] / count[b] as f64, corr_sum[b] / count[b] as f64))
        .collect())
}

const FIT_MAX_ITER: usize = 200;
const FIT_REL_TOL: f64 = 1e-8;

/// Least-squares fit of the mixed model to `(r_mm, correlation)` samples.
///
/// Damped Gauss-Newton on `(a, ln b, ln c)` with `a` projected onto
/// `[0, 1]`, starting from `a = 0.5`, `b = 2w`, `c = 2b`, where `w` is the
/// smallest positive sample distance.
pub fn fit_mixed_acf(samples: &[(f64, f64)]) -> Result<AcfModel> {
    if samples.len() < 4 {
        return Err(Error::Precondition(format!(
            "mixed ACF fit needs at least 4 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|&(r, c)| !(r.is_finite() && r >= 0.0 && c.is_finite())) {
        return Err(Error::Precondition("samples must be finite with r >= 0".into()));
    }
    let r_min = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let w = samples
        .iter()
        .map(|s| s.0)
        .filter(|&r| r > 1e-12)
        .fold(f64::INFINITY, f64::min);
    let r_max = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    if r_min > 1e-9 || !w.is_finite() || r_max < 3.0 * w * (1.0 - 1e-9) {
        return Err(Error::Precondition(format!(
            "samples must span r = 0 to at least 3 bin widths (min {r_min}, width {w}, max {r_max})"
        )));
    }

    // the prescribed start first, then a few alternatives since a clamped
    // mixing weight can strand the descent at a boundary
    let mut starts = vec![[0.5, (2.0 * w).ln(), (4.0 * w).ln()]];
    for a0 in [0.2, 0.5, 0.8] {
        for (bk, ck) in [(1.0, 2.0), (2.0, 8.0), (4.0, 6.0), (1.0, 6.0)] {
            starts.push([a0, (bk * w).ln(), (ck * w).ln()]);
        }
    }
    let mut best: Option<([f64; 3], f64, bool)> = None;
    for start in starts {
        let (p, cur, converged) = lm_descent(samples, start);
        let better = match &best {
            None => true,
            Some((_, bsse, bconv)) => (converged && !bconv) || (converged == *bconv && cur < *bsse),
        };
        if better {
            best = Some((p, cur, converged));
        }
        if converged && cur < 1e-20 {
            break;
        }
    }
    let (p, cur, converged) = best.expect("at least one start");
    if converged {
        return Ok(to_model(&p));
    }
    let AcfModel::Mixed { a, b_mm, c_mm } = to_model(&p) else { unreachable!() };
    Err(Error::FitNonConvergence {
        iterations: FIT_MAX_ITER,
        residual_norm: cur.sqrt(),
        a,
        b_mm,
        c_mm,
    })
}

fn lm_descent(samples: &[(f64, f64)], mut p: [f64; 3]) -> ([f64; 3], f64, bool) {
    let model = |p: &[f64; 3], r: f64| {
        let (a, b, c) = (p[0], p[1].exp(), p[2].exp());
        let g = (-r * r / (2.0 * b * b)).exp();
        let e = (-r / c).exp();
        (a * g + (1.0 - a) * e, [g - e, a * g * r * r / (b * b), (1.0 - a) * e * r / c])
    };
    let sse = |p: &[f64; 3]| samples.iter().map(|&(r, y)| (model(p, r).0 - y).powi(2)).sum::<f64>();
    let mut cur = sse(&p);
    let mut lambda = 1e-3;
    for _ in 0..FIT_MAX_ITER {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(r, y) in samples {
            let (f, j) = model(&p, r);
            let res = f - y;
            for a in 0..3 {
                jtr[a] += j[a] * res;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * (jtj[a][a] + 1e-12);
            }
            let Some(step) = solve3(&m, &[-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 10.0;
                continue;
            };
            let cand = [(p[0] + step[0]).clamp(0.0, 1.0), p[1] + step[1], p[2] + step[2]];
            let next = sse(&cand);
            if next.is_finite() && next <= cur {
                let rel = (cur - next) / cur.max(f64::MIN_POSITIVE);
                p = cand;
                cur = next;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < FIT_REL_TOL || cur < 1e-28 {
                    return (p, cur, true);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left: stationary point
            return (p, cur, true);
        }
    }
    (p, cur, false)
}

fn to_model(p: &[f64; 3]) -> AcfModel {
    AcfModel::Mixed {
        a: p[0],
        b_mm: p[1].exp(),
        c_mm: p[2].exp(),
    }
}

fn solve3(m: &[[f64; 3]; 3], rhs: &[f64; 3]) -> Option<[f64; 3]> {
    let a = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
    let b = nalgebra::Vector3::from_column_slice(rhs);
    let x = a.lu().solve(&b)?;
    x.iter().all(|v| v.is_finite()).then(|| [x[0], x[1], x[2]])
}
