//! Per-subject GLM, AR(1) prewhitening, nuisance regression and the
//! Yeo-Johnson transform.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::volcore::{Dataset4D, Mask, Volume};

/// Bound on the estimated AR(1) coefficient used for whitening.
const PHI_LIMIT: f64 = 0.99;

#[derive(Debug, Clone)]
pub struct FirstLevelResult {
    pub beta: Vec<Volume>,
    pub contrast_map: Volume,
    pub contrast_t: Volume,
    pub residuals: Dataset4D,
    pub dof: f64,
    /// AR(1) coefficient used for whitening, if any.
    pub ar1_phi: Option<f64>,
    /// In-mask voxels with zero residual variance; their t is 0.
    pub n_degenerate: usize,
}

fn check_inputs(ds: &Dataset4D, design: &DesignMatrix, mask: &Mask) -> Result<()> {
    ds.meta().ensure_same(mask.meta(), "glm mask")?;
    mask.require_nonempty()?;
    if design.n_t() != ds.n_t() {
        return Err(Error::Dimension(format!(
            "design has {} rows but dataset has {} time points",
            design.n_t(),
            ds.n_t()
        )));
    }
    Ok(())
}

/// Whitening matrix of a stationary AR(1) process.
fn ar1_whitener(n_t: usize, phi: f64) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n_t, n_t);
    w[(0, 0)] = (1.0 - phi * phi).sqrt();
    for t in 1..n_t {
        w[(t, t)] = 1.0;
        w[(t, t - 1)] = -phi;
    }
    w
}

fn apply_time(m: &DMatrix<f64>, ds: &Dataset4D, mask: &[usize]) -> Vec<Vec<f64>> {
    // returns frames restricted to mask voxels
    let n_out = m.nrows();
    let mut out = vec![vec![0.0; mask.len()]; n_out];
    for s in 0..ds.n_t() {
        let f = ds.frame(s);
        for (t, o) in out.iter_mut().enumerate() {
            let w = m[(t, s)];
            if w != 0.0 {
                for (k, &i) in mask.iter().enumerate() {
                    o[k] += w * f[i];
                }
            }
        }
    }
    out
}

fn ols(
    x: &DMatrix<f64>,
    frames: &[Vec<f64>],
    design: &DesignMatrix,
    dof: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<Vec<f64>>, usize)> {
    let xtx = x.transpose() * x;
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Design("X'X is singular".into()))?;
    let pinv = &inv * x.transpose();
    let p = x.ncols();
    let nv = frames[0].len();
    let mut beta = vec![vec![0.0; nv]; p];
    for (t, f) in frames.iter().enumerate() {
        for (j, b) in beta.iter_mut().enumerate() {
            let w = pinv[(j, t)];
            b.iter_mut().zip(f).for_each(|(b, y)| *b += w * y);
        }
    }
    let mut resid = frames.to_vec();
    for (t, r) in resid.iter_mut().enumerate() {
        for (j, b) in beta.iter().enumerate() {
            let w = x[(t, j)];
            r.iter_mut().zip(b).for_each(|(r, b)| *r -= w * b);
        }
    }
    let c = DVector::from_column_slice(&design.contrast);
    let cvc = (c.transpose() * &inv * &c)[(0, 0)];
    let mut con = vec![0.0; nv];
    for (j, b) in beta.iter().enumerate() {
        let w = design.contrast[j];
        if w != 0.0 {
            con.iter_mut().zip(b).for_each(|(c, b)| *c += w * b);
        }
    }
    let mut degenerate = 0;
    let tmap: Vec<f64> = (0..nv)
        .map(|k| {
            let rss: f64 = resid.iter().map(|r| r[k] * r[k]).sum();
            let tss: f64 = frames.iter().map(|f| f[k] * f[k]).sum();
            let se = (rss / dof * cvc).sqrt();
            // residuals at rounding level count as an exact fit
            if rss > 1e-24 * tss && se.is_finite() {
                con[k] / se
            } else {
                degenerate += 1;
                0.0
            }
        })
        .collect();
    Ok((beta, con, tmap, resid, degenerate))
}

fn scatter(meta: crate::volcore::GridMeta, idx: &[usize], vals: &[f64]) -> Volume {
    let mut data = vec![0.0; meta.len()];
    for (&i, &v) in idx.iter().zip(vals) {
        data[i] = v;
    }
    Volume::from_vec_unchecked(meta, data)
}

fn assemble(
    ds: &Dataset4D,
    idx: &[usize],
    fit: (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<Vec<f64>>, usize),
    dof: f64,
    phi: Option<f64>,
) -> Result<FirstLevelResult> {
    let meta = *ds.meta();
    let (beta, con, tmap, resid, n_degenerate) = fit;
    let mut data = vec![0.0; meta.len() * resid.len()];
    for (t, r) in resid.iter().enumerate() {
        let f = &mut data[t * meta.len()..(t + 1) * meta.len()];
        for (&i, &v) in idx.iter().zip(r) {
            f[i] = v;
        }
    }
    Ok(FirstLevelResult {
        beta: beta.iter().map(|b| scatter(meta, idx, b)).collect(),
        contrast_map: scatter(meta, idx, &con),
        contrast_t: scatter(meta, idx, &tmap),
        residuals: Dataset4D::new(meta, ds.tr_s(), resid.len(), data)?,
        dof,
        ar1_phi: phi,
        n_degenerate,
    })
}

/// Mask-averaged lag-1 autocorrelation of residual frames.
fn global_ar1(resid: &[Vec<f64>]) -> f64 {
    let nv = resid[0].len();
    let mut sum = 0.0;
    let mut used = 0usize;
    for k in 0..nv {
        let den: f64 = resid.iter().map(|r| r[k] * r[k]).sum();
        if den > 0.0 {
            let num: f64 = resid.windows(2).map(|w| w[0][k] * w[1][k]).sum();
            sum += num / den;
            used += 1;
        }
    }
    if used == 0 {
        0.0
    } else {
        (sum / used as f64).clamp(-PHI_LIMIT, PHI_LIMIT)
    }
}

/// Ordinary least squares per in-mask voxel, optionally refit after
/// whitening with a global AR(1) coefficient estimated from the OLS
/// residuals.
pub fn glm_fit(ds: &Dataset4D, design: &DesignMatrix, mask: &Mask, prewhiten: bool) -> Result<FirstLevelResult> {
    check_inputs(ds, design, mask)?;
    let idx = mask.indices();
    let n_t = ds.n_t();
    let p = design.n_cols();
    let dof = n_t as f64 - p as f64;
    if dof < 1.0 {
        return Err(Error::Design(format!("T={n_t} leaves no degrees of freedom for {p} columns")));
    }
    let frames = apply_time(&DMatrix::identity(n_t, n_t), ds, &idx);
    let fit = ols(&design.x, &frames, design, dof)?;
    if !prewhiten {
        return assemble(ds, &idx, fit, dof, None);
    }
    let phi = global_ar1(&fit.3);
    let dof = dof - 1.0;
    if dof < 1.0 {
        return Err(Error::Design(format!("T={n_t} leaves no degrees of freedom after prewhitening")));
    }
    let w = ar1_whitener(n_t, phi);
    let wx = &w * &design.x;
    let wframes = apply_time(&w, ds, &idx);
    let fit = ols(&wx, &wframes, design, dof)?;
    assemble(ds, &idx, fit, dof, Some(phi))
}

/// Fit after whitening with a known AR(1) coefficient; `phi = 0` is plain
/// OLS.
pub fn glm_fit_ar1(ds: &Dataset4D, design: &DesignMatrix, mask: &Mask, phi: f64) -> Result<FirstLevelResult> {
    check_inputs(ds, design, mask)?;
    if !(phi.abs() < 1.0) {
        return Err(Error::Domain(format!("AR(1) coefficient must lie in (-1, 1), got {phi}")));
    }
    let idx = mask.indices();
    let n_t = ds.n_t();
    let dof = n_t as f64 - design.n_cols() as f64;
    if dof < 1.0 {
        return Err(Error::Design(format!("T={n_t} leaves no degrees of freedom")));
    }
    let w = ar1_whitener(n_t, phi);
    let wx = &w * &design.x;
    let fit = ols(&wx, &apply_time(&w, ds, &idx), design, dof)?;
    assemble(ds, &idx, fit, dof, Some(phi))
}

/// Orthonormal basis of span(intercept, nuisance columns).
fn nuisance_basis(n_t: usize, nuisance: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if nuisance.is_empty() {
        return Err(Error::Precondition("need at least one nuisance time course".into()));
    }
    if nuisance.len() >= n_t {
        return Err(Error::Domain(format!(
            "{} nuisance columns leave nothing of a {n_t}-sample series",
            nuisance.len()
        )));
    }
    for c in nuisance {
        if c.len() != n_t {
            return Err(Error::Dimension(format!("nuisance column has {} samples, expected {n_t}", c.len())));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("nuisance columns must be finite".into()));
        }
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for col in std::iter::once(vec![1.0; n_t]).chain(nuisance.iter().cloned()) {
        let n0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = col;
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
                r.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-10 * n0.max(1.0) {
            basis.push(r.into_iter().map(|v| v / n).collect());
        }
    }
    Ok(basis)
}

/// Residual-forming matrix `I - QQ'` for the nuisance span.
pub fn nuisance_projector(n_t: usize, nuisance: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let basis = nuisance_basis(n_t, nuisance)?;
    let mut m = DMatrix::identity(n_t, n_t);
    for q in &basis {
        for i in 0..n_t {
            for j in 0..n_t {
                m[(i, j)] -= q[i] * q[j];
            }
        }
    }
    Ok(m)
}

/// Remove from every voxel the full variance shared with the nuisance
/// time courses and an intercept.
pub fn regress_out(ds: &Dataset4D, nuisance: &[Vec<f64>]) -> Result<Dataset4D> {
    let n_t = ds.n_t();
    let basis = nuisance_basis(n_t, nuisance)?;
    let n = ds.meta().len();
    let mut out = ds.clone();
    let mut coef = vec![0.0; n];
    for q in &basis {
        coef.iter_mut().for_each(|c| *c = 0.0);
        for (t, &w) in q.iter().enumerate() {
            let f = out.frame(t);
            coef.iter_mut().zip(f).for_each(|(c, y)| *c += w * y);
        }
        for (t, &w) in q.iter().enumerate() {
            let f = out.frame_mut(t);
            f.iter_mut().zip(&coef).for_each(|(y, c)| *y -= w * c);
        }
    }
    Ok(out)
}

/// Temporal weights `v` with `contrast_map = sum_t v[t] * y_t` for an
/// optional nuisance cleanup followed by a fit whitened with a known
/// AR(1) coefficient.
pub fn contrast_weights(design: &DesignMatrix, phi: f64, nuisance: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
    let n_t = design.n_t();
    let w = ar1_whitener(n_t, phi);
    let wx = &w * &design.x;
    let inv = (wx.transpose() * &wx)
        .try_inverse()
        .ok_or_else(|| Error::Design("X'X is singular".into()))?;
    let c = DVector::from_column_slice(&design.contrast);
    // v' = c' inv X'W'W M
    let mut v = w.transpose() * (&wx * (inv * c));
    if let Some(n) = nuisance {
        v = nuisance_projector(n_t, n)?.transpose() * v;
    }
    Ok(v.iter().copied().collect())
}

/// `v' R v` for the correlation matrix of a unit-variance AR(1) series.
pub fn ar1_quadratic_form(v: &[f64], phi: f64) -> f64 {
    let n = v.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut pw = 1.0;
        for j in i..n {
            let term = v[i] * v[j] * pw;
            total += if j == i { term } else { 2.0 * term };
            pw *= phi;
            if pw.abs() < 1e-18 {
                break;
            }
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YjLambda {
    Auto,
    #[serde(untagged)]
    Fixed(f64),
}

pub fn yeo_johnson_value(x: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        if lambda.abs() < 1e-12 {
            x.ln_1p()
        } else {
            ((x + 1.0).powf(lambda) - 1.0) / lambda
        }
    } else if (lambda - 2.0).abs() < 1e-12 {
        -(-x).ln_1p()
    } else {
        -((1.0 - x).powf(2.0 - lambda) - 1.0) / (2.0 - lambda)
    }
}

fn yj_loglik(values: &[f64], lambda: f64, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(values.iter().map(|&x| yeo_johnson_value(x, lambda)));
    let n = values.len() as f64;
    let m = buf.iter().sum::<f64>() / n;
    let var = buf.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let jac: f64 = values.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    if var <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -0.5 * n * var.ln() + (lambda - 1.0) * jac
}

/// Auto grid: -2..=2 in steps of 0.01.
pub fn yj_auto_lambda(values: &[f64]) -> f64 {
    let mut buf = Vec::with_capacity(values.len());
    let mut best = (1.0, f64::NEG_INFINITY);
    for i in 0..=400 {
        let l = -2.0 + 0.01 * i as f64;
        let ll = yj_loglik(values, l, &mut buf);
        if ll > best.1 {
            best = (l, ll);
        }
    }
    best.0
}

/// Transform `values`, choosing lambda by Gaussian likelihood when `Auto`.
pub fn yeo_johnson(values: &[f64], lambda: YjLambda) -> Result<(Vec<f64>, f64)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("Yeo-Johnson input must be finite".into()));
    }
    let l = match lambda {
        YjLambda::Fixed(l) => l,
        YjLambda::Auto => yj_auto_lambda(values),
    };
    Ok((values.iter().map(|&x| yeo_johnson_value(x, l)).collect(), l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, convolve_regressors, DesignExtras, Event, Paradigm, ParadigmKind};
    use crate::seed;
    use crate::volcore::GridMeta;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn design(n_t: usize) -> DesignMatrix {
        let events = (0..n_t / 10)
            .map(|i| Event { onset_s: i as f64 * 20.0, duration_s: 5.0, condition: 1 + (i % 2) as u8 })
            .collect();
        let p = Paradigm::new(ParadigmKind::Custom, events, n_t as f64 * 2.0).unwrap();
        build_design(&convolve_regressors(&p, n_t, 2.0), &[], n_t, 2.0, 0, &DesignExtras::default()).unwrap()
    }

    fn noise(meta: GridMeta, n_t: usize, s: u64) -> Dataset4D {
        let mut rng = seed::rng(s);
        let data = (0..meta.len() * n_t).map(|_| StandardNormal.sample(&mut rng)).collect();
        Dataset4D::new(meta, 2.0, n_t, data).unwrap()
    }

    fn meta4() -> GridMeta {
        GridMeta::new([4, 4, 4], [2.0; 3]).unwrap()
    }

    #[test]
    fn noiseless_recovery() {
        let d = design(60);
        let meta = meta4();
        let b0 = [2.0, -1.0, 0.5];
        let mut data = Vec::new();
        for t in 0..60 {
            let y: f64 = (0..3).map(|j| d.x[(t, j)] * b0[j]).sum();
            data.extend(std::iter::repeat_n(y, meta.len()));
        }
        let ds = Dataset4D::new(meta, 2.0, 60, data).unwrap();
        let r = glm_fit(&ds, &d, &Mask::full(meta), false).unwrap();
        for j in 0..3 {
            assert!(r.beta[j].data().iter().all(|b| (b - b0[j]).abs() < 1e-10));
        }
        assert!(r.residuals.data().iter().all(|e| e.abs() < 1e-10));
        assert_eq!(r.n_degenerate, meta.len());
    }

    #[test]
    fn residuals_orthogonal() {
        let d = design(50);
        let ds = noise(meta4(), 50, 1);
        let r = glm_fit(&ds, &d, &Mask::full(meta4()), false).unwrap();
        for v in 0..64 {
            let e = r.residuals.voxel_series(v);
            for j in 0..3 {
                let dot: f64 = (0..50).map(|t| d.x[(t, j)] * e[t]).sum();
                assert!(dot.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn t_matches_per_voxel_oracle() {
        let d = design(40);
        let ds = noise(meta4(), 40, 2);
        let r = glm_fit(&ds, &d, &Mask::full(meta4()), false).unwrap();
        let x = &d.x;
        let inv = (x.transpose() * x).try_inverse().unwrap();
        for v in 0..64 {
            let y = DVector::from_vec(ds.voxel_series(v));
            let b = &inv * x.transpose() * &y;
            let e = &y - x * &b;
            let s2 = e.dot(&e) / 37.0;
            let c = DVector::from_vec(d.contrast.clone());
            let t = c.dot(&b) / (s2 * (c.transpose() * &inv * &c)[(0, 0)]).sqrt();
            assert!((r.contrast_t.data()[v] - t).abs() < 1e-9);
        }
        assert_eq!(r.dof, 37.0);
    }

    #[test]
    fn contrast_linear_in_data() {
        let d = design(40);
        let ds = noise(meta4(), 40, 3);
        let scaled = Dataset4D::new(meta4(), 2.0, 40, ds.data().iter().map(|v| 2.5 * v).collect()).unwrap();
        let a = glm_fit(&ds, &d, &Mask::full(meta4()), true).unwrap();
        let b = glm_fit(&scaled, &d, &Mask::full(meta4()), true).unwrap();
        for (x, y) in a.contrast_map.data().iter().zip(b.contrast_map.data()) {
            assert!((2.5 * x - y).abs() < 1e-9);
        }
        assert_eq!(a.dof, 36.0);
    }

    #[test]
    fn phi_zero_is_ols() {
        let d = design(40);
        let ds = noise(meta4(), 40, 4);
        let a = glm_fit(&ds, &d, &Mask::full(meta4()), false).unwrap();
        let b = glm_fit_ar1(&ds, &d, &Mask::full(meta4()), 0.0).unwrap();
        assert_eq!(a.contrast_map.data(), b.contrast_map.data());
        assert_eq!(a.contrast_t.data(), b.contrast_t.data());
    }

    #[test]
    fn design_length_mismatch() {
        let r = glm_fit(&noise(meta4(), 30, 0), &design(40), &Mask::full(meta4()), false);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn contrast_weights_match_fit() {
        let d = design(40);
        let ds = noise(meta4(), 40, 5);
        let g: Vec<f64> = (0..40).map(|t| (t as f64 * 0.7).sin()).collect();
        let cleaned = regress_out(&ds, std::slice::from_ref(&g)).unwrap();
        let fit = glm_fit_ar1(&cleaned, &d, &Mask::full(meta4()), 0.3).unwrap();
        let v = contrast_weights(&d, 0.3, Some(std::slice::from_ref(&g))).unwrap();
        for i in 0..64 {
            let s: f64 = ds.voxel_series(i).iter().zip(&v).map(|(y, w)| y * w).sum();
            assert!((s - fit.contrast_map.data()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratic_form_oracle() {
        let v = [1.0, -2.0, 0.5, 3.0];
        let phi: f64 = 0.4;
        let mut direct = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                direct += v[i] * v[j] * phi.powi((i as i32 - j as i32).abs());
            }
        }
        assert!((ar1_quadratic_form(&v, phi) - direct).abs() < 1e-12);
    }

    #[test]
    fn regress_out_removes_nuisance() {
        let meta = meta4();
        let g: Vec<f64> = (0..50).map(|t| (t as f64 * 0.3).cos()).collect();
        let base = noise(meta, 50, 6);
        let mut data = base.data().to_vec();
        for t in 0..50 {
            for i in 0..meta.len() {
                data[t * meta.len() + i] += 3.0 * g[t];
            }
        }
        let ds = Dataset4D::new(meta, 2.0, 50, data).unwrap();
        let out = regress_out(&ds, std::slice::from_ref(&g)).unwrap();
        for i in 0..meta.len() {
            let s = out.voxel_series(i);
            let dot: f64 = s.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-10);
        }
        let twice = regress_out(&out, std::slice::from_ref(&g)).unwrap();
        for (a, b) in out.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn regress_out_orthogonal_nuisance_demeans() {
        let meta = GridMeta::new([1, 1, 1], [1.0; 3]).unwrap();
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let ds = Dataset4D::new(meta, 1.0, 4, y).unwrap();
        let n = vec![1.0, -1.0, -1.0, 1.0];
        let out = regress_out(&ds, &[n]).unwrap();
        let expected = [-1.5, -0.5, 0.5, 1.5];
        for (a, b) in out.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn regress_out_too_many_columns() {
        let ds = noise(meta4(), 4, 0);
        let cols = vec![vec![1.0, 2.0, 3.0, 5.0]; 4];
        assert!(matches!(regress_out(&ds, &cols), Err(Error::Domain(_))));
    }

    #[test]
    fn yj_reference_values() {
        assert!((yeo_johnson_value(2.0, 0.0) - 3f64.ln()).abs() < 1e-15);
        assert!((yeo_johnson_value(-2.0, 0.0) + 4.0).abs() < 1e-15);
        for l in [-2.0, -0.5, 0.0, 1.0, 2.0] {
            assert_eq!(yeo_johnson_value(0.0, l), 0.0);
        }
        let (y, _) = yeo_johnson(&[-3.0, -0.2, 0.0, 1.5, 7.0], YjLambda::Fixed(1.0)).unwrap();
        for (a, b) in y.iter().zip([-3.0, -0.2, 0.0, 1.5, 7.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn yj_auto_reduces_skew() {
        let mut rng = seed::rng(1);
        let x: Vec<f64> = (0..500)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z.exp()
            })
            .collect();
        let (_, l) = yeo_johnson(&x, YjLambda::Auto).unwrap();
        assert!(l < 0.5, "lambda {l}");
    }

    proptest! {
        #[test]
        fn yj_strictly_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0, l in -2.0f64..2.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(yeo_johnson_value(lo, l) < yeo_johnson_value(hi, l));
        }
    }
}
