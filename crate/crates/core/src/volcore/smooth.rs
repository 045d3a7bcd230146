use super::{GridMeta, Mask, Volume, SIGMA_TO_FWHM};
use crate::error::{Error, Result};

/// Kernel half-width in standard deviations.
const TRUNCATE_SIGMAS: f64 = 6.0;

/// Unit-sum sampled Gaussian with the given FWHM, centred at index `radius`.
pub fn gaussian_kernel_1d(fwhm_mm: f64, voxel_mm: f64) -> Vec<f64> {
    if fwhm_mm == 0.0 {
        return vec![1.0];
    }
    let sigma = fwhm_mm / SIGMA_TO_FWHM / voxel_mm;
    let radius = (TRUNCATE_SIGMAS * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

fn check_fwhm(fwhm_mm: f64) -> Result<()> {
    if !(fwhm_mm.is_finite() && fwhm_mm >= 0.0) {
        return Err(Error::Domain(format!("smoothing FWHM must be >= 0, got {fwhm_mm}")));
    }
    Ok(())
}

fn axis_geometry(meta: &GridMeta, axis: usize) -> (usize, usize) {
    // (length along axis, linear stride)
    match axis {
        0 => (meta.nx, 1),
        1 => (meta.ny, meta.nx),
        _ => (meta.nz, meta.nx * meta.ny),
    }
}

fn convolve_axis(data: &[f64], meta: &GridMeta, axis: usize, kernel: &[f64], periodic: bool) -> Vec<f64> {
    if kernel.len() == 1 {
        return data.to_vec();
    }
    let (n, stride) = axis_geometry(meta, axis);
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    let mut line = vec![0.0; n];
    for start in 0..data.len() {
        // first element of each line along `axis`
        if (start / stride) % n != 0 {
            continue;
        }
        for (i, l) in line.iter_mut().enumerate() {
            *l = data[start + i * stride];
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (kj, &w) in kernel.iter().enumerate() {
                let j = i as isize + kj as isize - radius;
                let src = if periodic {
                    j.rem_euclid(n as isize) as usize
                } else if j < 0 || j >= n as isize {
                    continue;
                } else {
                    j as usize
                };
                acc += w * line[src];
            }
            out[start + i * stride] = acc;
        }
    }
    out
}

fn separable(data: &[f64], meta: &GridMeta, fwhm_mm: f64, periodic: bool) -> Vec<f64> {
    let mut cur = data.to_vec();
    for (axis, vox) in meta.voxel_mm().into_iter().enumerate() {
        let k = gaussian_kernel_1d(fwhm_mm, vox);
        cur = convolve_axis(&cur, meta, axis, &k, periodic);
    }
    cur
}

/// Separable Gaussian smoothing with zero padding outside the grid.
///
/// The result is divided by the smoothed all-ones image so voxels near the
/// grid boundary are renormalized over the in-grid part of the kernel.
pub fn gaussian_smooth(vol: &Volume, fwhm_mm: f64) -> Result<Volume> {
    check_fwhm(fwhm_mm)?;
    if fwhm_mm == 0.0 {
        return Ok(vol.clone());
    }
    let meta = *vol.meta();
    let num = separable(vol.data(), &meta, fwhm_mm, false);
    let den = separable(&vec![1.0; meta.len()], &meta, fwhm_mm, false);
    let data = num.iter().zip(&den).map(|(n, d)| n / d).collect();
    Ok(Volume::from_vec_unchecked(meta, data))
}

/// Mask-aware smoothing: only in-mask voxels contribute, the result is
/// renormalized by the smoothed mask and zeroed outside it.
pub fn gaussian_smooth_masked(vol: &Volume, mask: &Mask, fwhm_mm: f64) -> Result<Volume> {
    check_fwhm(fwhm_mm)?;
    vol.meta().ensure_same(mask.meta(), "masked smoothing")?;
    let meta = *vol.meta();
    let inside = mask.inside();
    let masked: Vec<f64> = vol
        .data()
        .iter()
        .zip(inside)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    if fwhm_mm == 0.0 {
        return Ok(Volume::from_vec_unchecked(meta, masked));
    }
    let num = separable(&masked, &meta, fwhm_mm, false);
    let ones: Vec<f64> = inside.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let den = separable(&ones, &meta, fwhm_mm, false);
    let data = (0..meta.len())
        .map(|i| if inside[i] && den[i] > 0.0 { num[i] / den[i] } else { 0.0 })
        .collect();
    Ok(Volume::from_vec_unchecked(meta, data))
}

/// Circular smoothing, treating the grid as a torus.
pub fn gaussian_smooth_periodic(vol: &Volume, fwhm_mm: f64) -> Result<Volume> {
    check_fwhm(fwhm_mm)?;
    if fwhm_mm == 0.0 {
        return Ok(vol.clone());
    }
    let meta = *vol.meta();
    Ok(Volume::from_vec_unchecked(meta, separable(vol.data(), &meta, fwhm_mm, true)))
}

/// Real DFT of the circularly wrapped kernel along an axis of length `n`.
pub(crate) fn periodic_kernel_spectrum(kernel: &[f64], n: usize) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    (0..n)
        .map(|k| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, &w)| {
                    let off = j as isize - radius;
                    w * (2.0 * std::f64::consts::PI * k as f64 * off as f64 / n as f64).cos()
                })
                .sum()
        })
        .collect()
}
