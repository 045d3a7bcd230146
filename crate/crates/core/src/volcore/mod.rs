//! Core 3D/4D value types shared by the rest of the crate.
//!
//! All arrays are stored in x-fastest linear order: the voxel at `(x, y, z)`
//! lives at `x + nx * (y + ny * z)`.

mod cluster;
mod io;
pub(crate) mod smooth;

pub use cluster::{
    connected_components, Cluster, ClusterScratch, ClusterTable, Connectivity, MaskGraph, Sign, Tail,
};
pub use io::{read_dataset_dir, read_nifti, read_volume, write_dataset, write_volume, NiftiImage};
pub use smooth::{gaussian_kernel_1d, gaussian_smooth, gaussian_smooth_masked, gaussian_smooth_periodic};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `FWHM = SIGMA_TO_FWHM * sigma`
pub const SIGMA_TO_FWHM: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl GridMeta {
    pub fn new(dims: [usize; 3], voxel_mm: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::Precondition(format!(
                "grid dimensions must be positive, got {dims:?}"
            )));
        }
        if voxel_mm.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(Error::Precondition(format!(
                "voxel sizes must be positive and finite, got {voxel_mm:?}"
            )));
        }
        Ok(GridMeta {
            nx: dims[0],
            ny: dims[1],
            nz: dims[2],
            dx: voxel_mm[0],
            dy: voxel_mm[1],
            dz: voxel_mm[2],
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn voxel_mm(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    pub fn min_voxel_mm(&self) -> f64 {
        self.dx.min(self.dy).min(self.dz)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.nx;
        let yz = i / self.nx;
        [x, yz % self.ny, yz / self.ny]
    }

    pub fn center_index(&self) -> usize {
        self.index(self.nx / 2, self.ny / 2, self.nz / 2)
    }

    pub(crate) fn ensure_same(&self, other: &GridMeta, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::Dimension(format!(
                "{what}: grid {:?}@{:?} does not match {:?}@{:?}",
                self.dims(),
                self.voxel_mm(),
                other.dims(),
                other.voxel_mm()
            )));
        }
        Ok(())
    }
}

/// A scalar field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    meta: GridMeta,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(meta: GridMeta, data: Vec<f64>) -> Result<Self> {
        if data.len() != meta.len() {
            return Err(Error::Dimension(format!(
                "volume data has {} values, grid needs {}",
                data.len(),
                meta.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at voxel {i}")));
        }
        Ok(Volume { meta, data })
    }

    pub fn zeros(meta: GridMeta) -> Self {
        Volume {
            meta,
            data: vec![0.0; meta.len()],
        }
    }

    pub(crate) fn from_vec_unchecked(meta: GridMeta, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), meta.len());
        Volume { meta, data }
    }

    #[inline]
    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.meta.index(x, y, z)]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index and value of the largest entry.
    pub fn argmax(&self) -> (usize, f64) {
        self.data
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
    }
}

/// In-analysis voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    meta: GridMeta,
    inside: Vec<bool>,
}

impl Mask {
    pub fn new(meta: GridMeta, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != meta.len() {
            return Err(Error::Dimension(format!(
                "mask has {} entries, grid needs {}",
                inside.len(),
                meta.len()
            )));
        }
        Ok(Mask { meta, inside })
    }

    pub fn full(meta: GridMeta) -> Self {
        Mask {
            meta,
            inside: vec![true; meta.len()],
        }
    }

    /// Voxels whose value is strictly above `threshold`.
    pub fn from_volume(vol: &Volume, threshold: f64) -> Self {
        Mask {
            meta: *vol.meta(),
            inside: vol.data().iter().map(|&v| v > threshold).collect(),
        }
    }

    /// Axis-aligned ellipsoid centred in the grid, scaled so that roughly
    /// `fill` of the grid lies inside (the ellipsoid is clipped by the box
    /// faces when `fill` exceeds pi/6).
    pub fn ellipsoid(meta: GridMeta, fill: f64) -> Result<Self> {
        if !(fill > 0.0 && fill <= 1.0) {
            return Err(Error::Domain(format!("fill fraction {fill} outside (0, 1]")));
        }
        let build = |scale: f64| -> Vec<bool> {
            let c = [
                (meta.nx as f64 - 1.0) / 2.0,
                (meta.ny as f64 - 1.0) / 2.0,
                (meta.nz as f64 - 1.0) / 2.0,
            ];
            let r = [
                scale * meta.nx as f64 / 2.0,
                scale * meta.ny as f64 / 2.0,
                scale * meta.nz as f64 / 2.0,
            ];
            (0..meta.len())
                .map(|i| {
                    let [x, y, z] = meta.coords(i);
                    let q = ((x as f64 - c[0]) / r[0]).powi(2)
                        + ((y as f64 - c[1]) / r[1]).powi(2)
                        + ((z as f64 - c[2]) / r[2]).powi(2);
                    q <= 1.0
                })
                .collect()
        };
        let target = (fill * meta.len() as f64).round() as usize;
        let (mut lo, mut hi) = (0.0f64, 2.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let n = build(mid).iter().filter(|&&b| b).count();
            if n < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let inside = build(hi);
        let mask = Mask { meta, inside };
        mask.require_nonempty()?;
        Ok(mask)
    }

    #[inline]
    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    #[inline]
    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.inside[i]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Linear indices of in-mask voxels, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.inside
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn require_nonempty(&self) -> Result<()> {
        if self.inside.iter().any(|&b| b) {
            Ok(())
        } else {
            Err(Error::Precondition("mask contains no voxels".into()))
        }
    }

    pub fn intersect(&self, other: &Mask) -> Result<Mask> {
        self.meta.ensure_same(&other.meta, "mask intersection")?;
        Ok(Mask {
            meta: self.meta,
            inside: self
                .inside
                .iter()
                .zip(&other.inside)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    pub fn complement_within(&self, outer: &Mask) -> Result<Mask> {
        self.meta.ensure_same(&outer.meta, "mask complement")?;
        Ok(Mask {
            meta: self.meta,
            inside: self
                .inside
                .iter()
                .zip(&outer.inside)
                .map(|(&a, &b)| b && !a)
                .collect(),
        })
    }

    pub fn to_volume(&self) -> Volume {
        Volume::from_vec_unchecked(
            self.meta,
            self.inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }
}

/// A stack of volumes sampled every `tr_s` seconds, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset4D {
    meta: GridMeta,
    n_t: usize,
    tr_s: f64,
    data: Vec<f64>,
}

impl Dataset4D {
    pub fn new(meta: GridMeta, tr_s: f64, n_t: usize, data: Vec<f64>) -> Result<Self> {
        if n_t < 2 {
            return Err(Error::Precondition(format!(
                "a 4D dataset needs at least 2 time points, got {n_t}"
            )));
        }
        if !(tr_s.is_finite() && tr_s > 0.0) {
            return Err(Error::Precondition(format!("repetition time must be positive, got {tr_s}")));
        }
        if data.len() != meta.len() * n_t {
            return Err(Error::Dimension(format!(
                "dataset has {} values, expected {} x {}",
                data.len(),
                n_t,
                meta.len()
            )));
        }
        Ok(Dataset4D { meta, n_t, tr_s, data })
    }

    pub fn from_frames(tr_s: f64, frames: &[Volume]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Precondition("no frames supplied".into()))?;
        let meta = *first.meta();
        let mut data = Vec::with_capacity(meta.len() * frames.len());
        for (t, f) in frames.iter().enumerate() {
            meta.ensure_same(f.meta(), &format!("frame {t}"))?;
            data.extend_from_slice(f.data());
        }
        Dataset4D::new(meta, tr_s, frames.len(), data)
    }

    #[inline]
    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    #[inline]
    pub fn n_t(&self) -> usize {
        self.n_t
    }

    #[inline]
    pub fn tr_s(&self) -> f64 {
        self.tr_s
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.meta.len();
        &self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub(crate) fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.meta.len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn volume(&self, t: usize) -> Volume {
        Volume::from_vec_unchecked(self.meta, self.frame(t).to_vec())
    }

    pub fn voxel_series(&self, v: usize) -> Vec<f64> {
        let n = self.meta.len();
        (0..self.n_t).map(|t| self.data[t * n + v]).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Per-time-point mean over the mask.
    pub fn mask_mean_series(&self, mask: &Mask) -> Result<Vec<f64>> {
        self.meta.ensure_same(mask.meta(), "mask mean")?;
        mask.require_nonempty()?;
        let idx = mask.indices();
        let n = idx.len() as f64;
        Ok((0..self.n_t)
            .map(|t| {
                let f = self.frame(t);
                idx.iter().map(|&i| f[i]).sum::<f64>() / n
            })
            .collect())
    }
}
