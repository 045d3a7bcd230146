//! Synthetic null subjects: stationary Gaussian fields with a prescribed
//! spatial ACF, AR(1) temporal structure, optional non-stationary
//! smoothness, and shared physiological-style artifacts.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::acf::AcfModel;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::volcore::{gaussian_kernel_1d, gaussian_smooth, Dataset4D, GridMeta, Mask, Volume};

/// Correlation below which the ACF is considered to have died out when
/// checking that it fits on the grid.
pub const ACF_SUPPORT_EPS: f64 = 0.01;

/// Desk-scale grid used by every site preset unless overridden.
pub const DESK_DIMS: [usize; 3] = [48, 56, 48];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteName {
    #[serde(rename = "beijing-like")]
    BeijingLike,
    #[serde(rename = "cambridge-like")]
    CambridgeLike,
    #[serde(rename = "oulu-like")]
    OuluLike,
}

impl SiteName {
    pub fn as_str(self) -> &'static str {
        match self {
            SiteName::BeijingLike => "beijing-like",
            SiteName::CambridgeLike => "cambridge-like",
            SiteName::OuluLike => "oulu-like",
        }
    }
}

/// Acquisition geometry and timing of a simulated site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitePreset {
    pub name: SiteName,
    pub grid: GridMeta,
    pub n_t: usize,
    pub tr_s: f64,
    pub smoothing_mm: Vec<f64>,
}

impl SitePreset {
    pub fn new(name: SiteName) -> Self {
        let (vox, n_t, tr_s) = match name {
            SiteName::BeijingLike => ([3.13, 3.13, 3.6], 225, 2.0),
            SiteName::CambridgeLike => ([3.0, 3.0, 3.0], 119, 3.0),
            SiteName::OuluLike => ([4.0, 4.0, 4.4], 245, 1.8),
        };
        SitePreset {
            name,
            grid: GridMeta::new(DESK_DIMS, vox).expect("preset geometry"),
            n_t,
            tr_s,
            smoothing_mm: vec![4.0, 6.0, 8.0, 10.0],
        }
    }

    pub fn with_dims(mut self, dims: [usize; 3]) -> Result<Self> {
        self.grid = GridMeta::new(dims, self.grid.voxel_mm())?;
        Ok(self)
    }

    pub fn with_timing(mut self, n_t: usize, tr_s: f64) -> Result<Self> {
        if n_t < 2 || !(tr_s > 0.0) {
            return Err(Error::Precondition(format!("invalid timing T={n_t}, TR={tr_s}")));
        }
        self.n_t = n_t;
        self.tr_s = tr_s;
        Ok(self)
    }

    /// Ellipsoidal brain-like mask filling ~60% of the grid.
    pub fn mask(&self) -> Mask {
        Mask::ellipsoid(self.grid, 0.6).expect("non-empty preset mask")
    }
}

/// In-place 3D FFT over an x-fastest complex buffer.
struct Fft3 {
    dims: [usize; 3],
    plans: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    fn new(dims: [usize; 3], inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        let mut plan = |n| {
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        };
        let plans = [plan(dims[0]), plan(dims[1]), plan(dims[2])];
        Fft3 { dims, plans }
    }

    fn process(&self, buf: &mut [Complex64]) {
        let [nx, ny, nz] = self.dims;
        self.plans[0].process(buf);
        let mut lines = vec![Complex64::default(); buf.len()];
        // y lines
        for z in 0..nz {
            for x in 0..nx {
                let base = (z * nx + x) * ny;
                for y in 0..ny {
                    lines[base + y] = buf[x + nx * (y + ny * z)];
                }
            }
        }
        self.plans[1].process(&mut lines);
        for z in 0..nz {
            for x in 0..nx {
                let base = (z * nx + x) * ny;
                for y in 0..ny {
                    buf[x + nx * (y + ny * z)] = lines[base + y];
                }
            }
        }
        // z lines
        for y in 0..ny {
            for x in 0..nx {
                let base = (y * nx + x) * nz;
                for z in 0..nz {
                    lines[base + z] = buf[x + nx * (y + ny * z)];
                }
            }
        }
        self.plans[2].process(&mut lines);
        for y in 0..ny {
            for x in 0..nx {
                let base = (y * nx + x) * nz;
                for z in 0..nz {
                    buf[x + nx * (y + ny * z)] = lines[base + z];
                }
            }
        }
    }
}

/// Spectral generator of unit-variance stationary Gaussian fields on a
/// periodic grid.
///
/// The target ACF is laid out on the grid at minimum-image distances, its
/// DFT is clamped at zero, and complex white noise shaped by the square
/// root of that spectrum is inverse transformed. The real and imaginary
/// parts are two independent fields.
pub struct FieldSynth {
    meta: GridMeta,
    amp: Vec<f64>,
    inverse: Fft3,
}

impl std::fmt::Debug for FieldSynth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldSynth").field("meta", &self.meta).finish_non_exhaustive()
    }
}

impl FieldSynth {
    pub fn new(meta: GridMeta, acf: &AcfModel) -> Result<Self> {
        Self::with_smoothing(meta, acf, 0.0)
    }

    /// Fields as they look after circular Gaussian smoothing with
    /// `smooth_fwhm_mm`, renormalized to unit variance.
    pub fn with_smoothing(meta: GridMeta, acf: &AcfModel, smooth_fwhm_mm: f64) -> Result<Self> {
        acf.validate()?;
        let radius = acf.support_radius_mm(ACF_SUPPORT_EPS);
        for (axis, (n, d)) in meta.dims().iter().zip(meta.voxel_mm()).enumerate() {
            let half = *n as f64 * d / 2.0;
            if radius > half {
                return Err(Error::Domain(format!(
                    "ACF support {radius:.1} mm exceeds half the grid extent along axis {axis} ({half:.1} mm)"
                )));
            }
        }
        if !(smooth_fwhm_mm >= 0.0) {
            return Err(Error::Domain(format!("smoothing FWHM must be >= 0, got {smooth_fwhm_mm}")));
        }
        let [nx, ny, nz] = meta.dims();
        let mut buf = vec![Complex64::default(); meta.len()];
        for (i, b) in buf.iter_mut().enumerate() {
            let [x, y, z] = meta.coords(i);
            let wrap = |c: usize, n: usize, d: f64| c.min(n - c) as f64 * d;
            let r = (wrap(x, nx, meta.dx).powi(2) + wrap(y, ny, meta.dy).powi(2) + wrap(z, nz, meta.dz).powi(2)).sqrt();
            *b = Complex64::new(acf.eval(r), 0.0);
        }
        Fft3::new(meta.dims(), false).process(&mut buf);
        let mut spec: Vec<f64> = buf.iter().map(|c| c.re.max(0.0)).collect();
        if smooth_fwhm_mm > 0.0 {
            let kx = crate::volcore::smooth::periodic_kernel_spectrum(&gaussian_kernel_1d(smooth_fwhm_mm, meta.dx), nx);
            let ky = crate::volcore::smooth::periodic_kernel_spectrum(&gaussian_kernel_1d(smooth_fwhm_mm, meta.dy), ny);
            let kz = crate::volcore::smooth::periodic_kernel_spectrum(&gaussian_kernel_1d(smooth_fwhm_mm, meta.dz), nz);
            for (i, s) in spec.iter_mut().enumerate() {
                let [x, y, z] = meta.coords(i);
                *s *= (kx[x] * ky[y] * kz[z]).powi(2);
            }
        }
        let n = meta.len() as f64;
        let var = spec.iter().sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(Error::Domain("ACF spectrum is identically zero on this grid".into()));
        }
        let amp = spec.iter().map(|s| (s / var / n).sqrt()).collect();
        Ok(FieldSynth {
            meta,
            amp,
            inverse: Fft3::new(meta.dims(), true),
        })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    /// Two independent fields.
    pub fn sample_pair(&self, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        let mut buf: Vec<Complex64> = self
            .amp
            .iter()
            .map(|&a| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(a * re, a * im)
            })
            .collect();
        self.inverse.process(&mut buf);
        buf.into_iter().map(|c| (c.re, c.im)).unzip()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.sample_pair(rng).0
    }

    /// `n` fields, consuming pairs from one stream.
    pub fn sample_many(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let (a, b) = self.sample_pair(rng);
            out.push(a);
            out.push(b);
        }
        out.truncate(n);
        out
    }
}

/// A stationary zero-mean, unit-variance Gaussian field with the given ACF.
pub fn sample_null_field(grid: GridMeta, acf: &AcfModel, seed: u64) -> Result<Volume> {
    let synth = FieldSynth::new(grid, acf)?;
    Ok(Volume::from_vec_unchecked(grid, synth.sample(&mut seed::rng(seed))))
}

/// Where a shared artifact lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LocusSpec {
    /// Midline tube running front to back just below the top of the mask,
    /// mimicking the superior sagittal sinus.
    SinusTube { radius_mm: f64, depth_mm: f64 },
}

impl LocusSpec {
    pub fn build(&self, mask: &Mask) -> Result<Mask> {
        match *self {
            LocusSpec::SinusTube { radius_mm, depth_mm } => sinus_tube(mask, radius_mm, depth_mm),
        }
    }
}

/// Tube along y centred on the midline, `depth_mm` below the top of the
/// mask at each y, intersected with the mask.
pub fn sinus_tube(mask: &Mask, radius_mm: f64, depth_mm: f64) -> Result<Mask> {
    if !(radius_mm > 0.0 && depth_mm >= 0.0) {
        return Err(Error::Domain(format!("invalid tube radius {radius_mm} / depth {depth_mm}")));
    }
    let m = *mask.meta();
    let xc = (m.nx as f64 - 1.0) / 2.0;
    let mut inside = vec![false; m.len()];
    for y in 0..m.ny {
        let xm = m.nx / 2;
        let Some(top) = (0..m.nz).rev().find(|&z| mask.contains(m.index(xm, y, z))) else {
            continue;
        };
        let zc = top as f64 - depth_mm / m.dz;
        for z in 0..m.nz {
            for x in 0..m.nx {
                let d2 = ((x as f64 - xc) * m.dx).powi(2) + ((z as f64 - zc) * m.dz).powi(2);
                let i = m.index(x, y, z);
                if d2 <= radius_mm * radius_mm && mask.contains(i) {
                    inside[i] = true;
                }
            }
        }
    }
    let locus = Mask::new(m, inside)?;
    locus.require_nonempty()?;
    Ok(locus)
}

fn default_shared_fraction() -> f64 {
    0.5
}

fn default_profile_fwhm() -> f64 {
    6.0
}

/// A structured nuisance signal added on top of the null noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactSpec {
    pub locus: Mask,
    /// Peak amplitude in units of the noise standard deviation.
    pub amplitude: f64,
    pub band_hz: (f64, f64),
    pub shared_across_subjects: bool,
    /// Fraction of the time course variance drawn from a cohort-wide
    /// component when the artifact is shared.
    pub shared_timecourse_fraction: f64,
    pub profile_fwhm_mm: f64,
}

/// Serializable form of [`ArtifactSpec`], with the locus given by shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactConfig {
    pub locus: LocusSpec,
    pub amplitude: f64,
    pub band_hz: (f64, f64),
    pub shared_across_subjects: bool,
    #[serde(default = "default_shared_fraction")]
    pub shared_timecourse_fraction: f64,
    #[serde(default = "default_profile_fwhm")]
    pub profile_fwhm_mm: f64,
}

impl ArtifactConfig {
    pub fn to_spec(&self, mask: &Mask) -> Result<ArtifactSpec> {
        Ok(ArtifactSpec {
            locus: self.locus.build(mask)?,
            amplitude: self.amplitude,
            band_hz: self.band_hz,
            shared_across_subjects: self.shared_across_subjects,
            shared_timecourse_fraction: self.shared_timecourse_fraction,
            profile_fwhm_mm: self.profile_fwhm_mm,
        })
    }
}

impl ArtifactSpec {
    pub fn validate(&self, tr_s: f64) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Domain(format!("artifact amplitude must be >= 0, got {}", self.amplitude)));
        }
        let (lo, hi) = self.band_hz;
        let nyquist = 1.0 / (2.0 * tr_s);
        if !(lo >= 0.0 && lo < hi && hi <= nyquist + 1e-12) {
            return Err(Error::Domain(format!(
                "artifact band ({lo}, {hi}) Hz infeasible for TR {tr_s} s (Nyquist {nyquist} Hz)"
            )));
        }
        if !(0.0..=1.0).contains(&self.shared_timecourse_fraction) {
            return Err(Error::Domain("shared_timecourse_fraction must lie in [0, 1]".into()));
        }
        if !(self.profile_fwhm_mm >= 0.0) {
            return Err(Error::Domain("profile_fwhm_mm must be >= 0".into()));
        }
        Ok(())
    }
}

/// Unit-variance white noise restricted to `[lo, hi]` Hz.
fn band_limited(n_t: usize, tr_s: f64, (lo, hi): (f64, f64), rng: &mut Rng) -> Result<Vec<f64>> {
    let df = 1.0 / (n_t as f64 * tr_s);
    let keep = |k: usize| {
        let f = k.min(n_t - k) as f64 * df;
        f >= lo && f <= hi && f > 0.0
    };
    if !(0..n_t).any(keep) {
        return Err(Error::Domain(format!(
            "no frequency bin of a {n_t}-sample series at TR {tr_s} s falls in ({lo}, {hi}) Hz"
        )));
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = (0..n_t)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    planner.plan_fft_forward(n_t).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        if !keep(k) {
            *b = Complex64::default();
        }
    }
    planner.plan_fft_inverse(n_t).process(&mut buf);
    Ok(standardize(buf.iter().map(|c| c.re).collect()))
}

fn standardize(mut x: Vec<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    x.iter_mut().for_each(|v| *v = if sd > 0.0 { (*v - m) / sd } else { 0.0 });
    x
}

/// The artifact time course `g(t)` for one subject.
pub fn artifact_timecourse(
    spec: &ArtifactSpec,
    n_t: usize,
    tr_s: f64,
    subject_seed: u64,
    cohort_seed: u64,
) -> Result<Vec<f64>> {
    spec.validate(tr_s)?;
    let own = band_limited(n_t, tr_s, spec.band_hz, &mut seed::child_rng(subject_seed, "artifact-tc", 0))?;
    if !spec.shared_across_subjects || spec.shared_timecourse_fraction == 0.0 {
        return Ok(own);
    }
    let shared = band_limited(n_t, tr_s, spec.band_hz, &mut seed::child_rng(cohort_seed, "artifact-tc", 0))?;
    let rho = spec.shared_timecourse_fraction;
    Ok(standardize(
        own.iter()
            .zip(&shared)
            .map(|(o, s)| rho.sqrt() * s + (1.0 - rho).sqrt() * o)
            .collect(),
    ))
}

/// The artifact spatial profile `s(x)`, peak-normalized to 1.
///
/// Shared artifacts use the locus as given with voxel weights keyed by the
/// cohort seed; unshared ones are additionally translated by a random
/// circular offset keyed by the subject seed.
pub fn artifact_profile(spec: &ArtifactSpec, subject_seed: u64, cohort_seed: u64) -> Result<Volume> {
    let meta = *spec.locus.meta();
    let key = if spec.shared_across_subjects { cohort_seed } else { subject_seed };
    let mut rng = seed::child_rng(key, "artifact-profile", 0);
    let shift = if spec.shared_across_subjects {
        [0, 0, 0]
    } else {
        [rng.random_range(0..meta.nx), rng.random_range(0..meta.ny), rng.random_range(0..meta.nz)]
    };
    let mut raw = vec![0.0; meta.len()];
    for i in spec.locus.indices() {
        let [x, y, z] = meta.coords(i);
        let j = meta.index((x + shift[0]) % meta.nx, (y + shift[1]) % meta.ny, (z + shift[2]) % meta.nz);
        raw[j] = 0.5 + rng.random::<f64>();
    }
    let smoothed = gaussian_smooth(&Volume::from_vec_unchecked(meta, raw), spec.profile_fwhm_mm)?;
    let peak = smoothed.data().iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Domain("artifact locus is empty".into()));
    }
    Ok(Volume::from_vec_unchecked(meta, smoothed.data().iter().map(|v| v / peak).collect()))
}

/// Add `amplitude * s(x) * g(t)` to a dataset.
pub fn inject_artifact(ds: &Dataset4D, spec: &ArtifactSpec, subject_seed: u64, cohort_seed: u64) -> Result<Dataset4D> {
    Ok(inject_artifact_with_timecourse(ds, spec, subject_seed, cohort_seed)?.0)
}

/// As [`inject_artifact`], also returning the time course that was added.
pub fn inject_artifact_with_timecourse(
    ds: &Dataset4D,
    spec: &ArtifactSpec,
    subject_seed: u64,
    cohort_seed: u64,
) -> Result<(Dataset4D, Vec<f64>)> {
    ds.meta().ensure_same(spec.locus.meta(), "artifact locus")?;
    let g = artifact_timecourse(spec, ds.n_t(), ds.tr_s(), subject_seed, cohort_seed)?;
    let mut out = ds.clone();
    if spec.amplitude == 0.0 {
        return Ok((out, g));
    }
    let s = artifact_profile(spec, subject_seed, cohort_seed)?;
    let support: Vec<(usize, f64)> = s
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| (i, spec.amplitude * v))
        .collect();
    for (t, &gt) in g.iter().enumerate() {
        let f = out.frame_mut(t);
        for &(i, w) in &support {
            f[i] += w * gt;
        }
    }
    Ok((out, g))
}

fn check_phi(ar1_phi: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ar1_phi) {
        return Err(Error::Domain(format!("AR(1) coefficient must lie in [0, 1), got {ar1_phi}")));
    }
    Ok(())
}

/// Everything needed to generate subject `k` of a cohort.
#[derive(Debug)]
pub struct CohortSpec {
    pub preset: SitePreset,
    pub acf: AcfModel,
    pub ar1_phi: f64,
    pub nonstat_gain: f64,
    pub artifact: Option<ArtifactSpec>,
    pub master_seed: u64,
    narrow: FieldSynth,
    wide: Option<(FieldSynth, FieldSynth)>,
}

/// Length scale of the random blending weights for non-stationary fields.
const NONSTAT_WEIGHT_FWHM_FRACTION: f64 = 0.25;

impl CohortSpec {
    pub fn new(
        preset: SitePreset,
        acf: AcfModel,
        ar1_phi: f64,
        nonstat_gain: f64,
        artifact: Option<ArtifactSpec>,
        master_seed: u64,
    ) -> Result<Self> {
        check_phi(ar1_phi)?;
        if !(nonstat_gain >= 0.0 && nonstat_gain.is_finite()) {
            return Err(Error::Domain(format!("nonstat_gain must be >= 0, got {nonstat_gain}")));
        }
        if let Some(a) = &artifact {
            preset.grid.ensure_same(a.locus.meta(), "artifact locus")?;
            a.validate(preset.tr_s)?;
        }
        let narrow = FieldSynth::new(preset.grid, &acf)?;
        let wide = if nonstat_gain > 0.0 {
            let g = preset.grid;
            let extent = (g.nx as f64 * g.dx + g.ny as f64 * g.dy + g.nz as f64 * g.dz) / 3.0;
            let weights = AcfModel::Gaussian {
                fwhm_mm: NONSTAT_WEIGHT_FWHM_FRACTION * extent,
            };
            Some((FieldSynth::new(g, &acf.scaled(2.0))?, FieldSynth::new(g, &weights)?))
        } else {
            None
        };
        Ok(CohortSpec {
            preset,
            acf,
            ar1_phi,
            nonstat_gain,
            artifact,
            master_seed,
            narrow,
            wide,
        })
    }

    pub fn subject_seed(&self, k: usize) -> u64 {
        seed::derive(self.master_seed, "subject", k as u64)
    }

    pub fn cohort_seed(&self) -> u64 {
        seed::derive(self.master_seed, "cohort", 0)
    }

    /// Subject `k` and, when an artifact is configured, its time course.
    pub fn subject_with_nuisance(&self, k: usize) -> Result<(Dataset4D, Option<Vec<f64>>)> {
        let s = self.subject_seed(k);
        let ds = self.noise(s)?;
        match &self.artifact {
            None => Ok((ds, None)),
            Some(a) => {
                let (ds, g) = inject_artifact_with_timecourse(&ds, a, s, self.cohort_seed())?;
                Ok((ds, Some(g)))
            }
        }
    }

    pub fn subject(&self, k: usize) -> Result<Dataset4D> {
        Ok(self.subject_with_nuisance(k)?.0)
    }

    /// One unit-variance field with subject `k`'s spatial structure, used
    /// where only a fixed temporal combination of its frames is needed.
    pub fn unit_field(&self, k: usize) -> Vec<f64> {
        let mut rng = seed::child_rng(self.subject_seed(k), "unit-field", 0);
        match &self.wide {
            None => self.narrow.sample(&mut rng),
            Some((wide, weights)) => {
                let m = weights.sample(&mut rng);
                let a = self.narrow.sample(&mut rng);
                let b = wide.sample(&mut rng);
                (0..a.len())
                    .map(|i| {
                        let lam = 1.0 / (1.0 + (-self.nonstat_gain * m[i]).exp());
                        lam.sqrt() * a[i] + (1.0 - lam).sqrt() * b[i]
                    })
                    .collect()
            }
        }
    }

    fn noise(&self, seed_value: u64) -> Result<Dataset4D> {
        let meta = self.preset.grid;
        let n = meta.len();
        let n_t = self.preset.n_t;
        let mut rng = seed::rng(seed_value);
        let lambda: Option<Vec<f64>> = self.wide.as_ref().map(|(_, weights)| {
            weights
                .sample(&mut rng)
                .into_iter()
                .map(|m| 1.0 / (1.0 + (-self.nonstat_gain * m).exp()))
                .collect()
        });
        let phi = self.ar1_phi;
        let scale = (1.0 - phi * phi).sqrt();
        let mut data: Vec<f64> = Vec::with_capacity(n * n_t);
        let mut spare: Option<Vec<f64>> = None;
        for t in 0..n_t {
            let e = match (&self.wide, &lambda) {
                (Some((wide, _)), Some(lam)) => {
                    let (a, _) = self.narrow.sample_pair(&mut rng);
                    let (b, _) = wide.sample_pair(&mut rng);
                    (0..n).map(|i| lam[i].sqrt() * a[i] + (1.0 - lam[i]).sqrt() * b[i]).collect()
                }
                _ => match spare.take() {
                    Some(s) => s,
                    None => {
                        let (a, b) = self.narrow.sample_pair(&mut rng);
                        spare = Some(b);
                        a
                    }
                },
            };
            if t == 0 {
                data.extend_from_slice(&e);
            } else {
                let off = (t - 1) * n;
                for i in 0..n {
                    let y = phi * data[off + i] + scale * e[i];
                    data.push(y);
                }
            }
        }
        Dataset4D::new(meta, self.preset.tr_s, n_t, data)
    }
}

/// Generate `n` subjects in parallel; subject `k` depends only on
/// `master_seed` and `k`.
#[allow(clippy::too_many_arguments)]
pub fn make_cohort(
    n: usize,
    preset: &SitePreset,
    acf: &AcfModel,
    ar1_phi: f64,
    nonstat_gain: f64,
    artifact: Option<&ArtifactSpec>,
    master_seed: u64,
) -> Result<Vec<Dataset4D>> {
    if n == 0 {
        return Err(Error::Precondition("cohort size must be >= 1".into()));
    }
    let spec = CohortSpec::new(preset.clone(), acf.clone(), ar1_phi, nonstat_gain, artifact.cloned(), master_seed)?;
    (0..n).into_par_iter().map(|k| spec.subject(k)).collect()
}

/// One subject with its own seed, outside any cohort.
pub fn sample_subject(
    preset: &SitePreset,
    acf: &AcfModel,
    ar1_phi: f64,
    nonstat_gain: f64,
    seed_value: u64,
) -> Result<Dataset4D> {
    let spec = CohortSpec::new(preset.clone(), acf.clone(), ar1_phi, nonstat_gain, None, seed_value)?;
    spec.noise(seed_value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SitePreset {
        SitePreset::new(SiteName::BeijingLike)
            .with_dims([24, 24, 24])
            .unwrap()
            .with_timing(20, 2.0)
            .unwrap()
    }

    fn lag_corr(a: &[f64], b: &[f64]) -> f64 {
        crate::stats::correlation(a, b)
    }

    #[test]
    fn field_unit_variance_and_gaussian_acf() {
        let meta = GridMeta::new([32, 32, 32], [2.0, 2.0, 2.0]).unwrap();
        let acf = AcfModel::Gaussian { fwhm_mm: 6.0 };
        let synth = FieldSynth::new(meta, &acf).unwrap();
        let mut rng = seed::rng(5);
        let fields = synth.sample_many(8, &mut rng);
        let all: Vec<f64> = fields.iter().flatten().copied().collect();
        let var = crate::stats::variance(&all);
        assert!((var - 1.0).abs() < 0.08, "var {var}");
        // lag-one correlation along x at 2 mm
        let mut a = Vec::new();
        let mut b = Vec::new();
        for f in &fields {
            for i in 0..meta.len() {
                let [x, y, z] = meta.coords(i);
                a.push(f[i]);
                b.push(f[meta.index((x + 1) % 32, y, z)]);
            }
        }
        let expected = acf.eval(2.0);
        let r = lag_corr(&a, &b);
        assert!((r - expected).abs() < 0.03, "r {r} vs {expected}");
    }

    #[test]
    fn pair_components_independent() {
        let meta = GridMeta::new([16, 16, 16], [3.0, 3.0, 3.0]).unwrap();
        let synth = FieldSynth::new(meta, &AcfModel::Gaussian { fwhm_mm: 6.0 }).unwrap();
        let (a, b) = synth.sample_pair(&mut seed::rng(1));
        assert!(lag_corr(&a, &b).abs() < 0.1);
    }

    #[test]
    fn support_check() {
        let meta = GridMeta::new([8, 8, 8], [2.0, 2.0, 2.0]).unwrap();
        assert!(matches!(
            FieldSynth::new(meta, &AcfModel::Gaussian { fwhm_mm: 20.0 }),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn null_field_deterministic() {
        let meta = GridMeta::new([12, 12, 12], [3.0, 3.0, 3.0]).unwrap();
        let acf = AcfModel::Gaussian { fwhm_mm: 6.0 };
        let a = sample_null_field(meta, &acf, 9).unwrap();
        let b = sample_null_field(meta, &acf, 9).unwrap();
        let c = sample_null_field(meta, &acf, 10).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn ar1_lag_one() {
        let preset = small().with_timing(60, 2.0).unwrap();
        let ds = sample_subject(&preset, &AcfModel::Gaussian { fwhm_mm: 6.0 }, 0.5, 0.0, 3).unwrap();
        let n = preset.grid.len();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for t in 1..60 {
            a.extend_from_slice(&ds.data()[(t - 1) * n..t * n]);
            b.extend_from_slice(&ds.data()[t * n..(t + 1) * n]);
        }
        let r = lag_corr(&a, &b);
        assert!((r - 0.5).abs() < 0.05, "r {r}");
        assert!((crate::stats::variance(&b) - 1.0).abs() < 0.1);
    }

    #[test]
    fn phi_out_of_range() {
        let r = sample_subject(&small(), &AcfModel::Gaussian { fwhm_mm: 6.0 }, 1.0, 0.0, 0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn nonstationary_unit_variance() {
        let preset = small();
        let ds = sample_subject(&preset, &AcfModel::Gaussian { fwhm_mm: 6.0 }, 0.0, 2.0, 3).unwrap();
        let v = crate::stats::variance(ds.data());
        assert!((v - 1.0).abs() < 0.15, "var {v}");
    }

    #[test]
    fn cohort_order_independent() {
        let preset = small();
        let acf = AcfModel::Gaussian { fwhm_mm: 6.0 };
        let cohort = make_cohort(3, &preset, &acf, 0.2, 0.0, None, 11).unwrap();
        let spec = CohortSpec::new(preset, acf, 0.2, 0.0, None, 11).unwrap();
        assert_eq!(cohort[2].data(), spec.subject(2).unwrap().data());
        assert_ne!(cohort[0].data(), cohort[1].data());
    }

    fn artifact(preset: &SitePreset, shared: bool) -> ArtifactSpec {
        ArtifactConfig {
            locus: LocusSpec::SinusTube { radius_mm: 8.0, depth_mm: 6.0 },
            amplitude: 2.0,
            band_hz: (0.01, 0.1),
            shared_across_subjects: shared,
            shared_timecourse_fraction: 0.5,
            profile_fwhm_mm: 6.0,
        }
        .to_spec(&preset.mask())
        .unwrap()
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let preset = small();
        let ds = sample_subject(&preset, &AcfModel::Gaussian { fwhm_mm: 6.0 }, 0.0, 0.0, 1).unwrap();
        let mut a = artifact(&preset, true);
        a.amplitude = 0.0;
        let out = inject_artifact(&ds, &a, 1, 2).unwrap();
        assert_eq!(out.data(), ds.data());
    }

    #[test]
    fn band_infeasible() {
        let preset = small();
        let ds = sample_subject(&preset, &AcfModel::Gaussian { fwhm_mm: 6.0 }, 0.0, 0.0, 1).unwrap();
        let mut a = artifact(&preset, true);
        a.band_hz = (0.2, 0.5);
        assert!(matches!(inject_artifact(&ds, &a, 1, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn timecourse_band_and_variance() {
        let preset = small().with_timing(200, 2.0).unwrap();
        let a = artifact(&preset, false);
        let g = artifact_timecourse(&a, 200, 2.0, 4, 5).unwrap();
        assert!((crate::stats::variance(&g) * 199.0 / 200.0 - 1.0).abs() < 1e-9);
        assert!(g.iter().sum::<f64>().abs() < 1e-8);
    }

    #[test]
    fn shared_profile_identical_unshared_differs() {
        let preset = small();
        let s = artifact(&preset, true);
        assert_eq!(
            artifact_profile(&s, 1, 9).unwrap().data(),
            artifact_profile(&s, 2, 9).unwrap().data()
        );
        let u = artifact(&preset, false);
        assert_ne!(
            artifact_profile(&u, 1, 9).unwrap().data(),
            artifact_profile(&u, 2, 9).unwrap().data()
        );
        let p = artifact_profile(&s, 1, 9).unwrap();
        assert!((p.data().iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tube_inside_mask_and_superior() {
        let preset = SitePreset::new(SiteName::BeijingLike);
        let mask = preset.mask();
        let tube = sinus_tube(&mask, 9.0, 10.0).unwrap();
        let m = preset.grid;
        let mean_z: f64 = tube.indices().into_iter().map(|i| m.coords(i)[2] as f64).sum::<f64>() / tube.count() as f64;
        assert!(mean_z > m.nz as f64 / 2.0);
        assert!(tube.indices().into_iter().all(|i| mask.contains(i)));
    }
}
