//! Experiment driver: subject pools, repeated null group analyses, FWE
//! estimates with Wilson intervals, prevalence maps, PCA diagnostics and
//! checkpointed batches.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acf::{estimate_acf, estimate_fwhm, fit_mixed_acf, AcfModel};
use crate::design::{
    build_design, build_paradigm, convolve_regressors, DesignExtras, Nuisance, ParadigmKind, Site,
};
use crate::error::{Error, Result};
use crate::firstlevel::{ar1_quadratic_form, contrast_weights, glm_fit, glm_fit_ar1, regress_out};
use crate::nonparam::{signflip_on_graph, two_sample_on_graph, NonparamConfig, Variant};
use crate::paramthresh::{
    grft_pvalue_from_terms, mc_group_t_dists, mc_max_cluster_dists, GrftContext, NullMaxDist, Sidedness,
};
use crate::seed;
use crate::stats::{norm_quantile, z_to_t};
use crate::synth::{
    artifact_profile, artifact_timecourse, ArtifactConfig, ArtifactSpec, CohortSpec, FieldSynth, SiteName,
    SitePreset,
};
use crate::volcore::{
    gaussian_smooth_periodic, Cluster, Connectivity, Dataset4D, Mask, MaskGraph, Tail, Volume,
};

/// Two-sided 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;
pub const CHECKPOINT_EVERY: usize = 50;
pub const CDT_LEVELS: [f64; 2] = [0.01, 0.001];
pub const SMOOTHING_LEVELS_MM: [f64; 4] = [4.0, 6.0, 8.0, 10.0];

pub const RESULTS_HEADER: &str =
    "site,design,smoothing_mm,test,method,variant,sidedness,cdt_p,alpha,cleanup,n_analyses,n_sig,fwe,ci_lo,ci_hi,master_seed,excluded";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    OneSample,
    TwoSample,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::OneSample => "one-sample",
            TestKind::TwoSample => "two-sample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cleanup {
    None,
    RegressKnownNuisance,
}

impl Cleanup {
    pub fn as_str(self) -> &'static str {
        match self {
            Cleanup::None => "none",
            Cleanup::RegressKnownNuisance => "regress-known-nuisance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstLevelMode {
    /// Contrast maps drawn from their exact distribution: a unit field
    /// scaled by the standard deviation of the contrast weights under the
    /// AR(1) model, plus the projected artifact.
    Analytic,
    /// Full 4D subject data through the per-voxel GLM.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcfSource {
    /// The generator ACF after the analysis smoothing.
    True,
    /// A mixed ACF fitted to the pool's contrast maps.
    Estimated,
}

/// Null field simulated by the Monte Carlo method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McField {
    /// Group t maps of simulated subject fields, matching the analysis.
    GroupT,
    /// A single Gaussian field thresholded at the z value of the CDT.
    Gaussian,
}

fn default_mc_field() -> McField {
    McField::GroupT
}

fn default_one() -> Sidedness {
    Sidedness::One
}
fn default_variant() -> Variant {
    Variant::Plain
}
fn default_n_perm() -> usize {
    1000
}
fn default_n_sims() -> usize {
    10_000
}
fn default_acf_source() -> AcfSource {
    AcfSource::True
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Method {
    Grft {
        #[serde(default = "default_one")]
        sidedness: Sidedness,
    },
    McAcf {
        #[serde(default = "default_one")]
        sidedness: Sidedness,
        #[serde(default = "default_acf_source")]
        acf_source: AcfSource,
        #[serde(default = "default_n_sims")]
        n_sims: usize,
        #[serde(default = "default_mc_field")]
        field: McField,
    },
    Perm {
        #[serde(default = "default_variant")]
        variant: Variant,
        #[serde(default = "default_one")]
        sidedness: Sidedness,
        #[serde(default = "default_n_perm")]
        n_perm: usize,
    },
    Signflip {
        #[serde(default = "default_variant")]
        variant: Variant,
        #[serde(default = "default_one")]
        sidedness: Sidedness,
        #[serde(default = "default_n_perm")]
        n_perm: usize,
    },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Grft { .. } => "grft",
            Method::McAcf { .. } => "mc-acf",
            Method::Perm { .. } => "perm",
            Method::Signflip { .. } => "signflip",
        }
    }

    pub fn sidedness(&self) -> Sidedness {
        match *self {
            Method::Grft { sidedness }
            | Method::McAcf { sidedness, .. }
            | Method::Perm { sidedness, .. }
            | Method::Signflip { sidedness, .. } => sidedness,
        }
    }

    pub fn variant_label(&self) -> &'static str {
        match self {
            Method::Perm { variant, .. } | Method::Signflip { variant, .. } => variant.as_str(),
            Method::McAcf { acf_source: AcfSource::Estimated, field: McField::GroupT, .. } => "estimated-acf",
            Method::McAcf { acf_source: AcfSource::True, field: McField::GroupT, .. } => "true-acf",
            Method::McAcf { acf_source: AcfSource::Estimated, field: McField::Gaussian, .. } => "estimated-acf-z",
            Method::McAcf { acf_source: AcfSource::True, field: McField::Gaussian, .. } => "true-acf-z",
            Method::Grft { .. } => "none",
        }
    }
}

fn default_mask_fill() -> f64 {
    0.6
}
fn default_alpha() -> f64 {
    0.05
}
fn default_n_analyses() -> usize {
    1000
}
fn default_pool() -> usize {
    100
}
fn default_cleanup() -> Cleanup {
    Cleanup::None
}
fn default_mode() -> FirstLevelMode {
    FirstLevelMode::Analytic
}
fn default_connectivity() -> Connectivity {
    Connectivity::Vertex26
}
fn default_drift_cutoff() -> f64 {
    crate::design::DEFAULT_DRIFT_CUTOFF_S
}

/// One experiment. Unknown keys are rejected when parsed from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub site: SiteName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_dims: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tr_s: Option<f64>,
    #[serde(default = "default_mask_fill")]
    pub mask_fill: f64,
    pub acf: AcfModel,
    #[serde(default)]
    pub ar1_phi: f64,
    #[serde(default)]
    pub nonstat_gain: f64,
    #[serde(default)]
    pub artifact: Option<ArtifactConfig>,
    pub design: ParadigmKind,
    #[serde(default)]
    pub nuisance: Vec<Nuisance>,
    #[serde(default = "default_drift_cutoff")]
    pub drift_cutoff_s: f64,
    #[serde(default)]
    pub prewhiten: bool,
    #[serde(default = "default_mode")]
    pub first_level: FirstLevelMode,
    pub smoothing_mm: f64,
    pub test: TestKind,
    pub group_size: usize,
    pub method: Method,
    pub cdt_p: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_analyses")]
    pub n_analyses: usize,
    #[serde(default = "default_cleanup")]
    pub cleanup: Cleanup,
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    #[serde(default = "default_connectivity")]
    pub connectivity: Connectivity,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Validation {
            key: "<document>".into(),
            message: e.to_string(),
        })?;
        Self::from_value(value)
    }

    /// Deserialize and validate, naming the offending key on failure.
    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let key = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<document>".into());
            Error::Validation { key, message: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::validation(key, msg));
        if !CDT_LEVELS.contains(&self.cdt_p) {
            return bad("cdt_p", format!("must be one of {CDT_LEVELS:?}, got {}", self.cdt_p));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", format!("must lie in (0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.ar1_phi) {
            return bad("ar1_phi", format!("must lie in [0, 1), got {}", self.ar1_phi));
        }
        if !(self.nonstat_gain >= 0.0 && self.nonstat_gain.is_finite()) {
            return bad("nonstat_gain", format!("must be >= 0, got {}", self.nonstat_gain));
        }
        if !SMOOTHING_LEVELS_MM.contains(&self.smoothing_mm) {
            return bad("smoothing_mm", format!("must be one of {SMOOTHING_LEVELS_MM:?}, got {}", self.smoothing_mm));
        }
        if !(self.mask_fill > 0.0 && self.mask_fill <= 1.0) {
            return bad("mask_fill", format!("must lie in (0, 1], got {}", self.mask_fill));
        }
        if !(self.drift_cutoff_s > 0.0) {
            return bad("drift_cutoff_s", "must be > 0".into());
        }
        if let Err(e) = self.acf.validate() {
            return bad("acf", e.to_string());
        }
        if self.group_size < 2 {
            return bad("group_size", format!("must be >= 2, got {}", self.group_size));
        }
        let needed = match self.test {
            TestKind::OneSample => self.group_size,
            TestKind::TwoSample => 2 * self.group_size,
        };
        if self.pool_size < needed {
            return bad("pool_size", format!("{} subjects cannot supply groups of {needed}", self.pool_size));
        }
        if self.design == ParadigmKind::Custom {
            return bad("design", "custom paradigms are not supported in experiments".into());
        }
        if let Some(d) = self.grid_dims {
            if d.contains(&0) {
                return bad("grid_dims", "dimensions must be positive".into());
            }
        }
        if let Some(n) = self.n_t {
            if n < 2 {
                return bad("n_t", "must be >= 2".into());
            }
        }
        if let Some(tr) = self.tr_s {
            if !(tr > 0.0) {
                return bad("tr_s", "must be > 0".into());
            }
        }
        match self.method {
            Method::Perm { n_perm, .. } | Method::Signflip { n_perm, .. } if n_perm < 100 => {
                return bad("method.n_perm", format!("must be >= 100, got {n_perm}"));
            }
            Method::McAcf { n_sims, .. } if n_sims < 100 => {
                return bad("method.n_sims", format!("must be >= 100, got {n_sims}"));
            }
            Method::Perm { .. } if self.test != TestKind::TwoSample => {
                return bad("method.kind", "perm applies to two-sample tests".into());
            }
            Method::Signflip { .. } if self.test != TestKind::OneSample => {
                return bad("method.kind", "signflip applies to one-sample tests".into());
            }
            Method::Perm { variant: Variant::Bootstrap, .. } => {
                return bad("method.variant", "bootstrap applies to one-sample tests".into());
            }
            _ => {}
        }
        if let Some(a) = &self.artifact {
            if !(a.amplitude >= 0.0) {
                return bad("artifact.amplitude", "must be >= 0".into());
            }
            if !(a.band_hz.0 >= 0.0 && a.band_hz.0 < a.band_hz.1) {
                return bad("artifact.band_hz", "need 0 <= lo < hi".into());
            }
            if !(0.0..=1.0).contains(&a.shared_timecourse_fraction) {
                return bad("artifact.shared_timecourse_fraction", "must lie in [0, 1]".into());
            }
        }
        if self.cleanup == Cleanup::RegressKnownNuisance && self.artifact.is_none() {
            return bad("cleanup", "regress-known-nuisance needs an artifact to regress".into());
        }
        if self.first_level == FirstLevelMode::Analytic && self.nuisance.contains(&Nuisance::GlobalMean) {
            return bad("nuisance", "global-mean needs first_level = \"full\"".into());
        }
        Ok(())
    }

    pub fn preset(&self) -> Result<SitePreset> {
        let mut p = SitePreset::new(self.site);
        if let Some(d) = self.grid_dims {
            p = p.with_dims(d)?;
        }
        let (n_t, tr) = (self.n_t.unwrap_or(p.n_t), self.tr_s.unwrap_or(p.tr_s));
        p.with_timing(n_t, tr)
    }

    /// Stable hex digest of the canonical JSON form.
    pub fn digest(&self) -> String {
        format!("{:016x}", fnv1a(serde_json::to_string(self).expect("config serializes").as_bytes()))
    }

    /// Digest of the fields that determine the subject pool.
    pub fn pool_digest(&self) -> String {
        let v = serde_json::json!([
            self.site, self.grid_dims, self.n_t, self.tr_s, self.mask_fill, self.acf, self.ar1_phi,
            self.nonstat_gain, self.artifact, self.design, self.nuisance, self.drift_cutoff_s,
            self.prewhiten, self.first_level, self.smoothing_mm, self.cleanup, self.pool_size,
            self.master_seed
        ]);
        format!("{:016x}", fnv1a(v.to_string().as_bytes()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Wilson score 95% interval.
pub fn wilson_ci(n_sig: usize, n: usize) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Domain("Wilson interval needs n >= 1".into()));
    }
    if n_sig > n {
        return Err(Error::Domain(format!("n_sig {n_sig} exceeds n {n}")));
    }
    let nf = n as f64;
    let p = n_sig as f64 / nf;
    let z2 = Z_975 * Z_975;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z_975 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if n_sig == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if n_sig == n { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Smoothed first-level contrast maps of every pool subject, restricted to
/// the mask.
pub struct Pool {
    pub digest: String,
    pub preset: SitePreset,
    pub mask: Mask,
    pub graph: MaskGraph,
    /// `maps[k]` holds subject `k`'s in-mask values.
    pub maps: Vec<Vec<f64>>,
    /// Artifact locus, when the config has one.
    pub locus: Option<Mask>,
    pub acf: AcfModel,
    pub smoothing_mm: f64,
}

impl std::fmt::Debug for Pool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pool")
            .field("digest", &self.digest)
            .field("subjects", &self.maps.len())
            .field("voxels", &self.graph.len())
            .finish()
    }
}

impl Pool {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let preset = cfg.preset()?;
        let mask = Mask::ellipsoid(preset.grid, cfg.mask_fill)?;
        let graph = MaskGraph::new(&mask, cfg.connectivity)?;
        let artifact: Option<ArtifactSpec> = cfg.artifact.as_ref().map(|a| a.to_spec(&mask)).transpose()?;
        let locus = artifact.as_ref().map(|a| a.locus.clone());
        let cohort = CohortSpec::new(
            preset.clone(),
            cfg.acf.clone(),
            cfg.ar1_phi,
            cfg.nonstat_gain,
            artifact,
            cfg.master_seed,
        )?;
        let maps = (0..cfg.pool_size)
            .into_par_iter()
            .map(|k| subject_contrast(cfg, &cohort, &mask, k).map(|v| graph.gather(v.data())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Pool {
            digest: cfg.pool_digest(),
            preset,
            mask,
            graph,
            maps,
            locus,
            acf: cfg.acf.clone(),
            smoothing_mm: cfg.smoothing_mm,
        })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn volume(&self, k: usize) -> Volume {
        self.graph.scatter(&self.maps[k])
    }
}

fn subject_design(cfg: &ExperimentConfig, preset: &SitePreset, k: usize, global: Option<Vec<f64>>) -> Result<crate::design::DesignMatrix> {
    let site: Site = cfg.site.into();
    let paradigm = build_paradigm(
        cfg.design,
        site,
        preset.n_t,
        preset.tr_s,
        seed::derive(cfg.master_seed, "paradigm", k as u64),
    )?;
    let regs = convolve_regressors(&paradigm, preset.n_t, preset.tr_s);
    build_design(
        &regs,
        &cfg.nuisance,
        preset.n_t,
        preset.tr_s,
        seed::derive(cfg.master_seed, "design", k as u64),
        &DesignExtras {
            global_signal: global,
            drift_cutoff_s: cfg.drift_cutoff_s,
        },
    )
}

/// Analytic first-level pieces of one subject: contrast weights, the
/// contrast noise standard deviation and the artifact time course.
struct AnalyticSubject {
    sd: f64,
    load: f64,
}

fn analytic_subject(cfg: &ExperimentConfig, cohort: &CohortSpec, k: usize) -> Result<AnalyticSubject> {
    let preset = &cohort.preset;
    let design = subject_design(cfg, preset, k, None)?;
    let phi = if cfg.prewhiten { cfg.ar1_phi } else { 0.0 };
    let g = cohort
        .artifact
        .as_ref()
        .map(|a| artifact_timecourse(a, preset.n_t, preset.tr_s, cohort.subject_seed(k), cohort.cohort_seed()))
        .transpose()?;
    let nuisance = match (&g, cfg.cleanup) {
        (Some(g), Cleanup::RegressKnownNuisance) => Some(vec![g.clone()]),
        _ => None,
    };
    let v = contrast_weights(&design, phi, nuisance.as_deref())?;
    let sd = ar1_quadratic_form(&v, cfg.ar1_phi).max(0.0).sqrt();
    let load = match (&cohort.artifact, &g) {
        (Some(a), Some(g)) => a.amplitude * v.iter().zip(g).map(|(v, g)| v * g).sum::<f64>(),
        _ => 0.0,
    };
    Ok(AnalyticSubject { sd, load })
}

/// Artifact amplitude in each pool subject's contrast map at the profile
/// peak, in units of that subject's contrast noise standard deviation.
/// Zero without an artifact and after known-nuisance cleanup.
pub fn artifact_loads(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let preset = cfg.preset()?;
    let mask = Mask::ellipsoid(preset.grid, cfg.mask_fill)?;
    let artifact = cfg.artifact.as_ref().map(|a| a.to_spec(&mask)).transpose()?;
    let cohort = CohortSpec::new(preset, cfg.acf.clone(), cfg.ar1_phi, cfg.nonstat_gain, artifact, cfg.master_seed)?;
    (0..cfg.pool_size)
        .map(|k| analytic_subject(cfg, &cohort, k).map(|a| if a.sd > 0.0 { a.load / a.sd } else { 0.0 }))
        .collect()
}

/// First-level contrast map of pool subject `k`, smoothed.
fn subject_contrast(cfg: &ExperimentConfig, cohort: &CohortSpec, mask: &Mask, k: usize) -> Result<Volume> {
    let preset = &cohort.preset;
    let meta = preset.grid;
    let raw = match cfg.first_level {
        FirstLevelMode::Analytic => {
            let a = analytic_subject(cfg, cohort, k)?;
            let mut data: Vec<f64> = cohort.unit_field(k).into_iter().map(|f| a.sd * f).collect();
            if let (Some(spec), true) = (&cohort.artifact, a.load != 0.0) {
                let s = artifact_profile(spec, cohort.subject_seed(k), cohort.cohort_seed())?;
                data.iter_mut().zip(s.data()).for_each(|(d, s)| *d += a.load * s);
            }
            Volume::new(meta, data)?
        }
        FirstLevelMode::Full => {
            let (mut ds, g) = cohort.subject_with_nuisance(k)?;
            if let (Some(g), Cleanup::RegressKnownNuisance) = (g, cfg.cleanup) {
                ds = regress_out(&ds, &[g])?;
            }
            let global = if cfg.nuisance.contains(&Nuisance::GlobalMean) {
                Some(ds.mask_mean_series(mask)?)
            } else {
                None
            };
            let design = subject_design(cfg, preset, k, global)?;
            let fit = if cfg.prewhiten {
                glm_fit(&ds, &design, mask, true)?
            } else {
                glm_fit_ar1(&ds, &design, mask, 0.0)?
            };
            fit.contrast_map
        }
    };
    gaussian_smooth_periodic(&raw, cfg.smoothing_mm)
}

/// Result of one group analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub index: usize,
    pub max_cluster_size: usize,
    /// Smallest cluster FWE p-value (1 with no clusters).
    pub min_p: f64,
    /// Per-cluster sizes and p-values.
    #[serde(default)]
    pub clusters: Vec<(usize, f64)>,
    /// In-mask (compact) indices of voxels in clusters with p <= alpha.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significant_voxels: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AnalysisOutcome {
    /// Any cluster with p <= alpha.
    pub fn significant(&self, alpha: f64) -> bool {
        self.error.is_none() && self.clusters.iter().any(|c| c.1 <= alpha)
    }
}

/// Per-config state prepared once before the analyses.
enum Prepared {
    Grft,
    Mc { dist: NullMaxDist },
    Nonparam,
}

fn prepare(pool: &Pool, cfg: &ExperimentConfig) -> Result<Prepared> {
    match cfg.method {
        Method::Grft { .. } => Ok(Prepared::Grft),
        Method::Perm { .. } | Method::Signflip { .. } => Ok(Prepared::Nonparam),
        Method::McAcf { sidedness, acf_source, n_sims, field } => {
            let grid = pool.preset.grid;
            let synth = match acf_source {
                AcfSource::True => FieldSynth::with_smoothing(grid, &pool.acf, pool.smoothing_mm)?,
                AcfSource::Estimated => FieldSynth::new(grid, &estimate_pool_acf(pool)?)?,
            };
            let cdts = [(cfg.cdt_p, sidedness)];
            let s = seed::derive(cfg.master_seed, "mc-acf", 0);
            let mut dists = match (field, cfg.test) {
                (McField::Gaussian, _) => mc_max_cluster_dists(&synth, &pool.graph, &cdts, n_sims, s)?,
                (McField::GroupT, TestKind::OneSample) => {
                    mc_group_t_dists(&synth, &pool.graph, &cdts, cfg.group_size, None, n_sims, s)?
                }
                (McField::GroupT, TestKind::TwoSample) => mc_group_t_dists(
                    &synth,
                    &pool.graph,
                    &cdts,
                    cfg.group_size,
                    Some(cfg.group_size),
                    n_sims,
                    s,
                )?,
            };
            let dist = dists.pop().expect("one distribution");
            Ok(Prepared::Mc { dist })
        }
    }
}

/// Mixed ACF fitted to the empirical ACF of the pool's contrast maps.
pub fn estimate_pool_acf(pool: &Pool) -> Result<AcfModel> {
    let frames: Vec<Volume> = (0..pool.len()).map(|k| pool.volume(k)).collect();
    let ds = Dataset4D::from_frames(1.0, &frames)?;
    let max_r = 8.0 * pool.preset.grid.min_voxel_mm();
    fit_mixed_acf(&estimate_acf(&ds, &pool.mask, max_r)?)
}

fn draw_groups(cfg: &ExperimentConfig, pool_len: usize, index: usize) -> (Vec<usize>, Option<Vec<u8>>) {
    let mut rng = seed::child_rng(cfg.master_seed, "analysis", index as u64);
    match cfg.test {
        TestKind::OneSample => (sample_indices(&mut rng, pool_len, cfg.group_size).into_vec(), None),
        TestKind::TwoSample => {
            let idx = sample_indices(&mut rng, pool_len, 2 * cfg.group_size).into_vec();
            let labels = (0..idx.len()).map(|i| if i < cfg.group_size { 1 } else { 2 }).collect();
            (idx, Some(labels))
        }
    }
}

/// Group t statistic (compact) and group residual maps.
fn group_t_and_residuals(x: &[&Vec<f64>], labels: Option<&[u8]>) -> (Vec<f64>, Vec<Vec<f64>>, f64) {
    let nv = x[0].len();
    let groups: Vec<Vec<usize>> = match labels {
        None => vec![(0..x.len()).collect()],
        Some(l) => vec![
            (0..x.len()).filter(|&i| l[i] == 1).collect(),
            (0..x.len()).filter(|&i| l[i] == 2).collect(),
        ],
    };
    let means: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let mut m = vec![0.0; nv];
            for &i in g {
                m.iter_mut().zip(x[i]).for_each(|(m, v)| *m += v);
            }
            m.iter_mut().for_each(|m| *m /= g.len() as f64);
            m
        })
        .collect();
    let mut resid = vec![vec![0.0; nv]; x.len()];
    let mut ss = vec![0.0; nv];
    for (gi, g) in groups.iter().enumerate() {
        for &i in g {
            for k in 0..nv {
                let r = x[i][k] - means[gi][k];
                resid[i][k] = r;
                ss[k] += r * r;
            }
        }
    }
    let n = x.len() as f64;
    let dof = n - groups.len() as f64;
    let t = (0..nv)
        .map(|k| {
            let (effect, scale) = match labels {
                None => (means[0][k], 1.0 / n),
                Some(_) => (
                    means[0][k] - means[1][k],
                    1.0 / groups[0].len() as f64 + 1.0 / groups[1].len() as f64,
                ),
            };
            let var = ss[k] / dof * scale;
            if var > 0.0 {
                effect / var.sqrt()
            } else if effect == 0.0 {
                0.0
            } else {
                effect.signum() * f64::MAX
            }
        })
        .collect();
    (t, resid, dof)
}

fn outcome_from_clusters(
    index: usize,
    clusters: &[Cluster],
    p: impl Fn(&Cluster) -> f64,
    alpha: f64,
    graph: &MaskGraph,
    record_voxels: bool,
) -> AnalysisOutcome {
    let scored: Vec<(usize, f64)> = clusters.iter().map(|c| (c.size, p(c))).collect();
    let significant_voxels = record_voxels.then(|| {
        let mut out = Vec::new();
        for (c, &(_, pv)) in clusters.iter().zip(&scored) {
            if pv <= alpha {
                out.extend(c.voxels.iter().map(|&v| graph.voxels().binary_search(&v).expect("cluster voxel in mask") as u32));
            }
        }
        out.sort_unstable();
        out
    });
    AnalysisOutcome {
        index,
        max_cluster_size: clusters.iter().map(|c| c.size).max().unwrap_or(0),
        min_p: scored.iter().map(|s| s.1).fold(1.0, f64::min),
        clusters: scored,
        significant_voxels,
        error: None,
    }
}

fn run_one(pool: &Pool, cfg: &ExperimentConfig, prep: &Prepared, index: usize, record_voxels: bool) -> Result<AnalysisOutcome> {
    let (idx, labels) = draw_groups(cfg, pool.len(), index);
    let x: Vec<&Vec<f64>> = idx.iter().map(|&i| &pool.maps[i]).collect();
    let graph = &pool.graph;
    let sidedness = cfg.method.sidedness();
    match (prep, cfg.method) {
        (Prepared::Grft, _) => {
            let (t, resid, dof) = group_t_and_residuals(&x, labels.as_deref());
            let frames: Vec<Volume> = resid.iter().map(|r| graph.scatter(r)).collect();
            let ds = Dataset4D::from_frames(1.0, &frames)?;
            let smooth = estimate_fwhm(&ds, &pool.mask)?;
            let (p_tail, tail) = sidedness.split(cfg.cdt_p);
            let ctx = GrftContext {
                smoothness: smooth,
                mask_voxels: graph.len(),
                cdt_p: p_tail,
                dof,
            };
            let terms = ctx.terms()?;
            let u_t = z_to_t(terms.u, dof);
            let clusters = graph.clusters(&t, u_t, tail);
            let tests = if tail == Tail::Both { 2.0 } else { 1.0 };
            Ok(outcome_from_clusters(
                index,
                &clusters,
                |c| (tests * grft_pvalue_from_terms(c.size, &terms)).min(1.0),
                cfg.alpha,
                graph,
                record_voxels,
            ))
        }
        (Prepared::Mc { dist }, _) => {
            let (t, _, dof) = group_t_and_residuals(&x, labels.as_deref());
            let (p_tail, tail) = sidedness.split(cfg.cdt_p);
            let u_t = z_to_t(norm_quantile(1.0 - p_tail), dof);
            let clusters = graph.clusters(&t, u_t, tail);
            let n = dist.n() as f64;
            Ok(outcome_from_clusters(
                index,
                &clusters,
                |c| dist.count_at_least(c.size) as f64 / n,
                cfg.alpha,
                graph,
                record_voxels,
            ))
        }
        (Prepared::Nonparam, Method::Perm { variant, n_perm, .. } | Method::Signflip { variant, n_perm, .. }) => {
            let npc = NonparamConfig {
                cdt_p: cfg.cdt_p,
                n_perm,
                sidedness,
                variant,
                connectivity: cfg.connectivity,
                seed: seed::derive(cfg.master_seed, "analysis-perm", index as u64),
            };
            let owned: Vec<Vec<f64>> = x.iter().map(|v| (*v).clone()).collect();
            let r = match &labels {
                None => signflip_on_graph(graph, &owned, &npc)?,
                Some(l) => two_sample_on_graph(graph, &owned, l, &npc)?,
            };
            Ok(outcome_from_clusters(
                index,
                &r.table.clusters,
                |c| c.p_fwe.unwrap_or(1.0),
                cfg.alpha,
                graph,
                record_voxels,
            ))
        }
        (Prepared::Nonparam, _) => unreachable!("prepared state follows the method"),
    }
}

/// Analysis `index` alone, with significant voxels recorded.
pub fn analyze_once(pool: &Pool, cfg: &ExperimentConfig, index: usize) -> Result<AnalysisOutcome> {
    cfg.validate()?;
    if pool.digest != cfg.pool_digest() {
        return Err(Error::Precondition("pool was built for a different configuration".into()));
    }
    run_one(pool, cfg, &prepare(pool, cfg)?, index, true)
}

/// How to execute an experiment.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the ambient pool.
    pub workers: Option<usize>,
    /// JSON-lines file that receives outcomes every
    /// [`CHECKPOINT_EVERY`] analyses and is replayed on restart.
    pub checkpoint: Option<PathBuf>,
    /// Keep the voxels of significant clusters (for prevalence maps).
    pub record_voxels: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FweReport {
    pub config_digest: String,
    /// Analyses in the denominator (attempted minus excluded).
    pub n_analyses: usize,
    pub n_significant: usize,
    pub fwe: f64,
    pub ci95: (f64, f64),
    pub excluded: usize,
    pub wall_time_s: f64,
}

impl FweReport {
    pub fn from_outcomes(cfg: &ExperimentConfig, outcomes: &[AnalysisOutcome], alpha: f64, wall_time_s: f64) -> Self {
        let excluded = outcomes.iter().filter(|o| o.error.is_some()).count();
        let n = outcomes.len() - excluded;
        let n_sig = outcomes.iter().filter(|o| o.significant(alpha)).count();
        let (fwe, ci95) = if n == 0 {
            (0.0, (0.0, 1.0))
        } else {
            (n_sig as f64 / n as f64, wilson_ci(n_sig, n).expect("n >= 1"))
        };
        FweReport {
            config_digest: cfg.digest(),
            n_analyses: n,
            n_significant: n_sig,
            fwe,
            ci95,
            excluded,
            wall_time_s,
        }
    }

    /// One results-CSV row (no trailing newline).
    pub fn csv_row(&self, cfg: &ExperimentConfig) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            cfg.site.as_str(),
            cfg.design.as_str(),
            cfg.smoothing_mm,
            cfg.test.as_str(),
            cfg.method.name(),
            cfg.method.variant_label(),
            cfg.method.sidedness().as_str(),
            cfg.cdt_p,
            cfg.alpha,
            cfg.cleanup.as_str(),
            self.n_analyses,
            self.n_significant,
            self.fwe,
            self.ci95.0,
            self.ci95.1,
            cfg.master_seed,
            self.excluded
        )
    }
}

/// Outcomes of every analysis together with the aggregate report.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: FweReport,
    pub outcomes: Vec<AnalysisOutcome>,
}

fn read_checkpoint(path: &Path, digest: &str) -> Result<BTreeMap<usize, AnalysisOutcome>> {
    let mut done = BTreeMap::new();
    let Ok(f) = std::fs::File::open(path) else {
        return Ok(done);
    };
    let mut lines = BufReader::new(f).lines();
    match lines.next() {
        Some(Ok(head)) => {
            let v: serde_json::Value = serde_json::from_str(&head).map_err(|e| Error::Corruption {
                path: path.to_path_buf(),
                message: format!("checkpoint header: {e}"),
            })?;
            if v.get("digest").and_then(|d| d.as_str()) != Some(digest) {
                return Err(Error::Precondition(format!(
                    "checkpoint {} belongs to a different configuration",
                    path.display()
                )));
            }
        }
        _ => return Ok(done),
    }
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        // a torn final line from an interrupted write is dropped
        if let Ok(o) = serde_json::from_str::<AnalysisOutcome>(&line) {
            done.insert(o.index, o);
        }
    }
    Ok(done)
}

fn append_lines(path: &Path, lines: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(lines.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Run `cfg.n_analyses` analyses on a prepared pool.
pub fn run_on_pool(pool: &Pool, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentRun> {
    cfg.validate()?;
    if pool.digest != cfg.pool_digest() {
        return Err(Error::Precondition("pool was built for a different configuration".into()));
    }
    let body = || -> Result<ExperimentRun> {
        let start = Instant::now();
        let prep = prepare(pool, cfg)?;
        let digest = cfg.digest();
        let mut done = match &opts.checkpoint {
            Some(p) => read_checkpoint(p, &digest)?,
            None => BTreeMap::new(),
        };
        if let Some(p) = &opts.checkpoint {
            if done.is_empty() {
                std::fs::write(p, serde_json::json!({"digest": digest}).to_string() + "\n")
                    .map_err(|e| Error::io(p, e))?;
            }
        }
        let todo: Vec<usize> = (0..cfg.n_analyses).filter(|i| !done.contains_key(i)).collect();
        for batch in todo.chunks(CHECKPOINT_EVERY) {
            let results: Vec<AnalysisOutcome> = batch
                .par_iter()
                .map(|&i| {
                    run_one(pool, cfg, &prep, i, opts.record_voxels).unwrap_or_else(|e| {
                        log::warn!("analysis {i} excluded: {e}");
                        AnalysisOutcome {
                            index: i,
                            max_cluster_size: 0,
                            min_p: 1.0,
                            clusters: Vec::new(),
                            significant_voxels: None,
                            error: Some(e.to_string()),
                        }
                    })
                })
                .collect();
            if let Some(p) = &opts.checkpoint {
                let mut text = String::new();
                for o in &results {
                    text.push_str(&serde_json::to_string(o).expect("outcome serializes"));
                    text.push('\n');
                }
                append_lines(p, &text)?;
            }
            for o in results {
                done.insert(o.index, o);
            }
        }
        let outcomes: Vec<AnalysisOutcome> = done.into_values().filter(|o| o.index < cfg.n_analyses).collect();
        let report = FweReport::from_outcomes(cfg, &outcomes, cfg.alpha, start.elapsed().as_secs_f64());
        Ok(ExperimentRun { report, outcomes })
    };
    with_workers(opts.workers, body)
}

pub(crate) fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(0) => Err(Error::Precondition("worker count must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Precondition(format!("cannot start {n} workers: {e}")))?
            .install(f),
    }
}

/// Build the pool and run the experiment.
pub fn run_fwe_experiment(cfg: &ExperimentConfig) -> Result<FweReport> {
    run_experiment(cfg, &RunOptions::default()).map(|r| r.report)
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentRun> {
    let pool = with_workers(opts.workers, || Pool::build(cfg))?;
    run_on_pool(&pool, cfg, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceMap {
    pub counts: Volume,
    pub n_analyses: usize,
}

/// Sum the binary maps of significant clusters over the analyses.
pub fn prevalence_from_outcomes(pool: &Pool, outcomes: &[AnalysisOutcome]) -> Result<PrevalenceMap> {
    let mut counts = vec![0.0; pool.graph.len()];
    let mut n = 0;
    for o in outcomes.iter().filter(|o| o.error.is_none()) {
        n += 1;
        let v = o.significant_voxels.as_ref().ok_or_else(|| {
            Error::Precondition("outcomes were produced without voxel recording".into())
        })?;
        for &i in v {
            counts[i as usize] += 1.0;
        }
    }
    Ok(PrevalenceMap {
        counts: pool.graph.scatter(&counts),
        n_analyses: n,
    })
}

pub fn prevalence_map(cfg: &ExperimentConfig, n_analyses: usize) -> Result<PrevalenceMap> {
    let mut cfg = cfg.clone();
    cfg.n_analyses = n_analyses;
    let pool = Pool::build(&cfg)?;
    let run = run_on_pool(
        &pool,
        &cfg,
        &RunOptions {
            record_voxels: true,
            ..Default::default()
        },
    )?;
    prevalence_from_outcomes(&pool, &run.outcomes)
}

/// Mean prevalence on `locus` divided by the mean elsewhere in the mask;
/// infinite when only the locus has counts, `None` when nothing does.
pub fn locus_ratio(map: &PrevalenceMap, mask: &Mask, locus: &Mask) -> Result<Option<f64>> {
    let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
    for i in mask.indices() {
        let c = map.counts.data()[i];
        if locus.contains(i) {
            on += c;
            n_on += 1;
        } else {
            off += c;
            n_off += 1;
        }
    }
    if n_on == 0 || n_off == 0 {
        return Err(Error::Precondition("locus must split the mask".into()));
    }
    let (a, b) = (on / n_on as f64, off / n_off as f64);
    Ok(match (a > 0.0, b > 0.0) {
        (_, true) => Some(a / b),
        (true, false) => Some(f64::INFINITY),
        (false, false) => None,
    })
}

/// First principal component of subject maps after voxelwise centering.
pub fn pca_first_component(maps: &[Volume], mask: &Mask) -> Result<(Volume, f64)> {
    if maps.len() < 2 {
        return Err(Error::Domain(format!("PCA needs at least 2 maps, got {}", maps.len())));
    }
    for m in maps {
        m.meta().ensure_same(mask.meta(), "pca map")?;
    }
    let idx = mask.indices();
    if idx.is_empty() {
        return Err(Error::Precondition("mask contains no voxels".into()));
    }
    let n = maps.len();
    let mut x: Vec<Vec<f64>> = maps.iter().map(|m| idx.iter().map(|&i| m.data()[i]).collect()).collect();
    for k in 0..idx.len() {
        let mean = x.iter().map(|r| r[k]).sum::<f64>() / n as f64;
        x.iter_mut().for_each(|r| r[k] -= mean);
    }
    let gram = DMatrix::from_fn(n, n, |i, j| x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum::<f64>());
    let trace = gram.trace();
    if !(trace > 0.0) {
        return Err(Error::Degenerate("maps have no variance".into()));
    }
    let eig = SymmetricEigen::new(gram);
    let (top, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("n >= 2");
    let a = eig.eigenvectors.column(top);
    let mut comp: Vec<f64> = (0..idx.len()).map(|k| (0..n).map(|i| a[i] * x[i][k]).sum()).collect();
    let norm = comp.iter().map(|v| v * v).sum::<f64>().sqrt();
    let peak = comp.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
    let sign = if peak < 0.0 { -1.0 } else { 1.0 };
    comp.iter_mut().for_each(|v| *v *= sign / norm);
    let mut data = vec![0.0; mask.meta().len()];
    for (&i, v) in idx.iter().zip(comp) {
        data[i] = v;
    }
    Ok((Volume::new(*mask.meta(), data)?, (lambda / trace).clamp(0.0, 1.0)))
}

/// Dice overlap of the top `fraction` of in-mask |values| with `locus`.
pub fn top_fraction_dice(map: &Volume, mask: &Mask, locus: &Mask, fraction: f64) -> f64 {
    let mut idx = mask.indices();
    idx.sort_by(|&a, &b| map.data()[b].abs().total_cmp(&map.data()[a].abs()).then(a.cmp(&b)));
    let top = ((idx.len() as f64 * fraction).round() as usize).max(1);
    let hits = idx[..top].iter().filter(|&&i| locus.contains(i)).count();
    let locus_n = mask.indices().into_iter().filter(|&i| locus.contains(i)).count();
    2.0 * hits as f64 / (top + locus_n) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationReport {
    pub alphas: (f64, f64),
    pub n_analyses: usize,
    pub n_significant: (usize, usize),
    pub fwe: (f64, f64),
    /// `fwe(alphas.1) / fwe(alphas.0)`; `None` when the denominator is 0.
    pub ratio: Option<f64>,
    pub ratio_ci: Option<(f64, f64)>,
    /// `alphas.1 / alphas.0`.
    pub nominal: f64,
}

/// FWE at two alpha levels from the same analyses.
pub fn inflation_from_outcomes(outcomes: &[AnalysisOutcome], alphas: (f64, f64)) -> Result<InflationReport> {
    let valid: Vec<&AnalysisOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
    let n = valid.len();
    if n == 0 {
        return Err(Error::Precondition("no valid analyses".into()));
    }
    let count = |a: f64| valid.iter().filter(|o| o.significant(a)).count();
    let (na, nb) = (count(alphas.0), count(alphas.1));
    let (fa, fb) = (na as f64 / n as f64, nb as f64 / n as f64);
    let (ratio, ratio_ci) = if na == 0 {
        (None, None)
    } else {
        let (la, ha) = wilson_ci(na, n)?;
        let (lb, hb) = wilson_ci(nb, n)?;
        (Some(fb / fa), Some((lb / ha, hb / la)))
    };
    Ok(InflationReport {
        alphas,
        n_analyses: n,
        n_significant: (na, nb),
        fwe: (fa, fb),
        ratio,
        ratio_ci,
        nominal: alphas.1 / alphas.0,
    })
}

/// Run the same seeds once and evaluate both alpha levels.
pub fn inflation_ratio_experiment(cfg: &ExperimentConfig, alphas: (f64, f64)) -> Result<InflationReport> {
    if !matches!(cfg.method, Method::Grft { .. } | Method::McAcf { .. }) {
        return Err(Error::validation("method.kind", "inflation ratio needs grft or mc-acf"));
    }
    let run = run_experiment(cfg, &RunOptions::default())?;
    inflation_from_outcomes(&run.outcomes, alphas)
}

/// Header plus rows, appended atomically per row.
pub fn append_results_row(path: &Path, row: &str) -> Result<()> {
    let exists = path.metadata().map(|m| m.len() > 0).unwrap_or(false);
    let mut text = String::new();
    if !exists {
        text.push_str(RESULTS_HEADER);
        text.push('\n');
    }
    text.push_str(row);
    text.push('\n');
    append_lines(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference() {
        let (lo, hi) = wilson_ci(50, 1000).unwrap();
        assert_eq!((lo * 1e4).round() / 1e4, 0.0381);
        assert_eq!((hi * 1e4).round() / 1e4, 0.0653);
        assert_eq!(wilson_ci(0, 10).unwrap().0, 0.0);
        assert_eq!(wilson_ci(10, 10).unwrap().1, 1.0);
        assert!(matches!(wilson_ci(0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn pca_rank_one() {
        let meta = crate::volcore::GridMeta::new([4, 4, 4], [1.0; 3]).unwrap();
        let v: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = Volume::new(meta, v.clone()).unwrap();
        let b = Volume::new(meta, v.iter().map(|x| -x).collect()).unwrap();
        let (map, frac) = pca_first_component(&[a, b], &Mask::full(meta)).unwrap();
        assert!((frac - 1.0).abs() < 1e-12);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let peak = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
        let s = peak.signum();
        for (m, x) in map.data().iter().zip(&v) {
            assert!((m - s * x / norm).abs() < 1e-10);
        }
        assert!(pca_first_component(&[map], &Mask::full(meta)).is_err());
    }

    #[test]
    fn inflation_identity() {
        let outcomes: Vec<AnalysisOutcome> = (0..10)
            .map(|i| AnalysisOutcome {
                index: i,
                max_cluster_size: 1,
                min_p: if i < 3 { 0.01 } else { 0.5 },
                clusters: vec![(1, if i < 3 { 0.01 } else { 0.5 })],
                significant_voxels: None,
                error: None,
            })
            .collect();
        let r = inflation_from_outcomes(&outcomes, (0.05, 0.05)).unwrap();
        assert_eq!(r.ratio, Some(1.0));
        let none: Vec<AnalysisOutcome> = outcomes
            .iter()
            .cloned()
            .map(|mut o| {
                o.clusters.clear();
                o
            })
            .collect();
        let r = inflation_from_outcomes(&none, (0.05, 0.01)).unwrap();
        assert_eq!((r.ratio, r.fwe.0), (None, 0.0));
        assert!(!none[0].significant(1.0));
    }

    #[test]
    fn white_noise_pca_fraction_small() {
        let meta = crate::volcore::GridMeta::new([25, 20, 20], [1.0; 3]).unwrap();
        let mut rng = seed::rng(3);
        let maps: Vec<Volume> = (0..20)
            .map(|_| {
                let d = (0..meta.len()).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
                Volume::new(meta, d).unwrap()
            })
            .collect();
        let (_, frac) = pca_first_component(&maps, &Mask::full(meta)).unwrap();
        assert!(frac < 0.25, "{frac}");
    }

    #[test]
    fn config_rejects_unknown_and_bad_keys() {
        let base = serde_json::json!({
            "site": "beijing-like", "acf": {"kind": "gaussian", "fwhm_mm": 6.0}, "design": "B1",
            "smoothing_mm": 8.0, "test": "one-sample", "group_size": 20,
            "method": {"kind": "signflip"}, "cdt_p": 0.001, "master_seed": 1
        });
        ExperimentConfig::from_value(base.clone()).unwrap();
        let key_of = |v: serde_json::Value| match ExperimentConfig::from_value(v) {
            Err(Error::Validation { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        let mut v = base.clone();
        v["bogus"] = 1.into();
        assert_eq!(key_of(v), "bogus");
        let mut v = base.clone();
        v["cdt_p"] = 1.5.into();
        assert_eq!(key_of(v), "cdt_p");
        let mut v = base.clone();
        v["test"] = "two-sample".into();
        assert_eq!(key_of(v), "method.kind");
        let mut v = base.clone();
        v["cleanup"] = "regress-known-nuisance".into();
        assert_eq!(key_of(v), "cleanup");
        let mut v = base;
        v["method"]["n_perm"] = 50.into();
        assert_eq!(key_of(v), "method.n_perm");
    }
}
