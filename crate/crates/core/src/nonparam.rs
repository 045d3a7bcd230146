//! Nonparametric group inference with max-cluster-size FWE control:
//! one-sample sign flipping and two-sample label permutation.

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::firstlevel::{yeo_johnson, YjLambda};
use crate::paramthresh::{NullMaxDist, Provenance, Sidedness};
use crate::seed;
use crate::stats::t_quantile;
use crate::volcore::{ClusterScratch, ClusterTable, Connectivity, Mask, MaskGraph, Tail, Volume};

pub const TUKEY_C: f64 = 4.685;
pub const IRLS_MAX_ITER: usize = 20;
pub const IRLS_TOL: f64 = 1e-6;
pub const MIN_PERMUTATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub maps: Vec<Volume>,
    /// Group membership (1 or 2) per map for two-sample tests.
    pub group_labels: Option<Vec<u8>>,
    pub mask: Mask,
}

impl GroupSample {
    pub fn new(maps: Vec<Volume>, group_labels: Option<Vec<u8>>, mask: Mask) -> Result<Self> {
        if maps.len() < 2 {
            return Err(Error::Precondition(format!("need at least 2 maps, got {}", maps.len())));
        }
        for m in &maps {
            m.meta().ensure_same(mask.meta(), "group map")?;
        }
        mask.require_nonempty()?;
        if let Some(l) = &group_labels {
            if l.len() != maps.len() {
                return Err(Error::Dimension(format!("{} labels for {} maps", l.len(), maps.len())));
            }
            if l.iter().any(|&g| g != 1 && g != 2) {
                return Err(Error::Precondition("group labels must be 1 or 2".into()));
            }
        }
        Ok(GroupSample {
            maps,
            group_labels,
            mask,
        })
    }

    fn compact(&self, graph: &MaskGraph) -> Vec<Vec<f64>> {
        self.maps.iter().map(|m| graph.gather(m.data())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Plain,
    Robust,
    YeoJohnson,
    Bootstrap,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Robust => "robust",
            Variant::YeoJohnson => "yeo-johnson",
            Variant::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonparamConfig {
    pub cdt_p: f64,
    pub n_perm: usize,
    pub sidedness: Sidedness,
    pub variant: Variant,
    pub connectivity: Connectivity,
    pub seed: u64,
}

impl NonparamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_perm < MIN_PERMUTATIONS {
            return Err(Error::Precondition(format!(
                "n_perm must be >= {MIN_PERMUTATIONS}, got {}",
                self.n_perm
            )));
        }
        if !(self.cdt_p > 0.0 && self.cdt_p < 0.5) {
            return Err(Error::Domain(format!("cdt_p must lie in (0, 0.5), got {}", self.cdt_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonparamResult {
    /// Observed clusters with `p_fwe` assigned.
    pub table: ClusterTable,
    /// Max cluster sizes, observed labeling included.
    pub dist: NullMaxDist,
    /// Every distinct relabeling was enumerated.
    pub exhaustive: bool,
    /// Fewer samples than requested because the relabelings ran out.
    pub capped: bool,
    pub dof: f64,
    /// In-mask voxels of the observed map with zero variance.
    pub n_degenerate: usize,
}

/// FWE p-value with the observed labeling counted among the null samples.
pub fn perm_pvalue(dist: &NullMaxDist, k: usize) -> f64 {
    if dist.n() == 0 {
        return 1.0;
    }
    dist.count_at_least(k) as f64 / dist.n() as f64
}

/// t for zero variance: 0 when the effect is zero too, else a signed
/// value above any threshold.
#[inline]
fn guarded_t(effect: f64, var_of_effect: f64, degenerate: &mut usize) -> f64 {
    if var_of_effect > 0.0 && var_of_effect.is_finite() {
        effect / var_of_effect.sqrt()
    } else {
        *degenerate += 1;
        if effect > 0.0 {
            f64::MAX
        } else if effect < 0.0 {
            -f64::MAX
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupT {
    pub t: Volume,
    pub dof: f64,
    pub n_degenerate: usize,
}

/// One-sample t (no labels) or pooled-variance two-sample t (group 1
/// minus group 2) per in-mask voxel.
pub fn group_ttest(maps: &[Volume], labels: Option<&[u8]>, mask: &Mask) -> Result<GroupT> {
    let sample = GroupSample::new(maps.to_vec(), labels.map(|l| l.to_vec()), mask.clone())?;
    let graph = MaskGraph::new(mask, Connectivity::Vertex26)?;
    let x = sample.compact(&graph);
    let (t, dof, n_degenerate) = match labels {
        None => {
            let signs = vec![1.0; x.len()];
            let (t, d) = OneSample::new(&x).t_with_signs(&signs);
            (t, (x.len() - 1) as f64, d)
        }
        Some(l) => {
            let ts = TwoSample::new(&x, l)?;
            let (t, d) = ts.t_with_group1(&ts.group1);
            (t, ts.dof(), d)
        }
    };
    Ok(GroupT {
        t: graph.scatter(&t),
        dof,
        n_degenerate,
    })
}

struct OneSample<'a> {
    x: &'a [Vec<f64>],
    sumsq: Vec<f64>,
}

impl<'a> OneSample<'a> {
    fn new(x: &'a [Vec<f64>]) -> Self {
        let nv = x[0].len();
        let mut sumsq = vec![0.0; nv];
        for m in x {
            sumsq.iter_mut().zip(m).for_each(|(s, v)| *s += v * v);
        }
        OneSample { x, sumsq }
    }

    fn t_with_signs(&self, signs: &[f64]) -> (Vec<f64>, usize) {
        let n = self.x.len() as f64;
        let nv = self.sumsq.len();
        let mut sum = vec![0.0; nv];
        for (m, &s) in self.x.iter().zip(signs) {
            if s > 0.0 {
                sum.iter_mut().zip(m).for_each(|(a, v)| *a += v);
            } else {
                sum.iter_mut().zip(m).for_each(|(a, v)| *a -= v);
            }
        }
        let mut degenerate = 0;
        let t = sum
            .iter()
            .zip(&self.sumsq)
            .map(|(&s, &q)| {
                let mean = s / n;
                let ss = q - s * mean;
                // rounding residue of an exactly constant voxel
                let ss = if ss <= 1e-13 * q { 0.0 } else { ss };
                guarded_t(mean, ss / (n - 1.0) / n, &mut degenerate)
            })
            .collect();
        (t, degenerate)
    }
}

struct TwoSample<'a> {
    x: &'a [Vec<f64>],
    group1: Vec<usize>,
    n1: usize,
    n2: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl<'a> TwoSample<'a> {
    fn new(x: &'a [Vec<f64>], labels: &[u8]) -> Result<Self> {
        let group1: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
        let n1 = group1.len();
        let n2 = labels.len() - n1;
        if n1 < 2 || n2 < 2 {
            return Err(Error::Precondition(format!("both groups need >= 2 maps, got {n1} and {n2}")));
        }
        let nv = x[0].len();
        let mut sum = vec![0.0; nv];
        let mut sumsq = vec![0.0; nv];
        for m in x {
            for k in 0..nv {
                sum[k] += m[k];
                sumsq[k] += m[k] * m[k];
            }
        }
        Ok(TwoSample {
            x,
            group1,
            n1,
            n2,
            sum,
            sumsq,
        })
    }

    fn dof(&self) -> f64 {
        (self.n1 + self.n2 - 2) as f64
    }

    fn t_with_group1(&self, g1: &[usize]) -> (Vec<f64>, usize) {
        let nv = self.sum.len();
        let (n1, n2) = (self.n1 as f64, self.n2 as f64);
        let mut s1 = vec![0.0; nv];
        let mut q1 = vec![0.0; nv];
        for &i in g1 {
            for (k, &v) in self.x[i].iter().enumerate() {
                s1[k] += v;
                q1[k] += v * v;
            }
        }
        let mut degenerate = 0;
        let t = (0..nv)
            .map(|k| {
                let s2 = self.sum[k] - s1[k];
                let q2 = self.sumsq[k] - q1[k];
                let (m1, m2) = (s1[k] / n1, s2 / n2);
                let ss = (q1[k] - s1[k] * m1) + (q2 - s2 * m2);
                let ss = if ss <= 1e-13 * self.sumsq[k] { 0.0 } else { ss };
                let sp2 = ss / (n1 + n2 - 2.0);
                guarded_t(m1 - m2, sp2 * (1.0 / n1 + 1.0 / n2), &mut degenerate)
            })
            .collect();
        (t, degenerate)
    }
}

/// Tukey-bisquare M-estimate of location and its standard error.
fn robust_location(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = |s: &[f64]| {
        let m = s.len() / 2;
        if s.len() % 2 == 1 {
            s[m]
        } else {
            0.5 * (s[m - 1] + s[m])
        }
    };
    let mut mu = median(&sorted);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mu).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mut scale = median(&dev) / 0.6745;
    if !(scale > 0.0) {
        let m = values.iter().sum::<f64>() / n as f64;
        scale = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    }
    if !(scale > 0.0) {
        return (mu, 0.0);
    }
    let weights = |mu: f64| -> Vec<f64> {
        values
            .iter()
            .map(|v| {
                let r = (v - mu) / (TUKEY_C * scale);
                if r.abs() < 1.0 {
                    (1.0 - r * r).powi(2)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let mut w = weights(mu);
    for _ in 0..IRLS_MAX_ITER {
        let sw: f64 = w.iter().sum();
        if sw <= 0.0 {
            break;
        }
        let next = w.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / sw;
        let done = (next - mu).abs() < IRLS_TOL * scale;
        mu = next;
        w = weights(mu);
        if done {
            break;
        }
    }
    let sw: f64 = w.iter().sum();
    if sw <= 1.0 {
        return (mu, 0.0);
    }
    let var = w.iter().zip(values).map(|(w, v)| w * (v - mu).powi(2)).sum::<f64>() / (sw - 1.0);
    (mu, (var / sw).sqrt())
}

fn robust_one_sample(x: &[Vec<f64>], signs: &[f64]) -> (Vec<f64>, usize) {
    let nv = x[0].len();
    let mut buf = vec![0.0; x.len()];
    let mut degenerate = 0;
    let t = (0..nv)
        .map(|k| {
            for (i, m) in x.iter().enumerate() {
                buf[i] = signs[i] * m[k];
            }
            let (mu, se) = robust_location(&buf);
            guarded_t(mu, se * se, &mut degenerate)
        })
        .collect();
    (t, degenerate)
}

fn robust_two_sample(x: &[Vec<f64>], g1: &[usize]) -> (Vec<f64>, usize) {
    let nv = x[0].len();
    let mut in1 = vec![false; x.len()];
    g1.iter().for_each(|&i| in1[i] = true);
    let mut a = Vec::with_capacity(x.len());
    let mut b = Vec::with_capacity(x.len());
    let mut degenerate = 0;
    let t = (0..nv)
        .map(|k| {
            a.clear();
            b.clear();
            for (i, m) in x.iter().enumerate() {
                if in1[i] { a.push(m[k]) } else { b.push(m[k]) }
            }
            let (ma, sa) = robust_location(&a);
            let (mb, sb) = robust_location(&b);
            guarded_t(ma - mb, sa * sa + sb * sb, &mut degenerate)
        })
        .collect();
    (t, degenerate)
}

fn yj_one_sample(x: &[Vec<f64>], signs: &[f64]) -> (Vec<f64>, usize) {
    let nv = x[0].len();
    let n = x.len() as f64;
    let mut buf = vec![0.0; x.len()];
    let mut degenerate = 0;
    let t = (0..nv)
        .map(|k| {
            for (i, m) in x.iter().enumerate() {
                buf[i] = signs[i] * m[k];
            }
            let (y, _) = yeo_johnson(&buf, YjLambda::Auto).expect("finite maps");
            let mean = y.iter().sum::<f64>() / n;
            let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            guarded_t(mean, var / n, &mut degenerate)
        })
        .collect();
    (t, degenerate)
}

/// Per-voxel Yeo-Johnson over all subjects; relabeling leaves it intact.
fn yj_transform_maps(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let nv = x[0].len();
    let mut out = vec![vec![0.0; nv]; x.len()];
    let mut buf = vec![0.0; x.len()];
    for k in 0..nv {
        for (i, m) in x.iter().enumerate() {
            buf[i] = m[k];
        }
        let (y, _) = yeo_johnson(&buf, YjLambda::Auto).expect("finite maps");
        for (i, v) in y.into_iter().enumerate() {
            out[i][k] = v;
        }
    }
    out
}

fn check_maps(x: &[Vec<f64>]) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::Precondition(format!("need at least 2 maps, got {}", x.len())));
    }
    let nv = x[0].len();
    if x.iter().any(|m| m.len() != nv) {
        return Err(Error::Dimension("maps differ in length".into()));
    }
    if x.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::Precondition("maps must be finite".into()));
    }
    if x.iter().all(|m| m.iter().all(|&v| v == 0.0)) {
        return Err(Error::Degenerate("all maps are identically zero".into()));
    }
    Ok(())
}

fn observed_table(
    graph: &MaskGraph,
    t: &[f64],
    u: f64,
    tail: Tail,
    cfg: &NonparamConfig,
    dist: &NullMaxDist,
) -> ClusterTable {
    let mut clusters = graph.clusters(t, u, tail);
    for c in &mut clusters {
        c.p_fwe = Some(perm_pvalue(dist, c.size));
    }
    ClusterTable {
        cdt_p: Some(cfg.cdt_p),
        threshold_u: u,
        connectivity: graph.connectivity(),
        tail,
        clusters,
    }
}

/// Max cluster sizes for samples `1..n` computed in parallel.
fn null_maxima<F>(n: usize, graph: &MaskGraph, u: f64, tail: Tail, stat: F) -> Vec<usize>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    (1..n)
        .into_par_iter()
        .map_init(ClusterScratch::default, |scratch, j| {
            graph.max_cluster_size(&stat(j), u, tail, scratch)
        })
        .collect()
}

fn threshold(cfg: &NonparamConfig, dof: f64) -> (f64, Tail) {
    let (p, tail) = cfg.sidedness.split(cfg.cdt_p);
    (t_quantile(1.0 - p, dof), tail)
}

/// Sign flipping on compact in-mask maps (one row per subject).
pub fn signflip_on_graph(graph: &MaskGraph, x: &[Vec<f64>], cfg: &NonparamConfig) -> Result<NonparamResult> {
    cfg.validate()?;
    check_maps(x)?;
    if x[0].len() != graph.len() {
        return Err(Error::Dimension("maps do not match the mask".into()));
    }
    let n = x.len();
    let dof = (n - 1) as f64;
    let (u, tail) = threshold(cfg, dof);
    let one = OneSample::new(x);
    let stat = |signs: &[f64]| -> (Vec<f64>, usize) {
        match cfg.variant {
            Variant::Plain | Variant::Bootstrap => one.t_with_signs(signs),
            Variant::Robust => robust_one_sample(x, signs),
            Variant::YeoJohnson => yj_one_sample(x, signs),
        }
    };
    let identity = vec![1.0; n];
    let (t_obs, n_degenerate) = stat(&identity);
    let mut scratch = ClusterScratch::default();
    let obs_max = graph.max_cluster_size(&t_obs, u, tail, &mut scratch);

    let (mut samples, exhaustive, capped, provenance) = if cfg.variant == Variant::Bootstrap {
        let mean: Vec<f64> = (0..graph.len())
            .map(|k| x.iter().map(|m| m[k]).sum::<f64>() / n as f64)
            .collect();
        let centered: Vec<Vec<f64>> = x
            .iter()
            .map(|m| m.iter().zip(&mean).map(|(v, c)| v - c).collect())
            .collect();
        let samples = null_maxima(cfg.n_perm, graph, u, tail, |j| {
            let mut rng = seed::child_rng(cfg.seed, "bootstrap", j as u64);
            let draw: Vec<Vec<f64>> = (0..n).map(|_| centered[rng.random_range(0..n)].clone()).collect();
            OneSample::new(&draw).t_with_signs(&identity).0
        });
        (samples, false, false, Provenance::Bootstrap)
    } else {
        let total = if n >= 63 { u64::MAX } else { 1u64 << n };
        if (cfg.n_perm as u64) >= total {
            let signs_of = |j: usize| -> Vec<f64> {
                (0..n).map(|i| if (j >> i) & 1 == 1 { -1.0 } else { 1.0 }).collect()
            };
            let samples = null_maxima(total as usize, graph, u, tail, |j| stat(&signs_of(j)).0);
            (samples, true, (cfg.n_perm as u64) > total, Provenance::Signflip)
        } else {
            let samples = null_maxima(cfg.n_perm, graph, u, tail, |j| {
                let mut rng = seed::child_rng(cfg.seed, "signflip", j as u64);
                let signs: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
                stat(&signs).0
            });
            (samples, false, false, Provenance::Signflip)
        }
    };
    samples.insert(0, obs_max);
    let dist = NullMaxDist::new(
        samples,
        provenance,
        cfg.seed,
        serde_json::json!({"cdt_p": cfg.cdt_p, "sidedness": cfg.sidedness, "variant": cfg.variant, "n": n}),
    );
    Ok(NonparamResult {
        table: observed_table(graph, &t_obs, u, tail, cfg, &dist),
        dist,
        exhaustive,
        capped,
        dof,
        n_degenerate,
    })
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// The `j`-th `k`-subset of `0..n` in lexicographic order.
fn combination(n: usize, k: usize, mut j: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut next = 0;
    for slot in 0..k {
        let mut c = next;
        loop {
            let rest = binomial(n - c - 1, k - slot - 1);
            if j < rest {
                break;
            }
            j -= rest;
            c += 1;
        }
        out.push(c);
        next = c + 1;
    }
    out
}

/// Label permutation on compact in-mask maps.
pub fn two_sample_on_graph(
    graph: &MaskGraph,
    x: &[Vec<f64>],
    labels: &[u8],
    cfg: &NonparamConfig,
) -> Result<NonparamResult> {
    cfg.validate()?;
    check_maps(x)?;
    if labels.len() != x.len() || labels.iter().any(|&g| g != 1 && g != 2) {
        return Err(Error::Precondition("labels must give group 1 or 2 for every map".into()));
    }
    if x[0].len() != graph.len() {
        return Err(Error::Dimension("maps do not match the mask".into()));
    }
    if cfg.variant == Variant::Bootstrap {
        return Err(Error::Precondition("the bootstrap variant applies to one-sample tests".into()));
    }
    let transformed;
    let x: &[Vec<f64>] = if cfg.variant == Variant::YeoJohnson {
        transformed = yj_transform_maps(x);
        &transformed
    } else {
        x
    };
    let ts = TwoSample::new(x, labels)?;
    let dof = ts.dof();
    let (u, tail) = threshold(cfg, dof);
    let stat = |g1: &[usize]| -> (Vec<f64>, usize) {
        match cfg.variant {
            Variant::Robust => robust_two_sample(x, g1),
            _ => ts.t_with_group1(g1),
        }
    };
    let (t_obs, n_degenerate) = stat(&ts.group1);
    let mut scratch = ClusterScratch::default();
    let obs_max = graph.max_cluster_size(&t_obs, u, tail, &mut scratch);
    let n = x.len();
    let total = binomial(n, ts.n1);
    let (mut samples, exhaustive, capped) = if (cfg.n_perm as u64) >= total {
        let identity_rank = (0..total).find(|&j| combination(n, ts.n1, j) == ts.group1);
        let mut s: Vec<usize> = (0..total)
            .into_par_iter()
            .filter(|&j| Some(j) != identity_rank)
            .map_init(ClusterScratch::default, |scratch, j| {
                graph.max_cluster_size(&stat(&combination(n, ts.n1, j)).0, u, tail, scratch)
            })
            .collect();
        s.shrink_to_fit();
        (s, true, (cfg.n_perm as u64) > total)
    } else {
        let s = null_maxima(cfg.n_perm, graph, u, tail, |j| {
            let mut rng = seed::child_rng(cfg.seed, "permutation", j as u64);
            let mut g1 = sample_indices(&mut rng, n, ts.n1).into_vec();
            g1.sort_unstable();
            stat(&g1).0
        });
        (s, false, false)
    };
    samples.insert(0, obs_max);
    let dist = NullMaxDist::new(
        samples,
        Provenance::Permutation,
        cfg.seed,
        serde_json::json!({"cdt_p": cfg.cdt_p, "sidedness": cfg.sidedness, "variant": cfg.variant, "n1": ts.n1, "n2": ts.n2}),
    );
    Ok(NonparamResult {
        table: observed_table(graph, &t_obs, u, tail, cfg, &dist),
        dist,
        exhaustive,
        capped,
        dof,
        n_degenerate,
    })
}

pub fn one_sample_signflip(sample: &GroupSample, cfg: &NonparamConfig) -> Result<NonparamResult> {
    let graph = MaskGraph::new(&sample.mask, cfg.connectivity)?;
    signflip_on_graph(&graph, &sample.compact(&graph), cfg)
}

pub fn two_sample_perm(sample: &GroupSample, cfg: &NonparamConfig) -> Result<NonparamResult> {
    let labels = sample
        .group_labels
        .as_deref()
        .ok_or_else(|| Error::Precondition("two-sample test needs group labels".into()))?;
    let graph = MaskGraph::new(&sample.mask, cfg.connectivity)?;
    two_sample_on_graph(&graph, &sample.compact(&graph), labels, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volcore::GridMeta;
    use rand_distr::{Distribution, StandardNormal};

    fn meta() -> GridMeta {
        GridMeta::new([6, 6, 6], [2.0; 3]).unwrap()
    }

    fn noise_maps(n: usize, s: u64) -> Vec<Volume> {
        let mut rng = seed::rng(s);
        (0..n)
            .map(|_| {
                let mut v: Vec<f64> = (0..meta().len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                // neighbor averaging for some spatial extent
                let w = v.clone();
                for i in 1..v.len() {
                    v[i] = 0.5 * (w[i] + w[i - 1]);
                }
                Volume::new(meta(), v).unwrap()
            })
            .collect()
    }

    fn cfg(n_perm: usize, sidedness: Sidedness, variant: Variant) -> NonparamConfig {
        NonparamConfig {
            cdt_p: 0.1,
            n_perm,
            sidedness,
            variant,
            connectivity: Connectivity::Vertex26,
            seed: 3,
        }
    }

    #[test]
    fn hand_computed_t() {
        let m = GridMeta::new([1, 1, 1], [1.0; 3]).unwrap();
        let vals = [1.0, 2.0, 4.0, 3.0, 5.0];
        let maps: Vec<Volume> = vals.iter().map(|&v| Volume::new(m, vec![v]).unwrap()).collect();
        let g = group_ttest(&maps, None, &Mask::full(m)).unwrap();
        // mean 3, sd sqrt(2.5), t = 3 / sqrt(2.5 / 5)
        assert!((g.t.data()[0] - 3.0 / 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(g.dof, 4.0);
        let labels = [1, 1, 2, 2, 2];
        let g = group_ttest(&maps, Some(&labels), &Mask::full(m)).unwrap();
        // means 1.5 and 4, pooled var (0.5 + 2) / 3
        let expected = (1.5 - 4.0) / ((2.5 / 3.0) * (0.5 + 1.0 / 3.0) as f64).sqrt();
        assert!((g.t.data()[0] - expected).abs() < 1e-12);
        assert_eq!(g.dof, 3.0);
    }

    #[test]
    fn constant_maps_flagged() {
        let m = GridMeta::new([2, 1, 1], [1.0; 3]).unwrap();
        let maps: Vec<Volume> = (0..4).map(|_| Volume::new(m, vec![2.0, 0.0]).unwrap()).collect();
        let g = group_ttest(&maps, None, &Mask::full(m)).unwrap();
        assert_eq!(g.t.data()[0], f64::MAX);
        assert_eq!(g.t.data()[1], 0.0);
        assert_eq!(g.n_degenerate, 2);
    }

    #[test]
    fn equal_means_near_zero() {
        let m = GridMeta::new([10, 10, 10], [1.0; 3]).unwrap();
        let mut rng = seed::rng(1);
        let maps: Vec<Volume> = (0..40)
            .map(|_| Volume::new(m, (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap())
            .collect();
        let labels: Vec<u8> = (0..40).map(|i| 1 + (i % 2) as u8).collect();
        let g = group_ttest(&maps, Some(&labels), &Mask::full(m)).unwrap();
        assert!((g.t.sum() / 1000.0).abs() < 0.1);
    }

    #[test]
    fn identical_groups_no_clusters() {
        let maps = noise_maps(3, 1);
        let mut all = maps.clone();
        all.extend(maps);
        let s = GroupSample::new(all, Some(vec![1, 1, 1, 2, 2, 2]), Mask::full(meta())).unwrap();
        let r = two_sample_perm(&s, &cfg(100, Sidedness::Two, Variant::Plain)).unwrap();
        assert!(r.table.clusters.is_empty());
    }

    /// Max cluster size of the `signs`-flipped t map, computed from scratch.
    fn oracle_signflip(maps: &[Volume], signs: &[f64], u: f64, tail: Tail) -> usize {
        let flipped: Vec<Volume> = maps
            .iter()
            .zip(signs)
            .map(|(m, s)| Volume::new(meta(), m.data().iter().map(|v| v * s).collect()).unwrap())
            .collect();
        let t = group_ttest(&flipped, None, &Mask::full(meta())).unwrap().t;
        crate::volcore::connected_components(&t, &Mask::full(meta()), u, Connectivity::Vertex26, tail)
            .unwrap()
            .max_size()
    }

    #[test]
    fn signflip_enumeration_oracle() {
        let maps = noise_maps(3, 2);
        let s = GroupSample::new(maps.clone(), None, Mask::full(meta())).unwrap();
        let c = cfg(1000, Sidedness::One, Variant::Plain);
        let r = one_sample_signflip(&s, &c).unwrap();
        assert!(r.exhaustive && r.capped);
        assert_eq!(r.dist.n(), 8);
        let u = t_quantile(1.0 - 0.1, 2.0);
        let mut oracle = Vec::new();
        for pattern in 0..8u32 {
            let signs: Vec<f64> = (0..3).map(|i| if pattern >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
            oracle.push(oracle_signflip(&maps, &signs, u, Tail::Positive));
        }
        oracle.sort_unstable();
        assert_eq!(r.dist.samples, oracle);
        for cl in &r.table.clusters {
            let p = oracle.iter().filter(|&&m| m >= cl.size).count() as f64 / 8.0;
            assert_eq!(cl.p_fwe, Some(p));
        }
    }

    #[test]
    fn two_sample_enumeration_oracle() {
        let maps = noise_maps(6, 4);
        let labels = vec![1, 2, 1, 2, 1, 2];
        let s = GroupSample::new(maps.clone(), Some(labels), Mask::full(meta())).unwrap();
        let r = two_sample_perm(&s, &cfg(500, Sidedness::Two, Variant::Plain)).unwrap();
        assert!(r.exhaustive);
        assert_eq!(r.dist.n(), 20);
        let u = t_quantile(1.0 - 0.05, 4.0);
        let mut oracle = Vec::new();
        for a in 0..6 {
            for b in a + 1..6 {
                for c in b + 1..6 {
                    let l: Vec<u8> = (0..6).map(|i| if i == a || i == b || i == c { 1 } else { 2 }).collect();
                    let t = group_ttest(&maps, Some(&l), &Mask::full(meta())).unwrap().t;
                    oracle.push(
                        crate::volcore::connected_components(&t, &Mask::full(meta()), u, Connectivity::Vertex26, Tail::Both)
                            .unwrap()
                            .max_size(),
                    );
                }
            }
        }
        oracle.sort_unstable();
        assert_eq!(r.dist.samples, oracle);
    }

    #[test]
    fn global_sign_flip_invariance() {
        let maps = noise_maps(8, 5);
        let neg: Vec<Volume> = maps
            .iter()
            .map(|m| Volume::new(meta(), m.data().iter().map(|v| -v).collect()).unwrap())
            .collect();
        let c = cfg(150, Sidedness::Two, Variant::Plain);
        let a = one_sample_signflip(&GroupSample::new(maps, None, Mask::full(meta())).unwrap(), &c).unwrap();
        let b = one_sample_signflip(&GroupSample::new(neg, None, Mask::full(meta())).unwrap(), &c).unwrap();
        assert_eq!(a.dist.samples, b.dist.samples);
        assert_eq!(a.table.sizes(), b.table.sizes());
        let pa: Vec<_> = a.table.clusters.iter().map(|c| c.p_fwe).collect();
        let pb: Vec<_> = b.table.clusters.iter().map(|c| c.p_fwe).collect();
        assert_eq!(pa, pb);
    }

    #[test]
    fn subject_order_invariance_exhaustive() {
        let maps = noise_maps(5, 6);
        let mut rev = maps.clone();
        rev.reverse();
        let c = cfg(100, Sidedness::One, Variant::Plain);
        let a = one_sample_signflip(&GroupSample::new(maps, None, Mask::full(meta())).unwrap(), &c).unwrap();
        let b = one_sample_signflip(&GroupSample::new(rev, None, Mask::full(meta())).unwrap(), &c).unwrap();
        assert_eq!(a.dist.samples, b.dist.samples);
    }

    #[test]
    fn deterministic_and_minimum_p() {
        let maps = noise_maps(10, 7);
        let s = GroupSample::new(maps, None, Mask::full(meta())).unwrap();
        let c = cfg(200, Sidedness::One, Variant::Plain);
        let a = one_sample_signflip(&s, &c).unwrap();
        let b = one_sample_signflip(&s, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dist.n(), 200);
        assert!(a.table.clusters.iter().all(|c| c.p_fwe.unwrap() >= 1.0 / 200.0));
    }

    #[test]
    fn variants_run() {
        let maps = noise_maps(8, 8);
        let s = GroupSample::new(maps.clone(), None, Mask::full(meta())).unwrap();
        for v in [Variant::Robust, Variant::YeoJohnson, Variant::Bootstrap] {
            let r = one_sample_signflip(&s, &cfg(100, Sidedness::Two, v)).unwrap();
            assert_eq!(r.dist.n(), 100);
        }
        let s2 = GroupSample::new(maps, Some(vec![1, 2, 1, 2, 1, 2, 1, 2]), Mask::full(meta())).unwrap();
        for v in [Variant::Robust, Variant::YeoJohnson] {
            assert!(two_sample_perm(&s2, &cfg(100, Sidedness::One, v)).is_ok());
        }
        assert!(two_sample_perm(&s2, &cfg(100, Sidedness::One, Variant::Bootstrap)).is_err());
    }

    #[test]
    fn robust_location_matches_mean_for_clean_data() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (mu, se) = robust_location(&v);
        assert!((mu - 3.0).abs() < 1e-9);
        assert!(se > 0.0);
        let (mu, _) = robust_location(&[1.0, 2.0, 3.0, 4.0, 500.0]);
        assert!(mu < 4.0);
    }

    #[test]
    fn zero_maps_degenerate() {
        let maps: Vec<Volume> = (0..4).map(|_| Volume::zeros(meta())).collect();
        let s = GroupSample::new(maps, None, Mask::full(meta())).unwrap();
        assert!(matches!(
            one_sample_signflip(&s, &cfg(100, Sidedness::One, Variant::Plain)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn config_validation() {
        let s = GroupSample::new(noise_maps(4, 1), None, Mask::full(meta())).unwrap();
        assert!(one_sample_signflip(&s, &cfg(50, Sidedness::One, Variant::Plain)).is_err());
        let mut c = cfg(100, Sidedness::One, Variant::Plain);
        c.cdt_p = 0.6;
        assert!(matches!(one_sample_signflip(&s, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn combinations_enumerate() {
        let all: Vec<Vec<usize>> = (0..binomial(6, 3)).map(|j| combination(6, 3, j)).collect();
        assert_eq!(all.len(), 20);
        assert_eq!(all[0], vec![0, 1, 2]);
        assert_eq!(all[19], vec![3, 4, 5]);
        let mut d = all.clone();
        d.dedup();
        assert_eq!(d.len(), 20);
    }
}
