//! Task paradigms, HRF convolution and first-level design matrices.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::stats::gamma;

/// Drift basis cutoff period.
pub const DEFAULT_DRIFT_CUTOFF_S: f64 = 100.0;
/// Seed used for every E2 and E3 schedule.
pub const CANONICAL_SEED: u64 = 0;
const MAX_SCHEDULE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    Beijing,
    Cambridge,
    Oulu,
}

impl From<crate::synth::SiteName> for Site {
    fn from(s: crate::synth::SiteName) -> Self {
        use crate::synth::SiteName::*;
        match s {
            BeijingLike => Site::Beijing,
            CambridgeLike => Site::Cambridge,
            OuluLike => Site::Oulu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParadigmKind {
    B1,
    B2,
    E1,
    E2,
    E3,
    E4,
    #[serde(rename = "custom")]
    Custom,
}

impl ParadigmKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParadigmKind::B1 => "B1",
            ParadigmKind::B2 => "B2",
            ParadigmKind::E1 => "E1",
            ParadigmKind::E2 => "E2",
            ParadigmKind::E3 => "E3",
            ParadigmKind::E4 => "E4",
            ParadigmKind::Custom => "custom",
        }
    }

    /// Whether each subject gets its own schedule.
    pub fn per_subject(self) -> bool {
        self == ParadigmKind::E4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub onset_s: f64,
    pub duration_s: f64,
    pub condition: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paradigm {
    pub kind: ParadigmKind,
    pub events: Vec<Event>,
    pub total_s: f64,
}

impl Paradigm {
    pub fn new(kind: ParadigmKind, mut events: Vec<Event>, total_s: f64) -> Result<Self> {
        events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        for e in &events {
            if !(e.onset_s >= 0.0 && e.duration_s >= 0.0 && e.onset_s.is_finite() && e.duration_s.is_finite()) {
                return Err(Error::Design(format!("invalid event {e:?}")));
            }
            if !(e.condition == 1 || e.condition == 2) {
                return Err(Error::Design(format!("condition must be 1 or 2, got {}", e.condition)));
            }
        }
        for w in events.windows(2) {
            if w[1].onset_s < w[0].onset_s + w[0].duration_s - 1e-9 {
                return Err(Error::Design(format!(
                    "events at {} s and {} s overlap",
                    w[0].onset_s, w[1].onset_s
                )));
            }
        }
        Ok(Paradigm { kind, events, total_s })
    }

    pub fn n_conditions(&self) -> usize {
        match self.kind {
            ParadigmKind::E3 | ParadigmKind::E4 => 2,
            _ => self.events.iter().map(|e| e.condition as usize).max().unwrap_or(1),
        }
    }

    pub fn count(&self, condition: u8) -> usize {
        self.events.iter().filter(|e| e.condition == condition).count()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "onset_s,duration_s,condition")?;
        for e in &self.events {
            writeln!(w, "{},{},{}", e.onset_s, e.duration_s, e.condition)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(&mut f).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(r: impl BufRead, total_s: f64) -> Result<Self> {
        let mut events = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                field: "paradigm".into(),
                message: e.to_string(),
            })?;
            let line = line.trim();
            if n == 0 {
                if line != "onset_s,duration_s,condition" {
                    return Err(Error::Parse {
                        field: "header".into(),
                        message: format!("expected onset_s,duration_s,condition, got {line:?}"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Parse {
                    field: format!("line {}", n + 1),
                    message: "expected 3 columns".into(),
                });
            }
            let num = |i: usize, name: &str| -> Result<f64> {
                cols[i].trim().parse::<f64>().map_err(|e| Error::Parse {
                    field: name.into(),
                    message: format!("line {}: {e}", n + 1),
                })
            };
            let condition = cols[2].trim().parse::<u8>().map_err(|e| Error::Parse {
                field: "condition".into(),
                message: format!("line {}: {e}", n + 1),
            })?;
            events.push(Event {
                onset_s: num(0, "onset_s")?,
                duration_s: num(1, "duration_s")?,
                condition,
            });
        }
        Paradigm::new(ParadigmKind::Custom, events, total_s)
    }

    pub fn load_csv(path: &Path, total_s: f64) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), total_s)
    }
}

/// Event count per condition, duration range and rest range for E3/E4.
pub fn site_schedule(site: Site) -> (usize, (f64, f64), (f64, f64)) {
    match site {
        Site::Beijing => (13, (3.0, 7.0), (11.0, 13.0)),
        Site::Cambridge => (11, (3.0, 6.0), (11.0, 13.0)),
        Site::Oulu => (13, (3.0, 6.0), (11.0, 13.0)),
    }
}

fn blocks(kind: ParadigmKind, on: f64, off: f64, total: f64) -> Result<Paradigm> {
    let mut events = Vec::new();
    let mut t = off;
    while t + on <= total + 1e-9 {
        events.push(Event { onset_s: t, duration_s: on, condition: 1 });
        t += on + off;
    }
    Paradigm::new(kind, events, total)
}

fn random_events(kind: ParadigmKind, dur: (f64, f64), rest: (f64, f64), total: f64, rng: &mut Rng) -> Result<Paradigm> {
    let mut events = Vec::new();
    let mut t = rng.random_range(rest.0..=rest.1);
    loop {
        let d = rng.random_range(dur.0..=dur.1);
        if t + d > total {
            break;
        }
        events.push(Event { onset_s: t, duration_s: d, condition: 1 });
        t += d + rng.random_range(rest.0..=rest.1);
    }
    Paradigm::new(kind, events, total)
}

fn two_task(kind: ParadigmKind, site: Site, total: f64, rng: &mut Rng) -> Result<Paradigm> {
    let (n, dur, rest) = site_schedule(site);
    let n_events = 2 * n;
    let required = n_events as f64 * dur.0 + (n_events - 1) as f64 * rest.0;
    if required > total {
        return Err(Error::Scheduling {
            required_s: required,
            available_s: total,
        });
    }
    let mut order: Vec<u8> = (0..n_events).map(|i| 1 + (i % 2) as u8).collect();
    if kind == ParadigmKind::E4 {
        order.shuffle(rng);
    }
    for _ in 0..MAX_SCHEDULE_ATTEMPTS {
        let mut events = Vec::with_capacity(n_events);
        let mut t = 0.0;
        for (i, &c) in order.iter().enumerate() {
            if i > 0 {
                t += rng.random_range(rest.0..=rest.1);
            }
            let d = rng.random_range(dur.0..=dur.1);
            events.push(Event { onset_s: t, duration_s: d, condition: c });
            t += d;
        }
        if t <= total {
            return Paradigm::new(kind, events, total);
        }
    }
    Err(Error::Scheduling {
        required_s: required,
        available_s: total,
    })
}

/// Build one of the named paradigms for a run of `n_t` volumes.
///
/// E3 always uses [`CANONICAL_SEED`] and strictly alternates conditions;
/// E4 shuffles the order and draws timings from `seed`.
pub fn build_paradigm(kind: ParadigmKind, site: Site, n_t: usize, tr_s: f64, seed_value: u64) -> Result<Paradigm> {
    if n_t < 2 || !(tr_s > 0.0) {
        return Err(Error::Precondition(format!("invalid timing T={n_t}, TR={tr_s}")));
    }
    let total = n_t as f64 * tr_s;
    match kind {
        ParadigmKind::B1 => blocks(kind, 10.0, 10.0, total),
        ParadigmKind::B2 => blocks(kind, 30.0, 30.0, total),
        ParadigmKind::E1 => blocks(kind, 2.0, 6.0, total),
        ParadigmKind::E2 => random_events(kind, (1.0, 4.0), (3.0, 6.0), total, &mut seed::rng(CANONICAL_SEED)),
        ParadigmKind::E3 => two_task(kind, site, total, &mut seed::rng(CANONICAL_SEED)),
        ParadigmKind::E4 => two_task(kind, site, total, &mut seed::rng(seed_value)),
        ParadigmKind::Custom => Err(Error::Precondition("custom paradigms are loaded from CSV".into())),
    }
}

/// Canonical double-gamma haemodynamic response.
pub fn hrf(t_s: f64) -> f64 {
    if t_s <= 0.0 {
        return 0.0;
    }
    let g = |a: f64| t_s.powf(a - 1.0) * (-t_s).exp() / gamma(a);
    g(6.0) - g(16.0) / 6.0
}

/// Per-condition boxcars on the TR grid convolved with [`hrf`] and
/// mean-centered; one column per condition.
pub fn convolve_regressors(paradigm: &Paradigm, n_t: usize, tr_s: f64) -> Vec<Vec<f64>> {
    let k = paradigm.n_conditions().max(1);
    let h: Vec<f64> = (0..n_t).map(|i| hrf(i as f64 * tr_s)).collect();
    (1..=k as u8)
        .map(|c| {
            let mut boxcar = vec![0.0; n_t];
            for e in paradigm.events.iter().filter(|e| e.condition == c) {
                let (a, b) = (e.onset_s, e.onset_s + e.duration_s);
                for (i, v) in boxcar.iter_mut().enumerate() {
                    let (lo, hi) = (i as f64 * tr_s, (i + 1) as f64 * tr_s);
                    let overlap = (b.min(hi) - a.max(lo)).max(0.0);
                    *v += overlap / tr_s;
                }
            }
            let mut r: Vec<f64> = (0..n_t)
                .map(|i| (0..=i).map(|j| boxcar[j] * h[i - j]).sum())
                .collect();
            center(&mut r);
            r
        })
        .collect()
}

fn center(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nuisance {
    Motion6,
    Motion24,
    GlobalMean,
    Drift,
}

/// Inputs to [`build_design`] that only some nuisance sets need.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignExtras {
    /// Mask-mean time series, required by [`Nuisance::GlobalMean`].
    pub global_signal: Option<Vec<f64>>,
    pub drift_cutoff_s: f64,
}

impl Default for DesignExtras {
    fn default() -> Self {
        DesignExtras {
            global_signal: None,
            drift_cutoff_s: DEFAULT_DRIFT_CUTOFF_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub contrast: Vec<f64>,
}

impl DesignMatrix {
    pub fn n_t(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    /// Checks shape and rank, naming the first collinear column.
    pub fn new(x: DMatrix<f64>, names: Vec<String>, contrast: Vec<f64>) -> Result<Self> {
        if names.len() != x.ncols() || contrast.len() != x.ncols() {
            return Err(Error::Dimension(format!(
                "{} columns but {} names and {} contrast weights",
                x.ncols(),
                names.len(),
                contrast.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Design("design contains non-finite values".into()));
        }
        if contrast.iter().all(|&c| c == 0.0) {
            return Err(Error::Design("contrast is all zero".into()));
        }
        if x.nrows() <= x.ncols() {
            return Err(Error::Design(format!(
                "{} time points cannot support {} columns",
                x.nrows(),
                x.ncols()
            )));
        }
        // incremental Gram-Schmidt: the first column that adds nothing is collinear
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for (j, name) in names.iter().enumerate() {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut r = col;
            for _ in 0..2 {
                for q in &basis {
                    let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
                    r.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
                }
            }
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm0 == 0.0 || norm <= 1e-8 * norm0.max(1.0) {
                return Err(Error::Design(format!("column '{name}' is collinear with the preceding columns")));
            }
            basis.push(r.into_iter().map(|v| v / norm).collect());
        }
        Ok(DesignMatrix { x, names, contrast })
    }
}

/// Smoothed random walks standing in for realignment parameters.
fn motion6(n_t: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..6)
        .map(|_| {
            let mut walk = Vec::with_capacity(n_t);
            let mut acc = 0.0;
            for _ in 0..n_t {
                let step: f64 = StandardNormal.sample(rng);
                acc += step;
                walk.push(acc);
            }
            let mut smooth: Vec<f64> = (0..n_t)
                .map(|i| {
                    let lo = i.saturating_sub(1);
                    let hi = (i + 1).min(n_t - 1);
                    walk[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
                })
                .collect();
            center(&mut smooth);
            smooth
        })
        .collect()
}

/// Discrete cosine high-pass basis with periods longer than `cutoff_s`.
pub fn drift_basis(n_t: usize, tr_s: f64, cutoff_s: f64) -> Vec<Vec<f64>> {
    let k = (2.0 * n_t as f64 * tr_s / cutoff_s).floor() as usize;
    (1..=k)
        .map(|j| {
            (0..n_t)
                .map(|t| (std::f64::consts::PI * j as f64 * (t as f64 + 0.5) / n_t as f64).cos())
                .collect()
        })
        .collect()
}

/// `[task regressors | intercept | nuisance]` with a task1 - task2 (or
/// task1) contrast.
pub fn build_design(
    regressors: &[Vec<f64>],
    nuisance: &[Nuisance],
    n_t: usize,
    tr_s: f64,
    seed_value: u64,
    extras: &DesignExtras,
) -> Result<DesignMatrix> {
    if regressors.is_empty() {
        return Err(Error::Design("no task regressors".into()));
    }
    if let Some(r) = regressors.iter().find(|r| r.len() != n_t) {
        return Err(Error::Dimension(format!("regressor has {} samples, expected {n_t}", r.len())));
    }
    let mut cols: Vec<Vec<f64>> = regressors.to_vec();
    let mut names: Vec<String> = (1..=regressors.len()).map(|i| format!("task{i}")).collect();
    cols.push(vec![1.0; n_t]);
    names.push("intercept".into());
    let mut set: Vec<Nuisance> = nuisance.to_vec();
    set.sort();
    set.dedup();
    if set.contains(&Nuisance::Motion24) {
        set.retain(|&n| n != Nuisance::Motion6);
    }
    let mut rng = seed::child_rng(seed_value, "motion", 0);
    for n in set {
        match n {
            Nuisance::Motion6 | Nuisance::Motion24 => {
                let m = motion6(n_t, &mut rng);
                let mut push = |tag: &str, f: &dyn Fn(&[f64]) -> Vec<f64>| {
                    for (i, s) in m.iter().enumerate() {
                        let mut c = f(s);
                        center(&mut c);
                        cols.push(c);
                        names.push(format!("{tag}{}", i + 1));
                    }
                };
                push("motion", &|s| s.to_vec());
                if n == Nuisance::Motion24 {
                    let diff = |s: &[f64]| -> Vec<f64> {
                        (0..s.len()).map(|t| if t == 0 { 0.0 } else { s[t] - s[t - 1] }).collect()
                    };
                    push("motion_sq", &|s| s.iter().map(|v| v * v).collect());
                    push("motion_diff", &|s| diff(s));
                    push("motion_diff_sq", &|s| diff(s).iter().map(|v| v * v).collect());
                }
            }
            Nuisance::GlobalMean => {
                let g = extras.global_signal.as_ref().ok_or_else(|| {
                    Error::Precondition("global-mean nuisance needs the mask-mean time series".into())
                })?;
                if g.len() != n_t {
                    return Err(Error::Dimension(format!("global signal has {} samples, expected {n_t}", g.len())));
                }
                let mut c = g.clone();
                center(&mut c);
                cols.push(c);
                names.push("global_mean".into());
            }
            Nuisance::Drift => {
                for (j, c) in drift_basis(n_t, tr_s, extras.drift_cutoff_s).into_iter().enumerate() {
                    cols.push(c);
                    names.push(format!("drift{}", j + 1));
                }
            }
        }
    }
    let p = cols.len();
    let x = DMatrix::from_fn(n_t, p, |i, j| cols[j][i]);
    let mut contrast = vec![0.0; p];
    contrast[0] = 1.0;
    if regressors.len() >= 2 {
        contrast[1] = -1.0;
    }
    DesignMatrix::new(x, names, contrast)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rests(p: &Paradigm) -> Vec<f64> {
        p.events
            .windows(2)
            .map(|w| w[1].onset_s - (w[0].onset_s + w[0].duration_s))
            .collect()
    }

    #[test]
    fn e3_beijing_ranges() {
        let p = build_paradigm(ParadigmKind::E3, Site::Beijing, 225, 2.0, 99).unwrap();
        assert_eq!(p.count(1), 13);
        assert_eq!(p.count(2), 13);
        assert!(p.events.iter().all(|e| (3.0..=7.0).contains(&e.duration_s)));
        assert!(rests(&p).iter().all(|r| (11.0..=13.0).contains(r)));
        assert!(p.events.windows(2).all(|w| w[0].condition != w[1].condition));
        assert!(p.events.last().map(|e| e.onset_s + e.duration_s).unwrap() <= 450.0);
    }

    #[test]
    fn e3_subject_invariant() {
        let a = build_paradigm(ParadigmKind::E3, Site::Oulu, 245, 1.8, 1).unwrap();
        let b = build_paradigm(ParadigmKind::E3, Site::Oulu, 245, 1.8, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn e4_seeded() {
        let a = build_paradigm(ParadigmKind::E4, Site::Beijing, 225, 2.0, 5).unwrap();
        let b = build_paradigm(ParadigmKind::E4, Site::Beijing, 225, 2.0, 5).unwrap();
        let c = build_paradigm(ParadigmKind::E4, Site::Beijing, 225, 2.0, 6).unwrap();
        assert_eq!(a, b);
        let order = |p: &Paradigm| p.events.iter().map(|e| e.condition).collect::<Vec<_>>();
        assert_ne!(order(&a), order(&c));
        assert_eq!(c.count(1), 13);
        assert_eq!(c.count(2), 13);
    }

    #[test]
    fn cambridge_counts() {
        let p = build_paradigm(ParadigmKind::E4, Site::Cambridge, 119, 3.0, 3).unwrap();
        assert_eq!((p.count(1), p.count(2)), (11, 11));
        assert!(p.events.iter().all(|e| (3.0..=6.0).contains(&e.duration_s)));
    }

    #[test]
    fn infeasible_schedule() {
        match build_paradigm(ParadigmKind::E3, Site::Beijing, 100, 2.0, 0) {
            Err(Error::Scheduling { required_s, available_s }) => {
                assert_eq!(available_s, 200.0);
                assert_eq!(required_s, 26.0 * 3.0 + 25.0 * 11.0);
            }
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn e4_constraints_hold(s in any::<u64>()) {
            for site in [Site::Beijing, Site::Cambridge, Site::Oulu] {
                let (n, dur, rest) = site_schedule(site);
                let (t, tr) = match site {
                    Site::Beijing => (225, 2.0),
                    Site::Cambridge => (119, 3.0),
                    Site::Oulu => (245, 1.8),
                };
                let p = build_paradigm(ParadigmKind::E4, site, t, tr, s).unwrap();
                prop_assert_eq!(p.count(1), n);
                prop_assert_eq!(p.count(2), n);
                prop_assert!(p.events.iter().all(|e| e.duration_s >= dur.0 && e.duration_s <= dur.1));
                prop_assert!(rests(&p).iter().all(|r| *r >= rest.0 - 1e-9 && *r <= rest.1 + 1e-9));
            }
        }
    }

    #[test]
    fn hrf_peak() {
        let peak = (0..300)
            .map(|i| i as f64 * 0.1)
            .max_by(|a, b| hrf(*a).total_cmp(&hrf(*b)))
            .unwrap();
        assert!((4.5..=6.0).contains(&peak), "{peak}");
    }

    #[test]
    fn empty_paradigm_zero_regressor() {
        let p = Paradigm::new(ParadigmKind::Custom, vec![], 100.0).unwrap();
        let r = convolve_regressors(&p, 50, 2.0);
        assert_eq!(r.len(), 1);
        assert!(r[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_matches_convolution_oracle() {
        let p = Paradigm::new(
            ParadigmKind::Custom,
            vec![Event { onset_s: 0.0, duration_s: 1.0, condition: 1 }],
            40.0,
        )
        .unwrap();
        let r = convolve_regressors(&p, 40, 1.0);
        let mut h: Vec<f64> = (0..40).map(|i| hrf(i as f64)).collect();
        let m = h.iter().sum::<f64>() / 40.0;
        h.iter_mut().for_each(|v| *v -= m);
        for (a, b) in r[0].iter().zip(&h) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn regressors_centered() {
        let p = build_paradigm(ParadigmKind::E4, Site::Oulu, 245, 1.8, 8).unwrap();
        for r in convolve_regressors(&p, 245, 1.8) {
            assert!((r.iter().sum::<f64>() / 245.0).abs() < 1e-12);
        }
    }

    #[test]
    fn design_shapes_and_contrast() {
        let p = build_paradigm(ParadigmKind::E3, Site::Beijing, 225, 2.0, 0).unwrap();
        let r = convolve_regressors(&p, 225, 2.0);
        let d = build_design(&r, &[], 225, 2.0, 1, &DesignExtras::default()).unwrap();
        assert_eq!(d.n_cols(), 3);
        assert_eq!(d.contrast, vec![1.0, -1.0, 0.0]);
        let d = build_design(&r, &[Nuisance::Motion24], 225, 2.0, 1, &DesignExtras::default()).unwrap();
        assert_eq!(d.names.iter().filter(|n| n.starts_with("motion")).count(), 24);
        let d2 = build_design(&r, &[Nuisance::Motion24], 225, 2.0, 1, &DesignExtras::default()).unwrap();
        assert_eq!(d, d2);
        let d = build_design(&r, &[Nuisance::Drift], 225, 2.0, 1, &DesignExtras::default()).unwrap();
        assert_eq!(d.n_cols(), 3 + 9);
    }

    #[test]
    fn collinear_column_named() {
        let t: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let extras = DesignExtras {
            global_signal: Some(t.iter().map(|v| 2.0 * v + 1.0).collect()),
            ..Default::default()
        };
        match build_design(&[t], &[Nuisance::GlobalMean], 30, 2.0, 0, &extras) {
            Err(Error::Design(m)) => assert!(m.contains("global_mean"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_roundtrip() {
        let p = build_paradigm(ParadigmKind::E4, Site::Beijing, 225, 2.0, 4).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = Paradigm::read_csv(&buf[..], p.total_s).unwrap();
        assert_eq!(q.events, p.events);
    }
}
