//! Bibliometric estimate of how many published studies used a lenient
//! cluster defining threshold, with the CDT-by-software cross-tabulation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SOFTWARE: [&str; 5] = ["AFNI", "BrainVoyager", "FSL", "SPM", "Others"];
pub const CDT_BINS: [&str; 5] = [">.01", ".01", ".005", ".001", "<.001"];

/// Cross-tabulation of reported CDTs by package.
pub const DEFAULT_CROSSTAB_CSV: &str = "\
CDT,AFNI,BrainVoyager,FSL,SPM,Others,TOTAL
>.01,9,5,9,8,4,35
.01,9,4,44,20,3,80
.005,24,6,1,48,3,82
.001,13,20,11,206,5,255
<.001,2,5,3,16,2,28
TOTAL,57,40,68,298,17,480
";

pub const YEUNG_SURVEYED: u64 = 388;
pub const YEUNG_CLUSTER: u64 = 270;
pub const YEUNG_HIGH_CDT: u64 = 72;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdtCrosstab {
    /// Counts per bin in [`CDT_BINS`] order, per package in [`SOFTWARE`] order.
    pub counts: [[u64; 5]; 5],
}

impl CdtCrosstab {
    pub fn published_default() -> Self {
        Self::from_csv(DEFAULT_CROSSTAB_CSV).expect("embedded table is consistent")
    }

    pub fn zeros() -> Self {
        CdtCrosstab { counts: [[0; 5]; 5] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, bin: usize) -> u64 {
        self.counts[bin].iter().sum()
    }

    pub fn software_totals(&self) -> [u64; 5] {
        let mut t = [0; 5];
        for row in &self.counts {
            t.iter_mut().zip(row).for_each(|(t, c)| *t += c);
        }
        t
    }

    /// Parse the table layout of [`DEFAULT_CROSSTAB_CSV`]. Row and
    /// column TOTAL entries must agree with the counts.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::validation("crosstab", "empty table"))?;
        let expected: Vec<&str> = std::iter::once("CDT").chain(SOFTWARE).chain(["TOTAL"]).collect();
        let got: Vec<&str> = header.split(',').map(str::trim).collect();
        if got != expected {
            return Err(Error::validation("crosstab", format!("header must be {}", expected.join(","))));
        }
        let mut counts = [[0u64; 5]; 5];
        let mut seen = [false; 5];
        let mut footer: Option<[u64; 6]> = None;
        for line in lines {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 7 {
                return Err(Error::validation(cells[0], format!("expected 7 fields, got {}", cells.len())));
            }
            let mut nums = [0u64; 6];
            for (n, c) in nums.iter_mut().zip(&cells[1..]) {
                *n = c
                    .parse()
                    .map_err(|_| Error::validation(cells[0], format!("`{c}` is not a count")))?;
            }
            if cells[0] == "TOTAL" {
                footer = Some(nums);
                continue;
            }
            let bin = CDT_BINS
                .iter()
                .position(|b| *b == cells[0])
                .ok_or_else(|| Error::validation(cells[0], "unknown CDT bin"))?;
            if std::mem::replace(&mut seen[bin], true) {
                return Err(Error::validation(cells[0], "duplicate row"));
            }
            let sum: u64 = nums[..5].iter().sum();
            if sum != nums[5] {
                return Err(Error::validation(cells[0], format!("row sums to {sum} but TOTAL is {}", nums[5])));
            }
            counts[bin].copy_from_slice(&nums[..5]);
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::validation(CDT_BINS[missing], "row missing"));
        }
        let table = CdtCrosstab { counts };
        if let Some(f) = footer {
            let t = table.software_totals();
            for (k, name) in SOFTWARE.iter().enumerate() {
                if t[k] != f[k] {
                    return Err(Error::validation(
                        "TOTAL",
                        format!("{name} column sums to {} but TOTAL is {}", t[k], f[k]),
                    ));
                }
            }
            if table.total() != f[5] {
                return Err(Error::validation("TOTAL", format!("grand total {} != {}", table.total(), f[5])));
            }
        }
        Ok(table)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("CDT,{},TOTAL\n", SOFTWARE.join(","));
        for (bin, row) in CDT_BINS.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out += &format!("{bin},{},{}\n", cells.join(","), row.iter().sum::<u64>());
        }
        let t: Vec<String> = self.software_totals().iter().map(u64::to_string).collect();
        out += &format!("TOTAL,{},{}\n", t.join(","), self.total());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiblioInputs {
    pub n_fmri: u64,
    /// Carried for completeness; the estimate does not multiply by it.
    pub p_has_data: f64,
    pub p_corrected_given_data: f64,
    pub p_cluster_given_data_corrected: f64,
    pub crosstab: CdtCrosstab,
}

impl BiblioInputs {
    /// Published inputs with fractions at their displayed precision.
    pub fn published_default() -> Self {
        BiblioInputs {
            n_fmri: 23_000,
            p_has_data: 0.80,
            p_corrected_given_data: 0.59,
            p_cluster_given_data_corrected: 0.79,
            crosstab: CdtCrosstab::published_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, p) in [
            ("p_has_data", self.p_has_data),
            ("p_corrected_given_data", self.p_corrected_given_data),
            ("p_cluster_given_data_corrected", self.p_cluster_given_data_corrected),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(key, format!("must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffectedEstimate {
    pub n_cluster_corrected: u64,
    /// Lenient-CDT share rounded to two decimals, as used in the product.
    pub frac_cdt_ge_01: f64,
    pub frac_exact: f64,
    pub n_affected: u64,
}

fn round_dp(x: f64, dp: i32) -> f64 {
    let s = 10f64.powi(dp);
    (x * s).round() / s
}

pub fn estimate_affected(inputs: &BiblioInputs) -> Result<AffectedEstimate> {
    inputs.validate()?;
    let n = (inputs.n_fmri as f64 * inputs.p_corrected_given_data * inputs.p_cluster_given_data_corrected).round();
    let total = inputs.crosstab.total();
    let frac_exact = if total == 0 {
        0.0
    } else {
        (inputs.crosstab.row_total(0) + inputs.crosstab.row_total(1)) as f64 / total as f64
    };
    let frac = round_dp(frac_exact, 2);
    Ok(AffectedEstimate {
        n_cluster_corrected: n as u64,
        frac_cdt_ge_01: frac,
        frac_exact,
        n_affected: (n * frac).round() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdtDistribution {
    pub bin_fractions: [f64; 5],
    pub bin_totals: [u64; 5],
    pub software_totals: [u64; 5],
    pub total: u64,
}

pub fn cdt_distribution(crosstab: &CdtCrosstab) -> Result<CdtDistribution> {
    let total = crosstab.total();
    if total == 0 {
        return Err(Error::validation("TOTAL", "crosstab is empty"));
    }
    let mut bin_totals = [0; 5];
    let mut bin_fractions = [0.0; 5];
    for b in 0..5 {
        bin_totals[b] = crosstab.row_total(b);
        bin_fractions[b] = bin_totals[b] as f64 / total as f64;
    }
    Ok(CdtDistribution {
        bin_fractions,
        bin_totals,
        software_totals: crosstab.software_totals(),
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurveyCheck {
    pub cluster_fraction: f64,
    pub high_cdt_fraction: f64,
}

/// Later survey of task studies: cluster inference share and lenient
/// CDT share among those.
pub fn yeung_check() -> SurveyCheck {
    SurveyCheck {
        cluster_fraction: YEUNG_CLUSTER as f64 / YEUNG_SURVEYED as f64,
        high_cdt_fraction: YEUNG_HIGH_CDT as f64 / YEUNG_CLUSTER as f64,
    }
}

/// `10720` → `"10,720"`.
pub fn thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Human-readable summary printed by the command line.
pub fn render_report(inputs: &BiblioInputs) -> Result<String> {
    let e = estimate_affected(inputs)?;
    let d = cdt_distribution(&inputs.crosstab)?;
    let y = yeung_check();
    let mut out = String::new();
    out += &format!("n_cluster_corrected: {}\n", thousands(e.n_cluster_corrected));
    out += &format!("frac_cdt_ge_01: {:.2}\n", e.frac_cdt_ge_01);
    out += &format!("n_affected: {}\n", thousands(e.n_affected));
    out += "cdt_bins:";
    for (b, t) in CDT_BINS.iter().zip(d.bin_totals) {
        out += &format!(" {b}={t}");
    }
    out += "\nsoftware_totals:";
    for (s, t) in SOFTWARE.iter().zip(d.software_totals) {
        out += &format!(" {s}={t}");
    }
    out += &format!(" TOTAL={}\n", d.total);
    out += &format!(
        "survey: {YEUNG_CLUSTER}/{YEUNG_SURVEYED} = {:.1}% cluster inference, {YEUNG_HIGH_CDT}/{YEUNG_CLUSTER} = {:.1}% lenient CDT\n",
        100.0 * y.cluster_fraction,
        100.0 * y.high_cdt_fraction
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let t = CdtCrosstab::published_default();
        assert_eq!(t.to_csv(), DEFAULT_CROSSTAB_CSV);
        assert_eq!(CdtCrosstab::from_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn inconsistent_row_named() {
        let bad = DEFAULT_CROSSTAB_CSV.replace(".005,24,6,1,48,3,82", ".005,24,6,1,48,3,83");
        match CdtCrosstab::from_csv(&bad) {
            Err(Error::Validation { key, .. }) => assert_eq!(key, ".005"),
            other => panic!("{other:?}"),
        }
        let bad = DEFAULT_CROSSTAB_CSV.replace("TOTAL,57,", "TOTAL,58,");
        assert!(matches!(CdtCrosstab::from_csv(&bad), Err(Error::Validation { key, .. }) if key == "TOTAL"));
    }

    #[test]
    fn trivial_inputs() {
        let mut i = BiblioInputs::published_default();
        i.n_fmri = 0;
        let e = estimate_affected(&i).unwrap();
        assert_eq!((e.n_cluster_corrected, e.n_affected), (0, 0));
        let mut ct = CdtCrosstab::zeros();
        ct.counts[3] = [1, 2, 3, 4, 5];
        let i = BiblioInputs { crosstab: ct, ..BiblioInputs::published_default() };
        let e = estimate_affected(&i).unwrap();
        assert_eq!((e.frac_cdt_ge_01, e.n_affected), (0.0, 0));
        let i = BiblioInputs { p_corrected_given_data: 1.2, ..BiblioInputs::published_default() };
        assert!(estimate_affected(&i).is_err());
    }

    #[test]
    fn thousands_separator() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(2573), "2,573");
        assert_eq!(thousands(1_234_567), "1,234,567");
    }
}
