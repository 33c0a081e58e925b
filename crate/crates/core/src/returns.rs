//! Return levels from replicate matrices.
//!
//! Within one replicate the `k`-year return level is the
//! `ceil(n_years / k)`-th largest yearly total. Across replicates, point
//! estimates are means and interval endpoints are type-1 empirical quantiles
//! (see [`crate::stats::quantile_sorted`]).

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::ReplicateMatrix;
use crate::portfolio::io::fmt_f64;
use crate::rng::{domain, substream};
use crate::stats::{mean, quantile, variance};

pub const DEFAULT_KS: [u32; 8] = [2, 5, 10, 20, 50, 100, 200, 500];

/// Replicate counts below this make the 2.5% quantile unreliable.
pub const MIN_RELIABLE_REPLICATES: usize = 40;

pub const PI_LOW: f64 = 0.025;
pub const PI_HIGH: f64 = 0.975;

fn check_k(k: u32, n: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("return period must be at least 2, got {k}")));
    }
    if k as usize > n {
        return Err(Error::Config(format!(
            "a {k}-year return level needs at least {k} years, have {n}"
        )));
    }
    Ok(())
}

fn rank_from_top(n: usize, k: u32) -> usize {
    n.div_ceil(k as usize)
}

/// The `ceil(n/k)`-th largest of `totals`.
pub fn return_level(totals: &[f64], k: u32) -> Result<f64> {
    check_k(k, totals.len())?;
    let mut v = totals.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v[rank_from_top(v.len(), k) - 1])
}

/// Return levels of every replicate: `values[m * ks.len() + j]` is the
/// `ks[j]`-year level of replicate `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelMatrix {
    ks: Vec<u32>,
    n_replicates: usize,
    values: Vec<f64>,
}

impl LevelMatrix {
    pub fn from_matrix(matrix: &ReplicateMatrix, ks: &[u32]) -> Result<Self> {
        for &k in ks {
            check_k(k, matrix.n_years())?;
        }
        let n = matrix.n_years();
        let values = (0..matrix.n_replicates())
            .into_par_iter()
            .flat_map_iter(|m| {
                let mut row = matrix.row(m).to_vec();
                row.sort_by(|a, b| b.total_cmp(a));
                ks.iter()
                    .map(move |&k| row[rank_from_top(n, k) - 1])
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(Self {
            ks: ks.to_vec(),
            n_replicates: matrix.n_replicates(),
            values,
        })
    }

    pub fn ks(&self) -> &[u32] {
        &self.ks
    }

    pub fn n_replicates(&self) -> usize {
        self.n_replicates
    }

    pub fn get(&self, m: usize, j: usize) -> f64 {
        self.values[m * self.ks.len() + j]
    }

    /// The `M` replicate values of the `j`-th return period.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_replicates).map(|m| self.get(m, j)).collect()
    }

    fn column_at(&self, j: usize, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&m| self.get(m, j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelRow {
    pub k: u32,
    pub point_lower: f64,
    pub point_upper: f64,
    pub pi_low: f64,
    pub pi_high: f64,
    pub baseline_point: Option<f64>,
    pub baseline_lo: Option<f64>,
    pub baseline_hi: Option<f64>,
    pub width_ratio: Option<f64>,
    pub width_ratio_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelReport {
    pub n_replicates: usize,
    pub rows: Vec<ReturnLevelRow>,
    pub warnings: Vec<String>,
}

pub const REPORT_HEADER: [&str; 10] = [
    "k",
    "point_lower",
    "point_upper",
    "pi_low",
    "pi_high",
    "baseline_point",
    "baseline_lo",
    "baseline_hi",
    "width_ratio",
    "width_ratio_se",
];

impl ReturnLevelReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(REPORT_HEADER)?;
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                fmt_f64(r.point_lower),
                fmt_f64(r.point_upper),
                fmt_f64(r.pi_low),
                fmt_f64(r.pi_high),
                opt(r.baseline_point),
                opt(r.baseline_lo),
                opt(r.baseline_hi),
                opt(r.width_ratio),
                opt(r.width_ratio_se),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }
}

/// Point estimates and conservative intervals from coupled matrices.
pub fn aggregate(lower: &ReplicateMatrix, upper: &ReplicateMatrix, ks: &[u32]) -> Result<ReturnLevelReport> {
    if lower.n_replicates() != upper.n_replicates() || lower.n_years() != upper.n_years() {
        return Err(Error::Invalid("lower and upper matrices differ in shape".into()));
    }
    let lo = LevelMatrix::from_matrix(lower, ks)?;
    let hi = LevelMatrix::from_matrix(upper, ks)?;
    Ok(aggregate_levels(&lo, &hi))
}

pub fn aggregate_levels(lower: &LevelMatrix, upper: &LevelMatrix) -> ReturnLevelReport {
    let m = lower.n_replicates();
    let mut warnings = Vec::new();
    if m < MIN_RELIABLE_REPLICATES {
        warnings.push(format!(
            "only {m} replicates: the 2.5% and 97.5% quantiles are poorly estimated below {MIN_RELIABLE_REPLICATES}"
        ));
    }
    let rows = lower
        .ks()
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let lo = lower.column(j);
            let hi = upper.column(j);
            ReturnLevelRow {
                k,
                point_lower: mean(&lo),
                point_upper: mean(&hi),
                pi_low: quantile(&lo, PI_LOW),
                pi_high: quantile(&hi, PI_HIGH),
                baseline_point: None,
                baseline_lo: None,
                baseline_hi: None,
                width_ratio: None,
                width_ratio_se: None,
            }
        })
        .collect();
    ReturnLevelReport {
        n_replicates: m,
        rows,
        warnings,
    }
}

fn ratio_at(lower: &[f64], upper: &[f64], baseline: &[f64]) -> f64 {
    let width = quantile(upper, PI_HIGH) - quantile(lower, PI_LOW);
    let base = quantile(baseline, PI_HIGH) - quantile(baseline, PI_LOW);
    width / base
}

/// Conservative-to-baseline ratio of 95% interval widths per return period,
/// with a bootstrap standard error from `b` resamples of the replicates.
///
/// The coupled lower and upper replicates are resampled together. When both
/// runs have the same replicate count the baseline reuses the same indices.
pub fn width_ratio(
    lower: &LevelMatrix,
    upper: &LevelMatrix,
    baseline: &LevelMatrix,
    b: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if lower.ks() != baseline.ks() || upper.ks() != baseline.ks() {
        return Err(Error::Invalid("reports cover different return periods".into()));
    }
    let nk = baseline.ks().len();
    let mut point = Vec::with_capacity(nk);
    for j in 0..nk {
        let base = baseline.column(j);
        let width = quantile(&base, PI_HIGH) - quantile(&base, PI_LOW);
        if !(width > 0.0) {
            return Err(Error::Numeric(format!(
                "baseline interval for k = {} has zero width",
                baseline.ks()[j]
            )));
        }
        point.push(ratio_at(&lower.column(j), &upper.column(j), &base));
    }
    let mc = lower.n_replicates();
    let mb = baseline.n_replicates();
    let boots: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, domain::WIDTH_BOOTSTRAP, i as u64, 0);
            let ic: Vec<usize> = (0..mc).map(|_| rng.random_range(0..mc)).collect();
            let ib: Vec<usize> = if mb == mc {
                ic.clone()
            } else {
                (0..mb).map(|_| rng.random_range(0..mb)).collect()
            };
            (0..nk)
                .map(|j| {
                    ratio_at(
                        &lower.column_at(j, &ic),
                        &upper.column_at(j, &ic),
                        &baseline.column_at(j, &ib),
                    )
                })
                .collect()
        })
        .collect();
    Ok((0..nk)
        .map(|j| {
            let reps: Vec<f64> = boots.iter().map(|r| r[j]).filter(|x| x.is_finite()).collect();
            let se = if reps.len() >= 2 {
                variance(&reps).sqrt()
            } else {
                f64::NAN
            };
            (point[j], se)
        })
        .collect())
}

/// Adds baseline estimates and width ratios to `report`.
pub fn attach_baseline(
    report: &mut ReturnLevelReport,
    lower: &LevelMatrix,
    upper: &LevelMatrix,
    baseline: &LevelMatrix,
    bootstrap_b: usize,
    seed: u64,
) -> Result<()> {
    let ratios = width_ratio(lower, upper, baseline, bootstrap_b, seed)?;
    for (j, row) in report.rows.iter_mut().enumerate() {
        let base = baseline.column(j);
        row.baseline_point = Some(mean(&base));
        row.baseline_lo = Some(quantile(&base, PI_LOW));
        row.baseline_hi = Some(quantile(&base, PI_HIGH));
        row.width_ratio = Some(ratios[j].0);
        row.width_ratio_se = Some(ratios[j].1);
    }
    Ok(())
}
