//! Sensitivity of conservative return levels to the expected damage ratios.
//!
//! | scenario | perturbation of `mu`                                |
//! |----------|-----------------------------------------------------|
//! | P0       | none                                                |
//! | P1       | `(1 + delta) mu` for every risk                     |
//! | P2       | `(1 - delta) mu` for every risk                     |
//! | P3, P4   | `(1 +/- delta) mu`, sign from one coin per risk     |
//!
//! `alpha + beta` is held fixed. Perturbed ratios are capped at 0.95; in the
//! random scenarios a ratio that would exceed the cap is set to 0.95 or to
//! `2 mu - 0.95` with equal probability.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundFamily;
use crate::error::{Error, Result};
use crate::portfolio::io::fmt_f64;
use crate::portfolio::{LossModel, LossTerm};
use crate::returns::LevelMatrix;
use crate::rng::{derive_seed, domain, substream};
use crate::sampler::{run_conservative, SamplingPath};
use crate::stats::{mean, quantile, variance};

pub const MU_CAP: f64 = 0.95;

/// Quantiles reported for pooled samples.
pub const POOLED_QUANTILES: [f64; 3] = [0.025, 0.5, 0.975];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    P0,
    P1,
    P2,
    P3,
    P4,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Scenario::P0, Scenario::P1, Scenario::P2, Scenario::P3, Scenario::P4];

    pub fn default_delta(self) -> f64 {
        match self {
            Scenario::P0 => 0.0,
            Scenario::P1 | Scenario::P2 | Scenario::P3 => 0.05,
            Scenario::P4 => 0.25,
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, Scenario::P3 | Scenario::P4)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "P0" => Ok(Scenario::P0),
            "P1" => Ok(Scenario::P1),
            "P2" => Ok(Scenario::P2),
            "P3" => Ok(Scenario::P3),
            "P4" => Ok(Scenario::P4),
            _ => Err(Error::Config(format!("unknown scenario {s:?}"))),
        }
    }
}

fn check_mu(model: &LossModel) -> Result<()> {
    for t in model.terms() {
        let mu = t.mean_damage();
        if mu >= MU_CAP {
            return Err(Error::Invalid(format!(
                "year {} event {} risk {}: expected damage ratio {mu} is not below {MU_CAP}",
                t.year,
                t.event,
                model.portfolio().risk(t.risk).risk_id
            )));
        }
    }
    Ok(())
}

fn with_mu(t: &LossTerm, mu: f64) -> LossTerm {
    let s = t.alpha + t.beta;
    LossTerm {
        alpha: mu * s,
        beta: (1.0 - mu) * s,
        ..*t
    }
}

/// The perturbed model for portfolio replicate `replicate` (ignored by the
/// deterministic scenarios).
pub fn perturb(model: &LossModel, scenario: Scenario, delta: f64, replicate: u64, seed: u64) -> Result<LossModel> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Config(format!("delta must lie in [0, 1), got {delta}")));
    }
    check_mu(model)?;
    let terms: Vec<LossTerm> = match scenario {
        Scenario::P0 => return Ok(model.clone()),
        Scenario::P1 | Scenario::P2 => {
            let factor = if scenario == Scenario::P1 {
                1.0 + delta
            } else {
                1.0 - delta
            };
            model
                .terms()
                .iter()
                .map(|t| with_mu(t, (factor * t.mean_damage()).min(MU_CAP)))
                .collect()
        }
        Scenario::P3 | Scenario::P4 => {
            let mut coin_rng = substream(seed, domain::COIN, replicate, 0);
            let up: Vec<bool> = (0..model.portfolio().len())
                .map(|_| coin_rng.random_bool(0.5))
                .collect();
            let mut reflect_rng = substream(seed, domain::REFLECT, replicate, 0);
            model
                .terms()
                .iter()
                .map(|t| {
                    let mu = t.mean_damage();
                    let new_mu = if up[t.risk as usize] {
                        let raised = (1.0 + delta) * mu;
                        if raised > MU_CAP {
                            if reflect_rng.random_bool(0.5) {
                                MU_CAP
                            } else {
                                2.0 * mu - MU_CAP
                            }
                        } else {
                            raised
                        }
                    } else {
                        (1.0 - delta) * mu
                    };
                    with_mu(t, new_mu)
                })
                .collect()
        }
    };
    model.with_terms(terms)
}

/// Per-risk coin outcomes (`true` = raised) of replicate `replicate`.
pub fn coin_flips(n_risks: usize, replicate: u64, seed: u64) -> Vec<bool> {
    let mut rng = substream(seed, domain::COIN, replicate, 0);
    (0..n_risks).map(|_| rng.random_bool(0.5)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityConfig {
    pub scenario: Scenario,
    pub delta: f64,
    /// Portfolio replicates; used by the random scenarios only.
    pub replicates: usize,
    pub m: usize,
    pub ks: Vec<u32>,
    pub family: BoundFamily,
    pub path: SamplingPath,
    pub seed: u64,
}

/// Side of the conservative bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Lower => "lower",
            Side::Upper => "upper",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SensitivityResult {
    pub scenario: Scenario,
    pub ks: Vec<u32>,
    /// `(lower, upper)` return levels of each portfolio replicate.
    pub replicates: Vec<(LevelMatrix, LevelMatrix)>,
}

impl SensitivityResult {
    fn index_of(&self, k: u32) -> Result<usize> {
        self.ks
            .iter()
            .position(|&x| x == k)
            .ok_or_else(|| Error::Config(format!("return period {k} was not computed")))
    }

    /// The `M` samples of the `k`-year level in each replicate.
    pub fn per_replicate(&self, k: u32, side: Side) -> Result<Vec<Vec<f64>>> {
        let j = self.index_of(k)?;
        Ok(self
            .replicates
            .iter()
            .map(|(lo, hi)| match side {
                Side::Lower => lo.column(j),
                Side::Upper => hi.column(j),
            })
            .collect())
    }

    /// All `R x M` samples of the `k`-year level.
    pub fn pooled(&self, k: u32, side: Side) -> Result<Vec<f64>> {
        Ok(self.per_replicate(k, side)?.concat())
    }

    pub fn pooled_quantile(&self, k: u32, side: Side, p: f64) -> Result<f64> {
        Ok(quantile(&self.pooled(k, side)?, p))
    }

    pub fn variance_ratio(&self, k: u32, side: Side) -> Result<f64> {
        variance_ratio(&self.per_replicate(k, side)?)
    }
}

/// Runs one scenario. P0, P1 and P2 use `seed` for sampling, so they share
/// random numbers; replicate `r` of P3/P4 samples from an independent seed.
pub fn run_sensitivity(model: &LossModel, cfg: &SensitivityConfig) -> Result<SensitivityResult> {
    if cfg.m == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    let r = if cfg.scenario.is_random() {
        if cfg.replicates == 0 {
            return Err(Error::Config(
                "random scenarios need at least one portfolio replicate".into(),
            ));
        }
        cfg.replicates
    } else {
        1
    };
    let mut replicates = Vec::with_capacity(r);
    for rep in 0..r {
        let perturbed = perturb(model, cfg.scenario, cfg.delta, rep as u64, cfg.seed)?;
        let sample_seed = if cfg.scenario.is_random() {
            derive_seed(cfg.seed, domain::SENSITIVITY, rep as u64)
        } else {
            cfg.seed
        };
        let run = run_conservative(&perturbed.summaries(), cfg.m, cfg.family, cfg.path, sample_seed)?;
        replicates.push((
            LevelMatrix::from_matrix(&run.lower, &cfg.ks)?,
            LevelMatrix::from_matrix(&run.upper, &cfg.ks)?,
        ));
    }
    Ok(SensitivityResult {
        scenario: cfg.scenario,
        ks: cfg.ks.clone(),
        replicates,
    })
}

/// Between-to-within variance ratio of replicate samples.
///
/// `sigma_w^2` is the mean within-replicate variance; `sigma_b^2` is the
/// variance of the replicate means less `sigma_w^2 / M`, floored at 0.
pub fn variance_ratio(samples: &[Vec<f64>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Config(format!(
            "variance decomposition needs at least two replicates, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| s.len() < 2) {
        return Err(Error::Config("each replicate needs at least two samples".into()));
    }
    let within: Vec<f64> = samples.iter().map(|s| variance(s)).collect();
    let means: Vec<f64> = samples.iter().map(|s| mean(s)).collect();
    let m_bar = samples.iter().map(|s| s.len() as f64).sum::<f64>() / samples.len() as f64;
    let sigma_w = mean(&within);
    let sigma_b = (variance(&means) - sigma_w / m_bar).max(0.0);
    if sigma_w == 0.0 {
        return Ok(if sigma_b == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(sigma_b / sigma_w)
}

pub const QUANTILES_HEADER: [&str; 5] = ["scenario", "k", "side", "quantile", "value"];
pub const SAMPLES_HEADER: [&str; 4] = ["scenario", "replicate", "side", "sample_value"];

/// Pooled quantiles of every scenario, return period and side.
pub fn write_quantiles_csv(results: &[SensitivityResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(QUANTILES_HEADER)?;
    for res in results {
        for &k in &res.ks {
            for side in [Side::Lower, Side::Upper] {
                let mut pooled = res.pooled(k, side)?;
                pooled.sort_by(f64::total_cmp);
                for p in POOLED_QUANTILES {
                    w.write_record([
                        res.scenario.to_string(),
                        k.to_string(),
                        side.to_string(),
                        fmt_f64(p),
                        fmt_f64(crate::stats::quantile_sorted(&pooled, p)),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Long-format samples of the `k`-year level for box plots.
pub fn write_samples_csv(results: &[SensitivityResult], k: u32, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(SAMPLES_HEADER)?;
    for res in results {
        for side in [Side::Lower, Side::Upper] {
            for (r, sample) in res.per_replicate(k, side)?.iter().enumerate() {
                for x in sample {
                    w.write_record([
                        res.scenario.to_string(),
                        (r + 1).to_string(),
                        side.to_string(),
                        fmt_f64(*x),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
