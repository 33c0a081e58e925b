//! Sampling-importance-resampling from the `B2` distribution.
//!
//! Excesses `t' = S - E[S]` are proposed from the distribution whose survival
//! function is Bernstein's bound,
//!
//! ```text
//! S_Ber(t') = exp(-(t'^2/2) / (n vbar + c* t'/3)),
//! ```
//!
//! which inverts in closed form. They are reweighted by the ratio of the
//! density `f = -dS_BS/dt'` of `S_BS(t') = exp(n B(lambda) - lambda t')`,
//! `lambda = lambda*(t'/n)`, to the proposal density, and residual
//! resampling turns the weighted sample into an unweighted one.
//!
//! Differentiating `S_BS` through `lambda` gives
//! `f = [lambda - (n B'(lambda) - t') dlambda/dt'] S_BS`; the bracket is
//! nonnegative because `n B'(lambda*) <= t'`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tail;
use crate::bounds::{dlambda_dt, lambda_star, mgf_bound, mgf_bound_derivative, SummandStats};
use crate::error::{Error, Result};
use crate::portfolio::YearSummary;

/// Effective sample sizes below this fraction of `M` are flagged.
pub const LOW_ESS_FRACTION: f64 = 0.2;

/// Closed-form Bernstein excess with survival probability `u` in `(0, 1]`.
pub fn bernstein_excess(u: f64, n_vbar: f64, cstar: f64) -> f64 {
    let l = u.ln();
    let a = cstar * l / 3.0;
    (a * a - 2.0 * n_vbar * l).sqrt() - a
}

/// Proposed excesses `t'`, one per uniform `u = 1 - U[0,1)`.
pub fn bernstein_propose<R: Rng>(stats: &SummandStats, m: usize, rng: &mut R) -> Vec<f64> {
    let n_vbar = stats.n as f64 * stats.vbar;
    (0..m)
        .map(|_| {
            let u = 1.0 - rng.random::<f64>();
            bernstein_excess(u, n_vbar, stats.cstar)
        })
        .collect()
}

/// Log of the proposal density `q(t')`.
pub fn bernstein_log_density(tprime: f64, stats: &SummandStats) -> f64 {
    let nv = stats.n as f64 * stats.vbar;
    let c = stats.cstar;
    let denom = nv + c * tprime / 3.0;
    (nv + c * tprime / 6.0).ln() + tprime.ln() - 2.0 * denom.ln() - 0.5 * tprime * tprime / denom
}

/// `log S_BS(t')`.
pub fn b2_log_survival(tprime: f64, stats: &SummandStats) -> f64 {
    if !(tprime > 0.0) {
        return 0.0;
    }
    let n = stats.n as f64;
    let lambda = lambda_star(tprime / n, stats);
    n * mgf_bound(lambda, stats).expect("lambda* >= 0") - lambda * tprime
}

/// Log of the target density `f(t') = -dS_BS/dt'`.
pub fn b2_log_density(tprime: f64, stats: &SummandStats) -> f64 {
    let n = stats.n as f64;
    let t = tprime / n;
    let lambda = lambda_star(t, stats);
    let dl_dtp = dlambda_dt(t, stats) / n;
    let bracket = lambda - (n * mgf_bound_derivative(lambda, stats) - tprime) * dl_dtp;
    let log_s = n * mgf_bound(lambda, stats).expect("lambda* >= 0") - lambda * tprime;
    bracket.ln() + log_s
}

/// Density the proposals are reweighted towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    B2,
    /// The proposal itself; every weight is 1.
    Bernstein,
}

/// Proposals with their importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub tail: Tail,
    pub excess: Vec<f64>,
    /// Totals: mean plus excess (upper tail) or mean minus excess (lower tail).
    pub positions: Vec<f64>,
    /// `log w*` up to a common constant.
    pub log_raw_weights: Vec<f64>,
    /// Normalised weights.
    pub weights: Vec<f64>,
}

impl WeightedSample {
    /// `1 / sum w^2`, equal to `M / (1 + cv^2)`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Weights `w* = f(t')/q(t')` for proposals `excess` of one year and tail.
pub fn importance_weights(
    year: u32,
    tail: Tail,
    stats: &SummandStats,
    expected_total: f64,
    excess: Vec<f64>,
    target: Target,
) -> Result<WeightedSample> {
    let mut log_w = Vec::with_capacity(excess.len());
    for &tp in &excess {
        let lw = if tp <= 0.0 {
            // f/q -> 1 as t' -> 0
            0.0
        } else {
            match target {
                Target::B2 => b2_log_density(tp, stats) - bernstein_log_density(tp, stats),
                Target::Bernstein => bernstein_log_density(tp, stats) - bernstein_log_density(tp, stats),
            }
        };
        if lw.is_nan() || lw == f64::INFINITY {
            return Err(Error::Numeric(format!(
                "non-finite importance weight in year {year} ({tail} tail) at t' = {tp}"
            )));
        }
        log_w.push(lw);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Numeric(format!(
            "all importance weights vanish in year {year} ({tail} tail)"
        )));
    }
    let raw: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let positions = excess
        .iter()
        .map(|x| match tail {
            Tail::Upper => expected_total + x,
            Tail::Lower => expected_total - x,
        })
        .collect();
    Ok(WeightedSample {
        tail,
        excess,
        positions,
        log_raw_weights: log_w,
        weights,
    })
}

/// Copy counts summing to `m`: `floor(m w_i)` each, with the remainder drawn
/// multinomially in proportion to the fractional parts.
pub fn residual_counts<R: Rng>(weights: &[f64], m: usize, rng: &mut R) -> Vec<usize> {
    let scaled: Vec<f64> = weights.iter().map(|w| w * m as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let remainder = m.saturating_sub(assigned);
    if remainder > 0 {
        let residual: Vec<f64> = scaled
            .iter()
            .zip(&counts)
            .map(|(x, &c)| (x - c as f64).max(0.0))
            .collect();
        match WeightedIndex::new(&residual) {
            Ok(dist) => {
                for _ in 0..remainder {
                    counts[dist.sample(rng)] += 1;
                }
            }
            Err(_) => {
                // no fractional mass left: rounding shortfall goes to the heaviest item
                let top = (0..weights.len())
                    .max_by(|&a, &b| weights[a].total_cmp(&weights[b]))
                    .unwrap_or(0);
                counts[top] += remainder;
            }
        }
    }
    counts
}

/// Residual resampling of `ws` to its own size.
pub fn residual_resample<R: Rng>(ws: &WeightedSample, rng: &mut R) -> Vec<f64> {
    let m = ws.positions.len();
    let counts = residual_counts(&ws.weights, m, rng);
    let mut out = Vec::with_capacity(m);
    for (x, &c) in ws.positions.iter().zip(&counts) {
        out.extend(std::iter::repeat_n(*x, c));
    }
    out
}

/// Effective sample sizes of one year's two SIR runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirDiagnostics {
    pub year: u32,
    pub m: usize,
    pub ess_upper: f64,
    pub ess_lower: f64,
}

impl SirDiagnostics {
    pub(crate) fn degenerate(year: u32, m: usize) -> Self {
        Self {
            year,
            m,
            ess_upper: m as f64,
            ess_lower: m as f64,
        }
    }

    pub(crate) fn combine(upper: (u32, usize, f64), lower: (u32, usize, f64)) -> Self {
        Self {
            year: upper.0,
            m: upper.1,
            ess_upper: upper.2,
            ess_lower: lower.2,
        }
    }

    pub fn low_ess(&self) -> bool {
        let floor = LOW_ESS_FRACTION * self.m as f64;
        self.ess_upper < floor || self.ess_lower < floor
    }
}

/// An unweighted sample of size `m` from the `B2` distribution of one tail.
/// Returns the totals and `(year, m, ess)`.
pub fn sir_sample<R: Rng>(
    summary: &YearSummary,
    tail: Tail,
    m: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, (u32, usize, f64))> {
    let stats = match tail {
        Tail::Upper => &summary.upper,
        Tail::Lower => &summary.lower,
    };
    let excess = bernstein_propose(stats, m, rng);
    let ws = importance_weights(summary.year, tail, stats, summary.expected_total, excess, Target::B2)?;
    let ess = ws.ess();
    Ok((residual_resample(&ws, rng), (summary.year, m, ess)))
}
