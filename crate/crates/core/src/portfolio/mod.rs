//! Portfolio and event-loss data model, per-term moments and per-year
//! summaries.
//!
//! A risk with total insured value `b` and `n` subrisks contributes, for
//! every event that touches it, `n` independent subrisk losses: zero with
//! probability `1 - p`, otherwise `(b/n) * Beta(alpha, beta)`. Each centred
//! subrisk loss is one summand of the year's total.

pub mod bootstrap;
pub mod io;
pub mod synthetic;
pub mod toy;

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::SummandStats;
use crate::error::{Error, Result};

/// `alpha` or `beta` above this makes the damage ratio a point mass at its mean.
pub const POINT_MASS_PARAMETER: f64 = 1e8;

/// Number of higher-order summaries `K_2, K_3, ...` kept per tail.
pub const HIGHER_SUMMARIES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Risk {
    pub risk_id: String,
    pub total_insured_value: f64,
    pub n_subrisks: u32,
}

impl Risk {
    /// Insured value of one subrisk.
    pub fn exposure(&self) -> f64 {
        self.total_insured_value / self.n_subrisks as f64
    }
}

/// Risks indexed by position and by id.
#[derive(Debug, Clone, Default)]
pub struct Portfolio {
    risks: Vec<Risk>,
    index: HashMap<String, u32>,
}

impl Portfolio {
    pub fn new(risks: Vec<Risk>) -> Result<Self> {
        let mut index = HashMap::with_capacity(risks.len());
        for (i, r) in risks.iter().enumerate() {
            if !(r.total_insured_value > 0.0 && r.total_insured_value.is_finite()) {
                return Err(Error::Invalid(format!(
                    "risk {}: total insured value must be positive, got {}",
                    r.risk_id, r.total_insured_value
                )));
            }
            if r.n_subrisks == 0 {
                return Err(Error::Invalid(format!("risk {}: no subrisks", r.risk_id)));
            }
            if index.insert(r.risk_id.clone(), i as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate risk id {}", r.risk_id)));
            }
        }
        Ok(Self { risks, index })
    }

    pub fn risks(&self) -> &[Risk] {
        &self.risks
    }

    pub fn len(&self) -> usize {
        self.risks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.risks.is_empty()
    }

    pub fn position(&self, risk_id: &str) -> Option<u32> {
        self.index.get(risk_id).copied()
    }

    pub fn risk(&self, i: u32) -> &Risk {
        &self.risks[i as usize]
    }

    pub fn subrisk_count(&self) -> u64 {
        self.risks.iter().map(|r| r.n_subrisks as u64).sum()
    }
}

/// Loss distribution of one risk in one event of one year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub year: u32,
    pub event: u32,
    /// Position of the risk in its portfolio.
    pub risk: u32,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Insured value of one subrisk.
    pub exposure: f64,
    pub n_sub: u32,
}

impl LossTerm {
    /// Expected damage ratio given flooding.
    pub fn mean_damage(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn is_point_mass(&self) -> bool {
        self.alpha > POINT_MASS_PARAMETER || self.beta > POINT_MASS_PARAMETER
    }

    pub fn moments(&self) -> TermMoments {
        term_moments(self)
    }

    pub(crate) fn check(&self) -> std::result::Result<(), String> {
        if self.year == 0 {
            return Err("year must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(format!("p must lie in [0, 1], got {}", self.p));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.exposure > 0.0) || !self.exposure.is_finite() {
            return Err(format!("exposure must be positive, got {}", self.exposure));
        }
        if self.n_sub == 0 {
            return Err("n_sub must be at least 1".into());
        }
        Ok(())
    }
}

/// Moments and support of one centred subrisk summand `X = e (Z - p mu)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermMoments {
    pub mean: f64,
    pub variance: f64,
    /// Upper support of `X`: `e (1 - p mu)`.
    pub c_upper: f64,
    /// Upper support of `-X`: `e p mu`.
    pub c_lower: f64,
    /// Lower support of `X`: `-e p mu`.
    pub a_lower: f64,
}

/// Moments of one subrisk summand. The variance is
/// `e^2 (p E[D^2] - p^2 mu^2)` with `D ~ Beta(alpha, beta)`, arranged as
/// `e^2 (p var(D) + p (1 - p) mu^2)`.
pub fn term_moments(term: &LossTerm) -> TermMoments {
    let e = term.exposure;
    let p = term.p;
    let mu = term.mean_damage();
    let var_d = if term.is_point_mass() {
        0.0
    } else {
        let s = term.alpha + term.beta;
        term.alpha * term.beta / (s * s * (s + 1.0))
    };
    let mean = e * p * mu;
    TermMoments {
        mean,
        variance: e * e * (p * var_d + p * (1.0 - p) * mu * mu),
        c_upper: e * (1.0 - p * mu),
        c_lower: mean,
        a_lower: -mean,
    }
}

/// Descriptive statistics of one year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    /// Distinct events.
    pub n_ev: u32,
    /// (subrisk, event) pairs with positive flood probability.
    pub n_p_gt_0: u64,
    /// Mean flood probability over those pairs.
    pub p_bar: f64,
    /// Mean expected damage ratio over those pairs.
    pub mu_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearSummary {
    pub year: u32,
    /// Number of summands.
    pub n: u64,
    pub expected_total: f64,
    pub upper: SummandStats,
    pub lower: SummandStats,
    pub descriptive: Descriptive,
}

impl YearSummary {
    /// True when the yearly loss is identically its mean.
    pub fn is_degenerate(&self) -> bool {
        self.n == 0 || self.upper.vbar <= 0.0
    }
}

struct TailAccumulator {
    weight_var: Vec<(f64, f64, f64)>, // (n_sub, variance, c)
    cstar: f64,
}

impl TailAccumulator {
    fn stats(&self, n: u64, range_sq: f64) -> SummandStats {
        let nf = n as f64;
        let cstar = self.cstar;
        let mut vbar = 0.0;
        let mut k = 0.0;
        let mut kj = [0.0; HIGHER_SUMMARIES + 1];
        for &(w, var, c) in &self.weight_var {
            let r = if cstar > 0.0 { c / cstar } else { 0.0 };
            let wv = w * var;
            vbar += wv;
            k += wv * r;
            let ln_r = r.ln();
            for (j, slot) in kj.iter_mut().enumerate() {
                // 1 - r^j, accurate for r near 1
                let one_minus = -((j + 1) as f64 * ln_r).exp_m1();
                *slot += wv * r * one_minus;
            }
        }
        if n == 0 {
            return SummandStats::new(0, 0.0, 0.0, 0.0, 0.0);
        }
        let mut stats = SummandStats::new(n, vbar / nf, k / nf, kj[0] / nf, cstar)
            .with_kj(kj[1..].iter().map(|x| x / nf).collect())
            .with_range_sq(range_sq);
        // rounding can push a summary a hair past its ceiling
        stats.k = stats.k.min(stats.vbar);
        stats.k1 = stats.k1.min(stats.k);
        for x in &mut stats.kj {
            *x = x.min(stats.k);
        }
        stats
    }
}

/// Aggregates one year's terms into summaries for both tails.
pub fn year_summary(year: u32, terms: &[LossTerm]) -> YearSummary {
    let mut upper = TailAccumulator {
        weight_var: Vec::with_capacity(terms.len()),
        cstar: 0.0,
    };
    let mut lower = TailAccumulator {
        weight_var: Vec::with_capacity(terms.len()),
        cstar: 0.0,
    };
    let mut n = 0u64;
    let mut expected_total = 0.0;
    let mut range_sq = 0.0;
    let mut p_sum = 0.0;
    let mut mu_sum = 0.0;
    let mut events = BTreeSet::new();
    for t in terms {
        debug_assert_eq!(t.year, year);
        events.insert(t.event);
        if t.p <= 0.0 {
            continue;
        }
        let m = t.moments();
        let w = t.n_sub as f64;
        n += t.n_sub as u64;
        expected_total += w * m.mean;
        range_sq += w * t.exposure * t.exposure;
        p_sum += w * t.p;
        mu_sum += w * t.mean_damage();
        upper.weight_var.push((w, m.variance, m.c_upper));
        upper.cstar = upper.cstar.max(m.c_upper);
        lower.weight_var.push((w, m.variance, m.c_lower));
        lower.cstar = lower.cstar.max(m.c_lower);
    }
    let nf = n.max(1) as f64;
    let range_sq = range_sq / nf;
    YearSummary {
        year,
        n,
        expected_total,
        upper: upper.stats(n, range_sq),
        lower: lower.stats(n, range_sq),
        descriptive: Descriptive {
            n_ev: events.len() as u32,
            n_p_gt_0: n,
            p_bar: if n > 0 { p_sum / nf } else { 0.0 },
            mu_bar: if n > 0 { mu_sum / nf } else { 0.0 },
        },
    }
}

/// A portfolio together with its event-loss terms, grouped by year.
#[derive(Debug, Clone)]
pub struct LossModel {
    portfolio: Portfolio,
    terms: Vec<LossTerm>,
    /// `terms[year_starts[y-1]..year_starts[y]]` are the terms of year `y`.
    year_starts: Vec<usize>,
}

impl LossModel {
    /// Groups `terms` by year. The number of years is the largest year
    /// present unless `n_years` is given; years without terms have a total
    /// of zero.
    pub fn new(portfolio: Portfolio, mut terms: Vec<LossTerm>, n_years: Option<u32>) -> Result<Self> {
        let max_year = terms.iter().map(|t| t.year).max().unwrap_or(0);
        let n_years = match n_years {
            Some(n) if n < max_year => {
                return Err(Error::Invalid(format!(
                    "events reach year {max_year} but only {n} years were requested"
                )))
            }
            Some(n) => n,
            None => max_year,
        };
        for t in &terms {
            if t.risk as usize >= portfolio.len() {
                return Err(Error::Invalid(format!(
                    "term in year {} event {} refers to risk #{} of a {}-risk portfolio",
                    t.year,
                    t.event,
                    t.risk,
                    portfolio.len()
                )));
            }
            t.check()
                .map_err(|msg| Error::Invalid(format!("year {} event {}: {msg}", t.year, t.event)))?;
        }
        terms.sort_by_key(|t| t.year);
        let mut year_starts = Vec::with_capacity(n_years as usize + 1);
        let mut i = 0;
        for y in 0..=n_years {
            while i < terms.len() && terms[i].year <= y {
                i += 1;
            }
            year_starts.push(i);
        }
        Ok(Self {
            portfolio,
            terms,
            year_starts,
        })
    }

    pub fn portfolio(&self) -> &Portfolio {
        &self.portfolio
    }

    pub fn terms(&self) -> &[LossTerm] {
        &self.terms
    }

    pub fn n_years(&self) -> u32 {
        (self.year_starts.len() - 1) as u32
    }

    /// Terms of year `year` (1-based).
    pub fn year_terms(&self, year: u32) -> &[LossTerm] {
        let y = year as usize;
        &self.terms[self.year_starts[y - 1]..self.year_starts[y]]
    }

    /// Same portfolio and year count with replaced terms.
    pub fn with_terms(&self, terms: Vec<LossTerm>) -> Result<Self> {
        Self::new(self.portfolio.clone(), terms, Some(self.n_years()))
    }

    /// Summaries of every year, in year order.
    pub fn summaries(&self) -> Vec<YearSummary> {
        (1..=self.n_years())
            .into_par_iter()
            .map(|y| year_summary(y, self.year_terms(y)))
            .collect()
    }
}

/// The years at the lower quartile (A), median (B), upper quartile (C) and
/// maximum (D) of expected loss. Years are ordered by expected loss, ties by
/// year, and the `ceil(q n)`-th year is taken.
pub fn select_years(summaries: &[YearSummary]) -> Vec<(char, u32)> {
    if summaries.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<&YearSummary> = summaries.iter().collect();
    order.sort_by(|a, b| a.expected_total.total_cmp(&b.expected_total).then(a.year.cmp(&b.year)));
    let n = order.len();
    let pick = |q: f64| order[((q * n as f64).ceil() as usize).clamp(1, n) - 1].year;
    vec![('A', pick(0.25)), ('B', pick(0.5)), ('C', pick(0.75)), ('D', pick(1.0))]
}
