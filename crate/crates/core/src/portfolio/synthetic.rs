//! Synthetic portfolios and event-loss tables for tests and benchmarks.
//!
//! Subrisk counts are log-uniform on `[1, max_subrisks]` and values per
//! subrisk log-uniform on `subrisk_value`. Each year has a Poisson number of
//! events; an event floods a random set of risks whose size is a
//! heavy-tailed fraction of the portfolio, so that yearly totals vary over
//! orders of magnitude. Flood probabilities are Beta distributed, expected
//! damage ratios are Beta(2, 18) restricted to `[0, max_mu)`, and the Beta
//! concentration `alpha + beta` is uniform on `concentration`.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Beta, Distribution, Pareto, Poisson};
use serde::{Deserialize, Serialize};

use super::{LossModel, LossTerm, Portfolio, Risk};
use crate::error::{Error, Result};
use crate::rng::{domain, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_risks: u32,
    pub n_years: u32,
    pub events_per_year: f64,
    /// Scale of the fraction of risks touched by one event.
    pub footprint_fraction: f64,
    /// Tail index of the footprint-size distribution.
    pub footprint_tail: f64,
    pub max_subrisks: u32,
    pub subrisk_value: (f64, f64),
    /// Beta parameters of the flood probability.
    pub p_beta: (f64, f64),
    pub max_mu: f64,
    pub concentration: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_risks: 1000,
            n_years: 200,
            events_per_year: 10.0,
            footprint_fraction: 0.01,
            footprint_tail: 1.2,
            max_subrisks: 50,
            subrisk_value: (15_559.0, 379_383.0),
            p_beta: (0.7, 6.0),
            max_mu: 0.9,
            concentration: (10.0, 40.0),
            seed: 1,
        }
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

pub fn generate_portfolio<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> Result<Portfolio> {
    let risks = (0..cfg.n_risks)
        .map(|i| {
            let n_sub =
                (log_uniform(rng, 1.0, cfg.max_subrisks as f64 + 1.0).floor() as u32).clamp(1, cfg.max_subrisks);
            let value = log_uniform(rng, cfg.subrisk_value.0, cfg.subrisk_value.1);
            Risk {
                risk_id: format!("R{i:06}"),
                total_insured_value: value * n_sub as f64,
                n_subrisks: n_sub,
            }
        })
        .collect();
    Portfolio::new(risks)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<LossModel> {
    if cfg.n_risks == 0 {
        return Err(Error::Config("synthetic portfolio needs at least one risk".into()));
    }
    if !(cfg.max_mu > 0.0 && cfg.max_mu <= 1.0) {
        return Err(Error::Config(format!("max_mu must lie in (0, 1], got {}", cfg.max_mu)));
    }
    let mut rng = substream(cfg.seed, domain::SYNTHETIC, 0, 0);
    let portfolio = generate_portfolio(cfg, &mut rng)?;
    let bad = |what: &str| Error::Config(format!("invalid synthetic {what}"));
    let events = Poisson::new(cfg.events_per_year).map_err(|_| bad("events_per_year"))?;
    let footprint = Pareto::new(cfg.footprint_fraction, cfg.footprint_tail).map_err(|_| bad("footprint"))?;
    let p_law = Beta::new(cfg.p_beta.0, cfg.p_beta.1).map_err(|_| bad("p_beta"))?;
    let mu_law = Beta::new(2.0, 18.0).expect("valid");
    let n = cfg.n_risks as usize;

    let mut terms = Vec::new();
    for year in 1..=cfg.n_years {
        let mut yrng = substream(cfg.seed, domain::SYNTHETIC, 1, year as u64);
        let n_events = events.sample(&mut yrng) as u32;
        for event in 1..=n_events {
            let frac: f64 = footprint.sample(&mut yrng).min(0.5);
            let hit = ((frac * n as f64).round() as usize).clamp(1, n);
            let mut risks = sample(&mut yrng, n, hit).into_vec();
            risks.sort_unstable();
            for r in risks {
                let risk = portfolio.risk(r as u32);
                let mu = loop {
                    let m: f64 = mu_law.sample(&mut yrng);
                    if m < cfg.max_mu {
                        break m;
                    }
                };
                let conc = yrng.random_range(cfg.concentration.0..=cfg.concentration.1);
                let p: f64 = p_law.sample(&mut yrng);
                terms.push(LossTerm {
                    year,
                    event,
                    risk: r as u32,
                    p: p.max(f64::MIN_POSITIVE),
                    alpha: mu * conc,
                    beta: (1.0 - mu) * conc,
                    exposure: risk.exposure(),
                    n_sub: risk.n_subrisks,
                });
            }
        }
    }
    LossModel::new(portfolio, terms, Some(cfg.n_years))
}
