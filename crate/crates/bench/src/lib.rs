//! Shared fixtures for the benchmarks.

use conloss_core::bounds::SummandStats;
use conloss_core::portfolio::synthetic::{generate, SyntheticConfig};
use conloss_core::portfolio::toy::{generate_toy, ToyScenario, ToyTag};
use conloss_core::portfolio::{year_summary, LossModel, YearSummary};

/// Upper-tail summaries of toy scenario (ii) with `n` summands.
pub fn toy_stats(n: u32) -> SummandStats {
    let terms = generate_toy(ToyScenario {
        tag: ToyTag::Ii,
        n,
        seed: 1,
    });
    year_summary(1, &terms).upper
}

/// Synthetic portfolio of `n_risks` risks over `n_years` years.
pub fn portfolio(n_risks: u32, n_years: u32) -> LossModel {
    generate(&SyntheticConfig {
        n_risks,
        n_years,
        seed: 1,
        ..SyntheticConfig::default()
    })
    .expect("valid fixture")
}

/// The year of `model` with the median expected loss.
pub fn median_year(model: &LossModel) -> YearSummary {
    let mut s = model.summaries();
    s.sort_by(|a, b| a.expected_total.total_cmp(&b.expected_total));
    s.swap_remove(s.len() / 2)
}
