//! Single-year toy portfolios of scaled Bernoulli summands `b_i Bernoulli(p_i)`.
//!
//! | tag | law of `b_i`              | law of `p_i`   |
//! |-----|---------------------------|----------------|
//! | i   | half-normal `|N(0, 1)|`   | Beta(1, 10)    |
//! | ii  | Exp(1)                    | Beta(1, 10)    |
//! | iii | Lomax (Pareto II), shape 4 | Beta(1, 10)   |
//! | iv  | Exp(1)                    | Uniform(0, 1)  |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1, Pareto, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LossModel, LossTerm, Portfolio, Risk};
use crate::error::{Error, Result};
use crate::rng::{domain, substream};

/// `alpha` of a damage ratio that is identically one.
pub const UNIT_DAMAGE_ALPHA: f64 = 1e12;
/// `beta` of a damage ratio that is identically one.
pub const UNIT_DAMAGE_BETA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToyTag {
    I,
    Ii,
    Iii,
    Iv,
}

impl ToyTag {
    pub const ALL: [ToyTag; 4] = [ToyTag::I, ToyTag::Ii, ToyTag::Iii, ToyTag::Iv];
}

impl fmt::Display for ToyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyTag::I => "i",
            ToyTag::Ii => "ii",
            ToyTag::Iii => "iii",
            ToyTag::Iv => "iv",
        })
    }
}

impl FromStr for ToyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(ToyTag::I),
            "ii" | "2" => Ok(ToyTag::Ii),
            "iii" | "3" => Ok(ToyTag::Iii),
            "iv" | "4" => Ok(ToyTag::Iv),
            _ => Err(Error::Config(format!("unknown toy scenario {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyScenario {
    pub tag: ToyTag,
    pub n: u32,
    pub seed: u64,
}

fn draw_b<R: Rng>(tag: ToyTag, rng: &mut R) -> f64 {
    loop {
        let b: f64 = match tag {
            ToyTag::I => {
                let z: f64 = StandardNormal.sample(rng);
                z.abs()
            }
            ToyTag::Ii | ToyTag::Iv => Exp1.sample(rng),
            ToyTag::Iii => Pareto::new(1.0, 4.0).expect("valid").sample(rng) - 1.0,
        };
        if b > 0.0 {
            return b;
        }
    }
}

/// `n` terms in year 1, event 1, one per risk, each with a single subrisk.
pub fn generate_toy(scenario: ToyScenario) -> Vec<LossTerm> {
    let mut rng = substream(scenario.seed, domain::TOY, 0, 0);
    let p_law = Beta::new(1.0, 10.0).expect("valid");
    (0..scenario.n)
        .map(|i| {
            let b = draw_b(scenario.tag, &mut rng);
            let p = match scenario.tag {
                ToyTag::Iv => rng.random::<f64>(),
                _ => p_law.sample(&mut rng),
            };
            LossTerm {
                year: 1,
                event: 1,
                risk: i,
                p,
                alpha: UNIT_DAMAGE_ALPHA,
                beta: UNIT_DAMAGE_BETA,
                exposure: b,
                n_sub: 1,
            }
        })
        .collect()
}

/// Wraps toy terms in a one-year model with one single-subrisk risk per term.
pub fn toy_model(terms: &[LossTerm]) -> Result<LossModel> {
    let risks = terms
        .iter()
        .map(|t| Risk {
            risk_id: format!("toy{}", t.risk),
            total_insured_value: t.exposure,
            n_subrisks: 1,
        })
        .collect();
    LossModel::new(Portfolio::new(risks)?, terms.to_vec(), Some(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::year_summary;

    fn scenario(tag: ToyTag, n: u32) -> Vec<LossTerm> {
        generate_toy(ToyScenario { tag, n, seed: 2024 })
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(scenario(ToyTag::Ii, 1000), scenario(ToyTag::Ii, 1000));
        let other = generate_toy(ToyScenario {
            tag: ToyTag::Ii,
            n: 1000,
            seed: 2025,
        });
        assert_ne!(scenario(ToyTag::Ii, 1000), other);
    }

    #[test]
    fn scenario_iv_probabilities_are_uniform() {
        let terms = scenario(ToyTag::Iv, 100_000);
        let mut p: Vec<f64> = terms.iter().map(|t| t.p).collect();
        p.sort_by(f64::total_cmp);
        let n = p.len() as f64;
        let d = p
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
            .fold(0.0, f64::max);
        // asymptotic 1% critical value of the one-sample KS statistic
        assert!(d < 1.628 / n.sqrt(), "D = {d}");
    }

    #[test]
    fn pareto_tail_heavier_than_half_normal() {
        let ratio = |tag| {
            let mut b: Vec<f64> = scenario(tag, 100_000).iter().map(|t| t.exposure).collect();
            b.sort_by(f64::total_cmp);
            b[b.len() - 1] / b[b.len() / 2]
        };
        assert!(ratio(ToyTag::Iii) > ratio(ToyTag::I));
    }

    #[test]
    fn unit_damage_is_a_point_mass_at_one() {
        let t = scenario(ToyTag::I, 1)[0];
        assert!(t.is_point_mass());
        assert_eq!(t.mean_damage(), 1.0);
        let m = t.moments();
        assert!((m.variance - t.exposure.powi(2) * t.p * (1.0 - t.p)).abs() < 1e-15);
    }

    #[test]
    fn scenario_ii_summaries() {
        let s = year_summary(1, &scenario(ToyTag::Ii, 100_000));
        assert!(s.upper.k1 > 0.0);
        assert!(s.upper.k / s.upper.vbar < 1.0);
        // direct re-summation
        let terms = scenario(ToyTag::Ii, 100_000);
        let cstar = terms.iter().map(|t| t.moments().c_upper).fold(0.0, f64::max);
        let (mut v, mut k, mut k1) = (0.0, 0.0, 0.0);
        for t in &terms {
            let m = t.moments();
            let r = m.c_upper / cstar;
            v += m.variance;
            k += m.variance * r;
            k1 += m.variance * r * (1.0 - r);
        }
        let n = terms.len() as f64;
        assert!((s.upper.vbar - v / n).abs() < 1e-12 * s.upper.vbar);
        assert!((s.upper.k - k / n).abs() < 1e-12 * s.upper.k);
        assert!((s.upper.k1 - k1 / n).abs() < 1e-9 * s.upper.k1);
    }

    #[test]
    fn second_order_summary_ratio() {
        for tag in ToyTag::ALL {
            let s = year_summary(1, &scenario(tag, 100_000));
            let ratio = s.upper.k_order(2).unwrap() / s.upper.k1;
            assert!((1.1..=1.5).contains(&ratio), "{tag}: K2/K1 = {ratio}");
        }
    }

    #[test]
    fn toy_model_round_trips_terms() {
        let terms = scenario(ToyTag::Iii, 10);
        let m = toy_model(&terms).unwrap();
        assert_eq!(m.n_years(), 1);
        assert_eq!(m.terms(), &terms[..]);
    }
}
