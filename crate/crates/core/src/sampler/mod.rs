//! Conservative samples of yearly totals.
//!
//! For each year an upper-tail bound `g_hi` and a lower-tail bound `g_lo`
//! define distribution functions `F+(s) = 1 - g_hi(s)` and `F-(s) = g_lo(s)`
//! that bracket the true distribution function. Driving both inversions with
//! the same uniform gives a pair `s- <= s+` that sandwiches a draw of the
//! true total.
//!
//! Two paths produce the samples:
//! - direct: invert the bound survival function numerically;
//! - SIR: propose from Bernstein's bound, reweight towards `B2` and resample
//!   (see [`sir`]).

pub mod sir;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{log_bound, BoundFamily, SummandStats};
use crate::error::{Error, Result};
use crate::mc::{Method, ReplicateMatrix};
use crate::optimize::brent_root;
use crate::portfolio::YearSummary;
use crate::rng::{domain, substream};

pub use sir::{SirDiagnostics, WeightedSample};

/// Relative tolerance of the inversion, in the excess over the mean.
const INVERT_REL_TOL: f64 = 1e-12;
const MAX_DOUBLINGS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tail {
    Upper,
    Lower,
}

impl fmt::Display for Tail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tail::Upper => "upper",
            Tail::Lower => "lower",
        })
    }
}

impl FromStr for Tail {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(Tail::Upper),
            "lower" => Ok(Tail::Lower),
            _ => Err(Error::Config(format!("unknown tail {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplingPath {
    Direct,
    Sir,
}

impl fmt::Display for SamplingPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingPath::Direct => "direct",
            SamplingPath::Sir => "sir",
        })
    }
}

impl FromStr for SamplingPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(SamplingPath::Direct),
            "sir" => Ok(SamplingPath::Sir),
            _ => Err(Error::Config(format!("unknown sampling path {s:?}"))),
        }
    }
}

/// The bound-implied distribution of one tail of one year's total.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundDistribution {
    pub year: u32,
    pub tail: Tail,
    pub family: BoundFamily,
    pub stats: SummandStats,
    pub expected_total: f64,
}

impl BoundDistribution {
    /// Families usable on the direct path.
    pub const DIRECT_FAMILIES: [BoundFamily; 5] = [
        BoundFamily::Bennett,
        BoundFamily::B1,
        BoundFamily::B2,
        BoundFamily::B3,
        BoundFamily::Bernstein,
    ];

    pub fn new(summary: &YearSummary, tail: Tail, family: BoundFamily) -> Result<Self> {
        if !Self::DIRECT_FAMILIES.contains(&family) {
            return Err(Error::Config(format!(
                "bound family {family} cannot define a sampling distribution"
            )));
        }
        let stats = match tail {
            Tail::Upper => summary.upper.clone(),
            Tail::Lower => summary.lower.clone(),
        };
        Ok(Self {
            year: summary.year,
            tail,
            family,
            stats,
            expected_total: summary.expected_total,
        })
    }

    fn is_degenerate(&self) -> bool {
        self.stats.n == 0 || self.stats.vbar <= 0.0
    }

    /// Distance of `s` beyond the mean in this tail's direction.
    pub fn excess(&self, s: f64) -> f64 {
        match self.tail {
            Tail::Upper => s - self.expected_total,
            Tail::Lower => self.expected_total - s,
        }
    }

    /// `log g(s)`, at most 0.
    pub fn log_survival_excess(&self, excess: f64) -> f64 {
        if !(excess > 0.0) {
            return 0.0;
        }
        if self.is_degenerate() {
            return f64::NEG_INFINITY;
        }
        let n = self.stats.n as f64;
        let lb = log_bound(self.family, excess / n, &self.stats).expect("family checked at construction");
        (n * lb).min(0.0)
    }

    /// The bound `g(s)` on the probability of a total at least as extreme as
    /// `s`; 1 at and inside the mean.
    pub fn survival(&self, s: f64) -> f64 {
        self.log_survival_excess(self.excess(s)).exp()
    }

    /// The excess `x >= 0` with `log g = target` (`target <= 0`).
    fn solve_excess(&self, target: f64) -> Result<f64> {
        if target >= 0.0 || self.is_degenerate() {
            return Ok(0.0);
        }
        let f = |x: f64| self.log_survival_excess(x) - target;
        let mut hi = (self.stats.n as f64 * self.stats.vbar).sqrt();
        let mut lo = 0.0;
        let mut doublings = 0;
        while f(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > MAX_DOUBLINGS || !hi.is_finite() {
                return Err(Error::Numeric(format!(
                    "year {} ({} tail): no bracket for log survival {target}",
                    self.year, self.tail
                )));
            }
        }
        brent_root(f, lo, hi, INVERT_REL_TOL, 200).ok_or_else(|| {
            Error::Numeric(format!(
                "year {} ({} tail): inversion did not converge for log survival {target}",
                self.year, self.tail
            ))
        })
    }

    /// The `u`-quantile of `F+` (upper tail) or `F-` (lower tail).
    ///
    /// Upper: solves `g_hi(s) = 1 - u`. Lower: solves `g_lo(s) = u`. Where the
    /// bound carries no information the mean is returned.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("quantile level must lie in [0, 1], got {u}")));
        }
        let target = match self.tail {
            Tail::Upper => (-u).ln_1p(),
            Tail::Lower => u.ln(),
        };
        if target == f64::NEG_INFINITY {
            return Err(Error::Domain(format!("quantile level {u} maps to an infinite total")));
        }
        let x = self.solve_excess(target)?;
        Ok(match self.tail {
            Tail::Upper => self.expected_total + x,
            Tail::Lower => self.expected_total - x,
        })
    }
}

/// `min(1, exp(n log_bound(t)))` for the excess of `s` over (or under) the mean.
pub fn survival_g(dist: &BoundDistribution, s: f64) -> f64 {
    dist.survival(s)
}

pub fn invert_direct(dist: &BoundDistribution, u: f64) -> Result<f64> {
    dist.quantile(u)
}

/// `(s-, s+)` driven by the same uniform `u`.
pub fn coupled_sample(lower: &BoundDistribution, upper: &BoundDistribution, u: f64) -> Result<(f64, f64)> {
    debug_assert_eq!(lower.tail, Tail::Lower);
    debug_assert_eq!(upper.tail, Tail::Upper);
    Ok((lower.quantile(u)?, upper.quantile(u)?))
}

/// Coupled lower and upper conservative matrices.
#[derive(Debug, Clone)]
pub struct ConservativeRun {
    pub lower: ReplicateMatrix,
    pub upper: ReplicateMatrix,
    /// Importance-sampling diagnostics per year (SIR path only).
    pub diagnostics: Vec<SirDiagnostics>,
}

/// Conservative replicate matrices for every year in `summaries`.
///
/// Direct: cell `(m, y)` inverts both tails at one uniform from stream
/// `(seed, m, y)`. SIR: per year, two independent SIR samples of size `m`
/// are each sorted, and replicate `i` receives the pair at rank `pi(i)` of a
/// random permutation `pi`, so `s- <= s+` holds replicate-wise.
pub fn run_conservative(
    summaries: &[YearSummary],
    m: usize,
    family: BoundFamily,
    path: SamplingPath,
    seed: u64,
) -> Result<ConservativeRun> {
    if m == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    let ny = summaries.len();
    match path {
        SamplingPath::Direct => {
            let dists = summaries
                .iter()
                .map(|s| {
                    Ok((
                        BoundDistribution::new(s, Tail::Lower, family)?,
                        BoundDistribution::new(s, Tail::Upper, family)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let cells: Vec<(f64, f64)> = (0..m * ny)
                .into_par_iter()
                .map(|idx| {
                    let (rep, y) = (idx / ny, idx % ny);
                    let mut rng = substream(seed, domain::DIRECT, rep as u64, y as u64);
                    let u = open_unit(&mut rng);
                    coupled_sample(&dists[y].0, &dists[y].1, u)
                })
                .collect::<Result<_>>()?;
            let (lo, hi): (Vec<f64>, Vec<f64>) = cells.into_iter().unzip();
            Ok(ConservativeRun {
                lower: ReplicateMatrix::new(Method::DirectLower, seed, m, ny, lo)?,
                upper: ReplicateMatrix::new(Method::DirectUpper, seed, m, ny, hi)?,
                diagnostics: Vec::new(),
            })
        }
        SamplingPath::Sir => {
            if family != BoundFamily::B2 {
                return Err(Error::Config(format!(
                    "importance-sampling-resampling needs bound family b2, got {family}"
                )));
            }
            let per_year: Vec<(Vec<f64>, Vec<f64>, SirDiagnostics)> = summaries
                .par_iter()
                .enumerate()
                .map(|(y, s)| sir_year(s, y as u64, m, seed))
                .collect::<Result<_>>()?;
            let mut lo = vec![0.0; m * ny];
            let mut hi = vec![0.0; m * ny];
            let mut diagnostics = Vec::with_capacity(ny);
            for (y, (l, h, d)) in per_year.into_iter().enumerate() {
                for rep in 0..m {
                    lo[rep * ny + y] = l[rep];
                    hi[rep * ny + y] = h[rep];
                }
                diagnostics.push(d);
            }
            Ok(ConservativeRun {
                lower: ReplicateMatrix::new(Method::SirLower, seed, m, ny, lo)?,
                upper: ReplicateMatrix::new(Method::SirUpper, seed, m, ny, hi)?,
                diagnostics,
            })
        }
    }
}

/// A uniform on `(0, 1)`.
pub(crate) fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// One year of the SIR path: sorted-and-permuted `(lower, upper)` columns.
fn sir_year(summary: &YearSummary, y: u64, m: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>, SirDiagnostics)> {
    if summary.is_degenerate() {
        let c = vec![summary.expected_total; m];
        return Ok((c.clone(), c, SirDiagnostics::degenerate(summary.year, m)));
    }
    let mut upper_rng = substream(seed, domain::SIR_UPPER, y, 0);
    let mut lower_rng = substream(seed, domain::SIR_LOWER, y, 0);
    let (mut upper, du) = sir::sir_sample(summary, Tail::Upper, m, &mut upper_rng)?;
    let (mut lower, dl) = sir::sir_sample(summary, Tail::Lower, m, &mut lower_rng)?;
    upper.sort_by(f64::total_cmp);
    lower.sort_by(f64::total_cmp);
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut substream(seed, domain::SIR_PERM, y, 0));
    let lo = perm.iter().map(|&i| lower[i]).collect();
    let hi = perm.iter().map(|&i| upper[i]).collect();
    Ok((lo, hi, SirDiagnostics::combine(du, dl)))
}
