//! Concentration bounds on the upper tail of a sum of independent, centred,
//! bounded-above summands.
//!
//! Every `*_log_bound` function returns an upper bound on
//! `(1/n) log P(S_n >= n t)` for a per-summand excess `t > 0`, and `0` (the
//! trivial bound) for `t <= 0`. The bounds differ in which summaries of the
//! summands they read; see [`SummandStats`].
//!
//! The mgf bound `B(lambda)` is evaluated in the rearranged form
//!
//! ```text
//! B = lambda^2 [ (vbar - K)/2 + (K - K1) f_2(u) + K1 (1/2 + u/6) ],   u = lambda c*
//! ```
//!
//! which equals `lambda^2 vbar/2 + lambda^2 K (f_2(u) - 1/2) - lambda^4 c*^2 K1 f_4(u)`
//! because `u^2 f_4(u) = f_2(u) - 1/2 - u/6`. Every term is non-negative, so
//! there is no cancellation for large `u`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{brent_root, golden_section};
use crate::special::{bennett_h, f_k, lambert_w0_exp};

/// Default number of extra summaries used by [`BoundFamily::Higher`].
pub const DEFAULT_HIGHER_ORDER: u32 = 3;

/// Relative tolerance (in `lambda`) of the numerical minimisations.
const MINIMISE_REL_TOL: f64 = 1e-10;

/// `vbar - K` below this fraction of `vbar` is treated as `K = vbar`, where
/// the closed-form `lambda*` divides by zero.
const DEGENERATE_REL_GAP: f64 = 1e-9;

/// Per-summand summaries of one tail of a sum of centred summands.
///
/// `vbar` is the mean variance; `k`, `k1` and the entries of `kj` weight each
/// variance by `c_i/c*` and by `(c_i/c*)(1 - (c_i/c*)^j)` respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummandStats {
    pub n: u64,
    pub vbar: f64,
    pub k: f64,
    pub k1: f64,
    /// `K_2, K_3, ...` in order; may be empty.
    #[serde(default)]
    pub kj: Vec<f64>,
    pub cstar: f64,
    /// Mean squared range `(1/n) sum (c_i - a_i)^2`, needed only by Hoeffding.
    #[serde(default)]
    pub range_sq: Option<f64>,
}

impl SummandStats {
    pub fn new(n: u64, vbar: f64, k: f64, k1: f64, cstar: f64) -> Self {
        Self {
            n,
            vbar,
            k,
            k1,
            kj: Vec::new(),
            cstar,
            range_sq: None,
        }
    }

    pub fn with_kj(mut self, kj: Vec<f64>) -> Self {
        self.kj = kj;
        self
    }

    pub fn with_range_sq(mut self, range_sq: f64) -> Self {
        self.range_sq = Some(range_sq);
        self
    }

    /// `K_j` for `j >= 1`.
    pub fn k_order(&self, j: usize) -> Option<f64> {
        match j {
            0 => None,
            1 => Some(self.k1),
            _ => self.kj.get(j - 2).copied(),
        }
    }

    /// Checks `0 <= K1 <= K <= vbar`, `c* > 0`, `n >= 1` and that the higher
    /// summaries are nondecreasing and bounded by `K`.
    pub fn validate(&self) -> Result<()> {
        let slack = 1e-12 * self.vbar.abs().max(f64::MIN_POSITIVE);
        let bad = |msg: String| Err(Error::Invalid(format!("summand summaries: {msg}")));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.cstar > 0.0) || !self.cstar.is_finite() {
            return bad(format!("c* must be positive, got {}", self.cstar));
        }
        if !(self.k1 >= -slack && self.k1 <= self.k + slack && self.k <= self.vbar + slack) {
            return bad(format!(
                "need 0 <= K1 <= K <= vbar, got K1={} K={} vbar={}",
                self.k1, self.k, self.vbar
            ));
        }
        let mut prev = self.k1;
        for (i, &kj) in self.kj.iter().enumerate() {
            if kj < prev - slack || kj > self.k + slack {
                return bad(format!("K_{} = {kj} out of order", i + 2));
            }
            prev = kj;
        }
        Ok(())
    }
}

/// Which concentration inequality to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundFamily {
    Hoeffding,
    Bennett,
    /// Numerical infimum of the mgf bound `B`.
    B1,
    /// `B` evaluated at the closed-form `lambda*`.
    B2,
    /// `B` with `K1 = 0` at `lambda*` (equal to its own infimum).
    B3,
    Bernstein,
    /// Large-`n` normal approximation; a reference curve, not a bound.
    Clt,
    /// Lower bound on what any bound of this kind could achieve.
    BLb,
    /// Tighter mgf bound using `K_1 ... K_{J+1}`.
    Higher(u32),
}

impl BoundFamily {
    pub const CURVE_DEFAULT: [BoundFamily; 8] = [
        BoundFamily::Hoeffding,
        BoundFamily::Bennett,
        BoundFamily::B1,
        BoundFamily::B2,
        BoundFamily::B3,
        BoundFamily::Bernstein,
        BoundFamily::Clt,
        BoundFamily::BLb,
    ];

    /// True if this family gives a valid upper bound on the tail probability
    /// and so can be used to build a conservative distribution.
    pub fn is_bound(self) -> bool {
        !matches!(self, BoundFamily::Clt | BoundFamily::BLb)
    }
}

impl fmt::Display for BoundFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundFamily::Hoeffding => f.write_str("hoeffding"),
            BoundFamily::Bennett => f.write_str("bennett"),
            BoundFamily::B1 => f.write_str("b1"),
            BoundFamily::B2 => f.write_str("b2"),
            BoundFamily::B3 => f.write_str("b3"),
            BoundFamily::Bernstein => f.write_str("bernstein"),
            BoundFamily::Clt => f.write_str("clt"),
            BoundFamily::BLb => f.write_str("b-lb"),
            BoundFamily::Higher(j) => write!(f, "b-higher:{j}"),
        }
    }
}

impl FromStr for BoundFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "hoeffding" => BoundFamily::Hoeffding,
            "bennett" => BoundFamily::Bennett,
            "b1" => BoundFamily::B1,
            "b2" => BoundFamily::B2,
            "b3" => BoundFamily::B3,
            "bernstein" => BoundFamily::Bernstein,
            "clt" => BoundFamily::Clt,
            "b-lb" | "blb" => BoundFamily::BLb,
            "b-higher" => BoundFamily::Higher(DEFAULT_HIGHER_ORDER),
            other => {
                if let Some(j) = other.strip_prefix("b-higher:") {
                    let j: u32 = j
                        .parse()
                        .map_err(|_| Error::Config(format!("bad order in bound family {s:?}")))?;
                    if j == 0 {
                        return Err(Error::Config("b-higher order must be >= 1".into()));
                    }
                    BoundFamily::Higher(j)
                } else {
                    return Err(Error::Config(format!("unknown bound family {s:?}")));
                }
            }
        })
    }
}

/// `x * y`, except that an exactly-zero coefficient wins over an infinite factor.
#[inline]
fn coef_mul(coef: f64, value: f64) -> f64 {
    if coef == 0.0 {
        0.0
    } else {
        coef * value
    }
}

/// Bennett: `-(vbar/c*^2) h(c* t / vbar)`.
pub fn bennett_log_bound(t: f64, stats: &SummandStats) -> f64 {
    if !(t > 0.0) {
        return 0.0;
    }
    if stats.vbar <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let u = stats.cstar * t / stats.vbar;
    -(stats.vbar / (stats.cstar * stats.cstar)) * bennett_h(u).expect("u >= 0")
}

/// Hoeffding: `-2 t^2 / ((1/n) sum (c_i - a_i)^2)`.
pub fn hoeffding_log_bound(t: f64, mean_sq_range: f64) -> Result<f64> {
    if !(mean_sq_range > 0.0) {
        return Err(Error::Domain(format!(
            "Hoeffding needs a positive mean squared range, got {mean_sq_range}"
        )));
    }
    if !(t > 0.0) {
        return Ok(0.0);
    }
    Ok(-2.0 * t * t / mean_sq_range)
}

/// Bernstein: `-(t^2/2) / (vbar + c* t / 3)`.
pub fn bernstein_log_bound(t: f64, stats: &SummandStats) -> f64 {
    if !(t > 0.0) {
        return 0.0;
    }
    -0.5 * t * t / (stats.vbar + stats.cstar * t / 3.0)
}

/// Normal approximation `-t^2 / (2 vbar)`.
pub fn clt_log_approx(t: f64, stats: &SummandStats) -> f64 {
    if !(t > 0.0) {
        return 0.0;
    }
    -0.5 * t * t / stats.vbar
}

/// Survival function implied by Bernstein's inequality for the
/// (un-normalised) excess `t' = S_n - E[S_n]`:
/// `exp(-(t'^2/2) / (n vbar + c* t'/3))`, capped at 1.
pub fn bernstein_survival(tprime: f64, stats: &SummandStats) -> f64 {
    if !(tprime > 0.0) {
        return 1.0;
    }
    let n = stats.n as f64;
    (-0.5 * tprime * tprime / (n * stats.vbar + stats.cstar * tprime / 3.0))
        .exp()
        .min(1.0)
}

fn mgf_bound_with_k1(lambda: f64, stats: &SummandStats, k1: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let u = lambda * stats.cstar;
    let inner = 0.5 * (stats.vbar - stats.k) + coef_mul(stats.k - k1, f_k(u, 2)) + k1 * (0.5 + u / 6.0);
    lambda * lambda * inner
}

/// Bound `B(lambda)` on `(1/n) log E exp(lambda S_n)`.
pub fn mgf_bound(lambda: f64, stats: &SummandStats) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("B(lambda) needs lambda >= 0, got {lambda}")));
    }
    Ok(mgf_bound_with_k1(lambda, stats, stats.k1))
}

/// `dB/dlambda = lambda (vbar - K) + K lambda f_1(lambda c*) - K1 c*^2 lambda^3 f_3(lambda c*)`.
pub fn mgf_bound_derivative(lambda: f64, stats: &SummandStats) -> f64 {
    let u = lambda * stats.cstar;
    let c = stats.cstar;
    lambda * (stats.vbar - stats.k) + coef_mul(stats.k, lambda * f_k(u, 1))
        - coef_mul(stats.k1, c * c * lambda.powi(3) * f_k(u, 3))
}

/// The idealised mgf bound
/// `B(lambda) - lambda^5 c*^3 (K - K1) f_5(lambda c*)`, which simplifies to the
/// quartic `lambda^2 vbar/2 + lambda^3 c* K/6 + lambda^4 c*^2 (K - K1)/24`.
pub fn mgf_bound_lb(lambda: f64, stats: &SummandStats) -> f64 {
    let u = lambda * stats.cstar;
    lambda * lambda * (0.5 * stats.vbar + stats.k * u / 6.0 + (stats.k - stats.k1) * u * u / 24.0)
}

/// Higher-order mgf bound of order `order` (`J >= 1`), reading
/// `K_1 ... K_{J+1}`. Order 0 reproduces [`mgf_bound`].
pub fn mgf_bound_higher(lambda: f64, stats: &SummandStats, order: u32) -> Result<f64> {
    let order = order as usize;
    let last = stats.k_order(order + 1).ok_or_else(|| {
        Error::Config(format!(
            "bound of order {order} needs K_1..K_{}, only K_1..K_{} available",
            order + 1,
            stats.kj.len() + 1
        ))
    })?;
    let u = lambda * stats.cstar;
    let mut inner = 0.5 * stats.vbar + stats.k * u / 6.0;
    // u^{j+2}/(j+4)!
    let mut pow_term = u * u / 24.0;
    for j in 0..order {
        let kj1 = stats.k_order(j + 1).expect("checked above");
        inner += (stats.k - kj1) * pow_term;
        pow_term *= u / (j as f64 + 5.0);
    }
    let tail = u.powi(order as i32 + 2) * f_k(u, order as u32 + 4);
    inner += coef_mul(stats.k - last, tail);
    Ok(lambda * lambda * inner)
}

/// The closed-form minimiser of `B(lambda; K1 = 0) - lambda t`, with the
/// Lambert-W value it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaStar {
    pub lambda: f64,
    /// `W(K/(vbar-K) exp((K + t c*)/(vbar - K)))`; `None` on the degenerate
    /// paths (`K = 0` needs no W, `K = vbar` has no closed form).
    pub w: Option<f64>,
}

/// Solves `K expm1(y) + (vbar - K) y = t c*` for `y = lambda c*`, the
/// stationarity condition of `B(lambda; K1 = 0) - lambda t`.
fn stationary_residual(y: f64, stats: &SummandStats, t: f64) -> f64 {
    stats.k * y.exp_m1() + (stats.vbar - stats.k) * y - t * stats.cstar
}

/// `lambda*` via Lambert's W.
pub fn lambda_star_full(t: f64, stats: &SummandStats) -> LambdaStar {
    if !(t > 0.0) || stats.vbar <= 0.0 {
        return LambdaStar { lambda: 0.0, w: None };
    }
    let c = stats.cstar;
    if stats.k <= 0.0 {
        return LambdaStar {
            lambda: t / stats.vbar,
            w: Some(0.0),
        };
    }
    let gap = stats.vbar - stats.k;
    if gap <= DEGENERATE_REL_GAP * stats.vbar {
        // K = vbar: the stationarity condition no longer has a W form.
        let hi = (t * c / stats.k).ln_1p();
        let y = brent_root(|y| stationary_residual(y, stats, t), 0.0, hi, 1e-15, 200).unwrap_or(hi);
        return LambdaStar { lambda: y / c, w: None };
    }
    let a = (stats.k + t * c) / gap;
    let w = lambert_w0_exp((stats.k / gap).ln() + a);
    let mut y = (a - w).max(0.0);
    // a - W cancels when a is large or c* t is tiny; Newton on the
    // stationarity condition restores full precision.
    for _ in 0..3 {
        let deriv = stats.k * y.exp() + gap;
        let step = stationary_residual(y, stats, t) / deriv;
        y = (y - step).max(0.0);
        if step.abs() <= 4.0 * f64::EPSILON * y {
            break;
        }
    }
    LambdaStar {
        lambda: y / c,
        w: Some(w),
    }
}

pub fn lambda_star(t: f64, stats: &SummandStats) -> f64 {
    lambda_star_full(t, stats).lambda
}

/// `d lambda*/dt` for the per-summand excess `t`:
/// `1 / ((vbar - K)(1 + W))`. On the degenerate path the equivalent
/// `1 / (vbar - K + K exp(lambda* c*))` is used.
pub fn dlambda_dt(t: f64, stats: &SummandStats) -> f64 {
    let ls = lambda_star_full(t, stats);
    let gap = stats.vbar - stats.k;
    match ls.w {
        Some(w) => 1.0 / (gap * (1.0 + w)),
        None => 1.0 / (gap + stats.k * (ls.lambda * stats.cstar).exp()),
    }
}

fn minimise_over_lambda<F: Fn(f64) -> f64>(t: f64, stats: &SummandStats, mgf: F) -> (f64, f64) {
    // every mgf bound here is at least lambda^2 vbar / 2, so the minimiser
    // of mgf(lambda) - lambda t lies in [0, t / vbar]
    let hi = t / stats.vbar;
    golden_section(|l| mgf(l) - l * t, 0.0, hi, MINIMISE_REL_TOL)
}

/// `B1(t) = inf_lambda { B(lambda) - lambda t }`.
pub fn b1_log_bound(t: f64, stats: &SummandStats) -> f64 {
    if !(t > 0.0) {
        return 0.0;
    }
    if stats.vbar <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let (_, val) = minimise_over_lambda(t, stats, |l| mgf_bound_with_k1(l, stats, stats.k1));
    // the infimum is also no larger than the value at lambda*
    let ls = lambda_star(t, stats);
    val.min(mgf_bound_with_k1(ls, stats, stats.k1) - ls * t)
}

/// `B2(t) = B(lambda*) - lambda* t`.
pub fn b2_log_bound(t: f64, stats: &SummandStats) -> f64 {
    if !(t > 0.0) {
        return 0.0;
    }
    if stats.vbar <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let ls = lambda_star(t, stats);
    mgf_bound_with_k1(ls, stats, stats.k1) - ls * t
}

/// `B3(t) = B(lambda*; K1 = 0) - lambda* t`.
pub fn b3_log_bound(t: f64, stats: &SummandStats) -> f64 {
    if !(t > 0.0) {
        return 0.0;
    }
    if stats.vbar <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let ls = lambda_star(t, stats);
    mgf_bound_with_k1(ls, stats, 0.0) - ls * t
}

/// Infimum of the idealised mgf bound minus `lambda t`.
pub fn b_lb_log_bound(t: f64, stats: &SummandStats) -> f64 {
    if !(t > 0.0) {
        return 0.0;
    }
    if stats.vbar <= 0.0 {
        return f64::NEG_INFINITY;
    }
    minimise_over_lambda(t, stats, |l| mgf_bound_lb(l, stats)).1
}

/// Infimum of the order-`order` mgf bound minus `lambda t`.
pub fn b_higher_log_bound(t: f64, stats: &SummandStats, order: u32) -> Result<f64> {
    // surface a missing-summary error even at t = 0
    mgf_bound_higher(0.0, stats, order)?;
    if !(t > 0.0) {
        return Ok(0.0);
    }
    if stats.vbar <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let (_, val) = minimise_over_lambda(t, stats, |l| {
        mgf_bound_higher(l, stats, order).expect("summaries checked")
    });
    // never looser than B1
    Ok(val.min(b1_log_bound(t, stats)))
}

/// Upper bound on `(1/n) log P(S_n >= n t)` for the chosen family.
pub fn log_bound(family: BoundFamily, t: f64, stats: &SummandStats) -> Result<f64> {
    Ok(match family {
        BoundFamily::Hoeffding => {
            let r = stats
                .range_sq
                .ok_or_else(|| Error::Config("Hoeffding bound needs per-summand ranges".into()))?;
            hoeffding_log_bound(t, r)?
        }
        BoundFamily::Bennett => bennett_log_bound(t, stats),
        BoundFamily::B1 => b1_log_bound(t, stats),
        BoundFamily::B2 => b2_log_bound(t, stats),
        BoundFamily::B3 => b3_log_bound(t, stats),
        BoundFamily::Bernstein => bernstein_log_bound(t, stats),
        BoundFamily::Clt => clt_log_approx(t, stats),
        BoundFamily::BLb => b_lb_log_bound(t, stats),
        BoundFamily::Higher(j) => b_higher_log_bound(t, stats, j)?,
    })
}
