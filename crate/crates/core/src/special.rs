//! Special functions used by the concentration bounds.
//!
//! - [`f_k`]: the tail of the exponential series, `sum_{j>=0} u^j / (j+k)!`.
//! - [`bennett_h`]: `h(u) = (1+u) log(1+u) - u`.
//! - [`lambert_w0`]: principal branch of Lambert's W, plus [`lambert_w0_exp`]
//!   for arguments given on the log scale.

use crate::error::{Error, Result};

/// Below this magnitude `f_2` (and `f_1`) are summed as a series. The closed
/// form subtracts a truncated exponential series from `exp(u)` and loses
/// roughly `k` digits when `|u|` is small compared with `k`, so the switch-over
/// grows with `k` for the higher-order functions.
const SERIES_SWITCH: f64 = 0.5;

const SERIES_REL_TOL: f64 = 1e-17;
const SERIES_MAX_TERMS: usize = 400;

fn series_switch(k: u32) -> f64 {
    SERIES_SWITCH + k.saturating_sub(2) as f64
}

fn factorial(k: u32) -> f64 {
    (1..=k).fold(1.0, |acc, j| acc * j as f64)
}

/// `f_k(u) = u^{-k} { e^u - sum_{j<k} u^j/j! } = sum_{j>=0} u^j/(j+k)!`.
///
/// `k` must be at least 1.
pub fn f_k(u: f64, k: u32) -> f64 {
    debug_assert!(k >= 1, "f_k needs k >= 1");
    if u.abs() < series_switch(k) || (u < 0.0 && k > 2) {
        return f_k_series(u, k);
    }
    if u > 700.0 {
        // exp(u) dominates the subtracted polynomial by hundreds of orders
        // of magnitude; work in logs so u^k does not overflow first.
        return (u - k as f64 * u.ln()).exp();
    }
    let mut poly = 0.0;
    let mut term = 1.0;
    for j in 0..k {
        poly += term;
        term *= u / (j + 1) as f64;
    }
    (u.exp() - poly) / u.powi(k as i32)
}

/// Direct series evaluation of [`f_k`]; converges for every finite `u`.
pub fn f_k_series(u: f64, k: u32) -> f64 {
    let mut term = 1.0 / factorial(k);
    let mut sum = term;
    for j in 0..SERIES_MAX_TERMS {
        term *= u / (j as f64 + k as f64 + 1.0);
        sum += term;
        if term.abs() < SERIES_REL_TOL * sum.abs() {
            break;
        }
    }
    sum
}

/// Bennett's function `h(u) = (1+u) log(1+u) - u` for `u >= 0`.
pub fn bennett_h(u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(Error::Domain(format!("h(u) needs u >= 0, got {u}")));
    }
    if u < 1e-2 {
        // alternating series sum_{k>=2} (-1)^k u^k / (k(k-1))
        let mut sum = 0.0;
        let mut pow = u;
        for k in 2..30u32 {
            pow *= -u;
            let term = -pow / (k as f64 * (k - 1) as f64);
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return Ok(sum);
    }
    Ok((1.0 + u) * u.ln_1p() - u)
}

/// `-1/e`, the branch point of Lambert's W.
pub const LAMBERT_BRANCH_POINT: f64 = -0.367_879_441_171_442_33;

const HALLEY_MAX_ITER: usize = 10;

/// Principal branch `W_0(x)` of Lambert's W: the `w >= -1` with `w e^w = x`.
///
/// Halley iteration from a log-based starting point; at most ten steps.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() || x < LAMBERT_BRANCH_POINT {
        return Err(Error::Domain(format!("Lambert W0 is defined for x >= -1/e, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == LAMBERT_BRANCH_POINT {
        return Ok(-1.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    if x > 1e300 {
        return Ok(w_from_log_newton(x.ln()));
    }

    let mut w = initial_guess(x);
    for _ in 0..HALLEY_MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        if !step.is_finite() {
            break;
        }
        let next = w - step;
        let done = (next - w).abs() <= 4.0 * f64::EPSILON * (1.0 + next.abs());
        w = next.max(-1.0);
        if done {
            break;
        }
    }
    Ok(w)
}

fn initial_guess(x: f64) -> f64 {
    if x < -0.32 {
        // series about the branch point in p = sqrt(2(ex + 1))
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 20.0 {
        // Winitzki's approximation
        let l = x.ln_1p();
        l * (1.0 - (1.0 + l).ln() / (2.0 + l))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

/// `W_0(exp(log_x))` without forming `exp(log_x)`, for arguments that would
/// overflow. Solves `w + log w = log_x` by Newton's method.
pub fn lambert_w0_exp(log_x: f64) -> f64 {
    if log_x == f64::NEG_INFINITY {
        return 0.0;
    }
    if log_x < 690.0 {
        return lambert_w0(log_x.exp()).expect("exp is positive");
    }
    w_from_log_newton(log_x)
}

/// Newton's method on `w + log w = log_x`; accurate once `log_x` is large.
fn w_from_log_newton(log_x: f64) -> f64 {
    let mut w = log_x - log_x.ln();
    for _ in 0..20 {
        let g = w + w.ln() - log_x;
        let next = w - g / (1.0 + 1.0 / w);
        if (next - w).abs() <= 2.0 * f64::EPSILON * next {
            w = next;
            break;
        }
        w = next;
    }
    w
}
