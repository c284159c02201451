//! The cosine transform I(s, p) = int_0^inf cos(s u) u^p / (1 + u^2) du for
//! p in (-1, 1), s >= 0.
//!
//! The stationary fOU autocovariance is a multiple of this integral (see
//! [`crate::fou::fou_autocovariance`]). The integration range is split into a
//! head [0, pi/(2s)] that contains the algebraic singularity at 0, a run of
//! cosine half-periods integrated with a product rule, and an analytic
//! remainder from repeated integration by parts.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quadrature::{half_period_rules, tanh_sinh, QuadEstimate};
use crate::special::{binomial, falling_factorial};

#[derive(Debug, Clone, Copy)]
struct Config {
    ts_level: usize,
    s_min: f64,
    refined: bool,
}

const STANDARD: Config = Config { ts_level: 7, s_min: 40.0, refined: false };
const REFINED: Config = Config { ts_level: 9, s_min: 60.0, refined: true };

/// I(s, p) to absolute tolerance `tol`, retrying once with a refined
/// configuration before giving up.
pub fn cosine_transform(s: f64, p: f64, tol: f64) -> Result<QuadEstimate> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter(format!("lag must be finite and >= 0, got {s}")));
    }
    if !(p > -1.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("exponent p must lie in (-1, 1), got {p}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let first = evaluate(s, p, tol, STANDARD);
    if first.error <= tol {
        return Ok(first);
    }
    let second = evaluate(s, p, tol, REFINED);
    if second.error <= tol {
        Ok(second)
    } else {
        Err(Error::Quadrature { tol, achieved: second.error })
    }
}

fn g(u: f64, p: f64) -> f64 {
    u.powf(p) / (1.0 + u * u)
}

fn evaluate(s: f64, p: f64, tol: f64, cfg: Config) -> QuadEstimate {
    let part_tol = tol / 4.0;
    if s == 0.0 {
        return evaluate_at_zero(p, part_tol, cfg);
    }
    let b = PI / (2.0 * s);
    let head = head_integral(s, p, b, part_tol, cfg);
    let (panels, t_end, sign) = half_periods(s, p, cfg);
    let rem = remainder(s, p, t_end, sign, part_tol);
    head + panels + rem
}

/// int_0^b cos(s u) g(u) du; b is the first zero of the cosine.
fn head_integral(s: f64, p: f64, b: f64, tol: f64, cfg: Config) -> QuadEstimate {
    let f = |u: f64| (s * u).cos() * g(u, p);
    if b <= 1.0 {
        return tanh_sinh(f, 0.0, b, tol, cfg.ts_level);
    }
    let pieces = 1 + (b.log2().ceil() as usize);
    let piece_tol = tol / pieces as f64;
    let mut total = tanh_sinh(f, 0.0, 1.0, piece_tol, cfg.ts_level);
    let mut lo = 1.0;
    while lo < b {
        let hi = (2.0 * lo).min(b);
        total = total + tanh_sinh(f, lo, hi, piece_tol, cfg.ts_level);
        lo = hi;
    }
    total
}

/// Sum over half-periods [(k+1/2)pi/s, (k+3/2)pi/s], k = 0..K-1. Returns the
/// estimate, the end point T and sin(s T).
fn half_periods(s: f64, p: f64, cfg: Config) -> (QuadEstimate, f64, f64) {
    let (primary, check) = half_period_rules(cfg.refined);
    let k_count = ((cfg.s_min / PI) - 0.5).ceil().max(1.0) as usize;
    let half = PI / (2.0 * s);
    let mut value = 0.0;
    let mut diff = 0.0;
    let mut evals = 0;
    for k in 0..k_count {
        let centre = (k as f64 + 1.0) * PI / s;
        let map = |tau: f64| g(centre + half * tau, p);
        let a = primary.apply(map);
        let c = check.apply(map);
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        value += sign * half * a;
        diff += half * (a - c).abs();
        evals += primary.nodes.len() + check.nodes.len();
    }
    let t_end = (k_count as f64 + 0.5) * PI / s;
    let sin_end = if k_count.is_multiple_of(2) { 1.0 } else { -1.0 };
    (QuadEstimate { value, error: diff, evals }, t_end, sin_end)
}

/// m-th derivative of g at u > 0, via g = Im[u^p / (u - i)].
pub(crate) fn g_derivative(u: f64, p: f64, m: usize) -> f64 {
    let w = Complex64::new(u, -1.0);
    let inv_w = w.inv();
    let mut total = Complex64::new(0.0, 0.0);
    let mut fact = 1.0; // (m - l)!
    for q in 1..=m {
        fact *= q as f64;
    }
    for l in 0..=m {
        let q = m - l;
        let power_part = falling_factorial(p, l) * u.powf(p - l as f64);
        let sign = if q.is_multiple_of(2) { 1.0 } else { -1.0 };
        let pole_part = inv_w.powi(q as i32 + 1) * (sign * fact);
        total += pole_part * (binomial(m as f64, l) * power_part);
        if q > 0 {
            fact /= q as f64;
        }
    }
    total.im
}

/// int_T^inf cos(s u) g(u) du where sin(s T) = `sin_end` and cos(s T) = 0.
fn remainder(s: f64, p: f64, t: f64, sin_end: f64, tol: f64) -> QuadEstimate {
    let mut value = 0.0;
    let mut last = f64::INFINITY;
    let mut sign = 1.0;
    let mut s_pow = s;
    let mut terms = 0;
    for j in 0..12 {
        let term = sign * g_derivative(t, p, 2 * j) / s_pow;
        terms += 1;
        if term.abs() > last {
            break;
        }
        value += term;
        last = term.abs();
        if last <= tol * 1e-3 {
            break;
        }
        sign = -sign;
        s_pow *= s * s;
    }
    QuadEstimate { value: -sin_end * value, error: last, evals: terms }
}

/// s = 0: head on [0, 2] by tanh-sinh, tail int_2^inf g by its convergent
/// series in 1/u^2.
fn evaluate_at_zero(p: f64, tol: f64, cfg: Config) -> QuadEstimate {
    let f = |u: f64| g(u, p);
    let head = tanh_sinh(f, 0.0, 1.0, tol / 2.0, cfg.ts_level) + tanh_sinh(f, 1.0, 2.0, tol / 2.0, cfg.ts_level);
    let mut tail = 0.0;
    let mut last = 0.0;
    for k in 0..60 {
        let kf = k as f64;
        let term = 2f64.powf(p - 1.0 - 2.0 * kf) / (1.0 + 2.0 * kf - p);
        last = term;
        tail += if k % 2 == 0 { term } else { -term };
        if term < 1e-3 * tol {
            break;
        }
    }
    head + QuadEstimate { value: tail, error: last, evals: 0 }
}
