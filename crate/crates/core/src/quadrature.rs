//! Quadrature building blocks: Gauss-Legendre rules, nested tanh-sinh
//! integration for finite intervals with algebraic endpoint singularities, and
//! a Filon-type product rule for integrals over one half-period of a cosine.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

/// An integral value with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEstimate {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
}

impl QuadEstimate {
    pub fn zero() -> Self {
        QuadEstimate { value: 0.0, error: 0.0, evals: 0 }
    }
}

impl std::ops::Add for QuadEstimate {
    type Output = QuadEstimate;

    fn add(self, other: QuadEstimate) -> QuadEstimate {
        QuadEstimate {
            value: self.value + other.value,
            error: self.error + other.error,
            evals: self.evals + other.evals,
        }
    }
}

/// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn gauss_legendre(n: usize) -> GaussRule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n(x) and its derivative
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n == 1 {
        nodes[0] = 0.0;
        weights[0] = 2.0;
    }
    GaussRule { nodes, weights }
}

// ---------------------------------------------------------------------------
// tanh-sinh

const TS_STEP0: f64 = 0.5;
const TS_TMAX: f64 = 4.5;
pub const TS_MAX_LEVEL: usize = 9;

/// One refinement level: abscissas in (0, 1) and dv/dt.
struct TsLevel {
    abscissas: Vec<f64>,
    weights: Vec<f64>,
}

fn ts_node(t: f64) -> (f64, f64) {
    let x = FRAC_PI_2 * t.sinh();
    let v = 1.0 / (1.0 + (-2.0 * x).exp());
    let c = x.cosh();
    let w = 0.5 * FRAC_PI_2 * t.cosh() / (c * c);
    (v, w)
}

fn ts_levels() -> &'static [TsLevel] {
    static LEVELS: OnceLock<Vec<TsLevel>> = OnceLock::new();
    LEVELS.get_or_init(|| {
        let mut levels = Vec::with_capacity(TS_MAX_LEVEL + 1);
        let j_max = (TS_TMAX / TS_STEP0).round() as i64;
        let mut lvl0 = TsLevel { abscissas: vec![], weights: vec![] };
        for j in -j_max..=j_max {
            let (v, w) = ts_node(j as f64 * TS_STEP0);
            lvl0.abscissas.push(v);
            lvl0.weights.push(w);
        }
        levels.push(lvl0);
        for k in 1..=TS_MAX_LEVEL {
            let step = TS_STEP0 / (1u64 << k) as f64;
            let count = (TS_TMAX / step).round() as i64;
            let mut lvl = TsLevel { abscissas: vec![], weights: vec![] };
            let mut j = -count + 1;
            while j < count {
                let (v, w) = ts_node(j as f64 * step);
                lvl.abscissas.push(v);
                lvl.weights.push(w);
                j += 2;
            }
            levels.push(lvl);
        }
        levels
    })
}

/// Integrates `f` over [a, b] by nested tanh-sinh refinement.
///
/// Endpoint singularities of algebraic type are handled without special
/// treatment; for a singularity at `a` the abscissa `a + (b - a) v` keeps full
/// relative precision when `a == 0`. Refinement stops once two successive
/// levels agree to `tol` (after at least three refinements) or `max_level` is
/// reached. The returned error is that last difference.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, max_level: usize) -> QuadEstimate {
    let levels = ts_levels();
    let max_level = max_level.min(TS_MAX_LEVEL);
    let len = b - a;
    let mut sum = 0.0;
    let mut evals = 0;
    let mut previous = f64::NAN;
    let mut error = f64::INFINITY;
    let mut value = 0.0;
    for (k, level) in levels.iter().enumerate().take(max_level + 1) {
        for (&v, &w) in level.abscissas.iter().zip(&level.weights) {
            if w == 0.0 {
                continue;
            }
            let u = a + len * v;
            let fu = f(u);
            if fu.is_finite() {
                sum += w * fu;
            }
            evals += 1;
        }
        let step = TS_STEP0 / (1u64 << k) as f64;
        value = len * step * sum;
        if k > 0 {
            error = (value - previous).abs();
            if k >= 3 && error <= tol {
                break;
            }
        }
        previous = value;
    }
    QuadEstimate { value, error, evals }
}

// ---------------------------------------------------------------------------
// Filon-type half-period rule

/// Product-integration rule for int_{-1}^{1} g(t) cos(pi t / 2) dt.
///
/// `g` is interpolated at Gauss-Legendre nodes and the interpolant is
/// integrated exactly against the cosine weight. Every half-period of
/// cos(s u) between consecutive zeros maps onto this reference panel, so one
/// table serves all panels of the oscillatory tail.
#[derive(Debug, Clone)]
pub struct HalfPeriodRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HalfPeriodRule {
    pub fn new(n: usize) -> Self {
        let interp = gauss_legendre(n);
        let fine = gauss_legendre(4 * n + 32);
        let mut weights = vec![0.0; n];
        for (&xi, &wi) in fine.nodes.iter().zip(&fine.weights) {
            let cw = wi * (FRAC_PI_2 * xi).cos();
            for (j, wj) in weights.iter_mut().enumerate() {
                let mut lj = 1.0;
                for (i, &ti) in interp.nodes.iter().enumerate() {
                    if i != j {
                        lj *= (xi - ti) / (interp.nodes[j] - ti);
                    }
                }
                *wj += cw * lj;
            }
        }
        HalfPeriodRule { nodes: interp.nodes, weights }
    }

    /// Integral of g over the reference panel against cos(pi t / 2).
    pub fn apply<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * g(t)).sum()
    }
}

/// Cached (primary, check) rule pairs: standard and refined.
pub fn half_period_rules(refined: bool) -> (&'static HalfPeriodRule, &'static HalfPeriodRule) {
    static STANDARD: OnceLock<(HalfPeriodRule, HalfPeriodRule)> = OnceLock::new();
    static REFINED: OnceLock<(HalfPeriodRule, HalfPeriodRule)> = OnceLock::new();
    let pair = if refined {
        REFINED.get_or_init(|| (HalfPeriodRule::new(48), HalfPeriodRule::new(36)))
    } else {
        STANDARD.get_or_init(|| (HalfPeriodRule::new(32), HalfPeriodRule::new(24)))
    };
    (&pair.0, &pair.1)
}
