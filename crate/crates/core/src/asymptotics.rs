//! Limiting covariance of the moment statistics, the delta-method covariance
//! of the parameter estimates, and determinant scans of the forward-map
//! Jacobian.
//!
//! With c_j = E(Y_0 Y_{jh}) and S(k) = sum_{j in Z} c_j c_{j+k}, Wick's formula
//! gives the limits of n Cov(eta_a, eta_b):
//!
//! ```text
//! S11 = 2 S(0)        S12 = 2 S(1)          S13 = S(2)
//! S22 = S(0) + S(2)   S23 = (S(1) + S(3))/2 S33 = S'(0) + S'(2)
//! ```
//!
//! where S' is built from the lag-2h sequence c'_j = c_{2j}. The factors 1
//! and 1/2 in the third column come from eta2 using only even indices.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::jacobian;
use crate::fou::{fou_autocovariance, ModelParams, DEFAULT_TOL};
use crate::special::{binomial, falling_factorial, hurwitz_zeta};
use crate::Matrix3;

/// Smallest lag index at which the series switches to the tail expansion.
const MIN_CROSSOVER: usize = 64;
/// theta * t at the crossover must reach this value.
const MIN_SCALED_LAG: f64 = 40.0;
const MAX_CROSSOVER: usize = 1 << 22;
const MAX_EXPANSION_TERMS: usize = 10;
const BINOMIAL_TERMS: usize = 20;

/// Normalized |det J| / prod |column| below which J counts as singular.
pub const SINGULAR_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaMatrix {
    pub matrix: Matrix3,
    /// Lag index (in units of h) beyond which the tail expansion is summed.
    pub crossover: usize,
    pub expansion_terms: usize,
    /// H = 1/2: outside the CLT hypothesis; values agree with the geometric
    /// closed forms and are meant for comparison only.
    pub half_warning: bool,
}

/// Sequence c_j = C(j step), exact up to `cross + extra`, with the power
/// expansion e(j) = sum_n b_n j^{alpha_n} beyond.
struct LagSeries {
    direct: Vec<f64>,
    cross: usize,
    coeffs: Vec<(f64, f64)>,
}

impl LagSeries {
    fn expansion(&self, j: f64) -> f64 {
        self.coeffs.iter().map(|&(b, a)| b * j.powf(a)).sum()
    }

    /// P(k) = sum_{j >= 0} c_j c_{j+k}.
    fn lagged_products(&self, k: usize) -> f64 {
        let head: f64 = (0..=self.cross).map(|j| self.direct[j] * self.direct[j + k]).sum();
        let mut tail = 0.0;
        let start = (self.cross + 1) as f64;
        let kf = k as f64;
        for &(bn, an) in &self.coeffs {
            for &(bm, am) in &self.coeffs {
                let terms = if k == 0 { 1 } else { BINOMIAL_TERMS };
                let mut inner = 0.0;
                let mut kpow = 1.0;
                for l in 0..terms {
                    inner += binomial(am, l) * kpow * hurwitz_zeta(l as f64 - an - am, start);
                    kpow *= kf;
                }
                tail += bn * bm * inner;
            }
        }
        head + tail
    }

    /// S(k) = 2 P(k) - c_0 c_k + sum_{i=1}^{k} c_i c_{k-i}.
    fn two_sided(&self, k: usize) -> f64 {
        let c = &self.direct;
        2.0 * self.lagged_products(k) - c[0] * c[k] + (1..=k).map(|i| c[i] * c[k - i]).sum::<f64>()
    }
}

fn check_hypothesis(params: &ModelParams) -> Result<bool> {
    let h = params.h();
    if h >= 0.75 {
        return Err(Error::DivergentSeries(h));
    }
    Ok(h == 0.5)
}

/// Coefficients of the large-lag expansion of C(j step) in powers of j.
fn expansion_coeffs(params: &ModelParams, step: f64, terms: usize) -> Vec<(f64, f64)> {
    let h2 = 2.0 * params.h();
    (1..=terms)
        .map(|n| {
            let a = h2 - 2.0 * n as f64;
            let b = 0.5
                * params.sigma
                * params.sigma
                * params.theta.powi(-2 * n as i32)
                * falling_factorial(h2, 2 * n)
                * step.powf(a);
            (b, a)
        })
        .collect()
}

/// Number of expansion terms at t: stop before the terms start growing.
fn expansion_terms(params: &ModelParams, t: f64) -> usize {
    let coeffs = expansion_coeffs(params, t, MAX_EXPANSION_TERMS + 1);
    let mut n = 1;
    while n < MAX_EXPANSION_TERMS && coeffs[n].0.abs() < coeffs[n - 1].0.abs() {
        n += 1;
    }
    n
}

struct Series {
    lag_h: LagSeries,
    lag_2h: LagSeries,
    crossover: usize,
    terms: usize,
}

fn build_series(params: &ModelParams, h: f64, tol: f64, min_crossover: usize) -> Result<Series> {
    let c0 = params.stationary_variance();
    let mut cross = min_crossover.max(MIN_CROSSOVER);
    while params.theta * h * (cross as f64) < MIN_SCALED_LAG {
        cross *= 2;
    }
    loop {
        if cross > MAX_CROSSOVER {
            return Err(Error::Quadrature { tol, achieved: f64::NAN });
        }
        let quad_tol = (0.1 * tol / (c0 * (cross as f64 + 1.0))).clamp(1e-15 * c0, 1e-13 * c0);
        let t_cross = cross as f64 * h;
        let terms = expansion_terms(params, t_cross);
        let check = fou_autocovariance(params, t_cross, quad_tol)?;
        let coeffs = expansion_coeffs(params, 1.0, terms);
        let approx: f64 = coeffs.iter().map(|&(b, a)| b * t_cross.powf(a)).sum();
        if (check - approx).abs() > 1e-11 * c0 {
            cross *= 2;
            continue;
        }
        let half_cross = cross.div_ceil(2);
        let len = (cross + 4).max(2 * half_cross + 5);
        let c: Vec<f64> = (0..=len)
            .into_par_iter()
            .map(|j| fou_autocovariance(params, j as f64 * h, quad_tol))
            .collect::<Result<_>>()?;
        let lag_h = LagSeries { direct: c[..=cross + 3].to_vec(), cross, coeffs: expansion_coeffs(params, h, terms) };
        let lag_2h = LagSeries {
            direct: (0..=half_cross + 2).map(|j| c[2 * j]).collect(),
            cross: half_cross,
            coeffs: expansion_coeffs(params, 2.0 * h, terms),
        };
        debug_assert!((lag_h.expansion(cross as f64) - approx).abs() <= 1e-12 * c0.max(approx.abs()));
        return Ok(Series { lag_h, lag_2h, crossover: cross, terms });
    }
}

fn validate(params: &ModelParams, h: f64, tol: f64) -> Result<bool> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("lag h must be positive, got {h}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    check_hypothesis(params)
}

/// Limiting covariance of sqrt(n) (eta - E eta).
pub fn sigma_matrix(params: &ModelParams, h: f64, tol: f64) -> Result<SigmaMatrix> {
    sigma_matrix_with_crossover(params, h, tol, MIN_CROSSOVER)
}

/// As [`sigma_matrix`] with a lower bound on the crossover lag.
pub fn sigma_matrix_with_crossover(
    params: &ModelParams,
    h: f64,
    tol: f64,
    min_crossover: usize,
) -> Result<SigmaMatrix> {
    let half_warning = validate(params, h, tol)?;
    let s = build_series(params, h, tol, min_crossover)?;
    let a: Vec<f64> = (0..4).map(|k| s.lag_h.two_sided(k)).collect();
    let b: Vec<f64> = [0, 2].iter().map(|&k| s.lag_2h.two_sided(k)).collect();
    let s12 = 2.0 * a[1];
    let s13 = a[2];
    let s23 = 0.5 * (a[1] + a[3]);
    let matrix = Matrix3::new(2.0 * a[0], s12, s13, s12, a[0] + a[2], s23, s13, s23, b[0] + b[1]);
    Ok(SigmaMatrix { matrix, crossover: s.crossover, expansion_terms: s.terms, half_warning })
}

/// Where the diagonal series of the printed covariance formula starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalStart {
    /// 2 c_0^2 + 4 sum_{m >= 1} c_m^2
    One,
    /// 2 c_0^2 + 4 sum_{m >= 0} c_m^2
    Zero,
}

/// The closed-form covariance as usually printed: equal diagonals
/// 2 c_0^2 + 4 sum c_m^2, off-diagonals 4 sum_{m>=0} c_m c_{m+1} and the same
/// at lag 2h for the (1,3) entry. Kept for comparison with [`sigma_matrix`].
pub fn printed_sigma_matrix(params: &ModelParams, h: f64, tol: f64, start: DiagonalStart) -> Result<SigmaMatrix> {
    let half_warning = validate(params, h, tol)?;
    let s = build_series(params, h, tol, MIN_CROSSOVER)?;
    let c0 = s.lag_h.direct[0];
    let p0 = s.lag_h.lagged_products(0);
    let diag = match start {
        DiagonalStart::One => 2.0 * c0 * c0 + 4.0 * (p0 - c0 * c0),
        DiagonalStart::Zero => 2.0 * c0 * c0 + 4.0 * p0,
    };
    let off = 4.0 * s.lag_h.lagged_products(1);
    let off13 = 4.0 * s.lag_2h.lagged_products(1);
    let matrix = Matrix3::new(diag, off, off13, off, diag, off, off13, off, diag);
    Ok(SigmaMatrix { matrix, crossover: s.crossover, expansion_terms: s.terms, half_warning })
}

/// Geometric-series closed forms of [`sigma_matrix`] for H = 1/2, where
/// c_j = sigma^2/(2 theta) r^j with r = e^{-theta h}.
pub fn classical_sigma_matrix(theta: f64, sigma: f64, h: f64) -> Matrix3 {
    let c = sigma * sigma / (2.0 * theta);
    let c2 = c * c;
    let r = (-theta * h).exp();
    let (r2, r4) = (r * r, r.powi(4));
    let d = 1.0 - r2;
    let s11 = 2.0 * c2 * (1.0 + r2) / d;
    let s12 = 4.0 * c2 * r / d;
    let s13 = c2 * r2 * (3.0 - r2) / d;
    let s22 = c2 * (1.0 + 4.0 * r2 - r4) / d;
    let s23 = c2 * (r + 2.0 * r.powi(3) - r.powi(5)) / d;
    let s33 = c2 * (1.0 + 4.0 * r4 - r.powi(8)) / (1.0 - r4);
    Matrix3::new(s11, s12, s13, s12, s22, s23, s13, s23, s33)
}

/// |det J| / prod of column norms; 1 for orthogonal columns, 0 when singular.
pub fn normalized_determinant(j: &Matrix3) -> f64 {
    let prod: f64 = j.column_iter().map(|c| c.norm()).product();
    if prod == 0.0 {
        0.0
    } else {
        j.determinant().abs() / prod
    }
}

/// J^{-1} Sigma J^{-T}: limiting covariance of sqrt(n) (estimate - truth).
pub fn estimator_covariance(params: &ModelParams, h: f64) -> Result<Matrix3> {
    let sigma = sigma_matrix(params, h, DEFAULT_TOL * params.stationary_variance().powi(2))?;
    let j = jacobian(params, h)?;
    let ratio = normalized_determinant(&j);
    if ratio < SINGULAR_RATIO {
        return Err(Error::SingularJacobian(ratio));
    }
    let inv = j.try_inverse().ok_or(Error::SingularJacobian(ratio))?;
    let cov = inv * sigma.matrix * inv.transpose();
    Ok((cov + cov.transpose()) * 0.5)
}

/// Model parameter selectable as a scan axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    Theta,
    Hurst,
    Sigma,
}

impl std::str::FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta" => Ok(Param::Theta),
            "hurst" | "H" => Ok(Param::Hurst),
            "sigma" => Ok(Param::Sigma),
            other => Err(Error::InvalidParameter(format!("unknown parameter '{other}'"))),
        }
    }
}

impl std::fmt::Display for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Param::Theta => "theta",
            Param::Hurst => "hurst",
            Param::Sigma => "sigma",
        })
    }
}

/// Evenly spaced values lo..=hi.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub param: Param,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGrid {
    pub axis1: Axis,
    pub axis2: Axis,
    /// Value of the parameter that is not scanned.
    pub fixed: f64,
    pub h: f64,
}

impl ScanGrid {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.axis1.param == self.axis2.param {
            return bad("scan axes must be different parameters".into());
        }
        for axis in [&self.axis1, &self.axis2] {
            if axis.count < 2 {
                return bad(format!("axis {} needs at least 2 points", axis.param));
            }
            if !(axis.lo < axis.hi) {
                return bad(format!("axis {} needs lo < hi", axis.param));
            }
            let ok = match axis.param {
                Param::Hurst => axis.lo > 0.0 && axis.hi < 1.0,
                _ => axis.lo > 0.0 && axis.hi.is_finite(),
            };
            if !ok {
                return bad(format!(
                    "axis {} range [{}, {}] leaves the parameter domain",
                    axis.param, axis.lo, axis.hi
                ));
            }
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("lag h must be positive, got {}", self.h));
        }
        self.params_at(self.axis1.lo, self.axis2.lo).map(|_| ())
    }

    fn fixed_param(&self) -> Param {
        [Param::Theta, Param::Hurst, Param::Sigma]
            .into_iter()
            .find(|p| *p != self.axis1.param && *p != self.axis2.param)
            .expect("two distinct axes leave one parameter")
    }

    pub fn params_at(&self, v1: f64, v2: f64) -> Result<ModelParams> {
        let mut vals = [0.0; 3];
        let slot = |p: Param| match p {
            Param::Theta => 0,
            Param::Hurst => 1,
            Param::Sigma => 2,
        };
        vals[slot(self.axis1.param)] = v1;
        vals[slot(self.axis2.param)] = v2;
        vals[slot(self.fixed_param())] = self.fixed;
        ModelParams::new(vals[0], vals[1], vals[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub p1: f64,
    pub p2: f64,
    /// None when the determinant could not be evaluated at this point.
    pub det: Option<f64>,
}

/// det J over the grid, in row-major order of (axis1, axis2).
pub fn det_scan(grid: &ScanGrid) -> Result<Vec<ScanRow>> {
    grid.validate()?;
    let points: Vec<(f64, f64)> =
        grid.axis1.values().into_iter().flat_map(|a| grid.axis2.values().into_iter().map(move |b| (a, b))).collect();
    Ok(points
        .into_par_iter()
        .map(|(p1, p2)| {
            let det = grid.params_at(p1, p2).and_then(|p| jacobian(&p, grid.h)).map(|j| j.determinant()).ok();
            ScanRow { p1, p2, det }
        })
        .collect())
}
