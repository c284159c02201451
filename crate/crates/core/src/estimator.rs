//! Forward map of population moments, its Jacobian, and the moment estimator
//! obtained by inverting the forward map with damped Newton iterations.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fou::{fou_autocovariance, ModelParams};
use crate::moments::MomentVector;
use crate::special::gamma;
use crate::Matrix3;

/// Autocovariances inside the forward map are computed to this tolerance
/// relative to the stationary variance.
const FORWARD_REL_TOL: f64 = 1e-13;

/// Population moments (E Y_0^2, E Y_0 Y_h, E Y_0 Y_2h).
pub fn forward_map(params: &ModelParams, h: f64) -> Result<MomentVector> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("lag h must be positive, got {h}")));
    }
    let tol = FORWARD_REL_TOL * params.stationary_variance();
    Ok(MomentVector::new(
        fou_autocovariance(params, 0.0, tol)?,
        fou_autocovariance(params, h, tol)?,
        fou_autocovariance(params, 2.0 * h, tol)?,
    ))
}

fn shifted(params: &ModelParams, coord: usize, delta: f64) -> Result<ModelParams> {
    let (mut t, mut hh, mut s) = (params.theta, params.h(), params.sigma);
    match coord {
        0 => t += delta,
        1 => hh += delta,
        _ => s += delta,
    }
    ModelParams::new(t, hh, s)
}

fn central_difference(params: &ModelParams, h: f64, coord: usize, delta: f64) -> Result<[f64; 3]> {
    let plus = forward_map(&shifted(params, coord, delta)?, h)?.as_array();
    let minus = forward_map(&shifted(params, coord, -delta)?, h)?.as_array();
    Ok([0, 1, 2].map(|i| (plus[i] - minus[i]) / (2.0 * delta)))
}

/// Partial derivatives of the forward map; rows are (f1, f2, f3), columns are
/// (theta, H, sigma). Central differences at steps delta and delta/2 are
/// combined by one Richardson extrapolation step.
pub fn jacobian(params: &ModelParams, h: f64) -> Result<Matrix3> {
    let steps = [1e-3 * params.theta, 1e-3, 1e-3 * params.sigma];
    let columns: Result<Vec<[f64; 3]>> = (0..3usize)
        .into_par_iter()
        .map(|c| {
            let coarse = central_difference(params, h, c, steps[c])?;
            let fine = central_difference(params, h, c, 0.5 * steps[c])?;
            Ok([0, 1, 2].map(|i| (4.0 * fine[i] - coarse[i]) / 3.0))
        })
        .collect();
    let columns = columns?;
    let j = Matrix3::from_fn(|r, c| columns[c][r]);
    for (idx, v) in j.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteJacobian(format!("row {}, column {}", idx % 3, idx / 3)));
        }
    }
    Ok(j)
}

/// Largest relative deviation of the sigma column from its exact value 2 f / sigma.
pub fn sigma_column_deviation(j: &Matrix3, f: &MomentVector, sigma: f64) -> f64 {
    f.as_array()
        .iter()
        .enumerate()
        .map(|(i, fi)| {
            let exact = 2.0 * fi / sigma;
            (j[(i, 2)] - exact).abs() / exact.abs().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub theta: (f64, f64),
    pub hurst: (f64, f64),
    pub sigma: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { theta: (0.01, 200.0), hurst: (0.3, 0.75), sigma: (1e-4, 1e4) }
    }
}

impl Bounds {
    pub fn contains(&self, p: &ModelParams) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(p.theta, self.theta) && inside(p.h(), self.hurst) && inside(p.sigma, self.sigma)
    }

    fn lower(&self) -> [f64; 3] {
        [self.theta.0.ln(), self.hurst.0, self.sigma.0.ln()]
    }

    fn upper(&self) -> [f64; 3] {
        [self.theta.1.ln(), self.hurst.1, self.sigma.1.ln()]
    }

    fn project(&self, z: [f64; 3]) -> [f64; 3] {
        let (lo, hi) = (self.lower(), self.upper());
        [0, 1, 2].map(|i| z[i].clamp(lo[i], hi[i]))
    }
}

/// Backtracking line search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    /// Sufficient-decrease constant c in |r_new| <= (1 - c a) |r|.
    pub armijo: f64,
    /// Step shrink factor per rejection.
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for Damping {
    fn default() -> Self {
        Damping { armijo: 1e-4, shrink: 0.5, max_backtracks: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Target for |f(params) - eta| / eta0.
    pub tol_residual: f64,
    /// Accepted steps shorter than this (in log-theta, H, log-sigma) count as stagnation.
    pub tol_step: f64,
    pub bounds: Bounds,
    /// Number of log-spaced theta values in the multistart grid.
    pub multistart: usize,
    pub damping: Damping,
    /// Optional first start; otherwise the best grid point is used.
    pub initial: Option<ModelParams>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 60,
            tol_residual: 1e-11,
            tol_step: 1e-15,
            bounds: Bounds::default(),
            multistart: 5,
            damping: Damping::default(),
            initial: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.tol_residual > 0.0 && self.tol_step > 0.0) {
            return bad("solver tolerances must be positive");
        }
        let b = &self.bounds;
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !(ok(b.theta) && ok(b.sigma) && ok(b.hurst)) {
            return bad("solver bounds must be positive, finite and non-empty");
        }
        if b.hurst.1 >= 1.0 {
            return bad("Hurst bounds must lie inside (0, 1)");
        }
        if self.multistart == 0 || self.max_iter == 0 {
            return bad("max_iter and multistart must be at least 1");
        }
        let d = &self.damping;
        if !(d.armijo > 0.0 && d.armijo < 1.0 && d.shrink > 0.0 && d.shrink < 1.0) {
            return bad("damping constants must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub params: ModelParams,
    pub iterations: usize,
    /// |f(params) - eta| / eta0 at the reported point.
    pub residual_norm: f64,
    pub converged: bool,
    pub jacobian_det_at_solution: f64,
}

/// Trace of one damped Newton run.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonRun {
    pub params: ModelParams,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Residual norm after each accepted step, starting with the initial point.
    pub history: Vec<f64>,
    /// Every accepted iterate, starting with the initial point.
    pub iterates: Vec<ModelParams>,
}

fn to_params(z: [f64; 3]) -> Result<ModelParams> {
    ModelParams::new(z[0].exp(), z[1], z[2].exp())
}

fn to_z(p: &ModelParams) -> [f64; 3] {
    [p.theta.ln(), p.h(), p.sigma.ln()]
}

fn norm(v: &[f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scaled_residual(p: &ModelParams, h: f64, target: &MomentVector) -> Result<[f64; 3]> {
    let f = forward_map(p, h)?.as_array();
    let t = target.as_array();
    Ok([0, 1, 2].map(|i| (f[i] - t[i]) / target.eta0))
}

/// Newton direction for z from the (theta, H, sigma) Jacobian; falls back to
/// a Levenberg step when the linear system is singular.
fn newton_direction(j: &Matrix3, p: &ModelParams, eta0: f64, r: &[f64; 3]) -> Option<[f64; 3]> {
    let scale = Matrix3::from_diagonal(&nalgebra::Vector3::new(p.theta, 1.0, p.sigma));
    let jz = j * scale / eta0;
    let rhs = -nalgebra::Vector3::new(r[0], r[1], r[2]);
    let step = jz.lu().solve(&rhs).filter(|s| s.iter().all(|v| v.is_finite())).or_else(|| {
        let jt = jz.transpose();
        let normal = jt * jz;
        let mu = 1e-8 * normal.trace().max(f64::MIN_POSITIVE);
        (normal + Matrix3::identity() * mu).lu().solve(&(jt * rhs))
    })?;
    Some([step[0], step[1], step[2]])
}

const STEP_CAP: [f64; 3] = [2.0, 0.2, 2.0];

/// Damped Newton from `start`.
pub fn solve_from(target: &MomentVector, h: f64, config: &SolverConfig, start: &ModelParams) -> Result<NewtonRun> {
    let bounds = &config.bounds;
    let mut z = bounds.project(to_z(start));
    let mut p = to_params(z)?;
    let mut r = scaled_residual(&p, h, target)?;
    let mut res = norm(&r);
    let mut history = vec![res];
    let mut iterates = vec![p];
    let mut iterations = 0;
    while res > config.tol_residual && iterations < config.max_iter {
        let j = jacobian(&p, h)?;
        let Some(mut dir) = newton_direction(&j, &p, target.eta0, &r) else { break };
        for (d, cap) in dir.iter_mut().zip(STEP_CAP) {
            *d = d.clamp(-cap, cap);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=config.damping.max_backtracks {
            let cand_z = bounds.project([0, 1, 2].map(|i| z[i] + alpha * dir[i]));
            if let Ok(cand) = to_params(cand_z) {
                if let Ok(cand_r) = scaled_residual(&cand, h, target) {
                    let cand_res = norm(&cand_r);
                    if cand_res <= (1.0 - config.damping.armijo * alpha) * res {
                        accepted = Some((cand_z, cand, cand_r, cand_res));
                        break;
                    }
                }
            }
            alpha *= config.damping.shrink;
        }
        let Some((new_z, new_p, new_r, new_res)) = accepted else { break };
        let moved = norm(&[0, 1, 2].map(|i| new_z[i] - z[i]));
        z = new_z;
        p = new_p;
        r = new_r;
        res = new_res;
        iterations += 1;
        history.push(res);
        iterates.push(p);
        if moved < config.tol_step {
            break;
        }
    }
    Ok(NewtonRun { params: p, iterations, residual: res, converged: res <= config.tol_residual, history, iterates })
}

/// Multistart grid: log-spaced theta in [0.1/h, 20/h] clipped to the box,
/// H in {0.35, 0.55, 0.7} clipped to the box, sigma solving the lag-0
/// equation exactly.
pub fn multistart_grid(eta0: f64, h: f64, config: &SolverConfig) -> Vec<ModelParams> {
    let b = &config.bounds;
    let (lo, hi) = ((0.1 / h).clamp(b.theta.0, b.theta.1), (20.0 / h).clamp(b.theta.0, b.theta.1));
    let m = config.multistart;
    let thetas: Vec<f64> = (0..m)
        .map(|i| if m == 1 { (lo * hi).sqrt() } else { lo * (hi / lo).powf(i as f64 / (m - 1) as f64) })
        .collect();
    let mut grid = Vec::with_capacity(3 * m);
    for &hurst in &[0.35, 0.55, 0.7] {
        let hurst = f64::clamp(hurst, b.hurst.0, b.hurst.1);
        for &theta in &thetas {
            let sigma = (2.0 * theta.powf(2.0 * hurst) * eta0 / gamma(2.0 * hurst + 1.0)).sqrt();
            if let Ok(p) = ModelParams::new(theta, hurst, sigma.clamp(b.sigma.0, b.sigma.1)) {
                grid.push(p);
            }
        }
    }
    grid
}

fn report(run: NewtonRun, h: f64) -> EstimateReport {
    let det = jacobian(&run.params, h).map(|j| j.determinant()).unwrap_or(f64::NAN);
    EstimateReport {
        params: run.params,
        iterations: run.iterations,
        residual_norm: run.residual,
        converged: run.converged,
        jacobian_det_at_solution: det,
    }
}

/// Solves forward_map(params, h) = moments for params inside the box.
///
/// The first Newton run starts from `config.initial` or from the grid point
/// with the smallest residual. If it does not converge, every grid point is
/// run; among converged runs the smallest residual wins, ties going to the
/// larger |det J|.
pub fn estimate(moments: &MomentVector, h: f64, config: &SolverConfig) -> Result<EstimateReport> {
    config.validate()?;
    if !moments.is_finite() {
        return Err(Error::InvalidParameter("moments must be finite".into()));
    }
    if !(moments.eta0 > 0.0) {
        return Err(Error::InvalidParameter(format!("eta0 must be positive, got {}", moments.eta0)));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("lag h must be positive, got {h}")));
    }
    let grid = multistart_grid(moments.eta0, h, config);
    let scored: Vec<(usize, f64)> = grid
        .par_iter()
        .enumerate()
        .map(|(i, p)| (i, scaled_residual(p, h, moments).map(|r| norm(&r)).unwrap_or(f64::INFINITY)))
        .collect();
    let best_start = scored
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|&(i, _)| grid[i])
        .ok_or_else(|| Error::InvalidParameter("empty multistart grid".into()))?;

    let degenerate = moments.eta1 == moments.eta0 && moments.eta2 == moments.eta0;
    if degenerate {
        let residual = scaled_residual(&best_start, h, moments).map(|r| norm(&r)).unwrap_or(f64::INFINITY);
        let run = NewtonRun {
            params: best_start,
            iterations: 0,
            residual,
            converged: false,
            history: vec![residual],
            iterates: vec![best_start],
        };
        return Ok(report(run, h));
    }

    let first_start = config.initial.unwrap_or(best_start);
    if let Ok(run) = solve_from(moments, h, config, &first_start) {
        if run.converged {
            return Ok(report(run, h));
        }
    }

    let runs: Vec<EstimateReport> = grid
        .par_iter()
        .filter_map(|start| solve_from(moments, h, config, start).ok())
        .map(|run| report(run, h))
        .collect();
    let pick = |pool: Vec<&EstimateReport>| -> Option<EstimateReport> {
        pool.into_iter()
            .min_by(|a, b| {
                a.residual_norm
                    .total_cmp(&b.residual_norm)
                    .then(b.jacobian_det_at_solution.abs().total_cmp(&a.jacobian_det_at_solution.abs()))
            })
            .cloned()
    };
    let converged: Vec<&EstimateReport> = runs.iter().filter(|r| r.converged).collect();
    let chosen = if converged.is_empty() { pick(runs.iter().collect()) } else { pick(converged) };
    chosen.ok_or(Error::NotConverged { residual: f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(theta: f64, h: f64, sigma: f64) -> ModelParams {
        ModelParams::new(theta, h, sigma).unwrap()
    }

    #[test]
    fn forward_map_classical_ou() {
        let (theta, sigma, h) = (3.0, 1.5, 0.4);
        let f = forward_map(&p(theta, 0.5, sigma), h).unwrap();
        let c = sigma * sigma / (2.0 * theta);
        let want = [c, c * (-theta * h).exp(), c * (-2.0 * theta * h).exp()];
        for (a, b) in f.as_array().iter().zip(want) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn forward_map_variance_and_scaling() {
        let params = p(6.0, 0.7, 2.0);
        let f = forward_map(&params, 0.5).unwrap();
        assert!((f.eta0 - params.stationary_variance()).abs() < 1e-13);
        let g = forward_map(&p(6.0, 0.7, 6.0), 0.5).unwrap();
        for (a, b) in f.as_array().iter().zip(g.as_array()) {
            assert!((9.0 * a - b).abs() < 1e-12 * b.abs());
        }
    }

    #[test]
    fn jacobian_sigma_column_and_ou_derivative() {
        let params = p(2.0, 0.5, 1.2);
        let h = 0.5;
        let j = jacobian(&params, h).unwrap();
        let f = forward_map(&params, h).unwrap();
        assert!(sigma_column_deviation(&j, &f, 1.2) < 1e-6);
        // d/dtheta of sigma^2/(2 theta)
        let want = -1.2 * 1.2 / (2.0 * 4.0);
        assert!((j[(0, 0)] - want).abs() < 1e-8);
        // d/dtheta of c e^{-theta h}
        let c = 1.2 * 1.2 / 4.0;
        let want = c * (-2.0 * h).exp() * (-1.0 / 2.0 - h);
        assert!((j[(1, 0)] - want).abs() < 1e-8);
    }

    #[test]
    fn jacobian_determinant_reference() {
        // high-precision finite differences of the time-domain formula
        let det = jacobian(&p(5.0, 0.7, 2.0), 0.5).unwrap().determinant();
        assert!((det - (-6.428e-4)).abs() < 1e-6, "{det}");
    }

    #[test]
    fn round_trip_default_point() {
        let truth = p(6.0, 0.7, 2.0);
        let m = forward_map(&truth, 0.5).unwrap();
        let rep = estimate(&m, 0.5, &SolverConfig::default()).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!((rep.params.theta - 6.0).abs() < 1e-6);
        assert!((rep.params.h() - 0.7).abs() < 1e-6);
        assert!((rep.params.sigma - 2.0).abs() < 1e-6);
        assert!(rep.residual_norm <= SolverConfig::default().tol_residual);
    }

    #[test]
    fn start_at_truth_needs_few_iterations() {
        for truth in [p(6.0, 0.7, 2.0), p(1.5, 0.4, 0.8), p(10.0, 0.6, 3.0)] {
            let m = forward_map(&truth, 0.5).unwrap();
            let cfg = SolverConfig { initial: Some(truth), ..SolverConfig::default() };
            let run = solve_from(&m, 0.5, &cfg, &truth).unwrap();
            assert!(run.converged && run.iterations <= 3, "{run:?}");
        }
    }

    #[test]
    fn iterates_stay_in_box_and_residual_is_monotone() {
        let truth = p(4.0, 0.45, 1.0);
        let m = forward_map(&truth, 1.0).unwrap();
        let cfg = SolverConfig::default();
        for start in multistart_grid(m.eta0, 1.0, &cfg) {
            let run = solve_from(&m, 1.0, &cfg, &start).unwrap();
            assert!(run.iterates.iter().all(|q| cfg.bounds.contains(q)));
            assert!(run.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn degenerate_and_invalid_input() {
        let cfg = SolverConfig::default();
        let rep = estimate(&MomentVector::new(1.0, 1.0, 1.0), 0.5, &cfg).unwrap();
        assert!(!rep.converged);
        assert!(estimate(&MomentVector::new(0.0, 0.0, 0.0), 0.5, &cfg).is_err());
        assert!(estimate(&MomentVector::new(-1.0, 0.0, 0.0), 0.5, &cfg).is_err());
        assert!(estimate(&MomentVector::new(f64::NAN, 0.0, 0.0), 0.5, &cfg).is_err());
        let bad = SolverConfig { bounds: Bounds { hurst: (0.3, 1.2), ..Bounds::default() }, ..cfg };
        assert!(estimate(&MomentVector::new(1.0, 0.5, 0.2), 0.5, &bad).is_err());
    }

    #[test]
    fn estimate_is_deterministic() {
        let m = MomentVector::new(0.07, 0.045, 0.031);
        let cfg = SolverConfig::default();
        assert_eq!(estimate(&m, 0.5, &cfg).unwrap(), estimate(&m, 0.5, &cfg).unwrap());
    }
}
