//! The fractional Ornstein-Uhlenbeck model dX = -theta X dt + sigma dB^H:
//! parameters, path simulation and the stationary autocovariance.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fgn::{FgnSampler, Hurst};
use crate::gaussian::StationarySampler;
use crate::quadrature::QuadEstimate;
use crate::rng::replication_rng;
use crate::special::{falling_factorial, gamma};
use crate::spectral::cosine_transform;

/// Default absolute tolerance for autocovariance evaluations.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Default number of Euler substeps per observation interval.
pub const DEFAULT_SUBSTEPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub theta: f64,
    pub hurst: Hurst,
    pub sigma: f64,
}

impl ModelParams {
    pub fn new(theta: f64, hurst: f64, sigma: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(ModelParams { theta, hurst: Hurst::new(hurst)?, sigma })
    }

    pub fn h(&self) -> f64 {
        self.hurst.value()
    }

    /// Stationary variance 1/2 sigma^2 theta^{-2H} Gamma(2H+1).
    pub fn stationary_variance(&self) -> f64 {
        let h = self.h();
        0.5 * self.sigma * self.sigma * self.theta.powf(-2.0 * h) * gamma(2.0 * h + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Euler-Maruyama on step h/m from X_0 = 0, driven by exact fGN.
    EulerFineGrid,
    /// Exact draw of the stationary sequence Y_0, Y_h, ...
    StationaryExact,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" | "euler_fine_grid" | "euler-fine-grid" => Ok(Scheme::EulerFineGrid),
            "exact" | "stationary_exact" | "stationary-exact" => Ok(Scheme::StationaryExact),
            other => Err(Error::InvalidParameter(format!("unknown scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::EulerFineGrid => "euler_fine_grid",
            Scheme::StationaryExact => "stationary_exact",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationPlan {
    pub n_obs: usize,
    pub h: f64,
    pub substeps: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl SimulationPlan {
    pub fn new(n_obs: usize, h: f64, substeps: usize, seed: u64, scheme: Scheme) -> Result<Self> {
        if n_obs < 3 {
            return Err(Error::InvalidParameter(format!("need at least 3 observations, got {n_obs}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("lag h must be positive, got {h}")));
        }
        if substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        Ok(SimulationPlan { n_obs, h, substeps, seed, scheme })
    }

    /// Plan with the 2n+3 observations needed for moment index n.
    pub fn for_estimation(n: usize, h: f64, seed: u64, scheme: Scheme) -> Result<Self> {
        Self::new(2 * n + 3, h, DEFAULT_SUBSTEPS, seed, scheme)
    }
}

/// Observations X_0, X_h, ..., X_{Kh}.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    h: f64,
    values: Vec<f64>,
}

impl ObservationSeries {
    pub fn new(h: f64, values: Vec<f64>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("lag h must be positive, got {h}")));
        }
        if values.len() < 3 {
            return Err(Error::InvalidParameter(format!("series needs at least 3 observations, got {}", values.len())));
        }
        if let Some(index) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinitePath { index });
        }
        Ok(ObservationSeries { h, values })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes `#`-prefixed comment lines followed by a `t,x` table.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for line in comments {
            writeln!(out, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x"])?;
        for (k, x) in self.values.iter().enumerate() {
            w.write_record([format!("{}", k as f64 * self.h), format!("{x:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `t,x` table; the lag is taken from the first two time stamps.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "t" || &headers[1] != "x" {
            return Err(Error::Parse(format!(
                "expected header 't,x', found '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Parse(format!("row {}: missing column", row + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))
            };
            times.push(parse(0)?);
            values.push(parse(1)?);
        }
        if times.len() < 2 {
            return Err(Error::Parse(format!("series needs at least 3 observations, got {}", times.len())));
        }
        let h = times[1] - times[0];
        for (k, t) in times.iter().enumerate() {
            let expected = times[0] + k as f64 * h;
            if (t - expected).abs() > 1e-6 * h.max(1.0) * (k as f64).max(1.0) {
                return Err(Error::Parse(format!("time stamps are not equally spaced at row {}", k + 1)));
            }
        }
        Self::new(h, values)
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// sigma^2 Gamma(2H+1) sin(pi H) / pi * theta^{-2H}: the factor relating the
/// autocovariance to the cosine transform of u^{1-2H}/(1+u^2).
fn spectral_prefactor(params: &ModelParams) -> f64 {
    let h = params.h();
    params.sigma * params.sigma * gamma(2.0 * h + 1.0) * (PI * h).sin() / PI * params.theta.powf(-2.0 * h)
}

/// Stationary autocovariance E(Y_0 Y_t) to absolute tolerance `tol`.
pub fn fou_autocovariance(params: &ModelParams, t: f64, tol: f64) -> Result<f64> {
    Ok(fou_autocovariance_estimate(params, t, tol)?.value)
}

/// As [`fou_autocovariance`], with the quadrature error estimate.
pub fn fou_autocovariance_estimate(params: &ModelParams, t: f64, tol: f64) -> Result<QuadEstimate> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("lag t must be finite and >= 0, got {t}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let pref = spectral_prefactor(params);
    let est = cosine_transform(params.theta * t, 1.0 - 2.0 * params.h(), tol / pref).map_err(|e| match e {
        Error::Quadrature { achieved, .. } => Error::Quadrature { tol, achieved: achieved * pref },
        other => other,
    })?;
    Ok(QuadEstimate { value: pref * est.value, error: pref * est.error, evals: est.evals })
}

/// Large-lag expansion 1/2 sigma^2 sum_{n=1}^N theta^{-2n} (2H)_{(2n)} t^{2H-2n},
/// where (x)_{(k)} is the falling factorial.
pub fn fou_autocov_tail_expansion(params: &ModelParams, t: f64, terms: usize) -> f64 {
    let h2 = 2.0 * params.h();
    let mut total = 0.0;
    for n in 1..=terms {
        let k = 2 * n;
        total += params.theta.powi(-(k as i32)) * falling_factorial(h2, k) * t.powf(h2 - k as f64);
    }
    0.5 * params.sigma * params.sigma * total
}

/// Simulator that keeps the factorized covariance between replications.
#[derive(Debug)]
pub struct FouSimulator {
    params: ModelParams,
    plan: SimulationPlan,
    engine: Engine,
}

#[derive(Debug)]
enum Engine {
    Euler(FgnSampler),
    Exact(StationarySampler),
}

impl FouSimulator {
    pub fn new(params: ModelParams, plan: SimulationPlan) -> Result<Self> {
        let engine = match plan.scheme {
            Scheme::EulerFineGrid => {
                let steps = (plan.n_obs - 1) * plan.substeps;
                Engine::Euler(FgnSampler::new(params.hurst, steps, plan.h / plan.substeps as f64)?)
            }
            Scheme::StationaryExact => {
                let tol = DEFAULT_TOL.min(1e-11 * params.stationary_variance());
                let h = plan.h;
                Engine::Exact(StationarySampler::new(plan.n_obs, |k| fou_autocovariance(&params, k as f64 * h, tol))?)
            }
        };
        Ok(FouSimulator { params, plan, engine })
    }

    pub fn plan(&self) -> &SimulationPlan {
        &self.plan
    }

    /// The path for replication `rep` of the plan's master seed.
    pub fn sample(&self, rep: u64) -> Result<ObservationSeries> {
        let mut rng = replication_rng(self.plan.seed, rep);
        let values = match &self.engine {
            Engine::Exact(sampler) => sampler.sample(&mut rng),
            Engine::Euler(sampler) => {
                let noise = sampler.sample(&mut rng);
                let m = self.plan.substeps;
                let dt = self.plan.h / m as f64;
                let decay = 1.0 - self.params.theta * dt;
                let mut out = Vec::with_capacity(self.plan.n_obs);
                out.push(0.0);
                let mut x = 0.0;
                for (j, db) in noise.iter().enumerate() {
                    x = x * decay + self.params.sigma * db;
                    if !x.is_finite() {
                        return Err(Error::NonFinitePath { index: (j + 1) / m });
                    }
                    if (j + 1) % m == 0 {
                        out.push(x);
                    }
                }
                out
            }
        };
        ObservationSeries::new(self.plan.h, values)
    }
}

/// One path, replication 0 of the plan's seed.
pub fn simulate_fou(params: &ModelParams, plan: &SimulationPlan) -> Result<ObservationSeries> {
    FouSimulator::new(*params, *plan)?.sample(0)
}
