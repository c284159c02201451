//! Fractional Gaussian noise and fractional Brownian motion on a uniform grid.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::StationarySampler;
use crate::rng::replication_rng;

/// Hurst exponent, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Hurst(f64);

impl Hurst {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Hurst(value))
        } else {
            Err(Error::InvalidParameter(format!("Hurst exponent must lie in (0, 1), got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// n increments of step h, drawn from the stream selected by `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseGrid {
    pub n: usize,
    pub h: f64,
    pub seed: u64,
}

impl NoiseGrid {
    pub fn new(n: usize, h: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("noise grid needs n >= 1".into()));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("step h must be positive, got {h}")));
        }
        Ok(NoiseGrid { n, h, seed })
    }
}

pub type GaussianVector = Vec<f64>;

/// Unit-step fGN autocovariance 1/2 (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}).
pub fn fgn_autocovariance(hurst: Hurst, k: i64) -> f64 {
    let k = k.unsigned_abs() as f64;
    let a = 2.0 * hurst.value();
    if k == 0.0 {
        return 1.0;
    }
    0.5 * ((k + 1.0).powf(a) - 2.0 * k.powf(a) + (k - 1.0).powf(a))
}

/// Reusable sampler for n fGN increments of step h.
#[derive(Debug)]
pub struct FgnSampler {
    inner: StationarySampler,
}

impl FgnSampler {
    pub fn new(hurst: Hurst, n: usize, h: f64) -> Result<Self> {
        NoiseGrid::new(n, h, 0)?;
        let scale = h.powf(2.0 * hurst.value());
        let inner = StationarySampler::new(n, |k| Ok(scale * fgn_autocovariance(hurst, k as i64)))?;
        Ok(FgnSampler { inner })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GaussianVector {
        self.inner.sample(rng)
    }
}

/// One draw of (B_h - B_0, ..., B_{nh} - B_{(n-1)h}).
pub fn sample_fgn(hurst: Hurst, grid: &NoiseGrid) -> Result<GaussianVector> {
    let sampler = FgnSampler::new(hurst, grid.n, grid.h)?;
    let out = sampler.sample(&mut replication_rng(grid.seed, 0));
    check_finite(&out)?;
    Ok(out)
}

/// One draw of (B_h, ..., B_{nh}); B_0 = 0 is implicit.
pub fn sample_fbm(hurst: Hurst, grid: &NoiseGrid) -> Result<GaussianVector> {
    let mut path = sample_fgn(hurst, grid)?;
    let mut acc = 0.0;
    for x in path.iter_mut() {
        acc += *x;
        *x = acc;
    }
    Ok(path)
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinitePath { index }),
        None => Ok(()),
    }
}
