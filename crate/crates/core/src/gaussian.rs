//! Exact sampling of stationary Gaussian sequences with a given
//! autocovariance, by circulant embedding with a dense Cholesky fallback.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Largest size for which a failed embedding falls back to dense Cholesky.
pub const CHOLESKY_LIMIT: usize = 2048;

/// Sizes at or below this always use Cholesky.
const SMALL: usize = 16;

/// Relative size of a negative eigenvalue that is treated as rounding noise.
const EIGEN_CLAMP: f64 = 1e-10;

enum Method {
    Circulant { sqrt_eig: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Cholesky(DMatrix<f64>),
}

/// Sampler for (Z_0, ..., Z_{n-1}) with Cov(Z_i, Z_j) = r(|i - j|).
pub struct StationarySampler {
    n: usize,
    method: Method,
}

impl std::fmt::Debug for StationarySampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.method {
            Method::Circulant { ref sqrt_eig, .. } => format!("circulant({})", sqrt_eig.len()),
            Method::Cholesky(_) => "cholesky".to_string(),
        };
        f.debug_struct("StationarySampler").field("n", &self.n).field("method", &kind).finish()
    }
}

impl StationarySampler {
    /// Builds a sampler from the autocovariance `acv(k)`, k = 0, 1, ...
    ///
    /// The circulant embedding is tried at sizes 2(n-1), 4(n-1) and 8(n-1).
    /// If none is non-negative definite the dense Toeplitz matrix is factored
    /// when n is at most [`CHOLESKY_LIMIT`].
    pub fn new<F>(n: usize, acv: F) -> Result<Self>
    where
        F: Fn(usize) -> Result<f64> + Sync,
    {
        if n == 0 {
            return Err(Error::InvalidParameter("sample size must be at least 1".into()));
        }
        if n <= SMALL {
            let r = lags(n, &acv)?;
            return Self::cholesky(r);
        }
        let mut r = lags(n, &acv)?;
        let mut worst = f64::INFINITY;
        for factor in [1usize, 2, 4] {
            let half = factor * (n - 1);
            if r.len() < half + 1 {
                let extra: Result<Vec<f64>> = (r.len()..=half).into_par_iter().map(&acv).collect();
                r.extend(extra?);
            }
            match embed(&r[..=half]) {
                Ok(method) => return Ok(StationarySampler { n, method }),
                Err(min_eig) => worst = min_eig,
            }
        }
        if n <= CHOLESKY_LIMIT {
            r.truncate(n);
            Self::cholesky(r)
        } else {
            Err(Error::Factorization { min_eigenvalue: worst })
        }
    }

    fn cholesky(r: Vec<f64>) -> Result<Self> {
        let n = r.len();
        let cov = DMatrix::from_fn(n, n, |i, j| r[i.abs_diff(j)]);
        let chol = cov.cholesky().ok_or(Error::Cholesky { size: n })?;
        Ok(StationarySampler { n, method: Method::Cholesky(chol.unpack()) })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn uses_circulant(&self) -> bool {
        matches!(self.method, Method::Circulant { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.method {
            Method::Cholesky(l) => {
                let z = DVector::from_fn(self.n, |_, _| rng.sample::<f64, _>(StandardNormal));
                (l * z).iter().copied().collect()
            }
            Method::Circulant { sqrt_eig, fft } => {
                let mut buf: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|&a| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(a * re, a * im)
                    })
                    .collect();
                fft.process(&mut buf);
                buf.iter().take(self.n).map(|z| z.re).collect()
            }
        }
    }
}

fn lags<F>(n: usize, acv: &F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    (0..n).into_par_iter().map(acv).collect()
}

/// Eigenvalues of the circulant with first row r_0..r_half, r_{half-1}..r_1.
/// Returns the scaled square roots, or the most negative eigenvalue.
fn embed(r: &[f64]) -> std::result::Result<Method, f64> {
    let half = r.len() - 1;
    let m = 2 * half;
    let mut row: Vec<Complex64> =
        (0..m).map(|j| Complex64::new(if j <= half { r[j] } else { r[m - j] }, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut row);
    let max = row.iter().map(|z| z.re).fold(0.0, f64::max);
    let min = row.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if min < -EIGEN_CLAMP * max {
        return Err(min);
    }
    let scale = 1.0 / m as f64;
    let sqrt_eig = row.iter().map(|z| (z.re.max(0.0) * scale).sqrt()).collect();
    let fft = planner.plan_fft_forward(m);
    Ok(Method::Circulant { sqrt_eig, fft })
}
