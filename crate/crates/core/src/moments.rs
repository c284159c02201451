//! Second-moment statistics of an observation series at lags 0, h and 2h.

use crate::error::{Error, Result};
use crate::fou::ObservationSeries;

/// (eta0, eta1, eta2): sample moments or their population counterparts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentVector {
    pub eta0: f64,
    pub eta1: f64,
    pub eta2: f64,
}

impl MomentVector {
    pub fn new(eta0: f64, eta1: f64, eta2: f64) -> Self {
        MomentVector { eta0, eta1, eta2 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.eta0, self.eta1, self.eta2]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        MomentVector::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|x| x.is_finite())
    }
}

/// Sum of products with error-free transformations (Ogita, Rump and Oishi's
/// Dot2): the result is as accurate as if computed in twice the working
/// precision and then rounded.
#[derive(Debug, Default, Clone, Copy)]
struct Dot2 {
    sum: f64,
    comp: f64,
}

impl Dot2 {
    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let p_err = a.mul_add(b, -p);
        let s = self.sum + p;
        let z = s - self.sum;
        let s_err = (self.sum - (s - z)) + (p - z);
        self.sum = s;
        self.comp += p_err + s_err;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// eta0 = 1/n sum_{k=1}^n X_k^2, eta1 = 1/n sum X_k X_{k+1},
/// eta2 = 1/n sum X_{2k} X_{2k+2}, with X_k the k-th observation.
pub fn compute_moments(series: &ObservationSeries, n: usize) -> Result<MomentVector> {
    let x = series.values();
    let required = 2 * n + 3;
    if n == 0 {
        return Err(Error::InvalidParameter("moment index n must be at least 1".into()));
    }
    if x.len() < required {
        return Err(Error::SeriesTooShort { n, required, got: x.len() });
    }
    let (mut s0, mut s1, mut s2) = (Dot2::default(), Dot2::default(), Dot2::default());
    for k in 1..=n {
        s0.add_product(x[k], x[k]);
        s1.add_product(x[k], x[k + 1]);
        s2.add_product(x[2 * k], x[2 * k + 2]);
    }
    let nf = n as f64;
    Ok(MomentVector::new(s0.value() / nf, s1.value() / nf, s2.value() / nf))
}

/// Largest n usable with a series of the given length.
pub fn max_moment_index(len: usize) -> usize {
    len.saturating_sub(3) / 2
}
