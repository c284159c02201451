//! Small special-function helpers not covered by `statrs`.

pub use statrs::function::gamma::gamma;

/// Falling factorial x (x-1) ... (x-k+1); equals 1 for k = 0.
pub fn falling_factorial(x: f64, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (x - j as f64))
}

/// Binomial coefficient C(x, k) for real x.
pub fn binomial(x: f64, k: usize) -> f64 {
    let mut out = 1.0;
    for j in 0..k {
        out *= (x - j as f64) / (j + 1) as f64;
    }
    out
}

// B_{2k} / (2k)! for k = 1..=8
const BERNOULLI_OVER_FACTORIAL: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30240.0,
    -1.0 / 1209600.0,
    1.0 / 47900160.0,
    -691.0 / 1307674368000.0,
    1.0 / 74724249600.0,
    -3617.0 / 10670622842880000.0,
];

/// Hurwitz zeta function sum_{j>=0} (a + j)^{-s} for s > 1, a > 0.
///
/// Euler-Maclaurin summation after shifting the argument past 16.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    debug_assert!(s > 1.0 && a > 0.0);
    let mut head = 0.0;
    let mut x = a;
    while x < 16.0 {
        head += x.powf(-s);
        x += 1.0;
    }
    let mut tail = x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    // rising factorial s (s+1) ... (s+2k-2) times x^{-s-2k+1}
    let mut rising = s;
    let mut power = x.powf(-s - 1.0);
    let inv_x2 = 1.0 / (x * x);
    for (k, coeff) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        if k > 0 {
            let m = (2 * k) as f64;
            rising *= (s + m - 1.0) * (s + m);
            power *= inv_x2;
        }
        tail += coeff * rising * power;
    }
    head + tail
}
