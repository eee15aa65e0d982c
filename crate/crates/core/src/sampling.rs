//! Deterministic low-discrepancy samples.
//!
//! Points come from the Halton sequence; the seed selects the starting index
//! so different seeds give disjoint, equally well spread point sets.

use statrs::distribution::{ContinuousCDF, Normal};

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `n` points of the `dim`-dimensional Halton sequence in `(0, 1)^dim`.
pub fn halton(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "Halton sampling supports up to {} dimensions", PRIMES.len());
    (0..n as u64)
        .map(|k| {
            let i = k + 1 + seed.wrapping_mul(7919);
            PRIMES[..dim].iter().map(|&b| radical_inverse(i, b)).collect()
        })
        .collect()
}

/// `n` points spread over the shell `r_inner < |e| <= r_outer` in `R^dim`,
/// uniform in volume.
pub fn shell(dim: usize, r_inner: f64, r_outer: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let normal = Normal::standard();
    let d = dim as f64;
    let (lo, hi) = (r_inner.powf(d), r_outer.powf(d));
    halton(dim + 1, n, seed)
        .into_iter()
        .map(|u| {
            let mut dir: Vec<f64> = u[..dim].iter().map(|&p| normal.inverse_cdf(p)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let radius = (lo + u[dim] * (hi - lo)).powf(1.0 / d);
            let scale = if norm > 0.0 { radius / norm } else { 0.0 };
            dir.iter_mut().for_each(|v| *v *= scale);
            if norm == 0.0 {
                dir[0] = radius;
            }
            dir
        })
        .collect()
}

/// Points of a box `[lo_i, hi_i]`.
pub fn in_box(lo: &[f64], hi: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
    halton(lo.len(), n, seed)
        .into_iter()
        .map(|u| u.iter().zip(lo.iter().zip(hi)).map(|(p, (a, b))| a + p * (b - a)).collect())
        .collect()
}
