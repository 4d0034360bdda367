//! Deterministic reductions and Monte Carlo summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const LEAF: usize = 64;
const PAR_CUTOFF: usize = 1 << 14;

/// Pairwise (cascade) summation with a fixed split structure.
///
/// The tree shape depends only on the slice length, so the result is
/// bit-identical whatever the rayon pool size.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        return xs.iter().fold(0.0, |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    let (lo, hi) = xs.split_at(mid);
    if xs.len() >= PAR_CUTOFF {
        let (a, b) = rayon::join(|| pairwise_sum(lo), || pairwise_sum(hi));
        a + b
    } else {
        pairwise_sum(lo) + pairwise_sum(hi)
    }
}

pub fn pairwise_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

impl Estimate {
    pub fn zero() -> Self {
        Self {
            mean: 0.0,
            stderr: 0.0,
            n: 0,
        }
    }

    /// Sample mean and `s / sqrt(n)` with the unbiased sample deviation.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::zero();
        }
        let mean = pairwise_mean(xs);
        let stderr = if n > 1 {
            let sq: Vec<f64> = xs.par_iter().map(|x| (x - mean) * (x - mean)).collect();
            (pairwise_sum(&sq) / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }

    /// True when `target` lies within `k` standard errors of the mean.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Combined standard error of independent estimates.
pub fn combined_stderr(ses: &[f64]) -> f64 {
    ses.iter().map(|s| s * s).sum::<f64>().sqrt()
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
