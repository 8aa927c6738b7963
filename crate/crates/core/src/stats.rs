//! Small statistics toolkit: moment accumulators, weighted least squares and
//! the two-sample Kolmogorov–Smirnov test, plus an order-preserving parallel
//! map used by the Monte Carlo drivers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Running sum and sum of squares.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAcc<T> {
    pub n: u64,
    pub sum: T,
    pub sum_sq: T,
}

impl<T: Real> MeanAcc<T> {
    pub fn new() -> Self {
        Self {
            n: 0,
            sum: T::zero(),
            sum_sq: T::zero(),
        }
    }

    #[inline]
    pub fn push(&mut self, x: T) {
        self.n += 1;
        self.sum = self.sum + x;
        self.sum_sq = self.sum_sq + x * x;
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.sum = self.sum + other.sum;
        self.sum_sq = self.sum_sq + other.sum_sq;
    }

    pub fn mean(&self) -> T {
        if self.n == 0 {
            return T::zero();
        }
        self.sum / T::of(self.n as f64)
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> T {
        if self.n < 2 {
            return T::zero();
        }
        let n = T::of(self.n as f64);
        let m = self.sum / n;
        ((self.sum_sq - n * m * m) / (n - T::one())).max(T::zero())
    }

    pub fn std_err(&self) -> T {
        if self.n == 0 {
            return T::zero();
        }
        (self.variance() / T::of(self.n as f64)).sqrt()
    }
}

/// Straight-line fit `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit<T> {
    pub slope: T,
    pub intercept: T,
    pub slope_se: T,
    pub ci_lo: T,
    pub ci_hi: T,
    pub n_points: usize,
}

/// Weighted least squares with weights `1/se²`. The slope standard error is
/// the known-variance one, inflated by the reduced chi-square when that
/// exceeds one; the interval is ±1.96 standard errors.
pub fn wls<T: Real>(x: &[T], y: &[T], se: &[T]) -> Result<LineFit<T>> {
    if x.len() != y.len() || x.len() != se.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len().min(se.len()),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Empty("need at least two points"));
    }
    let w: Vec<T> = se.iter().map(|&s| T::one() / (s * s)).collect();
    let sw: T = w.iter().copied().sum();
    let mx = x.iter().zip(&w).map(|(&a, &b)| a * b).sum::<T>() / sw;
    let my = y.iter().zip(&w).map(|(&a, &b)| a * b).sum::<T>() / sw;
    let sxx: T = x.iter().zip(&w).map(|(&a, &b)| b * (a - mx) * (a - mx)).sum();
    if !(sxx > T::zero()) {
        return Err(Error::Domain("degenerate abscissae".into()));
    }
    let sxy: T = x.iter().zip(y).zip(&w).map(|((&a, &c), &b)| b * (a - mx) * (c - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut var = T::one() / sxx;
    if n > 2 {
        let chi2: T = x.iter().zip(y).zip(&w).map(|((&a, &c), &b)| b * (c - intercept - slope * a).powi(2)).sum();
        let red = chi2 / T::of((n - 2) as f64);
        if red > T::one() {
            var = var * red;
        }
    }
    let slope_se = var.sqrt();
    let z = T::of(1.96);
    Ok(LineFit {
        slope,
        intercept,
        slope_se,
        ci_lo: slope - z * slope_se,
        ci_hi: slope + z * slope_se,
        n_points: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic Kolmogorov law
/// (Stephens' small-sample correction).
pub fn ks_two_sample<T: Real>(a: &[T], b: &[T]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("KS sample"));
    }
    let mut x: Vec<f64> = a.iter().map(|v| v.f64()).collect();
    let mut y: Vec<f64> = b.iter().map(|v| v.f64()).collect();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    let en = (n1 * n2 / (n1 + n2)).sqrt();
    let p = kolmogorov_q((en + 0.12 + 0.11 / en) * d);
    Ok(KsResult { statistic: d, p_value: p })
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Map `f` over `0..n` on the rayon pool; results come back in index order so
/// any later reduction is independent of the thread count.
pub fn par_map_indexed<R: Send, F: Fn(usize) -> R + Sync + Send>(n: usize, f: F) -> Vec<R> {
    (0..n).into_par_iter().map(f).collect()
}

/// Split `n_paths` into fixed-size chunks `(first, count)`.
pub fn chunks(n_paths: u64, chunk: usize) -> Vec<(u64, usize)> {
    let chunk = chunk.max(1) as u64;
    (0..n_paths.div_ceil(chunk)).map(|i| (i * chunk, (n_paths - i * chunk).min(chunk) as usize)).collect()
}
