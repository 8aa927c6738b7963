//! The Volterra kernel `K_H(θ, σ)` of fractional Brownian motion, its
//! discretization as a lower-triangular operator, and the adjoint `K_H*`.
//!
//! For `θ > σ > 0`
//!
//! ```text
//! K_H(θ, σ) = c_H (H - ½) σ^{½-H} ∫_σ^θ u^{H-½} (u - σ)^{H-3/2} du
//! ```
//!
//! Point values are computed by adaptive quadrature after the substitution
//! `v = (u - σ)^{H-½}`, which absorbs the endpoint singularity together with
//! the `(H - ½)` prefactor. Cell averages for the discrete operator use the
//! closed-form primitive `g(x) = ∫_0^x K_H(1, v) dv`, expressed with
//! regularized incomplete beta functions, and the homogeneity
//! `K_H(cθ, cσ) = c^{H-½} K_H(θ, σ)`.

use std::cell::Cell;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbm::{covariance, HurstParam, TimeGrid};
use crate::quadrature::{integrate, QuadratureConfig};
use crate::scalar::{beta, beta_reg, gamma, Real};

/// Normalizing constant `c_H`; tends to 1 as `H → ½`.
pub fn c_const<T: Real>(hurst: HurstParam<T>) -> T {
    let h = hurst.value();
    let half = T::of(0.5);
    let num = T::of(2.0) * h * gamma(T::of(1.5) - h);
    let den = gamma(h + half) * gamma(T::of(2.0) - T::of(2.0) * h);
    (num / den).sqrt()
}

/// Point value of `K_H(θ, σ)`; zero whenever `σ ≥ θ`.
pub fn kernel_k<T: Real>(hurst: HurstParam<T>, theta: T, sigma: T, q: &QuadratureConfig) -> Result<T> {
    if sigma >= theta {
        return Ok(T::zero());
    }
    if !(sigma > T::zero()) {
        return Err(Error::Domain(format!("kernel needs sigma > 0, got {sigma}")));
    }
    if hurst.is_brownian() {
        return Ok(T::one());
    }
    let a = hurst.excess();
    let p = T::one() / a;
    let upper = (theta - sigma).powf(a);
    let r = integrate(|v: T| (sigma + v.powf(p)).powf(a), T::zero(), upper, q)?;
    Ok(c_const(hurst) * sigma.powf(-a) * r.value)
}

/// Closed-form primitive `g(x) = ∫_0^x K_H(1, v) dv` for `x ∈ [0, 1]`.
pub fn kernel_primitive<T: Real>(hurst: HurstParam<T>, x: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    let x = x.min(T::one());
    if hurst.is_brownian() {
        return x;
    }
    let h = hurst.value();
    let PrimitiveConsts { c, beta_main, gamma_ratio } = PrimitiveConsts::new(hurst);
    let half = T::of(0.5);
    let a1 = T::of(1.5) - h;
    let b1 = h + half;
    let main = beta_main * beta_reg(a1, b1, x);
    main_minus_correction(h, x, main, c, gamma_ratio)
}

struct PrimitiveConsts<T> {
    c: T,
    beta_main: T,
    gamma_ratio: T,
}

impl<T: Real> PrimitiveConsts<T> {
    fn new(hurst: HurstParam<T>) -> Self {
        let h = hurst.value();
        let half = T::of(0.5);
        Self {
            c: c_const(hurst),
            beta_main: beta(T::of(1.5) - h, h + half),
            gamma_ratio: gamma(T::of(2.0) - T::of(2.0) * h) * gamma(h + half) / gamma(T::of(1.5) - h),
        }
    }
}

#[inline]
fn main_minus_correction<T: Real>(h: T, x: T, main: T, c: T, gamma_ratio: T) -> T {
    let half = T::of(0.5);
    let two = T::of(2.0);
    // (H - ½) ∫_x^1 t^{-2H} (1-t)^{H-½} dt, integrated by parts so that only
    // regularized betas with positive parameters appear.
    let tail = if x >= T::one() {
        T::zero()
    } else {
        half * (x.powf(T::one() - two * h) * (T::one() - x).powf(h - half) - gamma_ratio * (T::one() - beta_reg(two - two * h, h - half, x)))
    };
    c / (h + half) * (main - x.powf(h + half) * tail)
}

/// Lower-triangular discretization of `K_H` on a uniform grid.
///
/// Row `k - 1` corresponds to node `t_k` (`k = 1..=n`); column `j` to the cell
/// `[t_j, t_{j+1}]`. Entry `(k, j)` is `Δ^{-1} ∫_{t_j}^{t_{j+1}} K_H(t_k, u) du`.
#[derive(Debug, Clone)]
pub struct DiscreteOperator<T> {
    pub grid: TimeGrid<T>,
    pub hurst: HurstParam<T>,
    pub matrix: Array2<T>,
}

impl<T: Real> DiscreteOperator<T> {
    pub fn horizon(&self) -> T {
        self.grid.horizon()
    }

    /// Node values `Σ_j M[k, j] ξ_j` for `k = 0..=n` (the first is zero).
    pub fn apply(&self, increments: ArrayView1<'_, T>) -> Result<Vec<T>> {
        let n = self.grid.n_steps();
        if increments.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: increments.len(),
            });
        }
        let mut out = Vec::with_capacity(n + 1);
        out.push(T::zero());
        out.extend(self.matrix.dot(&increments).iter().copied());
        Ok(out)
    }

    /// `Σ_j M[k, j]² Δ`, the discrete analogue of `R_H(t_k, t_k)`.
    pub fn row_energy(&self, k: usize) -> T {
        if k == 0 {
            return T::zero();
        }
        let dt = self.grid.step();
        self.matrix.row(k - 1).iter().map(|&m| m * m * dt).sum()
    }
}

/// Cell-averaged kernel matrix. The quadrature configuration is accepted for
/// interface symmetry; entries come from the closed-form primitive.
pub fn kernel_matrix<T: Real>(hurst: HurstParam<T>, grid: TimeGrid<T>, _q: &QuadratureConfig) -> Result<DiscreteOperator<T>> {
    let n = grid.n_steps();
    let mut matrix = Array2::<T>::zeros((n, n));
    if hurst.is_brownian() {
        for k in 0..n {
            for j in 0..=k {
                matrix[[k, j]] = T::one();
            }
        }
        return Ok(DiscreteOperator { grid, hurst, matrix });
    }
    let h = hurst.value();
    let half = T::of(0.5);
    let consts = PrimitiveConsts::new(hurst);
    let a1 = T::of(1.5) - h;
    let b1 = h + half;
    let dt_scale = grid.step().powf(h - half);
    let rows: Vec<Vec<T>> = (1..=n)
        .into_par_iter()
        .map(|k| {
            let kf = T::of(k as f64);
            let row_scale = dt_scale * kf.powf(h + half);
            let mut prev = T::zero();
            (0..k)
                .map(|j| {
                    let x = T::of((j + 1) as f64) / kf;
                    let main = consts.beta_main * beta_reg(a1, b1, x);
                    let g = main_minus_correction(h, x, main, consts.c, consts.gamma_ratio);
                    let cell = (g - prev) * row_scale;
                    prev = g;
                    cell
                })
                .collect()
        })
        .collect();
    for (k, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            matrix[[k, j]] = v;
        }
    }
    Ok(DiscreteOperator { grid, hurst, matrix })
}

/// `K_H* φ` for a step function `φ` (one value per cell), evaluated at the
/// cell midpoints.
///
/// For a cell value `φ_m` on `[t_m, t_{m+1}]` the θ-integral of `∂_θ K_H(θ, s)`
/// telescopes to `K_H(t_{m+1}, s) - K_H(max(t_m, s), s)`.
pub fn adjoint_apply<T: Real>(hurst: HurstParam<T>, phi: &[T], grid: TimeGrid<T>, q: &QuadratureConfig) -> Result<Vec<T>> {
    let n = grid.n_steps();
    if phi.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: phi.len() });
    }
    let dt = grid.step();
    (0..n)
        .map(|i| {
            let s = grid.node(i) + T::of(0.5) * dt;
            let mut acc = T::zero();
            let mut lower = T::zero(); // K_H(s, s) = 0
            for (m, &p) in phi.iter().enumerate().skip(i) {
                let upper = kernel_k(hurst, grid.node(m + 1), s, q)?;
                acc = acc + p * (upper - lower);
                lower = upper;
            }
            Ok(acc)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizationCheck<T> {
    pub residual: T,
    pub quadrature_error: T,
}

/// `|∫_0^{s∧t} K_H(s, u) K_H(t, u) du - R_H(s, t)|` by nested quadrature.
pub fn factorization_residual<T: Real>(hurst: HurstParam<T>, s: T, t: T, q: &QuadratureConfig) -> Result<FactorizationCheck<T>> {
    if !(s > T::zero() && t > T::zero()) {
        return Err(Error::Domain(format!("factorization needs s, t > 0, got ({s}, {t})")));
    }
    let m = s.min(t);
    // u = m·w^p flattens the u^{1-2H} behaviour at the origin.
    let p = T::one() / (T::of(2.0) - T::of(2.0) * hurst.value());
    let inner = QuadratureConfig {
        abs_tol: q.abs_tol * 1e-3,
        rel_tol: q.rel_tol.min(1e-10),
        ..*q
    };
    let failure: Cell<Option<Error>> = Cell::new(None);
    let integrand = |w: T| {
        if w <= T::zero() {
            // Finite limit; the GK nodes never hit the endpoint exactly.
            return T::zero();
        }
        let u = m * w.powf(p);
        let jac = m * p * w.powf(p - T::one());
        let ku = kernel_k(hurst, s, u, &inner).and_then(|a| kernel_k(hurst, t, u, &inner).map(|b| a * b));
        match ku {
            Ok(v) => v * jac,
            Err(e) => {
                failure.set(Some(e));
                T::zero()
            }
        }
    };
    let r = integrate(integrand, T::zero(), T::one(), q)?;
    if let Some(e) = failure.take() {
        return Err(e);
    }
    let exact = covariance(hurst, s, t)?;
    Ok(FactorizationCheck {
        residual: (r.value - exact).abs(),
        quadrature_error: r.error,
    })
}

/// Apply the operator to an owned increment vector.
pub fn apply_owned<T: Real>(op: &DiscreteOperator<T>, increments: &[T]) -> Result<Vec<T>> {
    op.apply(Array1::from(increments.to_vec()).view())
}
