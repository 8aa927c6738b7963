//! Fractional Brownian motion on uniform grids.
//!
//! Three exact-in-law samplers are provided: a dense Cholesky factorization of
//! the increment covariance, Davies–Harte circulant embedding, and the Volterra
//! route `B^H_t = ∫ K_H(t, u) dB_u` discretized with cell-averaged kernels. Only
//! the Volterra route couples several Hurst parameters through one Brownian
//! driver.

mod cholesky;
mod circulant;
mod volterra;

pub use cholesky::{cholesky_sample, CholeskySampler, CHOLESKY_SOFT_CAP};
pub use circulant::{circulant_sample, CirculantSampler};
pub use volterra::{brownian_increments, coupled_family, coupled_family_with, volterra_apply, volterra_sample, CoupledBatch, CoupledFamily, CoupledSampler};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Hurst parameter restricted to `[1/2, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HurstParam<T>(T);

impl<T: Real> HurstParam<T> {
    pub fn new(value: T) -> Result<Self> {
        if value >= T::of(0.5) && value < T::one() {
            Ok(Self(value))
        } else {
            Err(Error::HurstOutOfRange(value.f64()))
        }
    }

    pub fn brownian() -> Self {
        Self(T::of(0.5))
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }

    #[inline]
    pub fn is_brownian(self) -> bool {
        self.0 == T::of(0.5)
    }

    /// `H - 1/2`.
    #[inline]
    pub fn excess(self) -> T {
        self.0 - T::of(0.5)
    }
}

/// Uniform discretization `t_k = kΔ` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    horizon: T,
    n_steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(horizon: T, n_steps: usize) -> Result<Self> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("n_steps must be positive".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    /// Grid with a step that is at most `dt`.
    pub fn with_step(horizon: T, dt: T) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidGrid(format!("step must be positive, got {dt}")));
        }
        let n = (horizon / dt).ceil().to_usize().unwrap_or(0).max(1);
        Self::new(horizon, n)
    }

    #[inline]
    pub fn horizon(&self) -> T {
        self.horizon
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn step(&self) -> T {
        self.horizon / T::of(self.n_steps as f64)
    }

    #[inline]
    pub fn node(&self, k: usize) -> T {
        if k == self.n_steps {
            self.horizon
        } else {
            self.step() * T::of(k as f64)
        }
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..=self.n_steps).map(|k| self.node(k)).collect()
    }

    /// Index of the node equal to `t` (up to rounding), if any.
    pub fn index_of(&self, t: T) -> Option<usize> {
        let x = t / self.step();
        let k = x.round();
        let tol = T::of(1e-9) * (T::one() + x.abs());
        if (x - k).abs() <= tol && k >= T::zero() {
            k.to_usize().filter(|&k| k <= self.n_steps)
        } else {
            None
        }
    }
}

/// Which exact-in-law sampler drives uncoupled simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplerKind {
    #[default]
    Circulant,
    Cholesky,
    Volterra,
}

/// A prepared sampler of one Hurst value on one grid.
pub enum FbmGenerator<T> {
    Circulant(CirculantSampler<T>),
    Cholesky(CholeskySampler<T>),
    Volterra(crate::kernels::DiscreteOperator<T>),
}

impl<T: Real> FbmGenerator<T> {
    pub fn new(kind: SamplerKind, hurst: HurstParam<T>, grid: TimeGrid<T>) -> Result<Self> {
        Ok(match kind {
            SamplerKind::Circulant => Self::Circulant(CirculantSampler::new(hurst, grid)?),
            SamplerKind::Cholesky => Self::Cholesky(CholeskySampler::new(hurst, grid)?),
            SamplerKind::Volterra => Self::Volterra(crate::kernels::kernel_matrix(hurst, grid, &crate::quadrature::QuadratureConfig::default())?),
        })
    }

    pub fn sample(&self, stream: &crate::rng::SeedStream) -> FbmPath<T> {
        match self {
            Self::Circulant(s) => s.sample(stream),
            Self::Cholesky(s) => s.sample(stream),
            Self::Volterra(op) => {
                let inc = brownian_increments(&op.grid, stream);
                volterra_apply(op, &inc).expect("increments match the operator grid")
            }
        }
    }
}

/// A sampled path of some process on a grid.
pub trait GridPath<T: Real> {
    fn grid(&self) -> &TimeGrid<T>;
    fn values(&self) -> &[T];
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath<T> {
    pub grid: TimeGrid<T>,
    pub hurst: HurstParam<T>,
    pub values: Vec<T>,
}

impl<T: Real> FbmPath<T> {
    /// Cumulate increments into a path starting at zero.
    pub fn from_increments(grid: TimeGrid<T>, hurst: HurstParam<T>, increments: &[T]) -> Result<Self> {
        if increments.len() != grid.n_steps() {
            return Err(Error::LengthMismatch {
                expected: grid.n_steps(),
                got: increments.len(),
            });
        }
        let mut values = Vec::with_capacity(increments.len() + 1);
        let mut acc = T::zero();
        values.push(acc);
        for &d in increments {
            acc = acc + d;
            values.push(acc);
        }
        Ok(Self { grid, hurst, values })
    }

    pub fn increments(&self) -> Vec<T> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

impl<T: Real> GridPath<T> for FbmPath<T> {
    fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }
    fn values(&self) -> &[T] {
        &self.values
    }
}

/// fBm covariance `R_H(s, t) = ½(s^{2H} + t^{2H} - |t - s|^{2H})`.
pub fn covariance<T: Real>(hurst: HurstParam<T>, s: T, t: T) -> Result<T> {
    if s < T::zero() || t < T::zero() {
        return Err(Error::Domain(format!("covariance needs nonnegative times, got ({s}, {t})")));
    }
    let two_h = T::of(2.0) * hurst.value();
    Ok(T::of(0.5) * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance<T: Real>(hurst: HurstParam<T>, k: usize) -> T {
    let two_h = T::of(2.0) * hurst.value();
    let k = T::of(k as f64);
    let one = T::one();
    T::of(0.5) * ((k + one).powf(two_h) - T::of(2.0) * k.powf(two_h) + (k - one).abs().powf(two_h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn h(x: f64) -> HurstParam<f64> {
        HurstParam::new(x).unwrap()
    }

    #[test]
    fn hurst_range() {
        assert!(HurstParam::new(0.5).is_ok());
        assert!(HurstParam::new(0.999).is_ok());
        assert_eq!(HurstParam::new(0.4), Err(Error::HurstOutOfRange(0.4)));
        assert!(HurstParam::new(1.0).is_err());
        assert!(HurstParam::new(f64::NAN).is_err());
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let n = g.nodes();
        assert_eq!(n[0], 0.0);
        assert_eq!(n[10], 1.0);
        assert!(n.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g.index_of(0.3), Some(3));
        assert_eq!(g.index_of(0.35), None);
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn covariance_examples() {
        assert_abs_diff_eq!(covariance(h(0.5), 0.3, 0.7).unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(covariance(h(0.75), 1.0, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(covariance(h(0.75), 1.0, 2.0).unwrap(), 2f64.sqrt(), epsilon = 1e-12);
        assert!(covariance(h(0.6), -0.1, 1.0).is_err());
        let c32 = covariance(HurstParam::new(0.75f32).unwrap(), 1.0, 2.0).unwrap();
        assert!((c32 - 2f32.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn fgn_lag_one() {
        assert_abs_diff_eq!(fgn_autocovariance(h(0.9), 1), 0.5 * (2f64.powf(1.8) - 2.0), epsilon = 1e-14);
        assert_abs_diff_eq!(fgn_autocovariance(h(0.5), 3), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fgn_autocovariance(h(0.7), 0), 1.0, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn covariance_symmetric_and_diagonal(hv in 0.5f64..0.99, s in 0.0f64..5.0, t in 0.0f64..5.0) {
            let hp = h(hv);
            let a = covariance(hp, s, t).unwrap();
            let b = covariance(hp, t, s).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((covariance(hp, t, t).unwrap() - t.powf(2.0 * hv)).abs() < 1e-12);
        }
    }
}
