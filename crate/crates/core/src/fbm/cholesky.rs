use nalgebra::DMatrix;

use super::{fgn_autocovariance, FbmPath, HurstParam, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::{Lane, SeedStream};
use crate::scalar::Real;

/// Above this many steps the O(n³) factorization stops being practical.
pub const CHOLESKY_SOFT_CAP: usize = 1 << 13;

const RELATIVE_JITTER: f64 = 1e-12;

/// Cached Cholesky factor of the fGn increment covariance on a grid.
#[derive(Debug, Clone)]
pub struct CholeskySampler<T> {
    grid: TimeGrid<T>,
    hurst: HurstParam<T>,
    // Row-major lower-triangular factor, row k has k + 1 entries.
    factor: Vec<T>,
}

impl<T: Real> CholeskySampler<T> {
    pub fn new(hurst: HurstParam<T>, grid: TimeGrid<T>) -> Result<Self> {
        let n = grid.n_steps();
        if n > CHOLESKY_SOFT_CAP {
            log::warn!("Cholesky sampler with n = {n} > {CHOLESKY_SOFT_CAP}; the circulant sampler is much faster");
        }
        let scale = grid.step().f64().powf(2.0 * hurst.value().f64());
        let acf: Vec<f64> = (0..n).map(|k| fgn_autocovariance(hurst, k).f64() * scale).collect();
        let cov = DMatrix::from_fn(n, n, |i, j| acf[i.abs_diff(j)]);
        let chol = match cov.clone().cholesky() {
            Some(c) => c,
            None => {
                let jitter = RELATIVE_JITTER * acf[0];
                log::warn!("increment covariance not numerically PD; retrying with jitter {jitter:e}");
                let jittered = cov + DMatrix::identity(n, n) * jitter;
                jittered.cholesky().ok_or(Error::Cholesky { n, jitter })?
            }
        };
        let l = chol.l();
        let mut factor = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                factor.push(T::of(l[(i, j)]));
            }
        }
        Ok(Self { grid, hurst, factor })
    }

    pub fn sample(&self, stream: &SeedStream) -> FbmPath<T> {
        let n = self.grid.n_steps();
        let z: Vec<T> = stream.normals(Lane::Driver, n);
        let mut inc = Vec::with_capacity(n);
        let mut offset = 0;
        for i in 0..n {
            let row = &self.factor[offset..offset + i + 1];
            inc.push(row.iter().zip(&z).fold(T::zero(), |acc, (&l, &x)| acc + l * x));
            offset += i + 1;
        }
        FbmPath::from_increments(self.grid, self.hurst, &inc).expect("length matches grid")
    }
}

/// One-shot Cholesky sample; prefer [`CholeskySampler`] for many paths.
pub fn cholesky_sample<T: Real>(hurst: HurstParam<T>, grid: TimeGrid<T>, stream: &SeedStream) -> Result<FbmPath<T>> {
    Ok(CholeskySampler::new(hurst, grid)?.sample(stream))
}
