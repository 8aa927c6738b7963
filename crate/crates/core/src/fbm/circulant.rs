use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{fgn_autocovariance, CholeskySampler, FbmPath, HurstParam, TimeGrid};
use crate::error::Result;
use crate::rng::{std_normal, Lane, SeedStream};
use crate::scalar::Real;

enum Backend<T> {
    Embedding { sqrt_eig: Vec<f64>, fft: Arc<dyn Fft<f64>>, padded: usize },
    Fallback(CholeskySampler<T>),
}

/// Davies–Harte sampler: the fGn covariance is embedded in a circulant matrix
/// of size `2N` (`N` the grid size rounded up to a power of two) whose
/// eigenvalues come from one FFT.
pub struct CirculantSampler<T> {
    grid: TimeGrid<T>,
    hurst: HurstParam<T>,
    backend: Backend<T>,
}

impl<T: Real> CirculantSampler<T> {
    pub fn new(hurst: HurstParam<T>, grid: TimeGrid<T>) -> Result<Self> {
        let padded = grid.n_steps().next_power_of_two();
        let m = 2 * padded;
        let acf: Vec<f64> = (0..=padded).map(|k| fgn_autocovariance(hurst, k).f64()).collect();
        let mut row: Vec<Complex64> = (0..m).map(|j| Complex64::new(if j <= padded { acf[j] } else { acf[m - j] }, 0.0)).collect();
        let fft = FftPlanner::<f64>::new().plan_fft_forward(m);
        fft.process(&mut row);
        let max_eig = row.iter().map(|c| c.re).fold(0.0f64, f64::max);
        let min_eig = row.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 * max_eig {
            log::warn!("negative circulant eigenvalue {min_eig:e} for H = {}; falling back to Cholesky", hurst.value());
            return Ok(Self {
                grid,
                hurst,
                backend: Backend::Fallback(CholeskySampler::new(hurst, grid)?),
            });
        }
        let sqrt_eig = row.iter().map(|c| (c.re.max(0.0) / m as f64).sqrt()).collect();
        Ok(Self {
            grid,
            hurst,
            backend: Backend::Embedding { sqrt_eig, fft, padded },
        })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    /// Unit-variance fGn scaled to the grid step, `n_steps` values.
    pub fn increments(&self, stream: &SeedStream) -> Vec<T> {
        match &self.backend {
            Backend::Fallback(chol) => chol.sample(stream).increments(),
            Backend::Embedding { sqrt_eig, fft, padded } => {
                let n = *padded;
                let m = 2 * n;
                let mut rng = stream.rng(Lane::Driver);
                let mut w = vec![Complex64::new(0.0, 0.0); m];
                w[0] = Complex64::new(sqrt_eig[0] * std_normal(&mut rng), 0.0);
                w[n] = Complex64::new(sqrt_eig[n] * std_normal(&mut rng), 0.0);
                let half = std::f64::consts::FRAC_1_SQRT_2;
                for k in 1..n {
                    let a = std_normal(&mut rng);
                    let b = std_normal(&mut rng);
                    let c = Complex64::new(a, b) * (sqrt_eig[k] * half);
                    w[k] = c;
                    w[m - k] = c.conj();
                }
                fft.process(&mut w);
                let scale = self.grid.step().f64().powf(self.hurst.value().f64());
                w.iter().take(self.grid.n_steps()).map(|c| T::of(c.re * scale)).collect()
            }
        }
    }

    pub fn sample(&self, stream: &SeedStream) -> FbmPath<T> {
        let inc = self.increments(stream);
        FbmPath::from_increments(self.grid, self.hurst, &inc).expect("length matches grid")
    }
}

/// One-shot circulant sample; prefer [`CirculantSampler`] for many paths.
pub fn circulant_sample<T: Real>(hurst: HurstParam<T>, grid: TimeGrid<T>, stream: &SeedStream) -> Result<FbmPath<T>> {
    Ok(CirculantSampler::new(hurst, grid)?.sample(stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pads_non_power_of_two() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let p = circulant_sample(HurstParam::new(0.7).unwrap(), g, &SeedStream::new(1, 2)).unwrap();
        assert_eq!(p.values.len(), 101);
        assert_eq!(p.values[0], 0.0);
    }

    #[test]
    fn brownian_increment_variance() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let s = CirculantSampler::new(HurstParam::brownian(), g).unwrap();
        let n = 20_000;
        let mut sum2 = 0.0;
        for i in 0..n {
            let inc: Vec<f64> = s.increments(&SeedStream::new(5, i));
            sum2 += inc.iter().map(|x| x * x).sum::<f64>();
        }
        let var = sum2 / (16 * n) as f64;
        let se = (2.0f64 / (16 * n) as f64).sqrt() / 16.0;
        assert!((var - 1.0 / 16.0).abs() < 4.0 * se, "var {var}");
    }

    #[test]
    fn f32_path() {
        let g = TimeGrid::new(1.0f32, 64).unwrap();
        let p = circulant_sample(HurstParam::new(0.75f32).unwrap(), g, &SeedStream::new(1, 0)).unwrap();
        assert!(p.values.iter().all(|v| v.is_finite()));
    }
}
