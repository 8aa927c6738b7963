//! First-passage times, Monte Carlo Laplace transforms and the closed forms
//! they are checked against.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fbm::{FbmGenerator, GridPath, HurstParam, SamplerKind, TimeGrid};
use crate::rng::{std_normal, Lane, SeedStream};
use crate::scalar::{norm_cdf, Real};
use crate::sde::ModelSpec;
use crate::stats::{chunks, par_map_indexed, MeanAcc};

/// First-passage time of a path, or censoring at `censor_horizon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingSample<T> {
    pub tau: Option<T>,
    pub censor_horizon: T,
    /// Index `k` of the grid cell `[t_k, t_{k+1}]` containing the crossing.
    pub crossing_index: Option<usize>,
}

impl<T: Real> HittingSample<T> {
    pub fn censored(censor_horizon: T) -> Self {
        Self {
            tau: None,
            censor_horizon,
            crossing_index: None,
        }
    }

    pub fn is_censored(&self) -> bool {
        self.tau.is_none()
    }

    /// `exp(-λ τ^q)`, zero when censored.
    #[inline]
    pub fn laplace_term(&self, lambda: T, time_power: T) -> T {
        match self.tau {
            Some(t) => (-lambda * t.powf(time_power)).exp(),
            None => T::zero(),
        }
    }
}

/// Incremental crossing detector fed one grid node at a time.
struct Detector<'a, T> {
    threshold: T,
    dt: T,
    t_max: T,
    bridge: Option<&'a mut ChaCha8Rng>,
}

enum Step<T> {
    Continue,
    Hit(HittingSample<T>),
    Censored,
}

impl<T: Real> Detector<'_, T> {
    /// Inspect the cell `[t_k, t_{k+1}]` with endpoint values `a`, `b`; `diff`
    /// is the local diffusion coefficient used by the bridge test.
    #[inline]
    fn cell(&mut self, k: usize, a: T, b: T, diff: T) -> Step<T> {
        let t_k = self.dt * T::of(k as f64);
        if t_k >= self.t_max {
            return Step::Censored;
        }
        let m = self.threshold;
        if b >= m {
            let tau = t_k + self.dt * (m - a) / (b - a);
            return if tau <= self.t_max {
                Step::Hit(HittingSample {
                    tau: Some(tau),
                    censor_horizon: self.t_max,
                    crossing_index: Some(k),
                })
            } else {
                Step::Censored
            };
        }
        if let Some(rng) = self.bridge.as_mut() {
            let s2 = diff * diff * self.dt;
            let p = (-T::of(2.0) * (m - a) * (m - b) / s2).exp();
            if p > T::of(1e-300) && T::of(rng.random::<f64>()) < p {
                let tau = t_k + T::of(0.5) * self.dt;
                if tau <= self.t_max {
                    return Step::Hit(HittingSample {
                        tau: Some(tau),
                        censor_horizon: self.t_max,
                        crossing_index: Some(k),
                    });
                }
                return Step::Censored;
            }
        }
        Step::Continue
    }
}

fn check_horizon<T: Real>(grid: &TimeGrid<T>, t_max: T) -> Result<()> {
    if grid.horizon() < t_max * (T::one() - T::of(1e-12)) {
        return Err(Error::Domain(format!("path horizon {} shorter than T_max {t_max}", grid.horizon())));
    }
    Ok(())
}

/// First crossing of `threshold` by the linearly interpolated path.
pub fn first_passage<T: Real, P: GridPath<T>>(path: &P, threshold: T, t_max: T) -> Result<HittingSample<T>> {
    check_horizon(path.grid(), t_max)?;
    Ok(first_passage_values(path.values(), path.grid().step(), threshold, t_max))
}

/// [`first_passage`] on raw node values.
pub fn first_passage_values<T: Real>(values: &[T], dt: T, threshold: T, t_max: T) -> HittingSample<T> {
    if values[0] >= threshold {
        return HittingSample {
            tau: Some(T::zero()),
            censor_horizon: t_max,
            crossing_index: Some(0),
        };
    }
    let mut det = Detector {
        threshold,
        dt,
        t_max,
        bridge: None,
    };
    for (k, w) in values.windows(2).enumerate() {
        match det.cell(k, w[0], w[1], T::one()) {
            Step::Continue => {}
            Step::Hit(h) => return h,
            Step::Censored => break,
        }
    }
    HittingSample::censored(t_max)
}

/// First passage with the Brownian-bridge crossing correction inside cells:
/// a cell with both endpoints below `m` counts as crossed with probability
/// `exp(-2(m - X_k)(m - X_{k+1})/(σ²Δ))`, σ the local diffusion coefficient.
pub fn first_passage_bridge<T: Real>(values: &[T], dt: T, threshold: T, t_max: T, sigma: &dyn Fn(T) -> T, stream: &SeedStream) -> HittingSample<T> {
    if values[0] >= threshold {
        return HittingSample {
            tau: Some(T::zero()),
            censor_horizon: t_max,
            crossing_index: Some(0),
        };
    }
    let mut rng = stream.rng(Lane::Bridge);
    let mut det = Detector {
        threshold,
        dt,
        t_max,
        bridge: Some(&mut rng),
    };
    for (k, w) in values.windows(2).enumerate() {
        match det.cell(k, w[0], w[1], sigma(w[0])) {
            Step::Continue => {}
            Step::Hit(h) => return h,
            Step::Censored => break,
        }
    }
    HittingSample::censored(t_max)
}

/// Integrate the SDE along driver node values and stop at the first crossing.
pub fn passage_along_driver<T: Real>(model: &ModelSpec<T>, dt: T, driver: &[T], threshold: T, t_max: T, bridge: Option<&SeedStream>) -> Result<HittingSample<T>> {
    let increments = driver.windows(2).map(|w| w[1] - w[0]);
    passage_streaming(model, dt, increments, threshold, t_max, bridge)
}

/// Heun integration driven by an increment stream, stopping at the first
/// crossing. At `H = ½` this avoids materializing the path.
pub fn passage_streaming<T: Real, I: Iterator<Item = T>>(
    model: &ModelSpec<T>,
    dt: T,
    increments: I,
    threshold: T,
    t_max: T,
    bridge: Option<&SeedStream>,
) -> Result<HittingSample<T>> {
    let mut x = model.x0;
    if x >= threshold {
        return Ok(HittingSample {
            tau: Some(T::zero()),
            censor_horizon: t_max,
            crossing_index: Some(0),
        });
    }
    let mut rng = bridge.map(|s| s.rng(Lane::Bridge));
    let mut det = Detector {
        threshold,
        dt,
        t_max,
        bridge: rng.as_mut(),
    };
    let half = T::of(0.5);
    let unit = model.is_unit_diffusion();
    for (k, db) in increments.enumerate() {
        let bx = (model.b)(x);
        let next = if unit {
            let pred = x + bx * dt + db;
            x + half * (bx + (model.b)(pred)) * dt + db
        } else {
            let sx = model.sigma_checked(x)?;
            let pred = x + bx * dt + sx * db;
            let sp = model.sigma_checked(pred)?;
            x + half * (bx + (model.b)(pred)) * dt + half * (sx + sp) * db
        };
        if !next.is_finite() {
            return Err(Error::NonFinite { step: k + 1 });
        }
        let diff = if unit || det.bridge.is_none() { T::one() } else { model.sigma_checked(x)?.abs() };
        match det.cell(k, x, next, diff) {
            Step::Continue => {}
            Step::Hit(h) => return Ok(h),
            Step::Censored => return Ok(HittingSample::censored(t_max)),
        }
        x = next;
    }
    Ok(HittingSample::censored(t_max))
}

/// Monte Carlo estimate of `E exp(-λ τ^q)` with censored paths counted as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceEstimate<T> {
    pub lambda: T,
    pub value: T,
    pub std_err: T,
    /// `censored_fraction · exp(-λ T_max^q)`, an upper bound on the censoring bias.
    pub truncation_bound: T,
    pub n_paths: u64,
    pub grid_step: T,
    pub censored_fraction: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceOptions<T> {
    pub threshold: T,
    /// Exponent `q` in `exp(-λ τ^q)`; 1 for the plain Laplace transform.
    pub time_power: T,
    /// Brownian-bridge correction; only honoured at `H = ½`.
    pub bridge: bool,
    pub sampler: SamplerKind,
    pub master_seed: u64,
}

impl<T: Real> Default for LaplaceOptions<T> {
    fn default() -> Self {
        Self {
            threshold: T::one(),
            time_power: T::one(),
            bridge: false,
            sampler: SamplerKind::Circulant,
            master_seed: 0,
        }
    }
}

/// Reduce hitting samples to Laplace estimates, one per `λ`.
pub fn laplace_from_samples<T: Real>(samples: &[HittingSample<T>], lambdas: &[T], time_power: T, t_max: T, grid_step: T) -> Vec<LaplaceEstimate<T>> {
    let n = samples.len() as u64;
    let censored = samples.iter().filter(|s| s.is_censored()).count();
    let frac = if n == 0 { T::zero() } else { T::of(censored as f64 / n as f64) };
    lambdas
        .iter()
        .map(|&lambda| {
            let mut acc = MeanAcc::new();
            for s in samples {
                acc.push(s.laplace_term(lambda, time_power));
            }
            let tail = (-lambda * t_max.powf(time_power)).exp();
            let value = acc.mean();
            if tail > T::of(0.01) * value && censored > 0 {
                log::warn!("censoring weight exp(-λT_max^q) = {tail:e} exceeds 1% of the estimate {value:e} at λ = {lambda}; raise T_max");
            }
            LaplaceEstimate {
                lambda,
                value,
                std_err: acc.std_err(),
                truncation_bound: frac * tail,
                n_paths: n,
                grid_step,
                censored_fraction: frac,
            }
        })
        .collect()
}

const CHUNK: usize = 64;

/// Hitting samples for `n_paths` independent paths of the SDE (or of
/// `x0 + B^H` for [`ModelSpec::pure_noise`]).
pub fn hitting_samples<T: Real>(model: &ModelSpec<T>, hurst: HurstParam<T>, n_paths: u64, grid: TimeGrid<T>, t_max: T, opts: &LaplaceOptions<T>) -> Result<Vec<HittingSample<T>>> {
    check_horizon(&grid, t_max)?;
    let dt = grid.step();
    let seed = opts.master_seed;
    let work = chunks(n_paths, CHUNK);
    let results: Vec<Result<Vec<HittingSample<T>>>> = if hurst.is_brownian() {
        par_map_indexed(work.len(), |c| {
            let (first, count) = work[c];
            (0..count)
                .map(|i| {
                    let stream = SeedStream::new(seed, first + i as u64);
                    let mut rng = stream.rng(Lane::Driver);
                    let sd = dt.sqrt();
                    let inc = (0..grid.n_steps()).map(move |_| T::of(std_normal(&mut rng)) * sd);
                    passage_streaming(model, dt, inc, opts.threshold, t_max, opts.bridge.then_some(&stream))
                })
                .collect()
        })
    } else {
        if opts.bridge {
            log::warn!("bridge correction requested at H = {}; it is only valid at H = 1/2 and is ignored", hurst.value());
        }
        let generator = FbmGenerator::new(opts.sampler, hurst, grid)?;
        par_map_indexed(work.len(), |c| {
            let (first, count) = work[c];
            (0..count)
                .map(|i| {
                    let stream = SeedStream::new(seed, first + i as u64);
                    let path = generator.sample(&stream);
                    passage_along_driver(model, dt, &path.values, opts.threshold, t_max, None)
                })
                .collect()
        })
    };
    let mut out = Vec::with_capacity(n_paths as usize);
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Monte Carlo Laplace transform of the first passage time.
pub fn laplace_mc<T: Real>(
    model: &ModelSpec<T>,
    hurst: HurstParam<T>,
    lambdas: &[T],
    n_paths: u64,
    grid: TimeGrid<T>,
    t_max: T,
    opts: &LaplaceOptions<T>,
) -> Result<Vec<LaplaceEstimate<T>>> {
    if lambdas.iter().any(|&l| l < T::zero()) {
        return Err(Error::Domain("lambda must be nonnegative".into()));
    }
    let samples = hitting_samples(model, hurst, n_paths, grid, t_max, opts)?;
    Ok(laplace_from_samples(&samples, lambdas, opts.time_power, t_max, grid.step()))
}

/// `E exp(-λτ)` for Brownian motion from `x0` to `threshold`.
pub fn bm_laplace_exact<T: Real>(x0: T, threshold: T, lambda: T) -> T {
    if x0 >= threshold {
        return T::one();
    }
    (-(threshold - x0) * (T::of(2.0) * lambda).sqrt()).exp()
}

/// `E exp(-λτ)` for `y0 + μt + B_t` hitting `theta` from below.
pub fn drifted_bm_laplace_exact<T: Real>(y0: T, theta: T, mu: T, lambda: T) -> T {
    if y0 >= theta {
        return T::one();
    }
    let d = theta - y0;
    (mu * d - d * (T::of(2.0) * lambda + mu * mu).sqrt()).exp()
}

/// `E[1{x0 + B^H_s ≤ 1 + η} u_λ(x0 + B^H_s)^p]` with `u_λ(x) = exp(-(1 - x)√(2λ))`.
pub fn truncated_exp_moment<T: Real>(x0: T, eta: T, p: T, s: T, hurst: HurstParam<T>, lambda: T) -> Result<T> {
    if !(s > T::zero()) || !(p > T::zero()) || lambda < T::zero() {
        return Err(Error::Domain(format!("need s > 0, p > 0, λ ≥ 0 (s = {s}, p = {p}, λ = {lambda})")));
    }
    let h = hurst.value();
    let a = (T::of(2.0) * lambda * p * p).sqrt();
    let sh = s.powf(h);
    let v = sh * sh;
    let arg = (T::one() + eta - x0) / sh - sh * a;
    Ok((-(T::one() - x0) * a + v * lambda * p * p).exp() * norm_cdf(arg))
}

/// Closed-form asymptotic exponents and constants for hitting-time Laplace
/// transforms of fBm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticForms<T> {
    /// `exp(-(1 - x0)√(2λ))`, bounding `E exp(-λ τ^{2H})` from above.
    pub dn_bound: T,
    /// Tail exponent of `P(τ^{2H} > t)`.
    pub molchan_exponent: T,
    /// Exponent of `1 - E exp(-λ τ^{2H})` as `λ → 0`.
    pub small_lambda_exponent: T,
    /// Exponent of `-log E exp(-λτ)` as `λ → ∞`.
    pub large_lambda_exponent: T,
    pub large_lambda_constant: T,
    /// `large_lambda_constant · λ^{large_lambda_exponent}`.
    pub large_lambda_log_asymptote: T,
}

pub fn asymptotic_forms<T: Real>(hurst: HurstParam<T>, lambda: T, x0: T) -> AsymptoticForms<T> {
    let h = hurst.value();
    let two_h = T::of(2.0) * h;
    let one = T::one();
    let exponent = two_h / (two_h + one);
    let constant = (one + one / two_h) * h.powf(one / (two_h + one));
    AsymptoticForms {
        dn_bound: bm_laplace_exact(x0, one, lambda),
        molchan_exponent: (one - h) / two_h,
        small_lambda_exponent: one - h,
        large_lambda_exponent: exponent,
        large_lambda_constant: constant,
        large_lambda_log_asymptote: constant * lambda.powf(exponent),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::FbmPath;

    fn h(x: f64) -> HurstParam<f64> {
        HurstParam::new(x).unwrap()
    }

    #[test]
    fn passage_basic_cases() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let below = FbmPath {
            grid: g,
            hurst: h(0.5),
            values: vec![0.0; 11],
        };
        assert!(first_passage(&below, 1.0, 1.0).unwrap().is_censored());
        let at = FbmPath {
            grid: g,
            hurst: h(0.5),
            values: vec![1.0; 11],
        };
        let s = first_passage(&at, 1.0, 1.0).unwrap();
        assert_eq!(s.tau, Some(0.0));
        let ramp = FbmPath {
            grid: g,
            hurst: h(0.5),
            values: (0..=10).map(|k| k as f64 * 0.1).collect(),
        };
        let s = first_passage(&ramp, 0.5, 1.0).unwrap();
        assert!((s.tau.unwrap() - 0.5).abs() < 1e-15);
        let s = first_passage(&ramp, 0.55, 1.0).unwrap();
        assert!((s.tau.unwrap() - 0.55).abs() < 1e-12);
        assert_eq!(s.crossing_index, Some(5));
        assert!(first_passage(&ramp, 0.5, 2.0).is_err());
        // Censoring horizon inside the grid.
        assert!(first_passage(&ramp, 0.75, 0.7).unwrap().is_censored());
    }

    #[test]
    fn closed_forms() {
        assert!((bm_laplace_exact(0.0, 1.0, 0.5) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(bm_laplace_exact(1.0, 1.0, 3.0), 1.0);
        assert_eq!(bm_laplace_exact(0.2, 1.0, 0.0), 1.0);
        assert_eq!(drifted_bm_laplace_exact(0.3, 1.0, 0.0, 0.7), bm_laplace_exact(0.3, 1.0, 0.7));
        assert_eq!(drifted_bm_laplace_exact(1.0, 1.0, 0.4, 0.7), 1.0);
        assert!((drifted_bm_laplace_exact(0.0, 1.0, 1.0, 1.5) - (-1.0f64).exp()).abs() < 1e-15);
        let m = truncated_exp_moment(0.0, 0.0, 1.0, 1.0, h(0.5), 0.5).unwrap();
        assert!((m - 0.303265).abs() < 1e-6);
        let m = truncated_exp_moment(0.0, 10.0, 1.0, 1.0, h(0.7), 0.0).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asymptotic_reductions() {
        let a = asymptotic_forms(h(0.5), 2.0, 0.0);
        assert_eq!(a.molchan_exponent, 0.5);
        assert_eq!(a.large_lambda_exponent, 0.5);
        assert!((a.large_lambda_constant - 2f64.sqrt()).abs() < 1e-15);
        assert!((a.large_lambda_log_asymptote - 2.0).abs() < 1e-15);
        let b = asymptotic_forms(h(0.75), 1.0, 0.0);
        assert!((b.molchan_exponent - 1.0 / 6.0).abs() < 1e-15);
        assert!((b.large_lambda_exponent - 0.6).abs() < 1e-15);
        assert!((b.small_lambda_exponent - 0.25).abs() < 1e-15);
    }

    #[test]
    fn truncated_moment_matches_sampling() {
        let (x0, eta, p, s, hv, lambda) = (0.1, 0.2, 1.5, 0.7, 0.6, 0.8);
        let exact = truncated_exp_moment(x0, eta, p, s, h(hv), lambda).unwrap();
        let z: Vec<f64> = SeedStream::new(5, 0).normals(Lane::Aux, 200_000);
        let sd = s.powf(hv);
        let mut acc = MeanAcc::new();
        for v in z {
            let x = x0 + sd * v;
            acc.push(if x <= 1.0 + eta { (-(1.0 - x) * (2.0 * lambda).sqrt() * p).exp() } else { 0.0 });
        }
        assert!((acc.mean() - exact).abs() < 3.0 * acc.std_err(), "{} vs {exact}", acc.mean());
    }

    #[test]
    fn laplace_is_monotone_and_deterministic() {
        let grid = TimeGrid::new(5.0, 500).unwrap();
        let opts = LaplaceOptions {
            master_seed: 3,
            ..Default::default()
        };
        let m = ModelSpec::pure_noise(0.0);
        let a = laplace_mc(&m, h(0.7), &[0.0, 0.5, 1.0, 2.0], 300, grid, 5.0, &opts).unwrap();
        for w in a.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
        assert!(a[0].value <= 1.0);
        assert!((a[0].value + a[0].censored_fraction - 1.0).abs() < 1e-12);
        let b = laplace_mc(&m, h(0.7), &[0.0, 0.5, 1.0, 2.0], 300, grid, 5.0, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drifted_bm_with_bridge() {
        let (mu, lambda) = (0.5, 1.0);
        let m = ModelSpec::unit(std::sync::Arc::new(move |_| mu), std::sync::Arc::new(|_| 0.0), 0.0);
        let grid = TimeGrid::new(20.0, 20_000).unwrap();
        let opts = LaplaceOptions {
            bridge: true,
            master_seed: 21,
            ..Default::default()
        };
        let est = laplace_mc(&m, h(0.5), &[lambda], 20_000, grid, 20.0, &opts).unwrap()[0];
        let exact = drifted_bm_laplace_exact(0.0, 1.0, mu, lambda);
        assert!((est.value - exact).abs() < 3.0 * est.std_err + 0.003, "{} vs {exact}", est.value);
    }

    #[test]
    fn bridge_stream_matches_stored_path() {
        let grid = TimeGrid::new(4.0, 4000).unwrap();
        let m = ModelSpec::pure_noise(0.0);
        for i in 0..20 {
            let stream = SeedStream::new(9, i);
            let inc = crate::fbm::brownian_increments(&grid, &stream);
            let path = FbmPath::from_increments(grid, h(0.5), &inc).unwrap();
            let a = first_passage_bridge(&path.values, grid.step(), 1.0, 4.0, &|_| 1.0, &stream);
            let b = passage_along_driver(&m, grid.step(), &path.values, 1.0, 4.0, Some(&stream)).unwrap();
            assert_eq!(a.crossing_index, b.crossing_index);
            let c = first_passage_values(&path.values, grid.step(), 1.0, 4.0);
            if let (Some(x), Some(y)) = (a.tau, c.tau) {
                assert!(x <= y);
            }
        }
    }

    #[test]
    fn coupling_reduces_variance() {
        use crate::fbm::CoupledSampler;
        use crate::quadrature::QuadratureConfig;
        let grid = TimeGrid::new(4.0, 256).unwrap();
        let sampler = CoupledSampler::new(&[h(0.5), h(0.75)], grid, &QuadratureConfig::default()).unwrap();
        let n = 2000;
        let batch = sampler.batch(1, 0, n);
        let lambda = 1.0;
        let mut coupled = MeanAcc::new();
        let mut indep = MeanAcc::new();
        for c in 0..n {
            let a = first_passage_values(batch.path(1, c), grid.step(), 1.0, 4.0).laplace_term(lambda, 1.0);
            let b = first_passage_values(batch.path(0, c), grid.step(), 1.0, 4.0).laplace_term(lambda, 1.0);
            let b_other = first_passage_values(batch.path(0, (c + 1) % n), grid.step(), 1.0, 4.0).laplace_term(lambda, 1.0);
            coupled.push(a - b);
            indep.push(a - b_other);
        }
        assert!(coupled.std_err() < 0.6 * indep.std_err(), "{} vs {}", coupled.std_err(), indep.std_err());
    }
}
