//! Histogram estimates of the law of `X_t`, the Gaussian upper bound on its
//! density with a fitted growth constant, discrete Hölder norms and their
//! tail bound for fBm.

use crate::error::{Error, Result};
use crate::fbm::{FbmGenerator, HurstParam, SamplerKind, TimeGrid};
use crate::rng::SeedStream;
use crate::scalar::{norm_cdf, Real};
use crate::sde::{heun_into, ModelSpec};
use crate::stats::{chunks, par_map_indexed};

/// Equal-width bins on `[lo, hi]`; samples outside land in two overflow bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSpec<T> {
    pub lo: T,
    pub hi: T,
    pub n_bins: usize,
}

impl<T: Real> BinSpec<T> {
    pub const DEFAULT_BINS: usize = 80;

    pub fn new(lo: T, hi: T, n_bins: usize) -> Result<Self> {
        if !(hi > lo) || n_bins == 0 {
            return Err(Error::InvalidGrid(format!("bins need lo < hi and n ≥ 1 (got [{lo}, {hi}], {n_bins})")));
        }
        Ok(Self { lo, hi, n_bins })
    }

    /// 80 bins over `x0 ± 6‖σ‖∞ t^H`.
    pub fn standard(x0: T, sigma_sup: T, t: T, hurst: HurstParam<T>) -> Self {
        let w = T::of(6.0) * sigma_sup * t.powf(hurst.value());
        Self {
            lo: x0 - w,
            hi: x0 + w,
            n_bins: Self::DEFAULT_BINS,
        }
    }

    pub fn width(&self) -> T {
        (self.hi - self.lo) / T::of(self.n_bins as f64)
    }

    pub fn edges(&self) -> Vec<T> {
        let w = self.width();
        (0..=self.n_bins).map(|i| if i == self.n_bins { self.hi } else { self.lo + w * T::of(i as f64) }).collect()
    }
}

/// Histogram of `X_t` with binomial standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate<T> {
    pub t: T,
    pub hurst: HurstParam<T>,
    pub edges: Vec<T>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub n_paths: u64,
    pub density: Vec<T>,
    pub std_err: Vec<T>,
}

impl<T: Real> DensityEstimate<T> {
    pub fn from_samples(t: T, hurst: HurstParam<T>, samples: &[T], bins: BinSpec<T>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("density samples"));
        }
        let mut counts = vec![0u64; bins.n_bins];
        let (mut under, mut over) = (0u64, 0u64);
        let w = bins.width();
        for &x in samples {
            if x < bins.lo {
                under += 1;
            } else if x >= bins.hi {
                over += 1;
            } else {
                let j = ((x - bins.lo) / w).to_usize().unwrap_or(0).min(bins.n_bins - 1);
                counts[j] += 1;
            }
        }
        Ok(Self::from_counts(t, hurst, bins.edges(), counts, under, over))
    }

    pub fn from_counts(t: T, hurst: HurstParam<T>, edges: Vec<T>, counts: Vec<u64>, underflow: u64, overflow: u64) -> Self {
        let n_paths = counts.iter().sum::<u64>() + underflow + overflow;
        let n = T::of(n_paths.max(1) as f64);
        let mut density = Vec::with_capacity(counts.len());
        let mut std_err = Vec::with_capacity(counts.len());
        for (j, &c) in counts.iter().enumerate() {
            let w = edges[j + 1] - edges[j];
            let p = T::of(c as f64) / n;
            density.push(p / w);
            std_err.push((p * (T::one() - p) / n).sqrt() / w);
        }
        Self {
            t,
            hurst,
            edges,
            counts,
            underflow,
            overflow,
            n_paths,
            density,
            std_err,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin(&self, j: usize) -> (T, T) {
        (self.edges[j], self.edges[j + 1])
    }

    /// Probability mass including the overflow bins.
    pub fn total_mass(&self) -> T {
        let inner: T = self.density.iter().enumerate().map(|(j, &d)| d * (self.edges[j + 1] - self.edges[j])).sum();
        inner + T::of((self.underflow + self.overflow) as f64) / T::of(self.n_paths.max(1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DensityOptions {
    pub sampler: SamplerKind,
    pub master_seed: u64,
}

const CHUNK: usize = 64;

/// Simulate `n_paths` solutions on `grid` and return, for each entry of
/// `times` (grid nodes), the sampled `X_t`.
pub fn simulate_marginals<T: Real>(model: &ModelSpec<T>, hurst: HurstParam<T>, times: &[T], n_paths: u64, grid: TimeGrid<T>, opts: &DensityOptions) -> Result<Vec<Vec<T>>> {
    let idx = times
        .iter()
        .map(|&t| {
            grid.index_of(t)
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::InvalidGrid(format!("t = {t} is not a positive node of the grid")))
        })
        .collect::<Result<Vec<_>>>()?;
    let generator = FbmGenerator::new(opts.sampler, hurst, grid)?;
    let dt = grid.step();
    let work = chunks(n_paths, CHUNK);
    let parts: Vec<Result<Vec<Vec<T>>>> = par_map_indexed(work.len(), |c| {
        let (first, count) = work[c];
        let mut out = vec![Vec::with_capacity(count); idx.len()];
        let mut buf = Vec::new();
        for i in 0..count {
            let path = generator.sample(&SeedStream::new(opts.master_seed, first + i as u64));
            heun_into(model, dt, &path.values, &mut buf)?;
            for (o, &k) in out.iter_mut().zip(&idx) {
                o.push(buf[k]);
            }
        }
        Ok(out)
    });
    let mut merged = vec![Vec::with_capacity(n_paths as usize); idx.len()];
    for p in parts {
        for (m, v) in merged.iter_mut().zip(p?) {
            m.extend(v);
        }
    }
    Ok(merged)
}

/// Histograms of `X_t` at every entry of `times`, with the standard bins.
pub fn estimate_densities<T: Real>(
    model: &ModelSpec<T>,
    hurst: HurstParam<T>,
    times: &[T],
    n_paths: u64,
    grid: TimeGrid<T>,
    opts: &DensityOptions,
) -> Result<Vec<DensityEstimate<T>>> {
    let samples = simulate_marginals(model, hurst, times, n_paths, grid, opts)?;
    times
        .iter()
        .zip(&samples)
        .map(|(&t, s)| DensityEstimate::from_samples(t, hurst, s, BinSpec::standard(model.x0, model.sigma_sup, t, hurst)))
        .collect()
}

/// Histogram of `X_t` for one time.
pub fn estimate_density<T: Real>(
    model: &ModelSpec<T>,
    hurst: HurstParam<T>,
    t: T,
    n_paths: u64,
    grid: TimeGrid<T>,
    bins: BinSpec<T>,
    opts: &DensityOptions,
) -> Result<DensityEstimate<T>> {
    let samples = simulate_marginals(model, hurst, &[t], n_paths, grid, opts)?;
    DensityEstimate::from_samples(t, hurst, &samples[0], bins)
}

/// `e^{Ct}/√(2π t^{2H}) · exp(-(x - x0)²/(2‖σ‖∞² t^{2H}))`.
pub fn gaussian_bound<T: Real>(x: T, t: T, hurst: HurstParam<T>, x0: T, sigma_sup: T, c: T) -> Result<T> {
    if !(t > T::zero()) {
        return Err(Error::Domain(format!("density bound needs t > 0, got {t}")));
    }
    let v = t.powf(T::of(2.0) * hurst.value());
    let d = x - x0;
    Ok((c * t).exp() / (T::of(2.0) * T::PI() * v).sqrt() * (-(d * d) / (T::of(2.0) * sigma_sup * sigma_sup * v)).exp())
}

/// Average of [`gaussian_bound`] over `[lo, hi]`, exact through the normal cdf.
pub fn gaussian_bound_bin<T: Real>(lo: T, hi: T, t: T, hurst: HurstParam<T>, x0: T, sigma_sup: T, c: T) -> Result<T> {
    if !(t > T::zero()) {
        return Err(Error::Domain(format!("density bound needs t > 0, got {t}")));
    }
    if !(hi > lo) {
        return Err(Error::Domain(format!("empty bin [{lo}, {hi}]")));
    }
    let s = sigma_sup * t.powf(hurst.value());
    let (a, b) = ((lo - x0) / s, (hi - x0) / s);
    // Evaluate in the lower tail to avoid cancellation.
    let mass = if a > T::zero() { norm_cdf(-a) - norm_cdf(-b) } else { norm_cdf(b) - norm_cdf(a) };
    Ok((c * t).exp() * sigma_sup * mass / (hi - lo))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinMargin<T> {
    pub t: T,
    pub bin_lo: T,
    pub bin_hi: T,
    pub density: T,
    pub std_err: T,
    pub bound: T,
    /// `bound + 3·std_err - density`.
    pub margin: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBoundFit<T> {
    pub c: T,
    pub sigma_sup: T,
    pub x0: T,
    pub hurst: HurstParam<T>,
    /// `(t, bin index)` of the constraint that fixes `C`, if any bin binds.
    pub binding: Option<(T, usize)>,
    pub margins: Vec<BinMargin<T>>,
}

impl<T: Real> GaussianBoundFit<T> {
    pub fn all_bins_pass(&self) -> bool {
        self.margins.iter().all(|m| m.margin >= -T::of(1e-12) * m.bound.max(m.density))
    }
}

/// Smallest `C ≥ 0` with `bound ≥ density - 3·std_err` in every bin at every
/// time, comparing against the bin-averaged bound.
pub fn fit_min_c<T: Real>(estimates: &[DensityEstimate<T>], sigma_sup: T, x0: T) -> Result<GaussianBoundFit<T>> {
    if estimates.len() < 2 {
        return Err(Error::Empty("need density estimates at two or more times"));
    }
    let hurst = estimates[0].hurst;
    let three = T::of(3.0);
    let mut c = T::zero();
    let mut binding = None;
    for e in estimates {
        for j in 0..e.n_bins() {
            let need = e.density[j] - three * e.std_err[j];
            if !(need > T::zero()) {
                continue;
            }
            let (lo, hi) = e.bin(j);
            let b0 = gaussian_bound_bin(lo, hi, e.t, hurst, x0, sigma_sup, T::zero())?;
            // b0 > 0 always, and e^{Ct} is unbounded, so a finite C exists.
            let cj = (need / b0).ln() / e.t;
            if cj > c {
                c = cj;
                binding = Some((e.t, j));
            }
        }
    }
    let mut margins = Vec::new();
    for e in estimates {
        for j in 0..e.n_bins() {
            let (lo, hi) = e.bin(j);
            let bound = gaussian_bound_bin(lo, hi, e.t, hurst, x0, sigma_sup, c)?;
            margins.push(BinMargin {
                t: e.t,
                bin_lo: lo,
                bin_hi: hi,
                density: e.density[j],
                std_err: e.std_err[j],
                bound,
                margin: bound + three * e.std_err[j] - e.density[j],
            });
        }
    }
    Ok(GaussianBoundFit {
        c,
        sigma_sup,
        x0,
        hurst,
        binding,
        margins,
    })
}

/// Gaussian kernel density estimate with Silverman's bandwidth, for plots.
pub fn kde_silverman<T: Real>(samples: &[T], xs: &[T]) -> Result<(T, Vec<T>)> {
    if samples.len() < 2 {
        return Err(Error::Empty("KDE samples"));
    }
    let n = T::of(samples.len() as f64);
    let mean = samples.iter().copied().sum::<T>() / n;
    let sd = (samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (n - T::one())).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > T::zero() { sd.min(iqr / T::of(1.34)) } else { sd };
    let h = T::of(0.9) * spread * n.powf(-T::of(0.2));
    if !(h > T::zero()) {
        return Err(Error::Domain("degenerate sample for KDE".into()));
    }
    let norm = T::one() / (n * h * (T::of(2.0) * T::PI()).sqrt());
    let vals = xs
        .iter()
        .map(|&x| {
            samples
                .iter()
                .map(|&s| {
                    let z = (x - s) / h;
                    (-T::of(0.5) * z * z).exp()
                })
                .sum::<T>()
                * norm
        })
        .collect();
    Ok((h, vals))
}

/// Discrete Hölder seminorm of a grid path on a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderNormSample<T> {
    pub gamma: T,
    pub a: T,
    pub b: T,
    pub value: T,
    /// True when only dyadic separations were scanned.
    pub dyadic: bool,
}

/// Windows above this many nodes scan dyadic separations only, which can
/// underestimate the full discrete sup by at most a factor `2^γ`.
pub const HOLDER_ALL_PAIRS_MAX: usize = 2048;

/// `sup |f(t) - f(s)| / (t - s)^γ` over grid pairs in `[a, b]`.
pub fn holder_norm<T: Real>(values: &[T], grid: &TimeGrid<T>, gamma: T, a: T, b: T) -> Result<HolderNormSample<T>> {
    if values.len() != grid.n_steps() + 1 {
        return Err(Error::LengthMismatch {
            expected: grid.n_steps() + 1,
            got: values.len(),
        });
    }
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(Error::Domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let tol = T::of(1e-9) * grid.step();
    if a < -tol || b > grid.horizon() + tol || !(b > a) {
        return Err(Error::Domain(format!("window [{a}, {b}] not inside [0, {}]", grid.horizon())));
    }
    let dt = grid.step();
    let i0 = ((a / dt) - T::of(1e-9)).ceil().max(T::zero()).to_usize().unwrap_or(0);
    let i1 = ((b / dt) + T::of(1e-9)).floor().to_usize().unwrap_or(0).min(grid.n_steps());
    if i1 <= i0 {
        return Err(Error::Empty("Hölder window has fewer than two nodes"));
    }
    let f = &values[i0..=i1];
    let m = f.len();
    let inv: Vec<T> = (0..m).map(|d| if d == 0 { T::zero() } else { (dt * T::of(d as f64)).powf(-gamma) }).collect();
    let mut best = T::zero();
    let dyadic = m > HOLDER_ALL_PAIRS_MAX;
    if dyadic {
        let mut d = 1;
        while d < m {
            for i in 0..m - d {
                best = best.max((f[i + d] - f[i]).abs() * inv[d]);
            }
            d *= 2;
        }
    } else {
        for i in 0..m {
            let fi = f[i];
            for d in 1..m - i {
                best = best.max((f[i + d] - fi).abs() * inv[d]);
            }
        }
    }
    Ok(HolderNormSample { gamma, a, b, value: best, dyadic })
}

/// `K(γ, ε) = ½ ε (8(γ + ε))^{-2}`.
pub fn holder_k<T: Real>(gamma: T, eps: T) -> T {
    let s = T::of(8.0) * (gamma + eps);
    T::of(0.5) * eps / (s * s)
}

/// `P(‖B^H‖_{γ,a,b} > x) ≤ (4 + √2 (b-a)²) exp(-K x² / (2 (b-a)^{2(H-γ-ε)}))`.
pub fn holder_tail_bound<T: Real>(gamma: T, eps: T, hurst: HurstParam<T>, a: T, b: T, x: T) -> Result<T> {
    let h = hurst.value();
    if !(gamma > T::zero() && gamma < h) {
        return Err(Error::Domain(format!("need 0 < gamma < H, got gamma = {gamma}, H = {h}")));
    }
    if !(eps > T::zero() && eps < h - gamma) {
        return Err(Error::Domain(format!("need 0 < eps < H - gamma, got eps = {eps}")));
    }
    if !(b > a) {
        return Err(Error::Domain(format!("need a < b, got [{a}, {b}]")));
    }
    let len = b - a;
    let pre = T::of(4.0) + T::SQRT_2() * len * len;
    let denom = T::of(2.0) * len.powf(T::of(2.0) * (h - gamma - eps));
    Ok(pre * (-holder_k(gamma, eps) * x * x / denom).exp())
}

/// Hölder norms of `n_paths` independent fBm paths on `grid`.
pub fn fbm_holder_norms<T: Real>(hurst: HurstParam<T>, grid: TimeGrid<T>, gamma: T, a: T, b: T, n_paths: u64, opts: &DensityOptions) -> Result<Vec<T>> {
    let generator = FbmGenerator::new(opts.sampler, hurst, grid)?;
    let work = chunks(n_paths, CHUNK);
    let parts: Vec<Result<Vec<T>>> = par_map_indexed(work.len(), |c| {
        let (first, count) = work[c];
        (0..count)
            .map(|i| {
                let p = generator.sample(&SeedStream::new(opts.master_seed, first + i as u64));
                holder_norm(&p.values, &grid, gamma, a, b).map(|s| s.value)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(n_paths as usize);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Fraction of `samples` strictly above each `x`.
pub fn empirical_exceedance<T: Real>(samples: &[T], xs: &[T]) -> Vec<T> {
    let n = T::of(samples.len().max(1) as f64);
    xs.iter().map(|&x| T::of(samples.iter().filter(|&&s| s > x).count() as f64) / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lane;

    fn h(x: f64) -> HurstParam<f64> {
        HurstParam::new(x).unwrap()
    }

    fn standard_normal_check(hurst: f64, sampler: SamplerKind) {
        let model = ModelSpec::pure_noise(0.3);
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let bins = BinSpec::standard(0.3, 1.0, 1.0, h(hurst));
        let opts = DensityOptions { sampler, master_seed: 9 };
        let e = estimate_density(&model, h(hurst), 1.0, 40_000, grid, bins, &opts).unwrap();
        assert_eq!(e.n_paths, 40_000);
        assert!((e.total_mass() - 1.0).abs() < 1e-12);
        for j in 0..e.n_bins() {
            let (lo, hi) = e.bin(j);
            let exact = gaussian_bound_bin(lo, hi, 1.0, h(0.5), 0.3, 1.0, 0.0).unwrap();
            let tol = 4.0 * e.std_err[j].max((exact * (1.0 - exact * (hi - lo)) / 40_000.0 / (hi - lo)).sqrt());
            assert!((e.density[j] - exact).abs() <= tol + 1e-12, "bin {j}: {} vs {exact}", e.density[j]);
        }
    }

    #[test]
    fn brownian_histogram_is_normal() {
        standard_normal_check(0.5, SamplerKind::Circulant);
    }

    #[test]
    fn fbm_histogram_at_unit_time_is_normal() {
        standard_normal_check(0.75, SamplerKind::Circulant);
    }

    #[test]
    fn bound_values() {
        for x in [-1.0, 0.0, 0.7] {
            let exact = (-(x * x) / 2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
            assert!((gaussian_bound(x, 1.0, h(0.5), 0.0, 1.0, 0.0).unwrap() - exact).abs() < 1e-15);
        }
        let hv = 0.75;
        let v = gaussian_bound(0.2, 2.0, h(hv), 0.2, 1.0, 0.5).unwrap();
        assert!((v - 1f64.exp() / (2.0 * std::f64::consts::PI * 2f64.powf(2.0 * hv)).sqrt()).abs() < 1e-14);
        let a = gaussian_bound(0.5, 1.0, h(0.6), 0.0, 1.0, 0.1).unwrap();
        let b = gaussian_bound(1.5, 1.0, h(0.6), 0.0, 1.0, 0.1).unwrap();
        assert!(a > b);
        assert!(gaussian_bound(0.0, 0.0, h(0.6), 0.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn bin_average_matches_quadrature() {
        use crate::quadrature::{integrate, QuadratureConfig};
        let (lo, hi) = (0.4, 0.9);
        let q = integrate(|x| gaussian_bound(x, 1.5, h(0.7), 0.1, 1.3, 0.2).unwrap(), lo, hi, &QuadratureConfig::default()).unwrap();
        let avg = gaussian_bound_bin(lo, hi, 1.5, h(0.7), 0.1, 1.3, 0.2).unwrap();
        assert!((avg - q.value / (hi - lo)).abs() < 1e-12);
    }

    fn exact_estimate(t: f64, sigma: f64) -> DensityEstimate<f64> {
        let bins = BinSpec::standard(0.0, sigma, t, h(0.5));
        let edges = bins.edges();
        let density: Vec<f64> = (0..bins.n_bins)
            .map(|j| gaussian_bound_bin(edges[j], edges[j + 1], t, h(0.5), 0.0, 1.0, 0.0).unwrap())
            .collect();
        DensityEstimate {
            t,
            hurst: h(0.5),
            counts: vec![0; bins.n_bins],
            underflow: 0,
            overflow: 0,
            n_paths: 1,
            std_err: vec![0.0; bins.n_bins],
            density,
            edges,
        }
    }

    #[test]
    fn exact_brownian_density_needs_no_growth() {
        let est = [exact_estimate(0.5, 1.0), exact_estimate(1.0, 1.0), exact_estimate(2.0, 1.0)];
        let fit = fit_min_c(&est, 1.0, 0.0).unwrap();
        assert!(fit.c < 1e-12, "{}", fit.c);
        assert!(fit.all_bins_pass());
        assert!(fit_min_c(&est[..1], 1.0, 0.0).is_err());
    }

    #[test]
    fn fitted_constant_decreases_with_sigma() {
        let model = ModelSpec::cos_drift(0.0);
        let grid = TimeGrid::new(2.0, 128).unwrap();
        let est = estimate_densities(
            &model,
            h(0.75),
            &[0.5, 1.0, 2.0],
            20_000,
            grid,
            &DensityOptions {
                master_seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let cs: Vec<f64> = [1.0, 1.1, 1.3].iter().map(|&s| fit_min_c(&est, s, 0.0).unwrap().c).collect();
        assert!(cs[0] >= cs[1] && cs[1] >= cs[2], "{cs:?}");
        let fit = fit_min_c(&est, 1.0, 0.0).unwrap();
        assert!(fit.c.is_finite() && fit.all_bins_pass());
        assert!(fit.binding.is_some());
    }

    #[test]
    fn holder_examples() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let lin: Vec<f64> = g.nodes();
        assert!((holder_norm(&lin, &g, 0.5, 0.0, 1.0).unwrap().value - 1.0).abs() < 1e-12);
        assert_eq!(holder_norm(&vec![2.0; 101], &g, 0.5, 0.0, 1.0).unwrap().value, 0.0);
        let z: Vec<f64> = SeedStream::new(1, 0).normals(Lane::Aux, 101);
        let z2: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        let a = holder_norm(&z, &g, 0.3, 0.2, 0.8).unwrap().value;
        let b = holder_norm(&z2, &g, 0.3, 0.2, 0.8).unwrap().value;
        assert!((b - 2.0 * a).abs() < 1e-12);
        assert!(holder_norm(&z, &g, 0.3, 0.5, 0.505).is_err());
        assert!(holder_norm(&z, &g, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn holder_monotone_under_refinement() {
        let fine = TimeGrid::new(1.0, 256).unwrap();
        let coarse = TimeGrid::new(1.0, 128).unwrap();
        let gen = FbmGenerator::new(SamplerKind::Circulant, h(0.7), fine).unwrap();
        for p in 0..10 {
            let path = gen.sample(&SeedStream::new(2, p));
            let sub: Vec<f64> = path.values.iter().step_by(2).copied().collect();
            let f = holder_norm(&path.values, &fine, 0.4, 0.0, 1.0).unwrap().value;
            let c = holder_norm(&sub, &coarse, 0.4, 0.0, 1.0).unwrap().value;
            assert!(f >= c);
        }
    }

    #[test]
    fn dyadic_scan_within_factor() {
        let g = TimeGrid::new(1.0, 3000).unwrap();
        let gen = FbmGenerator::new(SamplerKind::Circulant, h(0.7), g).unwrap();
        let path = gen.sample(&SeedStream::new(4, 0));
        let d = holder_norm(&path.values, &g, 0.4, 0.0, 1.0).unwrap();
        assert!(d.dyadic);
        let full = holder_norm(&path.values, &g, 0.4, 0.0, 0.68).unwrap();
        assert!(!full.dyadic);
        assert!(d.value * 2f64.powf(0.4) >= full.value);
    }

    #[test]
    fn tail_bound_values() {
        assert!((holder_k(0.25, 0.25) - 0.0078125f64).abs() < 1e-16);
        let b = holder_tail_bound(0.25, 0.25, h(0.75), 0.0, 1.0, 0.0).unwrap();
        assert!((b - (4.0 + 2f64.sqrt())).abs() < 1e-14);
        assert!(holder_tail_bound(0.8, 0.1, h(0.75), 0.0, 1.0, 1.0).is_err());
        assert!(holder_tail_bound(0.25, 0.5, h(0.75), 0.0, 1.0, 1.0).is_err());
        let xs = [2.0, 4.0];
        let norms = fbm_holder_norms(h(0.75), TimeGrid::new(1.0, 256).unwrap(), 0.25, 0.0, 1.0, 500, &DensityOptions::default()).unwrap();
        let emp = empirical_exceedance(&norms, &xs);
        for (x, e) in xs.iter().zip(emp) {
            assert!(e <= holder_tail_bound(0.25, 0.25, h(0.75), 0.0, 1.0, *x).unwrap());
        }
    }

    #[test]
    fn kde_integrates_to_one() {
        let z: Vec<f64> = SeedStream::new(1, 0).normals(Lane::Aux, 2000);
        let xs: Vec<f64> = (0..=400).map(|i| -6.0 + 0.03 * i as f64).collect();
        let (bw, v) = kde_silverman(&z, &xs).unwrap();
        assert!(bw > 0.0);
        let mass: f64 = v.iter().sum::<f64>() * 0.03;
        assert!((mass - 1.0).abs() < 1e-3);
    }
}
