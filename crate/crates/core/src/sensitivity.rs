//! Sensitivity of SDE functionals to the Hurst index near ½: marginal-law
//! gaps with their rate fit, the two-term error decomposition built from
//! the backward PDE, and Laplace-transform gaps of first-passage times.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fbm::{CoupledSampler, FbmGenerator, HurstParam, SamplerKind, TimeGrid};
use crate::hitting::passage_along_driver;
use crate::pde::{r_func, s_func, PdeSolution};
use crate::quadrature::QuadratureConfig;
use crate::rng::SeedStream;
use crate::scalar::Real;
use crate::sde::{heun_into, malliavin_log_factors, LampertiMap, ModelSpec};
use crate::stats::{chunks, par_map_indexed, wls, LineFit, MeanAcc};

/// How the fBm member paths relate to the Brownian reference path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coupling {
    /// Every member is the Volterra image of the same Brownian increments.
    #[default]
    Volterra,
    /// Members are drawn from independent streams (variance comparison only).
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityOptions {
    pub coupling: Coupling,
    pub master_seed: u64,
    /// Fewer resolvable points than this marks a fit inconclusive.
    pub min_fit_points: usize,
    /// Paths per batched matrix product.
    pub batch: usize,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            coupling: Coupling::Volterra,
            master_seed: 0,
            min_fit_points: 2,
            batch: 128,
        }
    }
}

/// Driver paths for the reference `H = ½` and each member, batch by batch.
struct PathSource<T> {
    coupling: Coupling,
    coupled: Option<CoupledSampler<T>>,
    independent: Vec<FbmGenerator<T>>,
    grid: TimeGrid<T>,
}

fn member_seed(master: u64, member: usize) -> u64 {
    if member == 0 {
        master
    } else {
        master ^ (member as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
    }
}

impl<T: Real> PathSource<T> {
    fn new(h_list: &[HurstParam<T>], grid: TimeGrid<T>, coupling: Coupling) -> Result<Self> {
        let mut all = vec![HurstParam::brownian()];
        all.extend_from_slice(h_list);
        match coupling {
            Coupling::Volterra => Ok(Self {
                coupling,
                coupled: Some(CoupledSampler::new(&all, grid, &QuadratureConfig::default())?),
                independent: Vec::new(),
                grid,
            }),
            Coupling::Independent => {
                let independent = all.iter().map(|&h| FbmGenerator::new(SamplerKind::Circulant, h, grid)).collect::<Result<Vec<_>>>()?;
                Ok(Self {
                    coupling,
                    coupled: None,
                    independent,
                    grid,
                })
            }
        }
    }

    /// Member-major node values; index 0 is the Brownian reference.
    fn batch(&self, seed: u64, first: u64, count: usize) -> Vec<Array2<T>> {
        match self.coupling {
            Coupling::Volterra => self
                .coupled
                .as_ref()
                .expect("coupled sampler")
                .batch(seed, first, count)
                .members
                .into_iter()
                .map(|(_, v)| v)
                .collect(),
            Coupling::Independent => self
                .independent
                .iter()
                .enumerate()
                .map(|(m, g)| {
                    let mut out = Array2::<T>::zeros((count, self.grid.n_steps() + 1));
                    for c in 0..count {
                        let p = g.sample(&SeedStream::new(member_seed(seed, m), first + c as u64));
                        out.row_mut(c).assign(&ndarray::ArrayView1::from(&p.values[..]));
                    }
                    out
                })
                .collect(),
        }
    }
}

/// Per-member difference moments and largest absolute difference.
type GapAccs<T> = Vec<(MeanAcc<T>, T)>;

/// `(H, fit, α)` for one Hurst value.
pub type AlphaFit<T> = (HurstParam<T>, Option<LineFit<T>>, Option<T>);

fn row<T>(a: &Array2<T>, c: usize) -> &[T] {
    a.row(c).to_slice().expect("rows are contiguous")
}

/// One Hurst value of a gap experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPoint<T> {
    pub hurst: HurstParam<T>,
    pub gap: T,
    pub std_err: T,
    /// Largest per-path difference; zero at `H = ½` under coupling.
    pub max_abs_diff: T,
    pub used_in_fit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport<T> {
    pub t: T,
    pub coupling: Coupling,
    pub n_paths: u64,
    pub points: Vec<GapPoint<T>>,
    /// Slope of `log|gap|` against `log(H - ½)`, absent when inconclusive.
    pub fit: Option<LineFit<T>>,
    pub inconclusive: bool,
}

/// Regress `log|gap|` on `log(x)` over points with `|gap| > 3·std_err`
/// and `x > 0`; marks the chosen points.
fn log_fit<T: Real>(xs: &[T], gaps: &[T], ses: &[T], used: &mut [bool], min_points: usize) -> Option<LineFit<T>> {
    let (mut lx, mut ly, mut ls) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..xs.len() {
        let g = gaps[i].abs();
        used[i] = xs[i] > T::zero() && g > T::of(3.0) * ses[i] && g > T::zero();
        if used[i] {
            lx.push(xs[i].ln());
            ly.push(g.ln());
            ls.push((ses[i] / g).max(T::of(1e-12)));
        }
    }
    if lx.len() < min_points.max(2) {
        used.iter_mut().for_each(|u| *u = false);
        return None;
    }
    wls(&lx, &ly, &ls).ok()
}

/// `E[φ(X^H_t) - φ(X_t)]` for each `H`, with the rate fit.
pub fn marginal_gap<T: Real>(
    model: &ModelSpec<T>,
    phi: &(dyn Fn(T) -> T + Sync),
    t: T,
    h_list: &[HurstParam<T>],
    n_paths: u64,
    grid: TimeGrid<T>,
    opts: &SensitivityOptions,
) -> Result<SensitivityReport<T>> {
    if h_list.is_empty() {
        return Err(Error::Empty("Hurst list"));
    }
    let kt = grid.index_of(t).ok_or_else(|| Error::InvalidGrid(format!("t = {t} is not a grid node")))?;
    let source = PathSource::new(h_list, grid, opts.coupling)?;
    let dt = grid.step();
    let work = chunks(n_paths, opts.batch);
    let m = h_list.len();
    let parts: Vec<Result<GapAccs<T>>> = par_map_indexed(work.len(), |b| {
        let (first, count) = work[b];
        let paths = source.batch(opts.master_seed, first, count);
        let mut acc = vec![(MeanAcc::new(), T::zero()); m];
        let mut xb = Vec::new();
        let mut xh = Vec::new();
        for c in 0..count {
            heun_into(model, dt, &row(&paths[0], c)[..=kt], &mut xb)?;
            let base = phi(xb[kt]);
            for (i, a) in acc.iter_mut().enumerate() {
                heun_into(model, dt, &row(&paths[i + 1], c)[..=kt], &mut xh)?;
                let d = phi(xh[kt]) - base;
                a.0.push(d);
                a.1 = a.1.max(d.abs());
            }
        }
        Ok(acc)
    });
    let mut total = vec![(MeanAcc::new(), T::zero()); m];
    for p in parts {
        for (t_acc, (a, mx)) in total.iter_mut().zip(p?) {
            t_acc.0.merge(&a);
            t_acc.1 = t_acc.1.max(mx);
        }
    }
    let xs: Vec<T> = h_list.iter().map(|h| h.excess()).collect();
    let gaps: Vec<T> = total.iter().map(|a| a.0.mean()).collect();
    let ses: Vec<T> = total.iter().map(|a| a.0.std_err()).collect();
    let mut used = vec![false; m];
    let fit = log_fit(&xs, &gaps, &ses, &mut used, opts.min_fit_points);
    let points = (0..m)
        .map(|i| GapPoint {
            hurst: h_list[i],
            gap: gaps[i],
            std_err: ses[i],
            max_abs_diff: total[i].1,
            used_in_fit: used[i],
        })
        .collect();
    if fit.is_none() {
        log::warn!("marginal gap fit inconclusive: fewer than {} points above 3 standard errors", opts.min_fit_points.max(2));
    }
    Ok(SensitivityReport {
        t,
        coupling: opts.coupling,
        n_paths,
        points,
        inconclusive: fit.is_none(),
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionReport<T> {
    pub hurst: HurstParam<T>,
    pub t: T,
    pub n_paths: u64,
    /// Coupled estimate of `E φ(X^H_t) - E φ(X_t)`.
    pub lhs: T,
    pub lhs_se: T,
    pub delta1: T,
    pub delta1_se: T,
    pub delta2: T,
    pub delta2_se: T,
    pub residual: T,
    /// Standard error of the per-path residual `lhs - Δ¹ - Δ²`.
    pub combined_err: T,
    /// `u(0, x0)` from the PDE.
    pub pde_value: T,
    pub clamp_fraction: T,
}

/// Split the marginal gap into the drift-correction term `Δ¹` and the
/// memory term `Δ²` along coupled paths, using `∂_xx u` from `pde`.
pub fn delta_decomposition<T: Real>(
    model: &ModelSpec<T>,
    phi: &(dyn Fn(T) -> T + Sync),
    hurst: HurstParam<T>,
    n_paths: u64,
    grid: TimeGrid<T>,
    pde: &PdeSolution<T>,
    opts: &SensitivityOptions,
) -> Result<DecompositionReport<T>> {
    if !model.is_unit_diffusion() {
        return Err(Error::NotUnitDiffusion);
    }
    let n = grid.n_steps();
    let t = grid.horizon();
    if (pde.t - t).abs() > T::of(1e-12) * t.max(T::one()) {
        return Err(Error::InvalidGrid(format!("PDE horizon {} differs from path horizon {t}", pde.t)));
    }
    if !pde.n_s().is_multiple_of(n) {
        return Err(Error::InvalidGrid(format!("PDE time steps {} are not a multiple of path steps {n}", pde.n_s())));
    }
    let stride = pde.n_s() / n;
    let dt = grid.step();
    let hv = hurst.value();
    let two_h = T::of(2.0) * hv;
    let half = T::of(0.5);
    // ∫ over each cell of (H s^{2H-1} - ½).
    let pw: Vec<T> = (0..=n).map(|k| grid.node(k).powf(two_h)).collect();
    let d1w: Vec<T> = (0..n).map(|k| half * (pw[k + 1] - pw[k]) - half * dt).collect();
    // α_H ∫_cell (s_k - r)^{2H-2} dr for lag m, and its cumulative sum H s_k^{2H-1}.
    let e = two_h - T::one();
    let scale = hv * dt.powf(e);
    let omega: Vec<T> = (0..=n)
        .map(|m| {
            if m == 0 {
                T::zero()
            } else {
                scale * (T::of(m as f64).powf(e) - T::of((m - 1) as f64).powf(e))
            }
        })
        .collect();
    let big_w: Vec<T> = (0..=n).map(|k| if k == 0 { T::zero() } else { scale * T::of(k as f64).powf(e) }).collect();

    let source = PathSource::new(&[hurst], grid, opts.coupling)?;
    let work = chunks(n_paths, opts.batch);
    struct Acc<T> {
        lhs: MeanAcc<T>,
        d1: MeanAcc<T>,
        d2: MeanAcc<T>,
        res: MeanAcc<T>,
        clamps: u64,
        lookups: u64,
    }
    let parts: Vec<Result<Acc<T>>> = par_map_indexed(work.len(), |b| {
        let (first, count) = work[b];
        let paths = source.batch(opts.master_seed, first, count);
        let mut acc = Acc {
            lhs: MeanAcc::new(),
            d1: MeanAcc::new(),
            d2: MeanAcc::new(),
            res: MeanAcc::new(),
            clamps: 0,
            lookups: 0,
        };
        let (mut xb, mut xh) = (Vec::new(), Vec::new());
        let mut g = vec![T::zero(); n + 1];
        let mut ee = vec![T::zero(); n];
        for c in 0..count {
            heun_into(model, dt, row(&paths[0], c), &mut xb)?;
            heun_into(model, dt, row(&paths[1], c), &mut xh)?;
            let lhs = phi(xh[n]) - phi(xb[n]);
            for k in 0..=n {
                let (v, clamped) = pde.dxx_at(k * stride, xh[k]);
                g[k] = v;
                acc.clamps += clamped as u64;
            }
            acc.lookups += (n + 1) as u64;
            let d1: T = (0..n).map(|k| half * (g[k] + g[k + 1]) * d1w[k]).sum();
            let d2 = if hurst.is_brownian() {
                T::zero()
            } else {
                let logs = malliavin_log_factors(model, dt, &xh)?;
                for j in 0..n {
                    ee[j] = half * ((-logs[j]).exp() + (-logs[j + 1]).exp());
                }
                let mut prev = T::zero();
                let mut total = T::zero();
                for k in 1..=n {
                    let mut ck = T::zero();
                    for j in 0..k {
                        ck = ck + omega[k - j] * ee[j];
                    }
                    let gk = g[k] * (logs[k].exp() * ck - big_w[k]);
                    total = total + half * (prev + gk) * dt;
                    prev = gk;
                }
                total
            };
            acc.lhs.push(lhs);
            acc.d1.push(d1);
            acc.d2.push(d2);
            acc.res.push(lhs - d1 - d2);
        }
        Ok(acc)
    });
    let mut tot = Acc {
        lhs: MeanAcc::new(),
        d1: MeanAcc::new(),
        d2: MeanAcc::new(),
        res: MeanAcc::new(),
        clamps: 0,
        lookups: 0,
    };
    for p in parts {
        let p = p?;
        tot.lhs.merge(&p.lhs);
        tot.d1.merge(&p.d1);
        tot.d2.merge(&p.d2);
        tot.res.merge(&p.res);
        tot.clamps += p.clamps;
        tot.lookups += p.lookups;
    }
    let clamp_fraction = T::of(tot.clamps as f64 / tot.lookups.max(1) as f64);
    if clamp_fraction > T::of(1e-3) {
        log::warn!("{:.3}% of PDE lookups fell outside the domain and were clamped", clamp_fraction.f64() * 100.0);
    }
    let (pde_value, _) = pde.u_at(0, model.x0);
    Ok(DecompositionReport {
        hurst,
        t,
        n_paths,
        lhs: tot.lhs.mean(),
        lhs_se: tot.lhs.std_err(),
        delta1: tot.d1.mean(),
        delta1_se: tot.d1.std_err(),
        delta2: tot.d2.mean(),
        delta2_se: tot.d2.std_err(),
        residual: tot.res.mean(),
        combined_err: tot.res.std_err(),
        pde_value,
        clamp_fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceGapOptions<T> {
    pub base: SensitivityOptions,
    pub threshold: T,
    /// Defaults to `0.05·(threshold - x0)`.
    pub eta: Option<T>,
    pub eps: T,
    /// Drift bound for `𝓡`; defaults to `sup |b̃|` on the transformed domain.
    pub mu: Option<T>,
}

impl<T: Real> Default for LaplaceGapOptions<T> {
    fn default() -> Self {
        Self {
            base: SensitivityOptions::default(),
            threshold: T::one(),
            eta: None,
            eps: T::of(0.05),
            mu: None,
        }
    }
}

/// One `(λ, H)` cell of a Laplace-gap experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeCell<T> {
    pub lambda: T,
    pub hurst: HurstParam<T>,
    pub gap: T,
    pub std_err: T,
    /// `E|e^{-λτ_H} - e^{-λτ_½}|` from the same samples; dominates `|gap|`.
    pub mean_abs_diff: T,
    pub max_abs_diff: T,
    pub used_in_fit: bool,
    /// The fitted envelope at this cell, when a fit exists.
    pub envelope: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport<T> {
    pub lambdas: Vec<T>,
    pub hurst: Vec<HurstParam<T>>,
    pub cells: Vec<EnvelopeCell<T>>,
    pub eta: T,
    pub eps: T,
    pub mu: T,
    /// `S(threshold - x0 - 2η)` at each `H`.
    pub s_values: Vec<T>,
    /// Per-`H` fit of `log|gap|` against `𝓡(λ)`, giving `α`.
    pub alpha_by_hurst: Vec<AlphaFit<T>>,
    /// Per-`λ` fit of `log|gap|` against `log(H - ½)`.
    pub exponent_by_lambda: Vec<(T, Option<LineFit<T>>)>,
    /// Inverse-variance weighted summaries of the two families of fits.
    pub alpha_fit: Option<T>,
    pub hurst_exp_fit: Option<T>,
    /// Smallest `C` with `|gap| ≤ C (H-½)^{¼-ε} e^{-α S 𝓡}` on resolvable cells.
    pub c_env: Option<T>,
    /// Every cell satisfies `|gap| ≤ envelope + 3·std_err`.
    pub envelope_holds: Option<bool>,
    pub n_paths: u64,
    pub t_max: T,
}

impl<T: Real> EnvelopeReport<T> {
    pub fn cell(&self, lambda: T, hurst: HurstParam<T>) -> Option<&EnvelopeCell<T>> {
        self.cells.iter().find(|c| c.lambda == lambda && c.hurst == hurst)
    }

    pub fn inconclusive(&self) -> bool {
        self.alpha_fit.is_none() && self.hurst_exp_fit.is_none()
    }
}

fn weighted_mean<T: Real>(vals: &[(T, T)]) -> Option<T> {
    if vals.is_empty() {
        return None;
    }
    let (mut num, mut den) = (T::zero(), T::zero());
    for &(v, se) in vals {
        let w = T::one() / (se * se).max(T::of(1e-300));
        num = num + w * v;
        den = den + w;
    }
    Some(num / den)
}

/// `E e^{-λτ_H} - E e^{-λτ_½}` on a `(λ, H)` grid with rate fits.
pub fn laplace_gap<T: Real>(
    model: &ModelSpec<T>,
    lambdas: &[T],
    h_list: &[HurstParam<T>],
    n_paths: u64,
    grid: TimeGrid<T>,
    t_max: T,
    opts: &LaplaceGapOptions<T>,
) -> Result<EnvelopeReport<T>> {
    if lambdas.is_empty() || h_list.is_empty() {
        return Err(Error::Empty("lambda or Hurst list"));
    }
    if lambdas.iter().any(|&l| l < T::zero()) {
        return Err(Error::Domain("lambda must be nonnegative".into()));
    }
    if lambdas.iter().any(|&l| l < T::one()) {
        log::warn!("λ < 1 lies outside the regime of the envelope bound");
    }
    let thr = opts.threshold;
    if model.x0 >= thr {
        return Err(Error::Domain(format!("x0 = {} must lie below the threshold {thr}", model.x0)));
    }
    if grid.horizon() < t_max * (T::one() - T::of(1e-12)) {
        return Err(Error::InvalidGrid(format!("grid horizon {} shorter than T_max = {t_max}", grid.horizon())));
    }
    let eta = opts.eta.unwrap_or(T::of(0.05) * (thr - model.x0));
    let mu = match opts.mu {
        Some(m) => m,
        None => {
            let map = LampertiMap::new(model, thr)?;
            let y0 = map.forward(model.x0)?;
            let lo = y0 - T::of(20.0);
            let steps = 2000;
            let mut sup = T::zero();
            for i in 0..=steps {
                let y = lo + (map.theta - lo) * T::of(i as f64 / steps as f64);
                sup = sup.max(map.b_tilde(y)?.abs());
            }
            sup
        }
    };
    let source = PathSource::new(h_list, grid, opts.base.coupling)?;
    let dt = grid.step();
    let (nl, nh) = (lambdas.len(), h_list.len());
    let work = chunks(n_paths, opts.base.batch);
    type Cells<T> = Vec<(MeanAcc<T>, MeanAcc<T>, T)>;
    let parts: Vec<Result<Cells<T>>> = par_map_indexed(work.len(), |b| {
        let (first, count) = work[b];
        let paths = source.batch(opts.base.master_seed, first, count);
        let mut acc: Cells<T> = vec![(MeanAcc::new(), MeanAcc::new(), T::zero()); nl * nh];
        for c in 0..count {
            let tb = passage_along_driver(model, dt, row(&paths[0], c), thr, t_max, None)?;
            for hi in 0..nh {
                let th = passage_along_driver(model, dt, row(&paths[hi + 1], c), thr, t_max, None)?;
                for (li, &l) in lambdas.iter().enumerate() {
                    let d = th.laplace_term(l, T::one()) - tb.laplace_term(l, T::one());
                    let a = &mut acc[li * nh + hi];
                    a.0.push(d);
                    a.1.push(d.abs());
                    a.2 = a.2.max(d.abs());
                }
            }
        }
        Ok(acc)
    });
    let mut tot: Cells<T> = vec![(MeanAcc::new(), MeanAcc::new(), T::zero()); nl * nh];
    for p in parts {
        for (t, a) in tot.iter_mut().zip(p?) {
            t.0.merge(&a.0);
            t.1.merge(&a.1);
            t.2 = t.2.max(a.2);
        }
    }
    let mut cells: Vec<EnvelopeCell<T>> = Vec::with_capacity(nl * nh);
    for li in 0..nl {
        for hi in 0..nh {
            let a = &tot[li * nh + hi];
            cells.push(EnvelopeCell {
                lambda: lambdas[li],
                hurst: h_list[hi],
                gap: a.0.mean(),
                std_err: a.0.std_err(),
                mean_abs_diff: a.1.mean(),
                max_abs_diff: a.2,
                used_in_fit: false,
                envelope: None,
            });
        }
    }
    let dist = thr - model.x0 - T::of(2.0) * eta;
    if !(dist > T::zero()) {
        return Err(Error::Domain(format!("threshold - x0 - 2η = {dist} must be positive")));
    }
    let s_values = h_list.iter().map(|&h| s_func(dist, h)).collect::<Result<Vec<_>>>()?;
    let rl = lambdas.iter().map(|&l| r_func(l, mu)).collect::<Result<Vec<_>>>()?;
    let three = T::of(3.0);
    let resolvable = |c: &EnvelopeCell<T>| !c.hurst.is_brownian() && c.gap.abs() > three * c.std_err && c.gap != T::zero();
    let min_pts = opts.base.min_fit_points.max(2);

    let mut alpha_by_hurst = Vec::new();
    let mut alphas = Vec::new();
    for hi in 0..nh {
        let (mut x, mut y, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for li in 0..nl {
            let c = &cells[li * nh + hi];
            if resolvable(c) {
                x.push(rl[li]);
                y.push(c.gap.abs().ln());
                s.push(c.std_err / c.gap.abs());
            }
        }
        let fit = if x.len() >= min_pts { wls(&x, &y, &s).ok() } else { None };
        let alpha = fit.map(|f| -f.slope / s_values[hi]);
        if let (Some(f), Some(a)) = (fit, alpha) {
            alphas.push((a, f.slope_se / s_values[hi]));
            for li in 0..nl {
                if resolvable(&cells[li * nh + hi]) {
                    cells[li * nh + hi].used_in_fit = true;
                }
            }
        }
        alpha_by_hurst.push((h_list[hi], fit, alpha));
    }
    let mut exponent_by_lambda = Vec::new();
    let mut exps = Vec::new();
    for li in 0..nl {
        let xs: Vec<T> = h_list.iter().map(|h| h.excess()).collect();
        let gaps: Vec<T> = (0..nh).map(|hi| cells[li * nh + hi].gap).collect();
        let ses: Vec<T> = (0..nh).map(|hi| cells[li * nh + hi].std_err).collect();
        let mut used = vec![false; nh];
        let fit = log_fit(&xs, &gaps, &ses, &mut used, min_pts);
        if let Some(f) = fit {
            exps.push((f.slope, f.slope_se));
            for hi in 0..nh {
                if used[hi] {
                    cells[li * nh + hi].used_in_fit = true;
                }
            }
        }
        exponent_by_lambda.push((lambdas[li], fit));
    }
    let alpha_fit = weighted_mean(&alphas);
    let hurst_exp_fit = weighted_mean(&exps);

    let quarter = T::of(0.25);
    let mut c_env = None;
    let mut envelope_holds = None;
    if let Some(alpha) = alpha_fit {
        let shape = |li: usize, hi: usize| h_list[hi].excess().powf(quarter - opts.eps) * (-alpha * s_values[hi] * rl[li]).exp();
        let mut c = T::zero();
        for li in 0..nl {
            for hi in 0..nh {
                let cell = &cells[li * nh + hi];
                if resolvable(cell) {
                    c = c.max(cell.gap.abs() / shape(li, hi));
                }
            }
        }
        let mut ok = true;
        for li in 0..nl {
            for hi in 0..nh {
                let env = if h_list[hi].is_brownian() { T::zero() } else { c * shape(li, hi) };
                let cell = &mut cells[li * nh + hi];
                cell.envelope = Some(env);
                ok &= cell.gap.abs() <= env + three * cell.std_err;
            }
        }
        c_env = Some(c);
        envelope_holds = Some(ok);
    }
    Ok(EnvelopeReport {
        lambdas: lambdas.to_vec(),
        hurst: h_list.to_vec(),
        cells,
        eta,
        eps: opts.eps,
        mu,
        s_values,
        alpha_by_hurst,
        exponent_by_lambda,
        alpha_fit,
        hurst_exp_fit,
        c_env,
        envelope_holds,
        n_paths,
        t_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{default_pde_domain, solve_backward_pde};
    use std::sync::Arc;

    fn h(x: f64) -> HurstParam<f64> {
        HurstParam::new(x).unwrap()
    }

    #[test]
    fn brownian_member_gives_zero_gap() {
        let model = ModelSpec::cos_drift(0.0);
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let r = marginal_gap(&model, &|x: f64| x.cos(), 1.0, &[h(0.5), h(0.6)], 300, grid, &SensitivityOptions::default()).unwrap();
        assert_eq!(r.points[0].gap, 0.0);
        assert_eq!(r.points[0].max_abs_diff, 0.0);
        assert!(!r.points[0].used_in_fit);
    }

    #[test]
    fn linear_functional_is_inconclusive() {
        let model = ModelSpec::pure_noise(0.0);
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let r = marginal_gap(&model, &|x: f64| x, 1.0, &[h(0.55), h(0.6), h(0.7)], 2000, grid, &SensitivityOptions::default()).unwrap();
        for p in &r.points {
            assert!(p.gap.abs() < 4.0 * p.std_err + 1e-12, "{p:?}");
        }
        assert!(r.inconclusive);
    }

    #[test]
    fn second_moment_gap_has_unit_rate() {
        let model = ModelSpec::pure_noise(0.0);
        let grid = TimeGrid::new(2.0, 256).unwrap();
        let hs = [h(0.52), h(0.55), h(0.58), h(0.6)];
        let r = marginal_gap(&model, &|x: f64| x * x, 2.0, &hs, 20_000, grid, &SensitivityOptions::default()).unwrap();
        let p = r.points.iter().find(|p| p.hurst == h(0.6)).unwrap();
        assert!((p.gap - (2f64.powf(1.2) - 2.0)).abs() < 4.0 * p.std_err + 0.01, "{p:?}");
        let f = r.fit.unwrap();
        assert!((f.slope - 1.0).abs() < 0.2, "{f:?}");
    }

    #[test]
    fn coupling_reduces_variance() {
        let model = ModelSpec::cos_drift(0.0);
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let hs = [h(0.6)];
        let a = marginal_gap(&model, &|x: f64| x.cos(), 1.0, &hs, 2000, grid, &SensitivityOptions::default()).unwrap();
        let b = marginal_gap(
            &model,
            &|x: f64| x.cos(),
            1.0,
            &hs,
            2000,
            grid,
            &SensitivityOptions {
                coupling: Coupling::Independent,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(a.points[0].std_err * 3.0 < b.points[0].std_err);
    }

    #[test]
    fn decomposition_closed_form() {
        let model = ModelSpec::pure_noise(0.0);
        let t = 2.0;
        let grid = TimeGrid::new(t, 256).unwrap();
        let pde = solve_backward_pde(&|_| 0.0, &|x: f64| x * x, t, default_pde_domain(0.0, t), 800, 256).unwrap();
        let r = delta_decomposition(&model, &|x: f64| x * x, h(0.6), 2000, grid, &pde, &SensitivityOptions::default()).unwrap();
        assert!((r.delta1 - (2f64.powf(1.2) - 2.0)).abs() < 1e-3, "{r:?}");
        assert!(r.delta2.abs() < 1e-10);
        assert!(r.delta1_se < 1e-4);
        let r = delta_decomposition(&model, &|x: f64| x * x, h(0.5), 500, grid, &pde, &SensitivityOptions::default()).unwrap();
        assert_eq!((r.lhs, r.delta2), (0.0, 0.0));
        assert!(r.delta1.abs() < 1e-12);
    }

    #[test]
    fn decomposition_needs_unit_diffusion() {
        let model = ModelSpec::new(Arc::new(|_| 0.0), Arc::new(|_| 0.0), Arc::new(|_| 2.0), Arc::new(|_| 0.0), 0.0, 2.0, 2.0).unwrap();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let pde = solve_backward_pde(&|_| 0.0, &|x: f64| x, 1.0, (-8.0, 8.0), 40, 16).unwrap();
        assert_eq!(
            delta_decomposition(&model, &|x: f64| x, h(0.6), 10, grid, &pde, &SensitivityOptions::default()).unwrap_err(),
            Error::NotUnitDiffusion
        );
    }

    #[test]
    fn laplace_gap_brownian_member_and_triangle() {
        let model = ModelSpec::pure_noise(0.0);
        let grid = TimeGrid::new(4.0, 512).unwrap();
        let r = laplace_gap(&model, &[1.0, 2.0], &[h(0.5), h(0.7)], 500, grid, 4.0, &LaplaceGapOptions::default()).unwrap();
        for c in &r.cells {
            if c.hurst.is_brownian() {
                assert_eq!(c.max_abs_diff, 0.0);
            }
            assert!(c.gap.abs() <= c.mean_abs_diff + 1e-15);
        }
        assert_eq!(r.mu, 0.0);
        assert!((r.eta - 0.05).abs() < 1e-15);
    }
}
