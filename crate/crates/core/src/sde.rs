//! Pathwise integration of `dX = b(X) dt + σ(X) dB^H`, the Lamperti
//! transform to unit diffusion, and Malliavin-derivative paths.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fbm::{FbmPath, GridPath, HurstParam, TimeGrid};
use crate::quadrature::{integrate, QuadratureConfig};
use crate::scalar::Real;

pub type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// Drift and diffusion coefficients with their derivatives.
#[derive(Clone)]
pub struct ModelSpec<T> {
    pub b: ScalarFn<T>,
    pub b_prime: ScalarFn<T>,
    pub sigma: ScalarFn<T>,
    pub sigma_prime: ScalarFn<T>,
    pub x0: T,
    /// Ellipticity constant, `|σ| ≥ σ0`.
    pub sigma0: T,
    /// `‖σ‖∞`.
    pub sigma_sup: T,
    /// `‖b′‖∞` when known; used by the Malliavin bound.
    pub b_prime_sup: Option<T>,
    unit_diffusion: bool,
}

impl<T> fmt::Debug for ModelSpec<T>
where
    T: fmt::Debug,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("x0", &self.x0)
            .field("sigma0", &self.sigma0)
            .field("sigma_sup", &self.sigma_sup)
            .field("b_prime_sup", &self.b_prime_sup)
            .field("unit_diffusion", &self.unit_diffusion)
            .finish_non_exhaustive()
    }
}

impl<T: Real> ModelSpec<T> {
    pub fn new(b: ScalarFn<T>, b_prime: ScalarFn<T>, sigma: ScalarFn<T>, sigma_prime: ScalarFn<T>, x0: T, sigma0: T, sigma_sup: T) -> Result<Self> {
        if !(sigma0 > T::zero()) || sigma_sup < sigma0 {
            return Err(Error::Domain(format!("need 0 < sigma0 <= sigma_sup, got {sigma0}, {sigma_sup}")));
        }
        Ok(Self {
            b,
            b_prime,
            sigma,
            sigma_prime,
            x0,
            sigma0,
            sigma_sup,
            b_prime_sup: None,
            unit_diffusion: false,
        })
    }

    /// `σ ≡ 1` with the given drift.
    pub fn unit(b: ScalarFn<T>, b_prime: ScalarFn<T>, x0: T) -> Self {
        Self {
            b,
            b_prime,
            sigma: Arc::new(|_| T::one()),
            sigma_prime: Arc::new(|_| T::zero()),
            x0,
            sigma0: T::one(),
            sigma_sup: T::one(),
            b_prime_sup: None,
            unit_diffusion: true,
        }
    }

    /// `X = x0 + B^H`.
    pub fn pure_noise(x0: T) -> Self {
        Self::unit(Arc::new(|_| T::zero()), Arc::new(|_| T::zero()), x0).with_b_prime_sup(T::zero())
    }

    /// `b(x) = -κx`, `σ ≡ 1`.
    pub fn ornstein_uhlenbeck(kappa: T, x0: T) -> Self {
        Self::unit(Arc::new(move |x| -kappa * x), Arc::new(move |_| -kappa), x0).with_b_prime_sup(kappa.abs())
    }

    /// `b(x) = cos x`, `σ ≡ 1`.
    pub fn cos_drift(x0: T) -> Self {
        Self::unit(Arc::new(|x: T| x.cos()), Arc::new(|x: T| -x.sin()), x0).with_b_prime_sup(T::one())
    }

    pub fn with_b_prime_sup(mut self, v: T) -> Self {
        self.b_prime_sup = Some(v);
        self
    }

    pub fn with_x0(mut self, x0: T) -> Self {
        self.x0 = x0;
        self
    }

    /// True when the model was built with `σ ≡ 1`.
    pub fn is_unit_diffusion(&self) -> bool {
        self.unit_diffusion
    }

    /// `σ(x)`, failing when the ellipticity bound is violated.
    #[inline]
    pub fn sigma_checked(&self, x: T) -> Result<T> {
        let s = (self.sigma)(x);
        if s.abs() >= self.sigma0 {
            Ok(s)
        } else {
            Err(Error::Ellipticity {
                x: x.f64(),
                sigma: s.f64(),
                sigma0: self.sigma0.f64(),
            })
        }
    }
}

/// Solution of the SDE on the driver's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePath<T> {
    pub grid: TimeGrid<T>,
    pub hurst: HurstParam<T>,
    pub values: Vec<T>,
}

impl<T: Real> GridPath<T> for SdePath<T> {
    fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }
    fn values(&self) -> &[T] {
        &self.values
    }
}

/// Heun predictor-corrector along an fBm path.
pub fn euler_solve<T: Real>(model: &ModelSpec<T>, driver: &FbmPath<T>) -> Result<SdePath<T>> {
    let values = heun_values(model, driver.grid.step(), &driver.values)?;
    Ok(SdePath {
        grid: driver.grid,
        hurst: driver.hurst,
        values,
    })
}

/// Heun scheme on raw driver node values; returns the state at every node.
pub fn heun_values<T: Real>(model: &ModelSpec<T>, dt: T, driver: &[T]) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(driver.len());
    heun_into(model, dt, driver, &mut out)?;
    Ok(out)
}

/// As [`heun_values`], reusing `out`.
pub fn heun_into<T: Real>(model: &ModelSpec<T>, dt: T, driver: &[T], out: &mut Vec<T>) -> Result<()> {
    out.clear();
    let half = T::of(0.5);
    let mut x = model.x0;
    out.push(x);
    if model.unit_diffusion {
        for (k, w) in driver.windows(2).enumerate() {
            let db = w[1] - w[0];
            let bx = (model.b)(x);
            let pred = x + bx * dt + db;
            x = x + half * (bx + (model.b)(pred)) * dt + db;
            if !x.is_finite() {
                return Err(Error::NonFinite { step: k + 1 });
            }
            out.push(x);
        }
        return Ok(());
    }
    for (k, w) in driver.windows(2).enumerate() {
        let db = w[1] - w[0];
        let bx = (model.b)(x);
        let sx = model.sigma_checked(x)?;
        let pred = x + bx * dt + sx * db;
        let sp = model.sigma_checked(pred)?;
        x = x + half * (bx + (model.b)(pred)) * dt + half * (sx + sp) * db;
        if !x.is_finite() {
            return Err(Error::NonFinite { step: k + 1 });
        }
        out.push(x);
    }
    Ok(())
}

/// `F(x) = ∫_0^x dz/σ(z)` with its inverse and the transformed drift.
#[derive(Clone)]
pub struct LampertiMap<T> {
    model: ModelSpec<T>,
    // F at integer multiples of `spacing` in [-half_len, half_len]·spacing.
    table: Vec<T>,
    spacing: T,
    half_len: usize,
    quad: QuadratureConfig,
    pub theta: T,
}

impl<T: Real> fmt::Debug for LampertiMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LampertiMap")
            .field("theta", &self.theta)
            .field("spacing", &self.spacing)
            .finish_non_exhaustive()
    }
}

const INVERSE_TOL: f64 = 1e-12;
const TABLE_HALF_LEN: usize = 64;

impl<T: Real> LampertiMap<T> {
    pub fn new(model: &ModelSpec<T>, threshold: T) -> Result<Self> {
        let quad = QuadratureConfig {
            abs_tol: 1e-14,
            rel_tol: 1e-13,
            max_subdivisions: 200,
        };
        let mut map = Self {
            model: model.clone(),
            table: Vec::new(),
            spacing: T::one(),
            half_len: TABLE_HALF_LEN,
            quad,
            theta: T::zero(),
        };
        if !model.unit_diffusion {
            let n = TABLE_HALF_LEN;
            let mut table = vec![T::zero(); 2 * n + 1];
            for i in 1..=n {
                let right = T::of(i as f64);
                let left = -right;
                table[n + i] = table[n + i - 1] + map.segment(right - T::one(), right)?;
                table[n - i] = table[n - i + 1] - map.segment(left, left + T::one())?;
            }
            map.table = table;
        }
        map.theta = map.forward(threshold)?;
        Ok(map)
    }

    fn segment(&self, a: T, b: T) -> Result<T> {
        let m = &self.model;
        let v = integrate(|z| T::one() / (m.sigma)(z), a, b, &self.quad)?;
        m.sigma_checked(a)?;
        m.sigma_checked(b)?;
        Ok(v.value)
    }

    /// `F(x)`.
    pub fn forward(&self, x: T) -> Result<T> {
        if self.model.unit_diffusion {
            return Ok(x);
        }
        let n = self.half_len as i64;
        let k = (x / self.spacing).round().to_i64().unwrap_or(i64::MAX);
        if k.abs() <= n {
            let node = T::of(k as f64) * self.spacing;
            let base = self.table[(k + n) as usize];
            if x == node {
                return Ok(base);
            }
            return Ok(base + self.segment(node, x)?);
        }
        if !x.is_finite() {
            return Err(Error::Domain(format!("Lamperti map at non-finite x = {x}")));
        }
        // Beyond the table, walk outwards one spacing at a time.
        let dir = x.signum();
        let mut node = T::of(n as f64) * self.spacing * dir;
        let mut acc = if dir > T::zero() { self.table[2 * self.half_len] } else { self.table[0] };
        while (x - node).abs() > self.spacing {
            let next = node + dir * self.spacing;
            acc = acc + self.segment(node, next)?;
            node = next;
        }
        Ok(acc + self.segment(node, x)?)
    }

    /// `F⁻¹(y)` by bracketing and safeguarded secant steps.
    pub fn inverse(&self, y: T) -> Result<T> {
        if self.model.unit_diffusion {
            return Ok(y);
        }
        let m = &self.model;
        let g = |x: T| self.forward(x).map(|f| f - y);
        // |F′| lies in [1/σ_sup, 1/σ0], so the root is within |y|·σ_sup of 0.
        let mut lo = -(y.abs() * m.sigma_sup + T::one());
        let mut hi = -lo;
        let mut glo = g(lo)?;
        let mut ghi = g(hi)?;
        let mut expansions = 0;
        while glo.signum() == ghi.signum() {
            lo = lo * T::of(2.0);
            hi = hi * T::of(2.0);
            glo = g(lo)?;
            ghi = g(hi)?;
            expansions += 1;
            if expansions > 60 {
                return Err(Error::RootFinding { target: y.f64() });
            }
        }
        let tol = T::of(INVERSE_TOL);
        for _ in 0..200 {
            let width = (hi - lo).abs();
            if width <= tol * (T::one() + lo.abs().max(hi.abs())) {
                return Ok(T::of(0.5) * (lo + hi));
            }
            let mut x = hi - ghi * (hi - lo) / (ghi - glo);
            let mid = T::of(0.5) * (lo + hi);
            // Fall back to bisection when the secant point leaves the inner bracket.
            let margin = T::of(0.05) * width;
            if !x.is_finite() || x <= lo.min(hi) + margin || x >= lo.max(hi) - margin {
                x = mid;
            }
            let gx = g(x)?;
            if gx == T::zero() {
                return Ok(x);
            }
            if gx.signum() == glo.signum() {
                lo = x;
                glo = gx;
            } else {
                hi = x;
                ghi = gx;
            }
            if gx.abs() <= tol * T::of(1e-3) {
                return Ok(x);
            }
        }
        Err(Error::RootFinding { target: y.f64() })
    }

    /// `b̃(y) = b(F⁻¹ y)/σ(F⁻¹ y)`.
    pub fn b_tilde(&self, y: T) -> Result<T> {
        let x = self.inverse(y)?;
        Ok((self.model.b)(x) / self.model.sigma_checked(x)?)
    }

    /// `b̃′(y) = b′(x) - b(x)σ′(x)/σ(x)` at `x = F⁻¹(y)`.
    pub fn b_tilde_prime(&self, y: T) -> Result<T> {
        let x = self.inverse(y)?;
        let m = &self.model;
        Ok((m.b_prime)(x) - (m.b)(x) * (m.sigma_prime)(x) / m.sigma_checked(x)?)
    }

    /// The transformed unit-diffusion model started at `F(x0)`. Failures in
    /// the inverse map surface as NaN, which the integrator reports.
    pub fn to_unit_model(&self) -> Result<ModelSpec<T>> {
        if self.model.unit_diffusion {
            return Ok(self.model.clone());
        }
        let x0 = self.forward(self.model.x0)?;
        let a = Arc::new(self.clone());
        let b = a.clone();
        Ok(ModelSpec::unit(
            Arc::new(move |y| a.b_tilde(y).unwrap_or(T::nan())),
            Arc::new(move |y| b.b_tilde_prime(y).unwrap_or(T::nan())),
            x0,
        ))
    }
}

/// Lamperti transform of `model` with `theta = F(threshold)`.
pub fn lamperti<T: Real>(model: &ModelSpec<T>, threshold: T) -> Result<LampertiMap<T>> {
    LampertiMap::new(model, threshold)
}

/// `D_r X_t` for `t ≥ t_r` along one unit-diffusion path.
#[derive(Debug, Clone, PartialEq)]
pub struct MalliavinPath<T> {
    pub grid: TimeGrid<T>,
    pub r_index: usize,
    /// Values at nodes `r_index..=n`.
    pub values: Vec<T>,
}

fn check_unit<T: Real>(model: &ModelSpec<T>, path: &[T]) -> Result<()> {
    if model.unit_diffusion {
        return Ok(());
    }
    let tol = T::of(1e-12);
    if path.iter().all(|&x| ((model.sigma)(x) - T::one()).abs() <= tol) {
        Ok(())
    } else {
        Err(Error::NotUnitDiffusion)
    }
}

/// Cumulative log of the trapezoidal growth factors: `D_r X_{t_s} = exp(L_s - L_r)`.
pub fn malliavin_log_factors<T: Real>(model: &ModelSpec<T>, dt: T, path: &[T]) -> Result<Vec<T>> {
    check_unit(model, path)?;
    let half_dt = T::of(0.5) * dt;
    let mut out = Vec::with_capacity(path.len());
    let mut acc = T::zero();
    out.push(acc);
    let mut bp_prev = (model.b_prime)(path[0]);
    for (k, &x) in path.iter().enumerate().skip(1) {
        let bp = (model.b_prime)(x);
        let den = T::one() - half_dt * bp;
        if !(den > T::zero()) {
            return Err(Error::Domain(format!("trapezoidal Malliavin step {k} unstable: 1 - Δb'/2 = {den}")));
        }
        acc = acc + ((T::one() + half_dt * bp_prev) / den).ln();
        if !acc.is_finite() {
            return Err(Error::NonFinite { step: k });
        }
        out.push(acc);
        bp_prev = bp;
    }
    Ok(out)
}

/// Trapezoidal solution of `D_r X_t = 1 + ∫_r^t D_r X_s b′(X_s) ds`.
pub fn malliavin_derivative<T: Real>(model: &ModelSpec<T>, path: &SdePath<T>, r_index: usize) -> Result<MalliavinPath<T>> {
    let n = path.grid.n_steps();
    if r_index > n {
        return Err(Error::Domain(format!("r_index {r_index} beyond grid of {n} steps")));
    }
    let logs = malliavin_log_factors(model, path.grid.step(), &path.values)?;
    let lr = logs[r_index];
    let values = logs[r_index..].iter().map(|&l| (l - lr).exp()).collect();
    Ok(MalliavinPath { grid: path.grid, r_index, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{circulant_sample, CirculantSampler};
    use crate::rng::SeedStream;

    fn h(x: f64) -> HurstParam<f64> {
        HurstParam::new(x).unwrap()
    }

    fn geometric(x0: f64) -> ModelSpec<f64> {
        // σ(x) = x stays elliptic on the sampled region only; σ0 is set small.
        ModelSpec::new(Arc::new(|_| 0.0), Arc::new(|_| 0.0), Arc::new(|x| x), Arc::new(|_| 1.0), x0, 1e-12, 1e12).unwrap()
    }

    #[test]
    fn pure_noise_reproduces_driver() {
        let g = TimeGrid::new(1.0, 64).unwrap();
        let d = circulant_sample(h(0.7), g, &SeedStream::new(1, 1)).unwrap();
        let p = euler_solve(&ModelSpec::pure_noise(0.3), &d).unwrap();
        for (x, b) in p.values.iter().zip(&d.values) {
            assert!((x - (0.3 + b)).abs() < 1e-14);
        }
    }

    #[test]
    fn heun_strong_order_on_geometric_noise() {
        for hv in [0.5, 0.75] {
            let fine = TimeGrid::new(1.0, 1024).unwrap();
            let sampler = CirculantSampler::new(h(hv), fine).unwrap();
            let mut err = [0.0f64; 3];
            let paths = 200;
            for i in 0..paths {
                let d = sampler.sample(&SeedStream::new(3, i));
                for (j, n) in [32usize, 64, 128].iter().enumerate() {
                    let stride = 1024 / n;
                    let vals: Vec<f64> = d.values.iter().step_by(stride).copied().collect();
                    let x = heun_values(&geometric(1.0), 1.0 / *n as f64, &vals).unwrap();
                    err[j] += (x[*n] - d.values[1024].exp()).abs() / paths as f64;
                }
            }
            assert!(err[0] / err[1] >= 1.8 && err[1] / err[2] >= 1.8, "H={hv}: {err:?}");
        }
    }

    #[test]
    fn ou_mean() {
        let g = TimeGrid::new(1.0, 200).unwrap();
        let m = ModelSpec::ornstein_uhlenbeck(1.0, 1.0);
        let n = 100_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let inc = crate::fbm::brownian_increments(&g, &SeedStream::new(8, i));
            let d = FbmPath::from_increments(g, h(0.5), &inc).unwrap();
            let x = euler_solve(&m, &d).unwrap().values[200];
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - (-1.0f64).exp()).abs() < 4.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn ellipticity_violation_is_an_error() {
        let m = ModelSpec::new(Arc::new(|_| 0.0), Arc::new(|_| 0.0), Arc::new(|x: f64| x), Arc::new(|_| 1.0), 0.5, 0.4, 10.0).unwrap();
        let r = heun_values(&m, 0.1, &[0.0, -1.0, -2.0]);
        assert!(matches!(r, Err(Error::Ellipticity { .. })));
    }

    #[test]
    fn non_finite_reports_step() {
        let m = ModelSpec::unit(Arc::new(|x: f64| x * x * x), Arc::new(|x| 3.0 * x * x), 10.0);
        let driver = vec![0.0; 40];
        match heun_values(&m, 1.0, &driver) {
            Err(Error::NonFinite { step }) => assert!(step > 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lamperti_identity_and_constant_sigma() {
        let m = ModelSpec::cos_drift(0.0);
        let l = lamperti(&m, 1.0).unwrap();
        assert_eq!(l.forward(0.7).unwrap(), 0.7);
        assert_eq!(l.theta, 1.0);
        assert_eq!(l.b_tilde(0.3).unwrap(), 0.3f64.cos());

        let m2 = ModelSpec::<f64>::new(Arc::new(|x| x), Arc::new(|_| 1.0), Arc::new(|_| 2.0), Arc::new(|_| 0.0), 0.0, 2.0, 2.0).unwrap();
        let l2 = lamperti(&m2, 1.0).unwrap();
        assert!((l2.theta - 0.5).abs() < 1e-14);
        assert!((l2.forward(-3.3).unwrap() + 1.65).abs() < 1e-13);
        assert!((l2.b_tilde(0.7).unwrap() - 0.7).abs() < 1e-11);
    }

    fn sine_sigma() -> ModelSpec<f64> {
        ModelSpec::new(
            Arc::new(|x: f64| -x),
            Arc::new(|_| -1.0),
            Arc::new(|x: f64| 1.0 + 0.5 * x.sin()),
            Arc::new(|x: f64| 0.5 * x.cos()),
            0.2,
            0.5,
            1.5,
        )
        .unwrap()
    }

    #[test]
    fn lamperti_round_trip() {
        let l = lamperti(&sine_sigma(), 1.0).unwrap();
        for x in [-2.0, 0.0, 3.0, 70.0] {
            let back = l.inverse(l.forward(x).unwrap()).unwrap();
            assert!((back - x).abs() < 1e-10, "{x} -> {back}");
        }
    }

    #[test]
    fn lamperti_drift_derivative_matches_finite_difference() {
        let l = lamperti(&sine_sigma(), 1.0).unwrap();
        for y in [-1.0, 0.4, 2.0] {
            let e = 1e-5;
            let fd = (l.b_tilde(y + e).unwrap() - l.b_tilde(y - e).unwrap()) / (2.0 * e);
            assert!((fd - l.b_tilde_prime(y).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn lamperti_commutes_with_the_scheme() {
        let model = sine_sigma();
        let map = lamperti(&model, 1.0).unwrap();
        let unit = map.to_unit_model().unwrap();
        let mut prev = f64::INFINITY;
        for n in [64usize, 128, 256] {
            let g = TimeGrid::new(1.0, n).unwrap();
            let d = circulant_sample(h(0.7), TimeGrid::new(1.0, 256).unwrap(), &SeedStream::new(4, 0)).unwrap();
            let vals: Vec<f64> = d.values.iter().step_by(256 / n).copied().collect();
            let x = heun_values(&model, g.step(), &vals).unwrap();
            let y = heun_values(&unit, g.step(), &vals).unwrap();
            let gap = x.iter().zip(&y).map(|(a, b)| (map.forward(*a).unwrap() - b).abs()).fold(0.0, f64::max);
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn malliavin_constant_cases() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let d = circulant_sample(h(0.6), g, &SeedStream::new(2, 2)).unwrap();
        let zero = euler_solve(&ModelSpec::pure_noise(0.0), &d).unwrap();
        let m0 = malliavin_derivative(&ModelSpec::pure_noise(0.0), &zero, 10).unwrap();
        assert!(m0.values.iter().all(|&v| v == 1.0));

        let kappa = 0.7;
        let lin = ModelSpec::unit(Arc::new(move |x: f64| kappa * x), Arc::new(move |_| kappa), 0.0);
        let p = euler_solve(&lin, &d).unwrap();
        let m = malliavin_derivative(&lin, &p, 20).unwrap();
        assert_eq!(m.values[0], 1.0);
        for (i, v) in m.values.iter().enumerate() {
            let exact = (kappa * i as f64 * 0.01).exp();
            assert!((v - exact).abs() < 1e-5 * exact);
        }
    }

    #[test]
    fn malliavin_bound_and_unit_check() {
        let g = TimeGrid::new(2.0, 400).unwrap();
        let m = ModelSpec::cos_drift(0.0);
        let bsup = m.b_prime_sup.unwrap();
        let c_t = bsup * (bsup * 2.0f64).exp();
        for i in 0..20 {
            let d = circulant_sample(h(0.7), g, &SeedStream::new(6, i)).unwrap();
            let p = euler_solve(&m, &d).unwrap();
            for r in [0usize, 100, 399] {
                let mp = malliavin_derivative(&m, &p, r).unwrap();
                for (j, v) in mp.values.iter().enumerate().skip(1) {
                    let dt = j as f64 * g.step();
                    assert!(v.abs() <= (bsup * dt).exp());
                    assert!((v - 1.0).abs() / dt <= c_t);
                }
            }
        }
        let p = SdePath {
            grid: TimeGrid::new(1.0, 2).unwrap(),
            hurst: h(0.5),
            values: vec![1.0, 1.1, 1.2],
        };
        assert_eq!(malliavin_derivative(&geometric(1.0), &p, 0), Err(Error::NotUnitDiffusion));
    }
}
