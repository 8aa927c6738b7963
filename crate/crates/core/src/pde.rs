//! Finite-difference solvers for the backward Kolmogorov equation
//! `∂_s u + b ∂_x u + ½ ∂_xx u = 0` and for the hitting-time ODE
//! `b̃ w′ + ½ w″ = λ w`, plus the envelope functions used by the Laplace-gap
//! experiments and numerical checks of the `w_λ` bounds.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fbm::HurstParam;
use crate::scalar::Real;

/// Solve a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored.
pub fn thomas<T: Real>(lower: &[T], diag: &[T], upper: &[T], rhs: &mut [T]) -> Result<()> {
    let n = diag.len();
    let mut c = vec![T::zero(); n];
    let mut beta = diag[0];
    if beta == T::zero() || !beta.is_finite() {
        return Err(Error::SingularSystem { row: 0 });
    }
    rhs[0] = rhs[0] / beta;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i - 1];
        if beta == T::zero() || !beta.is_finite() {
            return Err(Error::SingularSystem { row: i });
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] = rhs[i] - c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Numerical `u(s, x)` on a uniform `(s, x)` grid with its space derivatives.
#[derive(Debug, Clone)]
pub struct PdeSolution<T> {
    pub t: T,
    pub x_lo: T,
    pub x_hi: T,
    pub xs: Vec<T>,
    pub ss: Vec<T>,
    /// `values[[i, j]] = u(s_i, x_j)`.
    pub values: Array2<T>,
    pub dx: Array2<T>,
    pub dxx: Array2<T>,
    /// Set when a monotone terminal condition produced a non-monotone slice.
    pub oscillation: bool,
}

impl<T: Real> PdeSolution<T> {
    pub fn n_s(&self) -> usize {
        self.ss.len() - 1
    }

    pub fn n_x(&self) -> usize {
        self.xs.len() - 1
    }

    fn interp(&self, arr: &Array2<T>, s_index: usize, x: T) -> (T, bool) {
        let n = self.n_x();
        let h = (self.x_hi - self.x_lo) / T::of(n as f64);
        let clamped = x < self.x_lo || x > self.x_hi;
        let xc = x.max(self.x_lo).min(self.x_hi);
        let pos = (xc - self.x_lo) / h;
        let j = pos.floor().to_usize().unwrap_or(0).min(n - 1);
        let frac = pos - T::of(j as f64);
        let row = arr.row(s_index);
        (row[j] + frac * (row[j + 1] - row[j]), clamped)
    }

    /// `u(s_i, x)` by linear interpolation; the flag reports clamping to the domain.
    pub fn u_at(&self, s_index: usize, x: T) -> (T, bool) {
        self.interp(&self.values, s_index, x)
    }

    pub fn dx_at(&self, s_index: usize, x: T) -> (T, bool) {
        self.interp(&self.dx, s_index, x)
    }

    pub fn dxx_at(&self, s_index: usize, x: T) -> (T, bool) {
        self.interp(&self.dxx, s_index, x)
    }
}

/// Artificial boundaries `x0 ± max(8, 8√t)`.
pub fn default_pde_domain<T: Real>(x0: T, t: T) -> (T, T) {
    let w = T::of(8.0).max(T::of(8.0) * t.sqrt());
    (x0 - w, x0 + w)
}

/// Crank–Nicolson for the backward equation on `[0, t] × [x_lo, x_hi]`
/// with `u(t, ·) = φ` and zero-curvature boundaries.
pub fn solve_backward_pde<T: Real>(b: &dyn Fn(T) -> T, phi: &dyn Fn(T) -> T, t: T, domain: (T, T), n_x: usize, n_s: usize) -> Result<PdeSolution<T>> {
    let (x_lo, x_hi) = domain;
    if !(x_hi > x_lo) || n_x < 4 || n_s == 0 || !(t > T::zero()) {
        return Err(Error::InvalidGrid(format!(
            "PDE grid needs x_lo < x_hi, n_x ≥ 4, n_s ≥ 1, t > 0 (got [{x_lo}, {x_hi}], {n_x}, {n_s}, {t})"
        )));
    }
    let n = n_x;
    let h = (x_hi - x_lo) / T::of(n as f64);
    let ds = t / T::of(n_s as f64);
    let xs: Vec<T> = (0..=n).map(|j| if j == n { x_hi } else { x_lo + h * T::of(j as f64) }).collect();
    let ss: Vec<T> = (0..=n_s).map(|i| if i == n_s { t } else { ds * T::of(i as f64) }).collect();
    let half = T::of(0.5);
    let inv_h2 = T::one() / (h * h);
    let inv_2h = T::one() / (T::of(2.0) * h);

    // Interior operator coefficients after eliminating the boundary values.
    let m = n - 1;
    let mut lo = vec![T::zero(); m];
    let mut di = vec![T::zero(); m];
    let mut up = vec![T::zero(); m];
    for r in 0..m {
        let bi = b(xs[r + 1]);
        lo[r] = half * inv_h2 - bi * inv_2h;
        di[r] = -inv_h2;
        up[r] = half * inv_h2 + bi * inv_2h;
    }
    // u_0 = 2u_1 - u_2 and u_n = 2u_{n-1} - u_{n-2}.
    di[0] = di[0] + T::of(2.0) * lo[0];
    up[0] = up[0] - lo[0];
    lo[0] = T::zero();
    di[m - 1] = di[m - 1] + T::of(2.0) * up[m - 1];
    lo[m - 1] = lo[m - 1] - up[m - 1];
    up[m - 1] = T::zero();

    let k = half * ds;
    let a_lo: Vec<T> = lo.iter().map(|&v| -k * v).collect();
    let a_di: Vec<T> = di.iter().map(|&v| T::one() - k * v).collect();
    let a_up: Vec<T> = up.iter().map(|&v| -k * v).collect();

    let mut values = Array2::<T>::zeros((n_s + 1, n + 1));
    let mut cur: Vec<T> = xs.iter().map(|&x| phi(x)).collect();
    values.row_mut(n_s).assign(&ndarray::ArrayView1::from(&cur[..]));
    let mut rhs = vec![T::zero(); m];
    for i in (0..n_s).rev() {
        for r in 0..m {
            let j = r + 1;
            let mut lu = di[r] * cur[j];
            if r > 0 {
                lu = lu + lo[r] * cur[j - 1];
            }
            if r + 1 < m {
                lu = lu + up[r] * cur[j + 1];
            }
            rhs[r] = cur[j] + k * lu;
        }
        thomas(&a_lo, &a_di, &a_up, &mut rhs)?;
        cur[1..n].copy_from_slice(&rhs);
        cur[0] = T::of(2.0) * cur[1] - cur[2];
        cur[n] = T::of(2.0) * cur[n - 1] - cur[n - 2];
        values.row_mut(i).assign(&ndarray::ArrayView1::from(&cur[..]));
    }

    let mut dx = Array2::<T>::zeros((n_s + 1, n + 1));
    let mut dxx = Array2::<T>::zeros((n_s + 1, n + 1));
    for i in 0..=n_s {
        let u = values.row(i);
        for j in 1..n {
            dx[[i, j]] = (u[j + 1] - u[j - 1]) * inv_2h;
            dxx[[i, j]] = (u[j + 1] - T::of(2.0) * u[j] + u[j - 1]) * inv_h2;
        }
        dx[[i, 0]] = (-T::of(3.0) * u[0] + T::of(4.0) * u[1] - u[2]) * inv_2h;
        dx[[i, n]] = (T::of(3.0) * u[n] - T::of(4.0) * u[n - 1] + u[n - 2]) * inv_2h;
    }

    let monotone = |row: ndarray::ArrayView1<'_, T>| {
        let inc = row.windows(2).into_iter().all(|w| w[1] >= w[0]);
        let dec = row.windows(2).into_iter().all(|w| w[1] <= w[0]);
        inc || dec
    };
    let oscillation = monotone(values.row(n_s)) && (0..n_s).any(|i| !monotone(values.row(i)));
    if oscillation {
        log::warn!("Crank–Nicolson solution lost monotonicity; refine n_x or n_s");
    }
    Ok(PdeSolution {
        t,
        x_lo,
        x_hi,
        xs,
        ss,
        values,
        dx,
        dxx,
        oscillation,
    })
}

/// Condition imposed at the truncated end `θ - L` of the ODE domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WBoundary {
    /// `w(θ - L) = 0`.
    #[default]
    Dirichlet,
    /// `w′ = κ w` with `κ = √(2λ + b̃²) - b̃` frozen at `θ - L`, exact for
    /// constant drift.
    Radiation,
}

/// `w_λ` and its derivatives on `[θ - L, θ]`.
#[derive(Debug, Clone)]
pub struct OdeSolution<T> {
    pub lambda: T,
    pub theta: T,
    pub depth: T,
    pub boundary: WBoundary,
    pub ys: Vec<T>,
    pub w: Vec<T>,
    pub dw: Vec<T>,
    pub d2w: Vec<T>,
}

impl<T: Real> OdeSolution<T> {
    pub fn step(&self) -> T {
        self.depth / T::of((self.ys.len() - 1) as f64)
    }
}

/// Truncation depth `max(20, 10/√(2λ))`.
pub fn default_depth<T: Real>(lambda: T) -> T {
    T::of(20.0).max(T::of(10.0) / (T::of(2.0) * lambda).sqrt())
}

/// Centered second-order finite differences for `b̃ w′ + ½ w″ = λ w` with
/// `w(θ) = 1` and `w(θ - L) = 0`.
pub fn solve_w_ode<T: Real>(b_tilde: &dyn Fn(T) -> T, theta: T, lambda: T, depth: T, n_y: usize) -> Result<OdeSolution<T>> {
    solve_w_ode_with(b_tilde, theta, lambda, depth, n_y, WBoundary::Dirichlet)
}

pub fn solve_w_ode_with<T: Real>(b_tilde: &dyn Fn(T) -> T, theta: T, lambda: T, depth: T, n_y: usize, boundary: WBoundary) -> Result<OdeSolution<T>> {
    if !(lambda > T::zero()) {
        return Err(Error::Domain(format!("w-ODE needs lambda > 0, got {lambda}")));
    }
    if n_y < 4 || !(depth > T::zero()) {
        return Err(Error::InvalidGrid(format!("w-ODE needs n_y ≥ 4 and depth > 0 (got {n_y}, {depth})")));
    }
    let n = n_y;
    let h = depth / T::of(n as f64);
    let y_lo = theta - depth;
    let ys: Vec<T> = (0..=n).map(|i| if i == n { theta } else { y_lo + h * T::of(i as f64) }).collect();
    let half = T::of(0.5);
    let two = T::of(2.0);
    let inv_h2 = T::one() / (h * h);
    let inv_2h = T::one() / (two * h);
    let bt: Vec<T> = ys.iter().map(|&y| b_tilde(y)).collect();
    let alpha = |i: usize| half * inv_h2 - bt[i] * inv_2h;
    let gamma = |i: usize| half * inv_h2 + bt[i] * inv_2h;
    let kappa = (two * lambda + bt[0] * bt[0]).sqrt() - bt[0];

    // Unknowns are w_first .. w_{n-1}.
    let first = match boundary {
        WBoundary::Dirichlet => 1,
        WBoundary::Radiation => 0,
    };
    let m = n - first;
    let mut lo = vec![T::zero(); m];
    let mut di = vec![T::zero(); m];
    let mut up = vec![T::zero(); m];
    let mut rhs = vec![T::zero(); m];
    for r in 0..m {
        let i = r + first;
        lo[r] = alpha(i);
        di[r] = -inv_h2 - lambda;
        up[r] = gamma(i);
    }
    if boundary == WBoundary::Radiation {
        // Ghost node w_{-1} = w_1 - 2hκ w_0.
        di[0] = di[0] - two * h * kappa * alpha(0);
        up[0] = up[0] + alpha(0);
    }
    lo[0] = T::zero();
    rhs[m - 1] = -up[m - 1];
    up[m - 1] = T::zero();
    thomas(&lo, &di, &up, &mut rhs)?;
    let mut w = vec![T::zero(); n + 1];
    w[first..n].copy_from_slice(&rhs);
    w[n] = T::one();

    let mut dw = vec![T::zero(); n + 1];
    let mut d2w = vec![T::zero(); n + 1];
    for i in 1..n {
        dw[i] = (w[i + 1] - w[i - 1]) * inv_2h;
        d2w[i] = (w[i + 1] - two * w[i] + w[i - 1]) * inv_h2;
    }
    match boundary {
        WBoundary::Dirichlet => {
            dw[0] = (-T::of(3.0) * w[0] + T::of(4.0) * w[1] - w[2]) * inv_2h;
            d2w[0] = two * (lambda * w[0] - bt[0] * dw[0]);
        }
        WBoundary::Radiation => {
            dw[0] = kappa * w[0];
            let ghost = w[1] - two * h * kappa * w[0];
            d2w[0] = (w[1] - two * w[0] + ghost) * inv_h2;
        }
    }
    dw[n] = (T::of(3.0) * w[n] - T::of(4.0) * w[n - 1] + w[n - 2]) * inv_2h;
    // Curvature at θ from the equation itself.
    d2w[n] = two * (lambda * w[n] - bt[n] * dw[n]);
    Ok(OdeSolution {
        lambda,
        theta,
        depth,
        boundary,
        ys,
        w,
        dw,
        d2w,
    })
}

/// Max-norm of `b̃ w′ + ½ w″ - λ w` with fourth-order derivative stencils,
/// over nodes at least two cells from either end.
pub fn ode_residual<T: Real>(sol: &OdeSolution<T>, b_tilde: &dyn Fn(T) -> T) -> T {
    let n = sol.ys.len() - 1;
    let h = sol.step();
    let w = &sol.w;
    let mut worst = T::zero();
    for i in 2..n - 1 {
        if i + 2 > n {
            break;
        }
        let d1 = (w[i - 2] - T::of(8.0) * w[i - 1] + T::of(8.0) * w[i + 1] - w[i + 2]) / (T::of(12.0) * h);
        let d2 = (-w[i - 2] + T::of(16.0) * w[i - 1] - T::of(30.0) * w[i] + T::of(16.0) * w[i + 1] - w[i + 2]) / (T::of(12.0) * h * h);
        let r = (b_tilde(sol.ys[i]) * d1 + T::of(0.5) * d2 - sol.lambda * w[i]).abs();
        worst = worst.max(r);
    }
    worst
}

/// Quadratic `a x² + b x + c` matching value 1, slope `w′` and curvature `w″`
/// at `x = 1`; [`QuadraticExtension::eval`] re-centres it at `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticExtension<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub center: T,
}

impl<T: Real> QuadraticExtension<T> {
    fn local(&self, y: T) -> T {
        y - self.center + T::one()
    }

    pub fn eval(&self, y: T) -> T {
        let x = self.local(y);
        self.a * x * x + self.b * x + self.c
    }

    pub fn slope(&self, y: T) -> T {
        T::of(2.0) * self.a * self.local(y) + self.b
    }

    pub fn curvature(&self) -> T {
        T::of(2.0) * self.a
    }
}

/// Coefficients from `(w(1), w′(1), w″(1))`; `w(1) = 1` by the boundary
/// condition, so only the derivatives enter.
pub fn quadratic_extension<T: Real>(dw: T, d2w: T) -> QuadraticExtension<T> {
    quadratic_extension_at(T::one(), dw, d2w)
}

pub fn quadratic_extension_at<T: Real>(center: T, dw: T, d2w: T) -> QuadraticExtension<T> {
    let half = T::of(0.5);
    QuadraticExtension {
        a: half * d2w,
        b: dw - d2w,
        c: T::one() - dw + half * d2w,
        center,
    }
}

/// `S(x) = min(x, x^{1/(2H)})`.
pub fn s_func<T: Real>(x: T, hurst: HurstParam<T>) -> Result<T> {
    if x < T::zero() {
        return Err(Error::Domain(format!("S needs x ≥ 0, got {x}")));
    }
    Ok(x.min(x.powf(T::one() / (T::of(2.0) * hurst.value()))))
}

/// `𝓡(λ) = √(2λ + μ²) - μ`.
pub fn r_func<T: Real>(lambda: T, mu: T) -> Result<T> {
    if lambda < T::zero() || mu < T::zero() {
        return Err(Error::Domain(format!("R needs λ, μ ≥ 0, got ({lambda}, {mu})")));
    }
    Ok((T::of(2.0) * lambda + mu * mu).sqrt() - mu)
}

/// Numerical constants for the bounds
/// `w ≤ exp(-C(θ - y)𝓡(λ))`, `w′ ≤ C(1 + λ) w` and `|w″| ≤ C(1 + λ) w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WBoundsReport<T> {
    /// `μ` used for the separate fits (the supplied `sup |b̃|`).
    pub mu: T,
    /// Largest `C` for which the decay bound holds at every checked node.
    pub c_decay: T,
    /// Smallest `C` for the slope bound.
    pub c_slope: T,
    /// Smallest `C` for the curvature bound.
    pub c_curv: T,
    /// `max(c_slope, c_curv)`.
    pub c_deriv: T,
    /// One pair `(C, μ)` for all three bounds: `C = c_deriv` and the
    /// smallest `μ ≥ mu` for which the decay bound then holds.
    pub joint_c: T,
    pub joint_mu: T,
    /// `λ` values where each constant binds.
    pub decay_binding_lambda: T,
    pub deriv_binding_lambda: T,
    pub nodes_checked: usize,
    /// True when `c_decay > 0` and `c_deriv` is finite.
    pub holds: bool,
    /// True when the joint pair is finite and checked without violation.
    pub joint_holds: bool,
}

fn checked_nodes<T: Real>(sol: &OdeSolution<T>) -> impl Iterator<Item = usize> + '_ {
    let cutoff = match sol.boundary {
        WBoundary::Dirichlet => sol.theta - T::of(0.5) * sol.depth,
        WBoundary::Radiation => sol.theta - sol.depth,
    };
    (0..sol.ys.len()).filter(move |&i| sol.ys[i] >= cutoff && sol.w[i] > T::zero())
}

/// Fit λ-independent constants over all solutions. With a Dirichlet end the
/// nodes within `depth/2` of it are skipped, since there `w` is pinned to
/// zero and `w′/w` is an artefact of truncation; with a radiation end every
/// node is checked.
pub fn check_w_bounds<T: Real>(sols: &[OdeSolution<T>], mu: T) -> Result<WBoundsReport<T>> {
    if sols.is_empty() {
        return Err(Error::Empty("ODE solutions"));
    }
    let mut c_decay = T::infinity();
    let mut c_slope = T::zero();
    let mut c_curv = T::zero();
    let mut decay_l = sols[0].lambda;
    let mut deriv_l = sols[0].lambda;
    let mut nodes = 0;
    for sol in sols {
        let rl = r_func(sol.lambda, mu)?;
        let scale = T::one() + sol.lambda;
        for i in checked_nodes(sol) {
            let w = sol.w[i];
            nodes += 1;
            let dist = sol.theta - sol.ys[i];
            if dist > T::zero() {
                let c = -w.ln() / (dist * rl);
                if c < c_decay {
                    c_decay = c;
                    decay_l = sol.lambda;
                }
            }
            let cs = sol.dw[i] / (scale * w);
            let cc = sol.d2w[i].abs() / (scale * w);
            if cs > c_slope.max(c_curv) || cc > c_slope.max(c_curv) {
                deriv_l = sol.lambda;
            }
            c_slope = c_slope.max(cs);
            c_curv = c_curv.max(cc);
        }
    }
    let c_deriv = c_slope.max(c_curv);

    // R(λ, μ) ≤ r  ⇔  μ ≥ (2λ - r²)/(2r).
    let joint_c = c_deriv;
    let mut joint_mu = mu;
    let mut feasible = joint_c > T::zero() && joint_c.is_finite();
    for sol in sols {
        for i in checked_nodes(sol) {
            let dist = sol.theta - sol.ys[i];
            if !(dist > T::zero()) {
                continue;
            }
            let r = -sol.w[i].ln() / (joint_c * dist);
            if !(r > T::zero()) {
                feasible = false;
                continue;
            }
            let two_l = T::of(2.0) * sol.lambda;
            if r * r < two_l {
                joint_mu = joint_mu.max((two_l - r * r) / (T::of(2.0) * r));
            }
        }
    }
    let mut joint_ok = feasible && joint_mu.is_finite();
    if joint_ok {
        let slack = T::one() + T::of(1e-9);
        'outer: for sol in sols {
            let rl = r_func(sol.lambda, joint_mu)?;
            let scale = joint_c * (T::one() + sol.lambda) * slack;
            for i in checked_nodes(sol) {
                let w = sol.w[i];
                let dist = sol.theta - sol.ys[i];
                let decay = (-joint_c * dist * rl).exp();
                if w > decay * slack + T::of(1e-15) || sol.dw[i] > scale * w || sol.d2w[i].abs() > scale * w {
                    joint_ok = false;
                    break 'outer;
                }
            }
        }
    }
    Ok(WBoundsReport {
        mu,
        c_decay,
        c_slope,
        c_curv,
        c_deriv,
        joint_c,
        joint_mu,
        decay_binding_lambda: decay_l,
        deriv_binding_lambda: deriv_l,
        nodes_checked: nodes,
        holds: c_decay > T::zero() && c_deriv.is_finite(),
        joint_holds: joint_ok,
    })
}

/// `sup |b̃|` over the solution grids.
pub fn drift_sup<T: Real>(b_tilde: &dyn Fn(T) -> T, sols: &[OdeSolution<T>]) -> T {
    sols.iter().flat_map(|s| s.ys.iter()).map(|&y| b_tilde(y).abs()).fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hitting::drifted_bm_laplace_exact;

    fn zero(_: f64) -> f64 {
        0.0
    }

    #[test]
    fn thomas_solves() {
        let mut r = [1.0f64, 2.0, 3.0];
        thomas(&[0.0, 1.0, 1.0], &[4.0, 4.0, 4.0], &[1.0, 1.0, 0.0], &mut r).unwrap();
        // Solution of the 3x3 system checked by substitution.
        assert!((4.0 * r[0] + r[1] - 1.0).abs() < 1e-14);
        assert!((r[0] + 4.0 * r[1] + r[2] - 2.0).abs() < 1e-14);
        assert!((r[1] + 4.0 * r[2] - 3.0).abs() < 1e-14);
        assert!(thomas(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &mut [1.0, 1.0]).is_err());
    }

    #[test]
    fn martingale_and_second_moment() {
        let d = default_pde_domain(0.0, 1.0);
        let lin = solve_backward_pde(&zero, &|x| x, 1.0, d, 320, 100).unwrap();
        for i in 0..=100 {
            for (j, &x) in lin.xs.iter().enumerate() {
                assert!((lin.values[[i, j]] - x).abs() < 1e-11);
            }
        }
        let sq = solve_backward_pde(&zero, &|x| x * x, 1.0, d, 320, 100).unwrap();
        for (i, &s) in sq.ss.iter().enumerate() {
            for (j, &x) in sq.xs.iter().enumerate() {
                if x.abs() <= 3.0 {
                    assert!((sq.values[[i, j]] - (x * x + 1.0 - s)).abs() < 1e-4, "s={s} x={x}");
                }
            }
        }
        let (v, clamped) = sq.dxx_at(0, 0.3);
        assert!((v - 2.0).abs() < 1e-3 && !clamped);
        assert!(sq.u_at(0, 100.0).1);
    }

    #[test]
    fn maximum_principle() {
        let sol = solve_backward_pde(&|x: f64| -x, &|x: f64| x.cos(), 1.0, default_pde_domain(0.0, 1.0), 320, 200).unwrap();
        for v in sol.values.iter() {
            assert!(*v <= 1.0 + 1e-8 && *v >= -1.0 - 1e-8);
        }
        assert!(!sol.oscillation);
    }

    #[test]
    fn pde_matches_feynman_kac_sampling() {
        use crate::rng::{Lane, SeedStream};
        use crate::stats::MeanAcc;
        // dX = -X dt + dB from 0, E cos(X_1), by Euler paths.
        let sol = solve_backward_pde(&|x: f64| -x, &|x: f64| x.cos(), 1.0, default_pde_domain(0.0, 1.0), 400, 200).unwrap();
        let j0 = sol.xs.iter().position(|&x| x.abs() < 1e-12).unwrap();
        let n = 100_000;
        let steps = 200;
        let dt = 1.0 / steps as f64;
        let mut acc = MeanAcc::new();
        for p in 0..n {
            let z: Vec<f64> = SeedStream::new(17, p).normals(Lane::Aux, steps);
            let mut x = 0.0;
            for zi in z {
                x += -x * dt + dt.sqrt() * zi;
            }
            acc.push(x.cos());
        }
        assert!(
            (acc.mean() - sol.values[[0, j0]]).abs() < 3.0 * acc.std_err() + 2e-3,
            "{} vs {}",
            acc.mean(),
            sol.values[[0, j0]]
        );
    }

    #[test]
    fn w_ode_brownian_and_drifted() {
        let sol = solve_w_ode(&zero, 1.0, 0.5, 20.0, 20_000).unwrap();
        for y in [0.0, 0.5] {
            let i = sol.ys.iter().position(|&v| (v - y).abs() < 1e-9).unwrap();
            assert!((sol.w[i] - (-(1.0 - y)).exp()).abs() < 1e-6);
        }
        let mu = 0.3;
        let sol = solve_w_ode(&|_| mu, 1.0, 1.0, 20.0, 20_000).unwrap();
        for (i, &y) in sol.ys.iter().enumerate() {
            assert!((sol.w[i] - drifted_bm_laplace_exact::<f64>(y, 1.0, mu, 1.0)).abs() < 1e-6);
        }
        assert_eq!(sol.w[sol.w.len() - 1], 1.0);
        assert!(sol.w.windows(2).all(|p| p[1] >= p[0]));
        assert!(solve_w_ode(&zero, 1.0, 0.0, 20.0, 100).is_err());
    }

    #[test]
    fn w_ode_residual_is_second_order() {
        let b = |y: f64| 0.2 * y.cos();
        let r: Vec<f64> = [500, 1000, 2000].iter().map(|&n| ode_residual(&solve_w_ode(&b, 1.0, 1.0, 10.0, n).unwrap(), &b)).collect();
        assert!(r[0] / r[1] > 3.5 && r[1] / r[2] > 3.5, "{r:?}");
    }

    #[test]
    fn w_monotone_in_lambda() {
        let b = |y: f64| 0.2 * y.cos();
        let a = solve_w_ode(&b, 1.0, 1.0, 20.0, 4000).unwrap();
        let c = solve_w_ode(&b, 1.0, 2.0, 20.0, 4000).unwrap();
        assert!(a.w.iter().zip(&c.w).all(|(x, y)| x >= y));
    }

    #[test]
    fn w_ode_matches_hitting_sampling() {
        use crate::fbm::{HurstParam, TimeGrid};
        use crate::hitting::{laplace_mc, LaplaceOptions};
        use crate::sde::ModelSpec;
        use std::sync::Arc;
        let b = |y: f64| 0.2 * y.cos();
        let sol = solve_w_ode(&b, 1.0, 1.0, 20.0, 20_000).unwrap();
        let i0 = sol.ys.iter().position(|&y| y.abs() < 1e-9).unwrap();
        let model = ModelSpec::unit(Arc::new(|y: f64| 0.2 * y.cos()), Arc::new(|y: f64| -0.2 * y.sin()), 0.0);
        let grid = TimeGrid::new(15.0, 15_000).unwrap();
        let opts = LaplaceOptions {
            bridge: true,
            master_seed: 5,
            ..Default::default()
        };
        let est = laplace_mc(&model, HurstParam::brownian(), &[1.0], 20_000, grid, 15.0, &opts).unwrap()[0];
        assert!(
            (est.value - sol.w[i0]).abs() < 3.0 * est.std_err + est.truncation_bound,
            "{} ± {} vs {}",
            est.value,
            est.std_err,
            sol.w[i0]
        );
    }

    #[test]
    fn quadratic_extension_examples() {
        let q = quadratic_extension(1.0, 1.0);
        assert_eq!((q.a, q.b, q.c), (0.5, 0.0, 0.5));
        assert_eq!(q.eval(1.0), 1.0);
        let q = quadratic_extension(0.0, 0.0);
        assert_eq!((q.a, q.b, q.c), (0.0, 0.0, 1.0));
        let q = quadratic_extension_at(0.7f64, 1.3, -0.4);
        assert!((q.eval(0.7) - 1.0).abs() < 1e-15);
        assert!((q.slope(0.7) - 1.3).abs() < 1e-15);
        assert_eq!(q.curvature(), -0.4);
    }

    #[test]
    fn envelope_functions() {
        let h = HurstParam::<f64>::new(0.75).unwrap();
        assert_eq!(s_func(1.0, h).unwrap(), 1.0);
        assert!((s_func(0.5, h).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(s_func(1.0, HurstParam::new(0.6).unwrap()).unwrap(), 1.0);
        assert!((r_func(3.0, 0.0).unwrap() - 6f64.sqrt()).abs() < 1e-15);
        assert!(r_func(-1.0, 0.0).is_err());
    }

    #[test]
    fn w_bounds_brownian() {
        let sols: Vec<_> = [2.0].iter().map(|&l| solve_w_ode(&zero, 1.0, l, 20.0, 20_000).unwrap()).collect();
        let r = check_w_bounds(&sols, 0.0).unwrap();
        assert!((r.c_decay - 1.0).abs() < 1e-4);
        assert!((r.c_slope - 2.0 / 3.0).abs() < 1e-4);
        assert!(r.c_slope <= 1.0);
        assert!(r.holds);
    }

    #[test]
    fn w_bounds_cos_drift() {
        let b = |y: f64| 0.2 * y.cos();
        let sols: Vec<_> = [1.0, 2.0, 4.0].iter().map(|&l| solve_w_ode(&b, 1.0, l, default_depth(l), 20_000).unwrap()).collect();
        let mu = drift_sup(&b, &sols);
        assert!((mu - 0.2).abs() < 1e-6);
        let r = check_w_bounds(&sols, mu).unwrap();
        assert!(r.holds && r.c_decay > 0.5 && r.c_deriv < 10.0, "{r:?}");
        assert!(r.joint_holds && r.joint_mu >= mu, "{r:?}");
        let rad: Vec<_> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&l| solve_w_ode_with(&b, 1.0, l, default_depth(l), 20_000, WBoundary::Radiation).unwrap())
            .collect();
        let r2 = check_w_bounds(&rad, mu).unwrap();
        assert_eq!(r2.nodes_checked, 3 * 20_001);
        assert!(r2.joint_holds, "{r2:?}");
    }

    #[test]
    fn radiation_end_is_exact_for_constant_drift() {
        let mu = 0.3;
        let sol = solve_w_ode_with(&|_| mu, 1.0, 2.0, 5.0, 5_000, WBoundary::Radiation).unwrap();
        for (i, &y) in sol.ys.iter().enumerate() {
            let exact: f64 = drifted_bm_laplace_exact(y, 1.0, mu, 2.0);
            assert!((sol.w[i] / exact - 1.0).abs() < 1e-5);
        }
        let d = solve_w_ode(&|_| mu, 1.0, 2.0, 5.0, 5_000).unwrap();
        assert!(d.w[1] < sol.w[1]);
    }
}
