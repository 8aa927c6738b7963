//! Simulation of SDEs driven by fractional Brownian motion with Hurst index
//! in `[½, 1)`, and Monte Carlo measurement of how their laws, densities and
//! first-passage times move as the index leaves ½.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`). The `f64`
//! aliases at the crate root cover the common case.
//!
//! ```
//! use hurstsense::{marginal_gap, Hurst, Model, SensitivityOptions, Grid};
//!
//! let model = Model::cos_drift(0.0);
//! let grid = Grid::new(1.0, 128).unwrap();
//! let hs = [Hurst::new(0.6).unwrap()];
//! let r = marginal_gap(&model, &|x: f64| x.cos(), 1.0, &hs, 256, grid, &SensitivityOptions::default()).unwrap();
//! assert!(r.points[0].gap.is_finite());
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod error;
pub mod fbm;
pub mod hitting;
pub mod kernels;
pub mod pde;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod sde;
pub mod sensitivity;
pub mod stats;

pub use density::{
    empirical_exceedance, estimate_densities, estimate_density, fbm_holder_norms, fit_min_c, gaussian_bound, gaussian_bound_bin, holder_k, holder_norm, holder_tail_bound,
    kde_silverman, simulate_marginals, BinSpec, DensityOptions,
};
pub use error::{Error, Result};
pub use fbm::{brownian_increments, coupled_family, covariance, volterra_sample, FbmGenerator, SamplerKind};
pub use hitting::{asymptotic_forms, bm_laplace_exact, drifted_bm_laplace_exact, first_passage, hitting_samples, laplace_mc, truncated_exp_moment, LaplaceOptions};
pub use kernels::{adjoint_apply, c_const, factorization_residual, kernel_k, kernel_matrix};
pub use pde::{check_w_bounds, quadratic_extension, r_func, s_func, solve_backward_pde, solve_w_ode, solve_w_ode_with, WBoundary};
pub use quadrature::QuadratureConfig;
pub use rng::{Lane, SeedStream};
pub use scalar::Real;
pub use sde::{euler_solve, lamperti, malliavin_derivative};
pub use sensitivity::{delta_decomposition, laplace_gap, marginal_gap, Coupling, LaplaceGapOptions, SensitivityOptions};

pub type Hurst = fbm::HurstParam<f64>;
pub type Grid = fbm::TimeGrid<f64>;
pub type FbmPath = fbm::FbmPath<f64>;
pub type CoupledFamily = fbm::CoupledFamily<f64>;
pub type Model = sde::ModelSpec<f64>;
pub type SdePath = sde::SdePath<f64>;
pub type LampertiMap = sde::LampertiMap<f64>;
pub type MalliavinPath = sde::MalliavinPath<f64>;
pub type DiscreteOperator = kernels::DiscreteOperator<f64>;
pub type HittingSample = hitting::HittingSample<f64>;
pub type LaplaceEstimate = hitting::LaplaceEstimate<f64>;
pub type PdeSolution = pde::PdeSolution<f64>;
pub type OdeSolution = pde::OdeSolution<f64>;
pub type WBoundsReport = pde::WBoundsReport<f64>;
pub type DensityEstimate = density::DensityEstimate<f64>;
pub type GaussianBoundFit = density::GaussianBoundFit<f64>;
pub type HolderNormSample = density::HolderNormSample<f64>;
pub type SensitivityReport = sensitivity::SensitivityReport<f64>;
pub type DecompositionReport = sensitivity::DecompositionReport<f64>;
pub type EnvelopeReport = sensitivity::EnvelopeReport<f64>;

/// Single-precision aliases.
pub mod f32 {
    pub type Hurst = crate::fbm::HurstParam<f32>;
    pub type Grid = crate::fbm::TimeGrid<f32>;
    pub type FbmPath = crate::fbm::FbmPath<f32>;
    pub type Model = crate::sde::ModelSpec<f32>;
    pub type SdePath = crate::sde::SdePath<f32>;
    pub type PdeSolution = crate::pde::PdeSolution<f32>;
    pub type OdeSolution = crate::pde::OdeSolution<f32>;
    pub type DensityEstimate = crate::density::DensityEstimate<f32>;
}
