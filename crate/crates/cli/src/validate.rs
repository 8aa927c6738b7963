//! Static checks of a resolved config; never touches the filesystem.

use std::fmt;

use hurstsense::{Grid, SamplerKind};

use crate::config::{Experiment, ExperimentConfig, ModelChoice};
use crate::model::{build_model, build_phi};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub level: Level,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.level {
            Level::Info => "info",
            Level::Warning => "warning",
            Level::Error => "error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Driver sizes above this make the dense Cholesky factor impractical.
pub const CHOLESKY_SOFT_CAP: usize = 1 << 13;

fn mib(bytes: f64) -> String {
    format!("{:.1} MiB", bytes / (1024.0 * 1024.0))
}

pub fn validate(cfg: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |m: String| out.push(Diagnostic { level: Level::Error, message: m });
    for &h in &cfg.hurst {
        if !(0.5..1.0).contains(&h) {
            err(format!("H = {h} is outside the supported range [0.5, 1)"));
        }
    }
    if cfg.n_paths == 0 {
        err("n_paths must be positive".into());
    }
    if cfg.n_steps == 0 {
        err("n_steps must be positive".into());
    }
    let uses_lambda = matches!(cfg.experiment, Experiment::Fpt | Experiment::SensitivityLaplace);
    if uses_lambda && cfg.lambda.iter().any(|&l| l.is_nan() || l <= 0.0) {
        err("every lambda must be positive".into());
    }
    if cfg.model == ModelChoice::Custom && !cfg.sigma.trim().is_empty() {
        if cfg.sigma0.is_none() {
            err("a custom sigma needs the ellipticity constant sigma0".into());
        }
        if cfg.sigma_sup.is_none() {
            err("a custom sigma needs its sup norm sigma_sup".into());
        }
    }
    let model = match build_model(cfg) {
        Ok(m) => Some(m),
        Err(e) => {
            if !out.iter().any(|d| d.message.contains("sigma0") || d.message.contains("sigma_sup")) {
                out.push(Diagnostic {
                    level: Level::Error,
                    message: e.to_string(),
                });
            }
            None
        }
    };
    let mut warn = |m: String| {
        out.push(Diagnostic {
            level: Level::Warning,
            message: m,
        })
    };
    if uses_lambda && cfg.x0 >= cfg.threshold {
        warn(format!("x0 = {} is not below the threshold {}: τ = 0, a degenerate case", cfg.x0, cfg.threshold));
    }
    if cfg.experiment == Experiment::SensitivityLaplace && cfg.lambda.iter().any(|&l| l < 1.0) {
        warn("lambda < 1 is outside the regime covered by the envelope bound".into());
    }
    if let Some(m) = &model {
        let lo = m.x0 - 10.0;
        let bad = (0..=200).map(|i| lo + 0.1 * i as f64).find(|&x| m.sigma_checked(x).is_err());
        if let Some(x) = bad {
            warn(format!("sigma violates the ellipticity constant near x = {x:.2}"));
        }
        if cfg.experiment == Experiment::Decomposition && !m.is_unit_diffusion() {
            out.push(Diagnostic {
                level: Level::Error,
                message: "decomposition needs a unit-diffusion model (sigma = 1)".into(),
            });
        }
    }
    if matches!(cfg.experiment, Experiment::SensitivityMarginal | Experiment::Decomposition) {
        if let Err(e) = build_phi(cfg) {
            out.push(Diagnostic {
                level: Level::Error,
                message: e.to_string(),
            });
        }
    }
    if cfg.experiment == Experiment::DensityBound && cfg.n_steps > 0 {
        let horizon = cfg.times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match Grid::new(horizon, cfg.n_steps) {
            Ok(g) => {
                for &t in &cfg.times {
                    if g.index_of(t).is_none() {
                        out.push(Diagnostic {
                            level: Level::Error,
                            message: format!("time {t} is not a node of the grid ({} steps on [0, {horizon}])", cfg.n_steps),
                        });
                    }
                }
            }
            Err(e) => out.push(Diagnostic {
                level: Level::Error,
                message: e.to_string(),
            }),
        }
    }
    if cfg.experiment == Experiment::HolderTail {
        if !(cfg.a >= 0.0 && cfg.b > cfg.a) {
            out.push(Diagnostic {
                level: Level::Error,
                message: format!("need 0 <= a < b, got [{}, {}]", cfg.a, cfg.b),
            });
        }
        if cfg.hurst.iter().any(|&h| cfg.gamma >= h) {
            out.push(Diagnostic {
                level: Level::Warning,
                message: format!("gamma = {} is not below every H; the Hölder norm may be infinite", cfg.gamma),
            });
        }
    }
    let n = cfg.n_steps as f64;
    let members = cfg.hurst.len() as f64;
    if cfg.sampler == SamplerKind::Cholesky && cfg.n_steps > CHOLESKY_SOFT_CAP {
        out.push(Diagnostic {
            level: Level::Warning,
            message: format!(
                "cholesky sampler with n_steps = {} needs a {} dense factor; use the circulant sampler",
                cfg.n_steps,
                mib(8.0 * n * n)
            ),
        });
    }
    let coupled =
        matches!(cfg.experiment, Experiment::SensitivityMarginal | Experiment::SensitivityLaplace | Experiment::Decomposition) && cfg.coupling == hurstsense::Coupling::Volterra;
    let (memory, flops) = if coupled {
        (8.0 * n * n * (members + 1.0), cfg.n_paths as f64 * n * n * (members + 1.0))
    } else if cfg.sampler == SamplerKind::Cholesky {
        (8.0 * n * n, cfg.n_paths as f64 * n * n * members)
    } else {
        (64.0 * n, cfg.n_paths as f64 * 40.0 * n * n.log2().max(1.0) * members)
    };
    out.push(Diagnostic {
        level: Level::Info,
        message: format!(
            "estimated memory {}, about {:.1e} floating-point operations (~{:.0} s single-threaded)",
            mib(memory),
            flops,
            flops / 2e9
        ),
    });
    out.sort_by_key(|d| std::cmp::Reverse(d.level));
    out
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.level == Level::Error)
}
