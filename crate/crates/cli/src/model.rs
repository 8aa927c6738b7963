//! Model presets and coefficient expressions in the single variable `x`.

use std::sync::Arc;

use exmex::prelude::*;
use hurstsense::sde::ScalarFn;
use hurstsense::Model;

use crate::config::{ExperimentConfig, ModelChoice};
use crate::error::CliError;

/// A parsed univariate expression.
#[derive(Clone)]
pub struct Expr {
    text: String,
    flat: FlatEx<f64>,
    constant: bool,
}

impl std::fmt::Debug for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("Expr").field(&self.text).finish()
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let err = |message: String| CliError::Expression { expr: text.to_string(), message };
        let flat = exmex::parse::<f64>(text).map_err(|e| err(e.to_string()))?;
        let vars = flat.var_names();
        if let Some(v) = vars.iter().find(|v| v.as_str() != "x") {
            return Err(err(format!("unknown variable '{v}', only x is allowed")));
        }
        let constant = vars.is_empty();
        Ok(Self {
            text: text.to_string(),
            flat,
            constant,
        })
    }

    /// Value at `x`; evaluation errors become NaN.
    pub fn eval(&self, x: f64) -> f64 {
        self.flat.eval_relaxed(&[x]).unwrap_or(f64::NAN)
    }

    /// Symbolic derivative in `x`.
    pub fn derivative(&self) -> Result<Self, CliError> {
        if self.constant {
            return Self::parse("0");
        }
        let flat = self.flat.clone().partial(0).map_err(|e| CliError::Expression {
            expr: self.text.clone(),
            message: format!("cannot differentiate: {e}"),
        })?;
        let constant = flat.var_names().is_empty();
        Ok(Self {
            text: format!("d/dx({})", self.text),
            flat,
            constant,
        })
    }

    pub fn into_fn(self) -> ScalarFn<f64> {
        Arc::new(move |x| self.eval(x))
    }
}

fn optional(text: &str) -> Result<Option<Expr>, CliError> {
    if text.trim().is_empty() {
        Ok(None)
    } else {
        Expr::parse(text).map(Some)
    }
}

/// Build the model named by the config.
pub fn build_model(cfg: &ExperimentConfig) -> Result<Model, CliError> {
    let x0 = cfg.x0;
    match cfg.model {
        ModelChoice::PureFbm => Ok(Model::pure_noise(x0)),
        ModelChoice::Ou => Ok(Model::ornstein_uhlenbeck(cfg.kappa, x0)),
        ModelChoice::CosDrift => Ok(Model::cos_drift(x0)),
        ModelChoice::Custom => {
            let drift = optional(&cfg.drift)?.ok_or_else(|| CliError::Invalid("model = custom needs a drift expression".into()))?;
            let drift_prime = match optional(&cfg.drift_prime)? {
                Some(d) => d,
                None => drift.derivative()?,
            };
            let Some(sigma) = optional(&cfg.sigma)? else {
                return Ok(Model::unit(drift.into_fn(), drift_prime.into_fn(), x0));
            };
            let sigma_prime = match optional(&cfg.sigma_prime)? {
                Some(d) => d,
                None => sigma.derivative()?,
            };
            let sigma0 = cfg.sigma0.ok_or_else(|| CliError::Invalid("a custom sigma needs the ellipticity constant sigma0".into()))?;
            let sigma_sup = cfg.sigma_sup.ok_or_else(|| CliError::Invalid("a custom sigma needs its sup norm sigma_sup".into()))?;
            Ok(Model::new(
                drift.into_fn(),
                drift_prime.into_fn(),
                sigma.into_fn(),
                sigma_prime.into_fn(),
                x0,
                sigma0,
                sigma_sup,
            )?)
        }
    }
}

/// The test function `φ`.
pub fn build_phi(cfg: &ExperimentConfig) -> Result<Expr, CliError> {
    Expr::parse(&cfg.phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expressions_and_derivatives() {
        let e = Expr::parse("sin(x) + 0.5*x^2").unwrap();
        assert!((e.eval(1.0) - (1f64.sin() + 0.5)).abs() < 1e-14);
        let d = e.derivative().unwrap();
        assert!((d.eval(1.0) - (1f64.cos() + 1.0)).abs() < 1e-12);
        let c = Expr::parse("2.5").unwrap();
        assert_eq!(c.eval(7.0), 2.5);
        assert_eq!(c.derivative().unwrap().eval(7.0), 0.0);
        assert!(Expr::parse("x + y").unwrap_err().to_string().contains("'y'"));
        assert!(Expr::parse("x +* 2").is_err());
    }
}
