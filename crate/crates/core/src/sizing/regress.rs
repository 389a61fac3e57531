use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizeRegressorConfig {
    /// Kernel scale in standardized input units.
    pub gamma: f64,
    pub ridge: f64,
}

impl Default for SizeRegressorConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            ridge: 1e-3,
        }
    }
}

impl SizeRegressorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("kernel scale must be positive, got {}", self.gamma)));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config(format!("ridge must be non-negative, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// Radial-basis kernel ridge regression from CCE size to histopathology
/// size. Inputs are z-scored and targets centred before solving, so the
/// kernel scale is in units of the training spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRegressor {
    pub config: SizeRegressorConfig,
    pub x_mean: f64,
    pub x_scale: f64,
    pub y_mean: f64,
    /// Standardized training inputs, ascending.
    pub support: Vec<f64>,
    pub weights: Vec<f64>,
    pub train_rmse: f64,
}

impl SizeRegressor {
    /// Fits on `(cce_mm, hp_mm)` pairs. The pairs are sorted first, so the
    /// result does not depend on their order.
    pub fn fit(pairs: &[(f64, f64)], config: &SizeRegressorConfig) -> Result<Self> {
        config.validate()?;
        if pairs.len() < 2 {
            return Err(Error::invalid(format!("size regression needs at least 2 pairs, got {}", pairs.len())));
        }
        if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::invalid("size pairs must be finite"));
        }
        let mut sorted = pairs.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if config.ridge == 0.0 && sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate inputs make the kernel singular without a ridge term"));
        }
        let n = sorted.len() as f64;
        let x_mean = sorted.iter().map(|p| p.0).sum::<f64>() / n;
        let var = sorted.iter().map(|p| (p.0 - x_mean).powi(2)).sum::<f64>() / n;
        let x_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let y_mean = sorted.iter().map(|p| p.1).sum::<f64>() / n;
        let support: Vec<f64> = sorted.iter().map(|p| (p.0 - x_mean) / x_scale).collect();
        let targets: Vec<f64> = sorted.iter().map(|p| p.1 - y_mean).collect();

        let m = support.len();
        let mut k = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                k[(i, j)] = kernel(support[i], support[j], config.gamma);
            }
            k[(i, i)] += config.ridge;
        }
        let weights = cholesky_solve(&k, &targets)?;
        let mut model = SizeRegressor {
            config: config.clone(),
            x_mean,
            x_scale,
            y_mean,
            support,
            weights,
            train_rmse: 0.0,
        };
        let sse: f64 = sorted.iter().map(|&(x, y)| (model.predict(x) - y).powi(2)).sum();
        model.train_rmse = (sse / n).sqrt();
        Ok(model)
    }

    pub fn predict(&self, cce_mm: f64) -> f64 {
        let z = (cce_mm - self.x_mean) / self.x_scale;
        self.y_mean
            + self
                .support
                .iter()
                .zip(&self.weights)
                .map(|(&s, &w)| w * kernel(z, s, self.config.gamma))
                .sum::<f64>()
    }
}

fn kernel(a: f64, b: f64, gamma: f64) -> f64 {
    (-(a - b).powi(2) / (2.0 * gamma * gamma)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_identity_line() {
        let pairs: Vec<_> = (0..20).map(|i| 2.0 + 23.0 * i as f64 / 19.0).map(|x| (x, x)).collect();
        let cfg = SizeRegressorConfig {
            ridge: 1e-6,
            ..Default::default()
        };
        let m = SizeRegressor::fit(&pairs, &cfg).unwrap();
        for &(x, _) in &pairs {
            assert!((m.predict(x) - x).abs() < 1e-3, "{x}: {}", m.predict(x));
        }
    }

    #[test]
    fn repeated_input_predicts_mean() {
        let m = SizeRegressor::fit(&[(7.0, 4.0), (7.0, 10.0)], &SizeRegressorConfig::default()).unwrap();
        assert!((m.predict(7.0) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_without_ridge_rejected() {
        let cfg = SizeRegressorConfig {
            ridge: 0.0,
            ..Default::default()
        };
        assert!(SizeRegressor::fit(&[(7.0, 4.0), (7.0, 10.0)], &cfg).is_err());
        assert!(SizeRegressor::fit(&[(7.0, 4.0), (8.0, 10.0)], &cfg).is_ok());
    }

    #[test]
    fn needs_two_pairs() {
        assert!(SizeRegressor::fit(&[(1.0, 1.0)], &SizeRegressorConfig::default()).is_err());
    }

    #[test]
    fn order_independent() {
        let pairs = vec![(3.0, 2.5), (9.0, 7.0), (15.0, 11.0), (5.0, 3.2), (21.0, 16.5)];
        let mut rev = pairs.clone();
        rev.reverse();
        let a = SizeRegressor::fit(&pairs, &SizeRegressorConfig::default()).unwrap();
        let b = SizeRegressor::fit(&rev, &SizeRegressorConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
