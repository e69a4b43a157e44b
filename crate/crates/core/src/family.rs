//! Mean and variance machinery for canonical-link quasi-likelihood models.
//!
//! The scale parameter is fixed at one; only the canonical Gaussian-identity
//! and Binomial-logit pairs are provided.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::ClusteredDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Continuous response, identity link, unit variance.
    Gaussian,
    /// Binary response, logit link, variance `mu (1 - mu)`.
    Logit,
}

/// Logistic function evaluated without overflow for large `|eta|`.
#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
pub fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

impl Family {
    /// Mean function `mu(eta)`, the inverse of the canonical link.
    pub fn mean(self, eta: f64) -> Result<f64> {
        if !eta.is_finite() {
            return Err(Error::Domain(format!("linear predictor {eta} is not finite")));
        }
        Ok(self.mu(eta))
    }

    #[inline]
    pub fn mu(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Logit => sigmoid(eta),
        }
    }

    /// Derivative of the mean function with respect to `eta`.
    #[inline]
    pub fn mu_dot(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Logit => {
                // exp(-|eta|) / (1 + exp(-|eta|))^2 is symmetric and never overflows
                let e = (-eta.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
        }
    }

    #[inline]
    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Logit => mu * (1.0 - mu),
        }
    }

    #[inline]
    pub fn variance_dot(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 0.0,
            Family::Logit => 1.0 - 2.0 * mu,
        }
    }

    /// Per-observation negative quasi log-likelihood `q(y, eta)`.
    #[inline]
    pub fn neg_quasi_loglik_obs(self, y: f64, eta: f64) -> f64 {
        match self {
            Family::Gaussian => 0.5 * (y - eta) * (y - eta),
            Family::Logit => softplus(eta) - y * eta,
        }
    }

    /// Checks that a response value is admissible for this family.
    pub fn validate_response(self, y: f64) -> bool {
        match self {
            Family::Gaussian => y.is_finite(),
            Family::Logit => y == 0.0 || y == 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Logit => "logit",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "linear" | "identity" => Ok(Family::Gaussian),
            "logit" | "binomial" | "logistic" => Ok(Family::Logit),
            other => Err(Error::InvalidArgument(format!("unknown family '{other}'"))),
        }
    }
}

fn check_beta(dataset: &ClusteredDataset, beta: &DVector<f64>) -> Result<()> {
    if beta.len() != dataset.p() {
        return Err(Error::Dimension(format!(
            "beta has length {} but the dataset has p = {}",
            beta.len(),
            dataset.p()
        )));
    }
    Ok(())
}

/// Working-independence negative quasi log-likelihood
/// `l_n(beta) = (1/n) sum_i sum_j q(y_ij, x_ij' beta)` with `n` the cluster count.
pub fn neg_quasi_loglik(
    family: Family,
    dataset: &ClusteredDataset,
    beta: &DVector<f64>,
) -> Result<f64> {
    check_beta(dataset, beta)?;
    let eta = dataset.x() * beta;
    let total: f64 = eta
        .iter()
        .zip(dataset.y().iter())
        .map(|(&e, &y)| family.neg_quasi_loglik_obs(y, e))
        .sum();
    Ok(total / dataset.n() as f64)
}

/// Gradient of [`neg_quasi_loglik`]: `-(1/n) sum x_ij (y_ij - mu_ij)`.
pub fn neg_quasi_loglik_grad(
    family: Family,
    dataset: &ClusteredDataset,
    beta: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_beta(dataset, beta)?;
    let eta = dataset.x() * beta;
    let resid = DVector::from_iterator(
        eta.len(),
        eta.iter()
            .zip(dataset.y().iter())
            .map(|(&e, &y)| family.mu(e) - y),
    );
    Ok(dataset.x().tr_mul(&resid) / dataset.n() as f64)
}
