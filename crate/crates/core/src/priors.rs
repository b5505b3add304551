//! Hyperparameters and the group observation prior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How an unreliable group treats the true value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnreliableMode {
    /// Equal soft counts: claims are uniform noise.
    Careless,
    /// False values favoured over the true one.
    Malicious,
}

/// Model hyperparameters.
///
/// `eta_*` is the Dirichlet soft count placed on the true value and `theta_*`
/// the count on every false value, for reliable (`r = 1`) and unreliable
/// (`r = 0`) group/object pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub kappa: f64,
    pub b1: f64,
    pub b0: f64,
    pub eta_reliable: f64,
    pub theta_reliable: f64,
    pub eta_unreliable: f64,
    pub theta_unreliable: f64,
    pub truncation: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            kappa: 5.0,
            b1: 2.0,
            b0: 2.0,
            eta_reliable: 5.0,
            theta_reliable: 1.0,
            eta_unreliable: 1.0,
            theta_unreliable: 1.0,
            truncation: 20,
        }
    }
}

impl Hyperparams {
    /// Full validation: positivity plus the regime orderings.
    pub fn validate(&self) -> Result<()> {
        self.validate_numeric()?;
        if self.eta_reliable <= self.theta_reliable {
            return Err(Error::InvalidHyperparams(format!(
                "reliable groups need eta_reliable > theta_reliable ({} <= {})",
                self.eta_reliable, self.theta_reliable
            )));
        }
        if self.eta_unreliable > self.theta_unreliable {
            return Err(Error::InvalidHyperparams(format!(
                "unreliable groups need eta_unreliable <= theta_unreliable ({} > {})",
                self.eta_unreliable, self.theta_unreliable
            )));
        }
        Ok(())
    }

    /// Positivity and truncation checks only; the updates are well defined
    /// under these alone.
    pub fn validate_numeric(&self) -> Result<()> {
        let positive = [
            ("kappa", self.kappa),
            ("b1", self.b1),
            ("b0", self.b0),
            ("eta_reliable", self.eta_reliable),
            ("theta_reliable", self.theta_reliable),
            ("eta_unreliable", self.eta_unreliable),
            ("theta_unreliable", self.theta_unreliable),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidHyperparams(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if self.truncation < 2 {
            return Err(Error::InvalidHyperparams(format!(
                "truncation must be at least 2, got {}",
                self.truncation
            )));
        }
        Ok(())
    }

    pub fn unreliable_mode(&self) -> UnreliableMode {
        if self.eta_unreliable == self.theta_unreliable {
            UnreliableMode::Careless
        } else {
            UnreliableMode::Malicious
        }
    }

    /// (η, θ) for the given reliability bit.
    pub fn soft_counts(&self, reliable: bool) -> (f64, f64) {
        if reliable {
            (self.eta_reliable, self.theta_reliable)
        } else {
            (self.eta_unreliable, self.theta_unreliable)
        }
    }

    /// Prior mean of a group's general reliability, b1 / (b1 + b0).
    pub fn prior_reliability(&self) -> f64 {
        self.b1 / (self.b1 + self.b0)
    }

    /// Truncation level actually used for `num_sources` sources: at most N,
    /// never below 2.
    pub fn effective_truncation(&self, num_sources: usize) -> usize {
        self.truncation.min(num_sources).max(2)
    }

    /// Dirichlet parameters of the observation prior for a domain of size
    /// `k` whose true value is `truth`: η at `truth`, θ elsewhere.
    pub fn dirichlet_prior_counts(&self, reliable: bool, truth: usize, k: usize) -> Result<Vec<f64>> {
        if truth >= k {
            return Err(Error::OutOfRange { index: truth, len: k });
        }
        let (eta, theta) = self.soft_counts(reliable);
        let mut counts = vec![theta; k];
        counts[truth] = eta;
        Ok(counts)
    }
}

/// Prior probability that two sources land in the same group, 1 / (1 + κ).
pub fn pair_coassignment_probability(kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidHyperparams(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    Ok(1.0 / (1.0 + kappa))
}
