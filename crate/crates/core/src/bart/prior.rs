use serde::{Deserialize, Serialize};

use super::tree::DecisionTree;
use crate::error::{Error, Result};

/// Proposal probabilities of the four tree moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        Self {
            grow: 0.25,
            prune: 0.25,
            change: 0.40,
            swap: 0.10,
        }
    }
}

impl MoveProbs {
    pub fn as_array(&self) -> [f64; 4] {
        [self.grow, self.prune, self.change, self.swap]
    }
}

/// Structure prior: a node at depth `d` splits with probability `alpha / (1 + d)^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreePrior {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub move_probs: MoveProbs,
}

impl Default for TreePrior {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            beta: 2.0,
            move_probs: MoveProbs::default(),
        }
    }
}

impl TreePrior {
    pub fn new(alpha: f64, beta: f64, move_probs: MoveProbs) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            move_probs,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!(
                "tree prior alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config(format!(
                "tree prior beta must be positive, got {}",
                self.beta
            )));
        }
        let m = self.move_probs.as_array();
        if m.iter().any(|p| !(*p >= 0.0)) || (m.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "tree move probabilities must be non-negative and sum to 1",
            ));
        }
        if self.move_probs.grow <= 0.0 {
            return Err(Error::config("grow probability must be positive"));
        }
        Ok(())
    }
}

/// Probability that a node at depth `d` is interior.
pub fn depth_split_prob(d: usize, prior: &TreePrior) -> f64 {
    prior.alpha / (1.0 + d as f64).powf(prior.beta)
}

/// Log prior of the tree shape. Split rules are uniform and their density is
/// left out, as it cancels against the proposal in every move.
pub fn tree_log_prior(tree: &DecisionTree, prior: &TreePrior) -> f64 {
    (0..tree.len())
        .map(|i| {
            let p = depth_split_prob(tree.depth(i), prior);
            if tree.is_leaf(i) {
                (1.0 - p).ln()
            } else {
                p.ln()
            }
        })
        .sum()
}

/// Conjugate prior `N(0, variance)` on every leaf value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafPrior {
    pub variance: f64,
}

impl LeafPrior {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::config(format!(
                "leaf prior variance must be positive, got {variance}"
            )));
        }
        Ok(Self { variance })
    }

    /// `sd = (max - min) / (2 k sqrt(S))`, so the sum of `S` leaves puts
    /// `2 Phi(k) - 1` prior mass inside `(min, max)`.
    pub fn calibrated(y_min: f64, y_max: f64, n_trees: usize, k: f64) -> Result<Self> {
        let range = y_max - y_min;
        if !(range > 0.0) || n_trees == 0 {
            return Err(Error::config(
                "leaf prior calibration needs a positive data range and S > 0",
            ));
        }
        let sd = range / (2.0 * k * (n_trees as f64).sqrt());
        Self::new(sd * sd)
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}
