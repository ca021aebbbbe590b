use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::moves::{propose_tree_move, sample_leaves, MoveKind, Partition, SplitRanges};
use super::prior::{tree_log_prior, LeafPrior, TreePrior};
use super::tree::DecisionTree;
use crate::error::{Error, Result};
use crate::model::ConditionalMean;

/// Version tag written into forest snapshots.
pub const FOREST_SNAPSHOT_VERSION: u32 = 1;

/// Proposal and acceptance counts per move type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
}

impl MoveStats {
    pub fn acceptance_rate(&self, kind: MoveKind) -> Option<f64> {
        let p = self.proposed[kind.index()];
        (p > 0).then(|| self.accepted[kind.index()] as f64 / p as f64)
    }

    pub fn merge(&mut self, other: &MoveStats) {
        for i in 0..4 {
            self.proposed[i] += other.proposed[i];
            self.accepted[i] += other.accepted[i];
        }
    }
}

/// Sum of trees for one equation, with per-tree and total fits cached over the design rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<DecisionTree>,
    tree_fit: Vec<Vec<f64>>,
    fit: Vec<f64>,
    pub leaf_prior: LeafPrior,
}

impl Forest {
    /// `n_trees` zero-valued stumps over `t` rows.
    pub fn new(n_trees: usize, t: usize, leaf_prior: LeafPrior) -> Self {
        Self {
            trees: vec![DecisionTree::stump(0.0); n_trees],
            tree_fit: vec![vec![0.0; t]; n_trees],
            fit: vec![0.0; t],
            leaf_prior,
        }
    }

    pub fn from_trees(trees: Vec<DecisionTree>, x: &DMatrix<f64>, leaf_prior: LeafPrior) -> Self {
        let mut f = Self {
            trees,
            tree_fit: Vec::new(),
            fit: Vec::new(),
            leaf_prior,
        };
        f.refresh(x);
        f
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn fit(&self) -> &[f64] {
        &self.fit
    }

    pub fn tree_fit(&self, s: usize) -> &[f64] {
        &self.tree_fit[s]
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum()
    }

    /// Recomputes every cached fit over the rows of `x`.
    pub fn refresh(&mut self, x: &DMatrix<f64>) {
        let t_len = x.nrows();
        self.tree_fit = self
            .trees
            .iter()
            .map(|tree| {
                (0..t_len)
                    .map(|t| tree.leaf_value(tree.leaf_for_row(x, t)))
                    .collect()
            })
            .collect();
        self.resum(t_len);
    }

    fn resum(&mut self, t_len: usize) {
        self.fit = vec![0.0; t_len];
        for tf in &self.tree_fit {
            for (f, v) in self.fit.iter_mut().zip(tf) {
                *f += v;
            }
        }
    }

    /// Largest gap between the cached fit and a fresh evaluation of every tree.
    pub fn max_cache_error(&self, x: &DMatrix<f64>) -> f64 {
        (0..x.nrows())
            .map(|t| {
                let row: Vec<f64> = x.row(t).iter().copied().collect();
                (self.predict(&row) - self.fit[t]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// One backfitting pass: a Metropolis-Hastings structure move followed by
    /// a conjugate leaf draw, for every tree in turn.
    #[allow(clippy::too_many_arguments)]
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        x: &DMatrix<f64>,
        target: &[f64],
        variances: &[f64],
        prior: &TreePrior,
        ranges: &SplitRanges,
        stats: &mut MoveStats,
        rng: &mut R,
    ) -> Result<()> {
        let t_len = x.nrows();
        if target.len() != t_len || variances.len() != t_len {
            return Err(Error::dimension(
                "forest update: target, variances and design disagree",
            ));
        }
        if self.fit.len() != t_len {
            self.refresh(x);
        }
        let mut resid = vec![0.0; t_len];
        for s in 0..self.trees.len() {
            for t in 0..t_len {
                resid[t] = target[t] - (self.fit[t] - self.tree_fit[s][t]);
            }
            let old_part = Partition::new(&self.trees[s], x, &resid, variances);
            let old_ll = old_part.log_marginal(&self.trees[s], &self.leaf_prior);

            let prop = propose_tree_move(&self.trees[s], prior, ranges, rng);
            stats.proposed[prop.kind.index()] += 1;
            let new_part = Partition::new(&prop.tree, x, &resid, variances);
            let new_ll = new_part.log_marginal(&prop.tree, &self.leaf_prior);
            let u: f64 = rng.random();
            let accept = match (new_ll, old_ll) {
                (None, _) => false,
                (Some(_), None) => true,
                (Some(n), Some(o)) => {
                    let log_alpha = n - o + tree_log_prior(&prop.tree, prior)
                        - tree_log_prior(&self.trees[s], prior)
                        + prop.log_proposal_ratio;
                    u.ln() < log_alpha
                }
            };
            let part = if accept {
                stats.accepted[prop.kind.index()] += 1;
                self.trees[s] = prop.tree;
                new_part
            } else {
                old_part
            };
            sample_leaves(&mut self.trees[s], &part, &self.leaf_prior, rng);
            let tree = &self.trees[s];
            for t in 0..t_len {
                let v = tree.leaf_value(part.assignment[t]);
                self.fit[t] += v - self.tree_fit[s][t];
                self.tree_fit[s][t] = v;
            }
        }
        self.resum(t_len);
        Ok(())
    }
}

/// `adjusted_target - sum_{j != s} l_j(x_t)`.
pub fn partial_residuals(s: usize, adjusted_target: &[f64], forest: &Forest) -> Vec<f64> {
    adjusted_target
        .iter()
        .enumerate()
        .map(|(t, y)| {
            let others: f64 = (0..forest.n_trees())
                .filter(|&j| j != s)
                .map(|j| forest.tree_fit[j][t])
                .sum();
            y - others
        })
        .collect()
}

/// One forest per equation, sharing a structure prior and split ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSet {
    pub forests: Vec<Forest>,
    pub prior: TreePrior,
    pub ranges: SplitRanges,
    pub stats: MoveStats,
}

impl ForestSet {
    /// Stump forests with leaf priors calibrated on each column of `y`.
    pub fn new(
        y: &DMatrix<f64>,
        x: &DMatrix<f64>,
        n_trees: usize,
        prior: TreePrior,
        leaf_k: f64,
    ) -> Result<Self> {
        prior.validate()?;
        if n_trees == 0 {
            return Err(Error::config("number of trees must be positive"));
        }
        let ranges = SplitRanges::from_design(x)?;
        let forests = y
            .column_iter()
            .map(|c| {
                let lp = LeafPrior::calibrated(c.min(), c.max(), n_trees, leaf_k)?;
                Ok(Forest::new(n_trees, x.nrows(), lp))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            forests,
            prior,
            ranges,
            stats: MoveStats::default(),
        })
    }

    pub fn refresh(&mut self, x: &DMatrix<f64>) {
        for f in &mut self.forests {
            f.refresh(x);
        }
    }

    pub fn to_snapshot_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Snap<'a> {
            version: u32,
            forests: &'a ForestSet,
        }
        Ok(serde_json::to_string(&Snap {
            version: FOREST_SNAPSHOT_VERSION,
            forests: self,
        })?)
    }

    pub fn from_snapshot_json(s: &str, x: &DMatrix<f64>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Snap {
            version: u32,
            forests: ForestSet,
        }
        let snap: Snap = serde_json::from_str(s)?;
        if snap.version != FOREST_SNAPSHOT_VERSION {
            return Err(Error::config(format!(
                "unsupported forest snapshot version {}",
                snap.version
            )));
        }
        let mut set = snap.forests;
        let k = set.ranges.n_inputs();
        for f in &set.forests {
            for t in f.trees() {
                t.validate(k).map_err(Error::config)?;
            }
        }
        set.refresh(x);
        Ok(set)
    }
}

impl ConditionalMean for ForestSet {
    fn n_vars(&self) -> usize {
        self.forests.len()
    }

    fn n_inputs(&self) -> usize {
        self.ranges.n_inputs()
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.forests) {
            *o = f.predict(x);
        }
    }
}

/// Per-equation sums of tree outputs at `x`.
pub fn forest_predict(set: &ForestSet, x: &[f64]) -> DVector<f64> {
    set.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rng_from_seed;
    use approx::assert_relative_eq;

    fn fixture_x() -> DMatrix<f64> {
        DMatrix::from_fn(40, 2, |t, c| ((t * (3 + c) + 5 * c) % 17) as f64 / 4.0)
    }

    #[test]
    fn partial_residuals_trivial_cases() {
        let x = fixture_x();
        let target: Vec<f64> = (0..40).map(|t| t as f64 * 0.1).collect();
        let single = Forest::new(1, 40, LeafPrior::new(1.0).unwrap());
        assert_eq!(partial_residuals(0, &target, &single), target);
        let zeros = Forest::new(5, 40, LeafPrior::new(1.0).unwrap());
        assert_eq!(partial_residuals(2, &target, &zeros), target);

        let mut a = DecisionTree::stump(0.0);
        a.grow(0, 0, 2.0);
        a.set_leaf_value(1, 1.5);
        a.set_leaf_value(2, -0.5);
        let b = DecisionTree::stump(0.25);
        let f = Forest::from_trees(vec![a.clone(), b], &x, LeafPrior::new(1.0).unwrap());
        let pr = partial_residuals(1, &target, &f);
        for t in 0..40 {
            let xt = [x[(t, 0)], x[(t, 1)]];
            assert_eq!(pr[t], target[t] - a.predict(&xt));
        }
    }

    #[test]
    fn forest_prediction_conventions() {
        let x = fixture_x();
        let lp = LeafPrior::new(1.0).unwrap();
        let stumps = Forest::from_trees(
            vec![DecisionTree::stump(0.5), DecisionTree::stump(-2.0)],
            &x,
            lp,
        );
        assert_eq!(stumps.predict(&[9.0, 9.0]), -1.5);

        let mut a = DecisionTree::stump(0.0);
        a.grow(0, 1, 1.0);
        a.set_leaf_value(1, 3.0);
        a.set_leaf_value(2, 7.0);
        let f = Forest::from_trees(vec![a, DecisionTree::stump(1.0)], &x, lp);
        assert_eq!(f.predict(&[0.0, 0.5]), 4.0);
        assert_eq!(f.predict(&[0.0, 1.0]), 8.0);
    }

    #[test]
    fn backfitting_cache_stays_consistent() {
        let x = fixture_x();
        let target: Vec<f64> = (0..40)
            .map(|t| if x[(t, 0)] < 2.0 { 1.0 } else { -1.0 } + 0.1 * x[(t, 1)])
            .collect();
        let variances = vec![0.25; 40];
        let mut f = Forest::new(20, 40, LeafPrior::calibrated(-1.5, 1.5, 20, 1.96).unwrap());
        let ranges = SplitRanges::from_design(&x).unwrap();
        let prior = TreePrior::default();
        let mut stats = MoveStats::default();
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            f.update(
                &x, &target, &variances, &prior, &ranges, &mut stats, &mut rng,
            )
            .unwrap();
            assert!(f.max_cache_error(&x) < 1e-10);
        }
        assert!(stats.accepted.iter().sum::<u64>() > 0);
        let mse: f64 = (0..40)
            .map(|t| (f.fit()[t] - target[t]).powi(2))
            .sum::<f64>()
            / 40.0;
        assert!(mse < 0.25, "mse {mse}");
    }

    #[test]
    fn snapshot_round_trip() {
        let x = fixture_x();
        let y = DMatrix::from_fn(40, 2, |t, c| (t + c) as f64);
        let mut set = ForestSet::new(&y, &x, 5, TreePrior::default(), 1.96).unwrap();
        let mut rng = rng_from_seed(9);
        let target: Vec<f64> = (0..40).map(|t| t as f64 / 10.0).collect();
        let ranges = set.ranges.clone();
        let prior = set.prior;
        set.forests[0]
            .update(
                &x,
                &target,
                &[1.0; 40],
                &prior,
                &ranges,
                &mut MoveStats::default(),
                &mut rng,
            )
            .unwrap();
        let json = set.to_snapshot_json().unwrap();
        let back = ForestSet::from_snapshot_json(&json, &x).unwrap();
        for t in 0..40 {
            let row = [x[(t, 0)], x[(t, 1)]];
            assert_relative_eq!(back.predict(&row), set.predict(&row), epsilon = 0.0);
        }
        assert!(ForestSet::from_snapshot_json(
            &json.replace("\"version\":1", "\"version\":99"),
            &x
        )
        .is_err());
    }
}
