use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prior::{LeafPrior, TreePrior};
use super::tree::DecisionTree;
use crate::error::{Error, Result};
use crate::sampling::standard_normal;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observed `[min, max]` of every input, fixed for the life of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub bounds: Vec<(f64, f64)>,
}

impl SplitRanges {
    pub fn from_design(x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InsufficientData(
                "no rows to derive split ranges from".into(),
            ));
        }
        let bounds = x.column_iter().map(|c| (c.min(), c.max())).collect();
        Ok(Self { bounds })
    }

    pub fn n_inputs(&self) -> usize {
        self.bounds.len()
    }

    fn draw_rule<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let var = rng.random_range(0..self.bounds.len());
        let (lo, hi) = self.bounds[var];
        let u: f64 = rng.random();
        (var, lo + u * (hi - lo))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [
        MoveKind::Grow,
        MoveKind::Prune,
        MoveKind::Change,
        MoveKind::Swap,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Move probabilities renormalised over the moves that are structurally possible.
pub fn effective_move_probs(tree: &DecisionTree, prior: &TreePrior) -> [f64; 4] {
    let base = prior.move_probs.as_array();
    let legal = [
        true,
        !tree.is_stump(),
        !tree.is_stump(),
        !tree.swappable_pairs().is_empty(),
    ];
    let total: f64 = (0..4).filter(|&i| legal[i]).map(|i| base[i]).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        if legal[i] {
            out[i] = base[i] / total;
        }
    }
    out
}

/// A candidate tree with `log q(old | new) - log q(new | old)`.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub tree: DecisionTree,
    pub kind: MoveKind,
    pub log_proposal_ratio: f64,
}

/// Draws one grow, prune, change or swap move.
///
/// The move type is drawn from the probabilities renormalised over legal
/// moves, which is the same as redrawing until a legal type comes up. Rule
/// densities are omitted from the ratio because they cancel against the prior.
pub fn propose_tree_move<R: Rng + ?Sized>(
    tree: &DecisionTree,
    prior: &TreePrior,
    ranges: &SplitRanges,
    rng: &mut R,
) -> Proposal {
    let probs = effective_move_probs(tree, prior);
    let u: f64 = rng.random();
    let kind = MoveKind::ALL[crate::sampling::categorical_from_uniform(&probs, u)];
    let mut new = tree.clone();
    let log_ratio = match kind {
        MoveKind::Grow => {
            let leaves = tree.leaves();
            let leaf = leaves[rng.random_range(0..leaves.len())];
            let (var, thr) = ranges.draw_rule(rng);
            new.grow(leaf, var, thr);
            let back = effective_move_probs(&new, prior)[MoveKind::Prune.index()];
            (back / new.nog().len() as f64).ln() - (probs[0] / leaves.len() as f64).ln()
        }
        MoveKind::Prune => {
            let nog = tree.nog();
            let node = nog[rng.random_range(0..nog.len())];
            new.prune(node);
            let back = effective_move_probs(&new, prior)[MoveKind::Grow.index()];
            (back / new.leaves().len() as f64).ln() - (probs[1] / nog.len() as f64).ln()
        }
        MoveKind::Change => {
            let interior = tree.interior();
            let node = interior[rng.random_range(0..interior.len())];
            let (var, thr) = ranges.draw_rule(rng);
            new.set_rule(node, var, thr);
            0.0
        }
        MoveKind::Swap => {
            let pairs = tree.swappable_pairs();
            let (p, c) = pairs[rng.random_range(0..pairs.len())];
            swap_rules(&mut new, p, c);
            0.0
        }
    };
    Proposal {
        tree: new,
        kind,
        log_proposal_ratio: log_ratio,
    }
}

/// Exchanges the rule of `parent` with that of `child`; when both children of
/// `parent` carry the same rule, both are exchanged with the parent.
fn swap_rules(tree: &mut DecisionTree, parent: usize, child: usize) {
    let pr = tree.rule(parent).unwrap();
    let cr = tree.rule(child).unwrap();
    let (l, r) = tree.children(parent).unwrap();
    let both_same = match (tree.rule(l), tree.rule(r)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    };
    tree.set_rule(parent, cr.0, cr.1);
    if both_same {
        tree.set_rule(l, pr.0, pr.1);
        tree.set_rule(r, pr.0, pr.1);
    } else {
        tree.set_rule(child, pr.0, pr.1);
    }
}

/// Precision-weighted sufficient statistics of one leaf.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LeafStats {
    pub count: usize,
    /// `sum 1 / v_t`
    pub precision: f64,
    /// `sum r_t / v_t`
    pub weighted_sum: f64,
    /// `sum r_t^2 / v_t`
    pub weighted_sq: f64,
    /// `sum log(2 pi v_t)`
    pub log_norm: f64,
}

impl LeafStats {
    fn add(&mut self, r: f64, v: f64) {
        self.count += 1;
        self.precision += 1.0 / v;
        self.weighted_sum += r / v;
        self.weighted_sq += r * r / v;
        self.log_norm += LN_2PI + v.ln();
    }

    /// Log marginal likelihood with the leaf value integrated out.
    pub fn log_marginal(&self, leaf_prior: &LeafPrior) -> f64 {
        let s2 = leaf_prior.variance;
        let denom = 1.0 + s2 * self.precision;
        -0.5 * self.log_norm - 0.5 * self.weighted_sq - 0.5 * denom.ln()
            + 0.5 * self.weighted_sum * self.weighted_sum * s2 / denom
    }

    /// Posterior mean and variance of the leaf value.
    pub fn posterior(&self, leaf_prior: &LeafPrior) -> (f64, f64) {
        let prec = self.precision + 1.0 / leaf_prior.variance;
        (self.weighted_sum / prec, 1.0 / prec)
    }
}

/// Row-to-leaf map of a tree plus per-node statistics (indexed by node id).
pub struct Partition {
    pub assignment: Vec<usize>,
    pub stats: Vec<LeafStats>,
}

impl Partition {
    pub fn new(
        tree: &DecisionTree,
        x: &DMatrix<f64>,
        residuals: &[f64],
        variances: &[f64],
    ) -> Self {
        let mut stats = vec![LeafStats::default(); tree.len()];
        let assignment: Vec<usize> = (0..x.nrows())
            .map(|t| {
                let leaf = tree.leaf_for_row(x, t);
                stats[leaf].add(residuals[t], variances[t]);
                leaf
            })
            .collect();
        Self { assignment, stats }
    }

    pub fn has_empty_leaf(&self, tree: &DecisionTree) -> bool {
        tree.leaves().iter().any(|&l| self.stats[l].count == 0)
    }

    /// `None` when some leaf holds no observations.
    pub fn log_marginal(&self, tree: &DecisionTree, leaf_prior: &LeafPrior) -> Option<f64> {
        let mut total = 0.0;
        for l in tree.leaves() {
            if self.stats[l].count == 0 {
                return None;
            }
            total += self.stats[l].log_marginal(leaf_prior);
        }
        Some(total)
    }
}

/// Log marginal likelihood of `residuals` under the tree's partition, leaves
/// integrated out. `None` signals an empty leaf (the proposal is rejected).
pub fn tree_marginal_loglik(
    tree: &DecisionTree,
    x: &DMatrix<f64>,
    residuals: &[f64],
    variances: &[f64],
    leaf_prior: &LeafPrior,
) -> Option<f64> {
    Partition::new(tree, x, residuals, variances).log_marginal(tree, leaf_prior)
}

/// Draws every leaf value from its conjugate Gaussian posterior.
pub fn sample_leaves<R: Rng + ?Sized>(
    tree: &mut DecisionTree,
    partition: &Partition,
    leaf_prior: &LeafPrior,
    rng: &mut R,
) {
    for l in tree.leaves() {
        let (mean, var) = partition.stats[l].posterior(leaf_prior);
        tree.set_leaf_value(l, mean + var.sqrt() * standard_normal(rng));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rng_from_seed;
    use approx::assert_relative_eq;

    fn single_column(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn one_point_marginal() {
        let lp = LeafPrior::new(0.7).unwrap();
        let got = tree_marginal_loglik(
            &DecisionTree::stump(0.0),
            &single_column(&[0.0]),
            &[1.3],
            &[0.4],
            &lp,
        )
        .unwrap();
        let v = 0.4 + 0.7;
        let want = -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 1.3f64.powi(2) / (2.0 * v);
        assert_relative_eq!(got, want, epsilon = 1e-13);
    }

    #[test]
    fn two_point_marginal_is_bivariate_gaussian() {
        let lp = LeafPrior::new(0.5).unwrap();
        let r = [0.3, -1.2];
        let v = [0.8, 1.5];
        let got = tree_marginal_loglik(
            &DecisionTree::stump(0.0),
            &single_column(&[0.0, 1.0]),
            &r,
            &v,
            &lp,
        )
        .unwrap();
        let cov = DMatrix::from_row_slice(2, 2, &[v[0] + 0.5, 0.5, 0.5, v[1] + 0.5]);
        let want = crate::linalg::log_mvn_density(&r, &[0.0, 0.0], &cov).unwrap();
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn split_gain_matches_quadrature() {
        // three points; the split separates {0} from {1, 2}
        let x = single_column(&[0.0, 1.0, 2.0]);
        let r = [0.4, 1.1, 0.9];
        let v = [1.0, 0.5, 2.0];
        let lp = LeafPrior::new(0.3).unwrap();
        let mut split = DecisionTree::stump(0.0);
        split.grow(0, 0, 0.5);
        let stump = DecisionTree::stump(0.0);
        let gain = tree_marginal_loglik(&split, &x, &r, &v, &lp).unwrap()
            - tree_marginal_loglik(&stump, &x, &r, &v, &lp).unwrap();

        let integrate = |idx: &[usize]| -> f64 {
            // trapezoid rule over the leaf value on a wide grid
            let (lo, hi, m) = (-8.0, 8.0, 160_000);
            let h = (hi - lo) / m as f64;
            let mut acc = 0.0;
            for g in 0..=m {
                let mu = lo + g as f64 * h;
                let mut lik = (-mu * mu / (2.0 * lp.variance)).exp()
                    / (2.0 * std::f64::consts::PI * lp.variance).sqrt();
                for &t in idx {
                    lik *= (-(r[t] - mu).powi(2) / (2.0 * v[t])).exp()
                        / (2.0 * std::f64::consts::PI * v[t]).sqrt();
                }
                acc += if g == 0 || g == m { 0.5 * lik } else { lik };
            }
            (acc * h).ln()
        };
        let want = integrate(&[0]) + integrate(&[1, 2]) - integrate(&[0, 1, 2]);
        assert_relative_eq!(gain, want, epsilon = 1e-8);
    }

    #[test]
    fn empty_leaf_is_flagged() {
        let mut t = DecisionTree::stump(0.0);
        t.grow(0, 0, 10.0);
        let lp = LeafPrior::new(1.0).unwrap();
        assert!(tree_marginal_loglik(
            &t,
            &single_column(&[0.0, 1.0]),
            &[0.0, 0.0],
            &[1.0, 1.0],
            &lp
        )
        .is_none());
    }

    #[test]
    fn scalar_leaf_posterior() {
        let mut s = LeafStats::default();
        s.add(1.0, 1.0);
        let (m, v) = s.posterior(&LeafPrior::new(1.0).unwrap());
        assert_relative_eq!(m, 0.5, epsilon = 1e-12);
        assert_relative_eq!(v, 0.5, epsilon = 1e-12);

        let mut s = LeafStats::default();
        s.add(2.0, 1.0);
        s.add(5.0, 3.0);
        let (m, _) = s.posterior(&LeafPrior::new(1e300).unwrap());
        assert_relative_eq!(m, (2.0 + 5.0 / 3.0) / (1.0 + 1.0 / 3.0), epsilon = 1e-12);
        let (m, _) = s.posterior(&LeafPrior::new(1e-300).unwrap());
        assert!(m.abs() < 1e-290);
    }

    #[test]
    fn stump_only_grows() {
        let prior = TreePrior::default();
        let ranges = SplitRanges {
            bounds: vec![(0.0, 1.0)],
        };
        let probs = effective_move_probs(&DecisionTree::stump(0.0), &prior);
        assert_eq!(probs, [1.0, 0.0, 0.0, 0.0]);
        let mut rng = rng_from_seed(1);
        for _ in 0..20 {
            let p = propose_tree_move(&DecisionTree::stump(0.0), &prior, &ranges, &mut rng);
            assert_eq!(p.kind, MoveKind::Grow);
            assert_eq!(p.tree.leaves().len(), 2);
            assert_eq!(p.tree.depth(p.tree.leaves()[0]), 1);
        }
    }

    #[test]
    fn grow_prune_ratios_are_reciprocal() {
        let prior = TreePrior::default();
        let mut t = DecisionTree::stump(0.0);
        t.grow(0, 0, 0.5);
        // grow from a depth-1 tree and prune back
        let p_grow = effective_move_probs(&t, &prior)[0];
        let mut g = t.clone();
        let l = g.leaves()[0];
        g.grow(l, 0, 0.25);
        let p_prune_back = effective_move_probs(&g, &prior)[1];
        let fwd =
            (p_prune_back / g.nog().len() as f64).ln() - (p_grow / t.leaves().len() as f64).ln();
        let p_prune = effective_move_probs(&g, &prior)[1];
        let p_grow_back = effective_move_probs(&t, &prior)[0];
        let rev =
            (p_grow_back / t.leaves().len() as f64).ln() - (p_prune / g.nog().len() as f64).ln();
        assert_relative_eq!(fwd, -rev, epsilon = 1e-14);
    }

    #[test]
    fn swap_with_identical_children_rules() {
        let mut t = DecisionTree::stump(0.0);
        t.grow(0, 0, 0.5);
        let (l, r) = t.children(0).unwrap();
        t.grow(l, 1, 0.2);
        t.grow(r, 1, 0.2);
        swap_rules(&mut t, 0, l);
        assert_eq!(t.rule(0), Some((1, 0.2)));
        assert_eq!(t.rule(l), Some((0, 0.5)));
        assert_eq!(t.rule(r), Some((0, 0.5)));
    }
}
