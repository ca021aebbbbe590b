//! Sum-of-trees conditional mean.

mod forest;
mod moves;
mod prior;
mod tree;

pub use forest::{
    forest_predict, partial_residuals, Forest, ForestSet, MoveStats, FOREST_SNAPSHOT_VERSION,
};
pub use moves::{
    effective_move_probs, propose_tree_move, sample_leaves, tree_marginal_loglik, LeafStats,
    MoveKind, Partition, Proposal, SplitRanges,
};
pub use prior::{depth_split_prob, tree_log_prior, LeafPrior, MoveProbs, TreePrior};
pub use tree::{DecisionTree, Node};
