use serde::{Deserialize, Serialize};

/// A node of a binary regression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        var: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Arena-backed regression tree. Node 0 is the root; every stored node is reachable.
///
/// Routing: `x[var] < threshold` goes left, everything else (ties included) goes right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
}

impl DecisionTree {
    pub fn stump(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
            parent: vec![None],
            depth: vec![0],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        matches!(self.nodes[i], Node::Leaf { .. })
    }

    pub fn is_stump(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_for(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    var,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[var] < threshold { left } else { right };
                }
            }
        }
    }

    /// Leaf index for row `t` of a column-major design matrix.
    pub fn leaf_for_row(&self, x: &nalgebra::DMatrix<f64>, t: usize) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    var,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[(t, var)] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_for(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn leaf_value(&self, i: usize) -> f64 {
        match self.nodes[i] {
            Node::Leaf { value } => value,
            Node::Split { .. } => panic!("node {i} is not a leaf"),
        }
    }

    pub fn set_leaf_value(&mut self, i: usize, v: f64) {
        match &mut self.nodes[i] {
            Node::Leaf { value } => *value = v,
            Node::Split { .. } => panic!("node {i} is not a leaf"),
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn interior(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| !self.is_leaf(i))
            .collect()
    }

    pub fn children(&self, i: usize) -> Option<(usize, usize)> {
        match self.nodes[i] {
            Node::Split { left, right, .. } => Some((left, right)),
            Node::Leaf { .. } => None,
        }
    }

    pub fn rule(&self, i: usize) -> Option<(usize, f64)> {
        match self.nodes[i] {
            Node::Split { var, threshold, .. } => Some((var, threshold)),
            Node::Leaf { .. } => None,
        }
    }

    /// Interior nodes whose two children are both leaves (prunable nodes).
    pub fn nog(&self) -> Vec<usize> {
        self.interior()
            .into_iter()
            .filter(|&i| {
                let (l, r) = self.children(i).unwrap();
                self.is_leaf(l) && self.is_leaf(r)
            })
            .collect()
    }

    /// Parent-child pairs where both nodes are interior.
    pub fn swappable_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for p in self.interior() {
            let (l, r) = self.children(p).unwrap();
            for c in [l, r] {
                if !self.is_leaf(c) {
                    out.push((p, c));
                }
            }
        }
        out
    }

    /// Turns leaf `i` into a split with two zero-valued leaves.
    pub fn grow(&mut self, i: usize, var: usize, threshold: f64) {
        assert!(self.is_leaf(i), "grow on interior node {i}");
        let d = self.depth[i] + 1;
        let left = self.nodes.len();
        let right = left + 1;
        self.nodes.push(Node::Leaf { value: 0.0 });
        self.nodes.push(Node::Leaf { value: 0.0 });
        self.parent.extend([Some(i), Some(i)]);
        self.depth.extend([d, d]);
        self.nodes[i] = Node::Split {
            var,
            threshold,
            left,
            right,
        };
    }

    /// Collapses node `i`, whose children must both be leaves, into a leaf.
    pub fn prune(&mut self, i: usize) {
        let (l, r) = self.children(i).expect("prune on a leaf");
        assert!(
            self.is_leaf(l) && self.is_leaf(r),
            "prune needs two leaf children"
        );
        self.nodes[i] = Node::Leaf { value: 0.0 };
        self.compact();
    }

    pub fn set_rule(&mut self, i: usize, new_var: usize, new_threshold: f64) {
        match &mut self.nodes[i] {
            Node::Split { var, threshold, .. } => {
                *var = new_var;
                *threshold = new_threshold;
            }
            Node::Leaf { .. } => panic!("set_rule on leaf {i}"),
        }
    }

    /// Drops unreachable nodes and renumbers the rest in preorder.
    fn compact(&mut self) {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut parent = Vec::with_capacity(self.nodes.len());
        let mut depth = Vec::with_capacity(self.nodes.len());
        fn visit(
            src: &[Node],
            i: usize,
            par: Option<usize>,
            d: usize,
            nodes: &mut Vec<Node>,
            parent: &mut Vec<Option<usize>>,
            depth: &mut Vec<usize>,
        ) -> usize {
            let me = nodes.len();
            nodes.push(src[i].clone());
            parent.push(par);
            depth.push(d);
            if let Node::Split {
                var,
                threshold,
                left,
                right,
            } = src[i]
            {
                let l = visit(src, left, Some(me), d + 1, nodes, parent, depth);
                let r = visit(src, right, Some(me), d + 1, nodes, parent, depth);
                nodes[me] = Node::Split {
                    var,
                    threshold,
                    left: l,
                    right: r,
                };
            }
            me
        }
        visit(&self.nodes, 0, None, 0, &mut nodes, &mut parent, &mut depth);
        self.nodes = nodes;
        self.parent = parent;
        self.depth = depth;
    }

    /// Checks arena consistency; used by tests and snapshot loading.
    pub fn validate(&self, n_inputs: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![(0usize, None::<usize>, 0usize)];
        while let Some((i, par, d)) = stack.pop() {
            if i >= self.nodes.len() || seen[i] {
                return Err(format!("node {i} is out of range or reached twice"));
            }
            seen[i] = true;
            if self.parent[i] != par || self.depth[i] != d {
                return Err(format!("node {i} has inconsistent parent or depth"));
            }
            match self.nodes[i] {
                Node::Leaf { value } if !value.is_finite() => {
                    return Err(format!("leaf {i} has a non-finite value"))
                }
                Node::Leaf { .. } => {}
                Node::Split {
                    var,
                    threshold,
                    left,
                    right,
                } => {
                    if var >= n_inputs || !threshold.is_finite() {
                        return Err(format!("node {i} has an invalid rule"));
                    }
                    stack.push((left, Some(i), d + 1));
                    stack.push((right, Some(i), d + 1));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err("tree has unreachable nodes".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_right() {
        let mut t = DecisionTree::stump(0.0);
        t.grow(0, 0, 1.0);
        let (l, r) = t.children(0).unwrap();
        t.set_leaf_value(l, -1.0);
        t.set_leaf_value(r, 2.0);
        assert_eq!(t.predict(&[0.5]), -1.0);
        assert_eq!(t.predict(&[1.0]), 2.0);
        assert_eq!(t.predict(&[1.5]), 2.0);
    }

    #[test]
    fn grow_then_prune_round_trips() {
        let mut t = DecisionTree::stump(0.0);
        t.grow(0, 0, 0.0);
        let (_, r) = t.children(0).unwrap();
        t.grow(r, 1, 0.5);
        assert_eq!(t.leaves().len(), 3);
        assert_eq!(t.nog(), vec![r]);
        assert_eq!(t.swappable_pairs(), vec![(0, r)]);
        t.prune(r);
        assert_eq!(t.len(), 3);
        t.validate(2).unwrap();
        t.prune(0);
        assert!(t.is_stump());
        t.validate(2).unwrap();
    }

    #[test]
    fn prune_in_the_middle_keeps_arena_consistent() {
        let mut t = DecisionTree::stump(0.0);
        t.grow(0, 0, 0.0);
        let (l, r) = t.children(0).unwrap();
        t.grow(l, 0, -1.0);
        t.grow(r, 0, 1.0);
        t.prune(l);
        t.validate(1).unwrap();
        assert_eq!(t.leaves().len(), 3);
        assert_eq!(t.predict(&[-5.0]), 0.0);
    }
}
