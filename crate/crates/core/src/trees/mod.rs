//! Gradient-boosted decision trees over integer-coded features.
//!
//! Splits are ordinal: rows with `x[feature] < threshold` go left, the rest
//! go right. Trees are fit to first/second-order gradients of the logistic
//! loss and a forest predicts `sigmoid(base_score + learning_rate * sum)`.

mod io;
mod train;

pub mod entropy;

use std::collections::BTreeSet;

use thiserror::Error;

pub use io::{parse_forest, write_forest};
pub use train::{train_forest, training_log_loss};

use crate::math::sigmoid;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("no training data")]
    EmptyData,
    #[error("dimension mismatch: expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("split leaves one side empty")]
    DegenerateSplit,
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("line {line}: malformed forest: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Splits must gain strictly more than this.
    pub min_gain: f64,
    /// L2 penalty on leaf scores.
    pub lambda: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            n_trees: 20,
            max_depth: 3,
            learning_rate: 0.3,
            min_samples_leaf: 5,
            min_gain: 0.0,
            lambda: 1.0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.n_trees == 0 || self.max_depth == 0 {
            return Err(TreeError::InvalidParams("n_trees and max_depth must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(TreeError::InvalidParams(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 || !self.min_gain.is_finite() {
            return Err(TreeError::InvalidParams(
                "lambda must be >= 0 and min_gain finite".into(),
            ));
        }
        Ok(())
    }
}

/// Row-major matrix of feature codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMatrix {
    n_features: usize,
    data: Vec<u32>,
}

impl FeatureMatrix {
    pub fn new(n_features: usize) -> Self {
        Self {
            n_features,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[u32]>>(n_features: usize, rows: &[R]) -> Result<Self, TreeError> {
        let mut m = Self::new(n_features);
        for r in rows {
            m.push(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: &[u32]) -> Result<(), TreeError> {
        if row.len() != self.n_features {
            return Err(TreeError::DimensionMismatch {
                expected: self.n_features,
                actual: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.data.len().checked_div(self.n_features).unwrap_or(0)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn get(&self, row: usize, feature: usize) -> u32 {
        self.data[row * self.n_features + feature]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: u32,
        left: usize,
        right: usize,
    },
    Leaf {
        score: f64,
    },
}

/// Arena of nodes; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(score: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { score }],
        }
    }

    /// Index of the leaf node `x` lands in.
    pub fn leaf_index(&self, x: &[u32]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn score(&self, x: &[u32]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { score } => score,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    /// Feature sets of every root-to-leaf path, in left-first order,
    /// including empty sets for single-leaf trees.
    fn path_sets(&self, out: &mut Vec<BTreeSet<usize>>) {
        fn go(t: &Tree, at: usize, path: &mut Vec<usize>, out: &mut Vec<BTreeSet<usize>>) {
            match t.nodes[at] {
                Node::Leaf { .. } => out.push(path.iter().copied().collect()),
                Node::Split {
                    feature, left, right, ..
                } => {
                    path.push(feature);
                    go(t, left, path, out);
                    go(t, right, path, out);
                    path.pop();
                }
            }
        }
        go(self, 0, &mut Vec::new(), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    /// Log-odds prior.
    pub base_score: f64,
    pub n_features: usize,
}

impl Forest {
    /// `n_trees` single-leaf trees with zero score: predicts `sigmoid(base_score)`.
    pub fn constant(n_features: usize, n_trees: usize, learning_rate: f64, base_score: f64) -> Self {
        Self {
            trees: vec![Tree::leaf(0.0); n_trees],
            learning_rate,
            base_score,
            n_features,
        }
    }

    pub fn margin(&self, x: &[u32]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.score(x)).sum();
        self.base_score + self.learning_rate * sum
    }

    pub fn n_splits(&self) -> usize {
        self.trees.iter().map(Tree::n_splits).sum()
    }

    pub fn n_leaves(&self) -> usize {
        self.trees.iter().map(Tree::n_leaves).sum()
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> BTreeSet<usize> {
        self.trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect()
    }
}

pub fn predict_forest(forest: &Forest, x: &[u32]) -> Result<f64, TreeError> {
    if x.len() != forest.n_features {
        return Err(TreeError::DimensionMismatch {
            expected: forest.n_features,
            actual: x.len(),
        });
    }
    Ok(sigmoid(forest.margin(x)))
}

/// One feature-index set per root-to-leaf path. Split values and feature
/// order are dropped; paths through single-leaf trees are skipped.
pub fn enumerate_paths(forest: &Forest) -> Vec<BTreeSet<usize>> {
    let mut out = Vec::new();
    for t in &forest.trees {
        t.path_sets(&mut out);
    }
    out.retain(|s| !s.is_empty());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump(feature: usize, threshold: u32, l: f64, r: f64) -> Tree {
        Tree {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { score: l },
                Node::Leaf { score: r },
            ],
        }
    }

    #[test]
    fn constant_forest_predicts_sigmoid_of_base() {
        let f = Forest::constant(2, 3, 0.3, 0.0);
        assert_eq!(predict_forest(&f, &[0, 0]).unwrap(), 0.5);
        assert!(enumerate_paths(&f).is_empty());
    }

    #[test]
    fn single_leaf_prediction_is_sigmoid_of_score() {
        let f = Forest {
            trees: vec![Tree::leaf(1.7)],
            learning_rate: 1.0,
            base_score: 0.0,
            n_features: 1,
        };
        assert!((predict_forest(&f, &[4]).unwrap() - sigmoid(1.7)).abs() < 1e-15);
    }

    #[test]
    fn dimension_is_checked() {
        let f = Forest::constant(2, 1, 0.3, 0.0);
        assert_eq!(
            predict_forest(&f, &[1]),
            Err(TreeError::DimensionMismatch { expected: 2, actual: 1 })
        );
    }

    #[test]
    fn routing_uses_strict_less_than() {
        let t = stump(0, 3, -1.0, 1.0);
        assert_eq!(t.score(&[2]), -1.0);
        assert_eq!(t.score(&[3]), 1.0);
    }

    #[test]
    fn stump_paths_share_the_root_feature() {
        let f = Forest {
            trees: vec![stump(4, 1, 0.0, 0.0)],
            learning_rate: 1.0,
            base_score: 0.0,
            n_features: 5,
        };
        let paths = enumerate_paths(&f);
        assert_eq!(paths, vec![BTreeSet::from([4]), BTreeSet::from([4])]);
    }

    #[test]
    fn left_only_depth_two_tree() {
        // f=0 at root, g=1 under the left child only.
        let t = Tree {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    threshold: 2,
                    left: 1,
                    right: 2,
                },
                Node::Split {
                    feature: 1,
                    threshold: 1,
                    left: 3,
                    right: 4,
                },
                Node::Leaf { score: 0.0 },
                Node::Leaf { score: 0.0 },
                Node::Leaf { score: 0.0 },
            ],
        };
        assert_eq!(t.depth(), 2);
        let f = Forest {
            trees: vec![t],
            learning_rate: 1.0,
            base_score: 0.0,
            n_features: 2,
        };
        let paths = enumerate_paths(&f);
        assert_eq!(
            paths,
            vec![BTreeSet::from([0, 1]), BTreeSet::from([0, 1]), BTreeSet::from([0])]
        );
    }

    #[test]
    fn repeated_feature_collapses() {
        let t = Tree {
            nodes: vec![
                Node::Split {
                    feature: 2,
                    threshold: 5,
                    left: 1,
                    right: 2,
                },
                Node::Split {
                    feature: 2,
                    threshold: 2,
                    left: 3,
                    right: 4,
                },
                Node::Leaf { score: 0.0 },
                Node::Leaf { score: 0.0 },
                Node::Leaf { score: 0.0 },
            ],
        };
        let f = Forest {
            trees: vec![t],
            learning_rate: 1.0,
            base_score: 0.0,
            n_features: 3,
        };
        assert!(enumerate_paths(&f).iter().all(|s| s == &BTreeSet::from([2])));
    }
}
