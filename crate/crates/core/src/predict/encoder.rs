use crate::math::sigmoid;
use crate::trees::{train_forest, FeatureMatrix, Forest, Node, TrainParams};

use super::PredictError;

/// Maps an input to the leaf it reaches in every tree of a shared forest.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafEncoder {
    forest: Forest,
    /// Per tree: node id -> leaf ordinal within the tree.
    leaf_ids: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    width: usize,
}

impl LeafEncoder {
    pub fn new(forest: Forest) -> Self {
        let mut leaf_ids = Vec::with_capacity(forest.trees.len());
        let mut offsets = Vec::with_capacity(forest.trees.len());
        let mut width = 0;
        for t in &forest.trees {
            offsets.push(width);
            let mut ids = vec![usize::MAX; t.nodes.len()];
            let mut n = 0;
            for (i, node) in t.nodes.iter().enumerate() {
                if matches!(node, Node::Leaf { .. }) {
                    ids[i] = n;
                    n += 1;
                }
            }
            width += n;
            leaf_ids.push(ids);
        }
        Self {
            forest,
            leaf_ids,
            offsets,
            width,
        }
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    /// Total number of leaves, the size of the encoded space.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_trees(&self) -> usize {
        self.forest.trees.len()
    }

    /// Active positions, one per tree, in tree order.
    pub fn encode(&self, x: &[u32]) -> Result<Vec<usize>, PredictError> {
        if x.len() != self.forest.n_features {
            return Err(PredictError::DimensionMismatch {
                expected: self.forest.n_features,
                actual: x.len(),
            });
        }
        Ok(self
            .forest
            .trees
            .iter()
            .zip(&self.leaf_ids)
            .zip(&self.offsets)
            .map(|((t, ids), off)| off + ids[t.leaf_index(x)])
            .collect())
    }
}

/// Trains the shared discretizer. Single-class input gives a forest of root
/// leaves.
pub fn train_encoder(x: &FeatureMatrix, y: &[u8], params: &TrainParams) -> Result<LeafEncoder, PredictError> {
    if y.is_empty() {
        return Err(PredictError::EmptyTrain);
    }
    Ok(LeafEncoder::new(train_forest(x, y, params)?))
}

/// Logistic regression over one-hot leaf encodings, trained by SGD with
/// step size `eta0 / (1 + t / decay_steps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineLr {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub eta0: f64,
    pub decay_steps: f64,
    pub steps: u64,
}

impl OnlineLr {
    pub fn new(width: usize, eta0: f64, decay_steps: f64) -> Self {
        Self {
            weights: vec![0.0; width],
            bias: 0.0,
            eta0,
            decay_steps,
            steps: 0,
        }
    }

    pub fn predict(&self, active: &[usize]) -> f64 {
        sigmoid(self.bias + active.iter().map(|&i| self.weights[i]).sum::<f64>())
    }

    /// Predicts, then takes one gradient step on `y`. Returns the prediction
    /// made before the update.
    pub fn step(&mut self, active: &[usize], y: u8) -> f64 {
        let p = self.predict(active);
        let eta = self.eta0 / (1.0 + self.steps as f64 / self.decay_steps);
        let g = eta * (p - f64::from(y));
        for &i in active {
            self.weights[i] -= g;
        }
        self.bias -= g;
        self.steps += 1;
        p
    }
}
