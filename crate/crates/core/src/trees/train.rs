use crate::math::{logistic_loss, logit, sigmoid};

use super::{FeatureMatrix, Forest, Node, TrainParams, Tree, TreeError};

/// Halvings tried before a leaf that would raise the loss is zeroed.
const MAX_BACKTRACK: usize = 40;

struct Grower<'a> {
    x: &'a FeatureMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    cards: &'a [usize],
    params: &'a TrainParams,
    nodes: Vec<Node>,
    /// Per leaf node: the rows it holds.
    leaf_rows: Vec<(usize, Vec<u32>)>,
    hist_g: Vec<f64>,
    hist_h: Vec<f64>,
    hist_n: Vec<usize>,
}

#[derive(Clone, Copy)]
struct BestSplit {
    feature: usize,
    threshold: u32,
    gain: f64,
}

impl Grower<'_> {
    fn sums(&self, rows: &[u32]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + self.grad[r as usize], h + self.hess[r as usize])
        })
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.params.lambda)
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    fn best_split(&mut self, rows: &[u32], g_total: f64, h_total: f64) -> Option<BestSplit> {
        let min_leaf = self.params.min_samples_leaf.max(1);
        if rows.len() < 2 * min_leaf {
            return None;
        }
        let parent = self.score(g_total, h_total);
        let mut best: Option<BestSplit> = None;
        for f in 0..self.x.n_features() {
            let card = self.cards[f];
            if card < 2 {
                continue;
            }
            self.hist_g[..card].fill(0.0);
            self.hist_h[..card].fill(0.0);
            self.hist_n[..card].fill(0);
            for &r in rows {
                let v = self.x.get(r as usize, f) as usize;
                self.hist_g[v] += self.grad[r as usize];
                self.hist_h[v] += self.hess[r as usize];
                self.hist_n[v] += 1;
            }
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            for v in 0..card {
                // Threshold v puts every value < v on the left; only values
                // present in the node give distinct partitions.
                if self.hist_n[v] > 0 && nl >= min_leaf && rows.len() - nl >= min_leaf {
                    let (gr, hr) = (g_total - gl, h_total - hl);
                    let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
                    if best.is_none_or(|b| gain > b.gain) {
                        best = Some(BestSplit {
                            feature: f,
                            threshold: v as u32,
                            gain,
                        });
                    }
                }
                gl += self.hist_g[v];
                hl += self.hist_h[v];
                nl += self.hist_n[v];
            }
        }
        best.filter(|b| b.gain > self.params.min_gain)
    }

    fn grow(&mut self, rows: &mut [u32], depth: usize) -> usize {
        let (g, h) = self.sums(rows);
        let id = self.nodes.len();
        let split = if depth < self.params.max_depth {
            self.best_split(rows, g, h)
        } else {
            None
        };
        match split {
            None => {
                self.nodes.push(Node::Leaf {
                    score: self.leaf_value(g, h),
                });
                self.leaf_rows.push((id, rows.to_vec()));
            }
            Some(s) => {
                self.nodes.push(Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: 0,
                    right: 0,
                });
                let x = self.x;
                let mid = partition(rows, |r| x.get(r as usize, s.feature) < s.threshold);
                let (l, r) = rows.split_at_mut(mid);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

/// Stable in-place partition; returns the count of rows satisfying `pred`.
fn partition(rows: &mut [u32], pred: impl Fn(u32) -> bool) -> usize {
    let (yes, no): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| pred(r));
    let mid = yes.len();
    rows[..mid].copy_from_slice(&yes);
    rows[mid..].copy_from_slice(&no);
    mid
}

/// Fits a boosted forest to binary labels with the logistic loss.
///
/// Data with a single class (or fewer than two rows) yields `n_trees`
/// single-leaf trees and a base score at the smoothed positive rate
/// `(pos + 0.5) / (n + 1)`.
pub fn train_forest(x: &FeatureMatrix, y: &[u8], params: &TrainParams) -> Result<Forest, TreeError> {
    params.validate()?;
    let n = x.n_rows();
    if n == 0 || y.is_empty() {
        return Err(TreeError::EmptyData);
    }
    if y.len() != n {
        return Err(TreeError::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    let base_score = logit((pos as f64 + 0.5) / (n as f64 + 1.0));
    let mut forest = Forest::constant(x.n_features(), params.n_trees, params.learning_rate, base_score);
    if pos == 0 || pos == n {
        return Ok(forest);
    }

    let cards: Vec<usize> = (0..x.n_features())
        .map(|f| (0..n).map(|r| x.get(r, f) as usize + 1).max().unwrap_or(0))
        .collect();
    let max_card = cards.iter().copied().max().unwrap_or(0);
    let mut margins = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    forest.trees.clear();

    for _ in 0..params.n_trees {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = p - f64::from(y[i]);
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let mut grower = Grower {
            x,
            grad: &grad,
            hess: &hess,
            cards: &cards,
            params,
            nodes: Vec::new(),
            leaf_rows: Vec::new(),
            hist_g: vec![0.0; max_card],
            hist_h: vec![0.0; max_card],
            hist_n: vec![0; max_card],
        };
        let mut rows: Vec<u32> = (0..n as u32).collect();
        grower.grow(&mut rows, 0);
        let Grower {
            mut nodes, leaf_rows, ..
        } = grower;

        // Newton steps can overshoot; shrink any leaf whose own rows would
        // lose likelihood so the training loss never goes up.
        for (leaf, rows) in leaf_rows {
            let Node::Leaf { score } = &mut nodes[leaf] else {
                unreachable!()
            };
            let before: f64 = rows
                .iter()
                .map(|&r| logistic_loss(margins[r as usize], y[r as usize]))
                .sum();
            let after = |w: f64| -> f64 {
                rows.iter()
                    .map(|&r| logistic_loss(margins[r as usize] + params.learning_rate * w, y[r as usize]))
                    .sum()
            };
            let mut w = *score;
            let mut tries = 0;
            while after(w) > before {
                tries += 1;
                w = if tries >= MAX_BACKTRACK { 0.0 } else { w * 0.5 };
                if w == 0.0 {
                    break;
                }
            }
            *score = w;
            for &r in &rows {
                margins[r as usize] += params.learning_rate * w;
            }
        }
        forest.trees.push(Tree { nodes });
    }
    Ok(forest)
}

/// Mean logistic loss of the forest on `(x, y)`, in nats.
pub fn training_log_loss(forest: &Forest, x: &FeatureMatrix, y: &[u8]) -> f64 {
    let n = x.n_rows();
    (0..n)
        .map(|i| logistic_loss(forest.margin(x.row(i)), y[i]))
        .sum::<f64>()
        / n as f64
}

#[cfg(test)]
mod tests {
    use super::super::{enumerate_paths, predict_forest};
    use super::*;

    fn matrix(rows: &[Vec<u32>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows[0].len(), rows).unwrap()
    }

    #[test]
    fn empty_data_is_an_error() {
        let x = FeatureMatrix::new(2);
        assert_eq!(
            train_forest(&x, &[], &TrainParams::default()),
            Err(TreeError::EmptyData)
        );
    }

    #[test]
    fn single_label_gives_split_free_forest() {
        let rows: Vec<Vec<u32>> = (0..30).map(|i| vec![i % 4, i % 3]).collect();
        let y = vec![0u8; 30];
        let f = train_forest(&matrix(&rows), &y, &TrainParams::default()).unwrap();
        assert_eq!(f.n_splits(), 0);
        assert_eq!(f.trees.len(), 20);
        let p = predict_forest(&f, &[0, 0]).unwrap();
        assert!((p - 0.5 / 31.0).abs() < 1e-12, "{p}");
    }

    /// Exhaustive second-order gain scan over every (feature, threshold).
    fn brute_force_best(x: &FeatureMatrix, y: &[u8], lambda: f64, min_leaf: usize) -> Option<(usize, u32)> {
        let n = x.n_rows();
        let pos = y.iter().filter(|&&v| v == 1).count();
        let p = (pos as f64 + 0.5) / (n as f64 + 1.0);
        let g: Vec<f64> = y.iter().map(|&v| p - f64::from(v)).collect();
        let h = p * (1.0 - p);
        let obj = |idx: &[usize]| {
            let gs: f64 = idx.iter().map(|&i| g[i]).sum();
            gs * gs / (h * idx.len() as f64 + lambda)
        };
        let all: Vec<usize> = (0..n).collect();
        let mut best: Option<(f64, usize, u32)> = None;
        for f in 0..x.n_features() {
            for t in 1..=64u32 {
                // Thresholds are reported as the smallest value sent right.
                if !all.iter().any(|&i| x.get(i, f) == t) {
                    continue;
                }
                let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x.get(i, f) < t);
                if l.len() < min_leaf || r.len() < min_leaf {
                    continue;
                }
                let gain = obj(&l) + obj(&r) - obj(&all);
                if best.is_none_or(|b| gain > b.0 + 1e-12) {
                    best = Some((gain, f, t));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    #[test]
    fn separable_feature_gives_a_stump() {
        // Feature 0 separates perfectly at < 1; feature 1 is noise.
        let rows: Vec<Vec<u32>> = (0..40).map(|i| vec![u32::from(i % 2 == 0), (i / 2) % 3]).collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r[0] >= 1)).collect();
        let x = matrix(&rows);
        let f = train_forest(&x, &y, &TrainParams::default()).unwrap();
        let first = &f.trees[0];
        assert_eq!(first.n_splits(), 1);
        assert_eq!(
            first.nodes[0],
            Node::Split {
                feature: 0,
                threshold: 1,
                left: 1,
                right: 2
            }
        );
        assert_eq!(brute_force_best(&x, &y, 1.0, 5), Some((0, 1)));
        for (r, &label) in rows.iter().zip(&y) {
            let p = predict_forest(&f, r).unwrap();
            assert_eq!(p > 0.5, label == 1);
        }
        assert!(enumerate_paths(&f).iter().all(|s| s.len() == 1 && s.contains(&0)));
    }

    #[test]
    fn xor_is_learned_at_depth_two() {
        let mut rows = Vec::new();
        for a in 0..3u32 {
            for b in 0..3u32 {
                for _ in 0..10 {
                    rows.push(vec![a, b]);
                }
            }
        }
        let y: Vec<u8> = rows.iter().map(|r| u8::from((r[0] < 1) ^ (r[1] < 1))).collect();
        let x = matrix(&rows);
        let params = TrainParams {
            max_depth: 2,
            ..TrainParams::default()
        };
        let f = train_forest(&x, &y, &params).unwrap();
        let loss = training_log_loss(&f, &x, &y);
        assert!(loss < 0.2, "loss {loss}");
    }

    #[test]
    fn first_split_matches_brute_force_scan() {
        let mut g = crate::rng::SplitMix64::new(3);
        for _ in 0..20 {
            let rows: Vec<Vec<u32>> = (0..80)
                .map(|_| vec![g.below(6) as u32, g.below(4) as u32, g.below(9) as u32])
                .collect();
            let y: Vec<u8> = rows
                .iter()
                .map(|r| u8::from(g.bernoulli(0.1 + 0.1 * f64::from(r[0] % 3))))
                .collect();
            if y.iter().all(|&v| v == y[0]) {
                continue;
            }
            let x = matrix(&rows);
            let params = TrainParams {
                n_trees: 1,
                max_depth: 1,
                ..TrainParams::default()
            };
            let f = train_forest(&x, &y, &params).unwrap();
            let got = match f.trees[0].nodes[0] {
                Node::Split { feature, threshold, .. } => Some((feature, threshold)),
                Node::Leaf { .. } => None,
            };
            let want = brute_force_best(&x, &y, 1.0, 5);
            // Both scans agree unless the best gain is not positive.
            if got.is_some() {
                assert_eq!(got, want);
            }
        }
    }
}
