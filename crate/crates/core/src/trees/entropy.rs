//! Empirical entropies in bits and the binary-split lower bound.
//!
//! A chain of binary threshold splits partitions the samples more coarsely
//! than grouping them by full value tuples, so its information gain can
//! never exceed `H(Y) - H(Y | features)`. [`verify_lower_bound`] measures
//! both sides on concrete samples.

use std::collections::HashMap;
use std::hash::Hash;

use crate::exec::{map_range, Execution};
use crate::rng::{hash_words, SplitMix64};

use super::TreeError;

/// Feature codes plus a binary label.
pub type Sample = (Vec<u32>, u8);

fn h2(pos: usize, n: usize) -> f64 {
    if n == 0 || pos == 0 || pos == n {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Binary entropy of the empirical positive rate, `0 log 0 = 0`.
pub fn entropy(labels: &[u8]) -> Result<f64, TreeError> {
    if labels.is_empty() {
        return Err(TreeError::EmptyData);
    }
    Ok(h2(labels.iter().filter(|&&y| y == 1).count(), labels.len()))
}

/// `H(Y | K) = sum_v p(v) H(Y | K = v)`, grouping on exact keys.
pub fn conditional_entropy<K: Hash + Eq>(samples: &[(K, u8)]) -> Result<f64, TreeError> {
    if samples.is_empty() {
        return Err(TreeError::EmptyData);
    }
    let mut groups: HashMap<&K, (usize, usize)> = HashMap::new();
    for (k, y) in samples {
        let e = groups.entry(k).or_default();
        e.0 += usize::from(*y == 1);
        e.1 += 1;
    }
    let n = samples.len() as f64;
    // Sum in a fixed order so the result does not depend on hash order.
    let mut parts: Vec<(usize, usize)> = groups.into_values().collect();
    parts.sort_unstable();
    Ok(parts.iter().map(|&(pos, cnt)| cnt as f64 / n * h2(pos, cnt)).sum())
}

/// Gain of splitting on `samples[i].0[feature] < threshold`.
pub fn info_gain_binary_split(samples: &[Sample], feature: usize, threshold: u32) -> Result<f64, TreeError> {
    let (mut ln, mut lp, mut rn, mut rp) = (0usize, 0usize, 0usize, 0usize);
    for (x, y) in samples {
        if x[feature] < threshold {
            ln += 1;
            lp += usize::from(*y == 1);
        } else {
            rn += 1;
            rp += usize::from(*y == 1);
        }
    }
    if ln == 0 || rn == 0 {
        return Err(TreeError::DegenerateSplit);
    }
    let n = (ln + rn) as f64;
    Ok(h2(lp + rp, ln + rn) - (ln as f64 / n * h2(lp, ln) + rn as f64 / n * h2(rp, rn)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// Gain of the greedy chain of binary splits, one per feature per path.
    pub ig_best_path: f64,
    /// `H(Y) - H(Y | feature_set)`.
    pub full_gain: f64,
    pub holds: bool,
}

/// Sum of `count * H` over the leaves of the greedy split chain.
fn greedy_leaf_mass(samples: &[&Sample], remaining: &[usize]) -> f64 {
    let n = samples.len();
    let pos = samples.iter().filter(|s| s.1 == 1).count();
    let here = n as f64 * h2(pos, n);
    if remaining.is_empty() || pos == 0 || pos == n {
        return here;
    }
    // (gain, feature slot, threshold)
    let mut best: Option<(f64, usize, u32)> = None;
    for (slot, &f) in remaining.iter().enumerate() {
        let mut values: Vec<u32> = samples.iter().map(|s| s.0[f]).collect();
        values.sort_unstable();
        values.dedup();
        for &t in values.iter().skip(1) {
            let (mut ln, mut lp) = (0usize, 0usize);
            for s in samples {
                if s.0[f] < t {
                    ln += 1;
                    lp += usize::from(s.1 == 1);
                }
            }
            let (rn, rp) = (n - ln, pos - lp);
            let mass = ln as f64 * h2(lp, ln) + rn as f64 * h2(rp, rn);
            let gain = here - mass;
            if best.is_none_or(|b| gain > b.0) {
                best = Some((gain, slot, t));
            }
        }
    }
    let Some((_, slot, t)) = best else { return here };
    let f = remaining[slot];
    let rest: Vec<usize> = remaining
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != slot)
        .map(|(_, &g)| g)
        .collect();
    let (left, right): (Vec<&Sample>, Vec<&Sample>) = samples.iter().partition(|s| s.0[f] < t);
    greedy_leaf_mass(&left, &rest) + greedy_leaf_mass(&right, &rest)
}

/// Compares the greedy binary-split gain on `feature_set` with the full
/// conditional-entropy gain of the same features.
pub fn verify_lower_bound(samples: &[Sample], feature_set: &[usize]) -> Result<BoundReport, TreeError> {
    if samples.is_empty() || feature_set.is_empty() {
        return Err(TreeError::EmptyData);
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.1).collect();
    let h_y = entropy(&labels)?;
    let keyed: Vec<(Vec<u32>, u8)> = samples
        .iter()
        .map(|(x, y)| (feature_set.iter().map(|&f| x[f]).collect(), *y))
        .collect();
    let full_gain = h_y - conditional_entropy(&keyed)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let ig_best_path = h_y - greedy_leaf_mass(&refs, feature_set) / samples.len() as f64;
    Ok(BoundReport {
        ig_best_path,
        full_gain,
        holds: ig_best_path <= full_gain + 1e-9,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub n_trials: usize,
    pub violations: usize,
    /// Smallest `full_gain - ig_best_path` seen.
    pub min_slack: f64,
    /// Trials where both gains agree within 1e-9.
    pub tight: usize,
}

/// Trial `i` of the randomized sweep: a random joint distribution over one
/// or two features (cardinality 2 to 5) and a binary label, sampled 200 to
/// 2000 times.
pub fn random_trial(seed: u64, i: usize) -> (Vec<Sample>, Vec<usize>) {
    let mut g = SplitMix64::new(hash_words(seed, &[i as u64]));
    let n_features = 1 + g.below(2) as usize;
    let cards: Vec<u32> = (0..n_features).map(|_| 2 + g.below(4) as u32).collect();
    let cells: usize = cards.iter().map(|&c| c as usize).product();
    // Unnormalized weights per (cell, label); cumulative table for sampling.
    let weights: Vec<f64> = (0..2 * cells).map(|_| g.unit().powi(2) + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    let n = 200 + g.below(1801) as usize;
    let samples = (0..n)
        .map(|_| {
            let mut r = g.unit() * total;
            let mut pick = weights.len() - 1;
            for (k, w) in weights.iter().enumerate() {
                if r < *w {
                    pick = k;
                    break;
                }
                r -= w;
            }
            let (mut cell, label) = (pick / 2, (pick % 2) as u8);
            let x = cards
                .iter()
                .map(|&c| {
                    let v = (cell % c as usize) as u32;
                    cell /= c as usize;
                    v
                })
                .collect();
            (x, label)
        })
        .collect();
    (samples, (0..n_features).collect())
}

pub fn bound_sweep(n_trials: usize, seed: u64, exec: Execution) -> SweepSummary {
    let reports = map_range(n_trials, exec, |i| {
        let (samples, features) = random_trial(seed, i);
        verify_lower_bound(&samples, &features).expect("trials are nonempty")
    });
    SweepSummary {
        n_trials,
        violations: reports.iter().filter(|r| !r.holds).count(),
        min_slack: reports
            .iter()
            .map(|r| r.full_gain - r.ig_best_path)
            .fold(f64::INFINITY, f64::min),
        tight: reports
            .iter()
            .filter(|r| (r.full_gain - r.ig_best_path).abs() <= 1e-9)
            .count(),
    }
}
