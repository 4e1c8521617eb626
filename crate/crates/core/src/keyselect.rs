//! Counting-key candidates from per-user forests, ranked by tf-idf.
//!
//! Each user model is a document and each root-to-leaf feature set is a
//! word. For a candidate `k` present in the models `M_k`:
//!
//! * `tf  = sum_{j in M_k} f_j / |M_k|`, `f_j` the path occurrences in model j
//! * `idf = ln(|M| / (1 + |M_k|))`
//! * `tfidf = tf * idf`
//!
//! Keys present in almost every model get a negative idf.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::data::{Dataset, FeatureSchema, RESERVED_NAMES};
use crate::exec::{map_slice, Execution};
use crate::trees::{enumerate_paths, train_forest, FeatureMatrix, Forest, TrainParams, TreeError};

#[derive(Debug, Error, PartialEq)]
pub enum KeyError {
    #[error("counting key needs at least one feature")]
    Empty,
    #[error("`{0}` cannot be part of a counting key")]
    Reserved(String),
    #[error("invalid feature name `{0}`")]
    BadName(String),
    #[error("no data to select from")]
    EmptyData,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Canonically sorted set of contextual feature names; the user id is
/// implicit and added when counts are materialized.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CountingKey(BTreeSet<String>);

impl CountingKey {
    pub fn new<'a, I: IntoIterator<Item = &'a str>>(features: I) -> Result<Self, KeyError> {
        let mut set = BTreeSet::new();
        for f in features {
            if RESERVED_NAMES.contains(&f) {
                return Err(KeyError::Reserved(f.to_string()));
            }
            if f.is_empty() || f.contains(['+', '\t', ',', '\n']) {
                return Err(KeyError::BadName(f.to_string()));
            }
            set.insert(f.to_string());
        }
        if set.is_empty() {
            return Err(KeyError::Empty);
        }
        Ok(Self(set))
    }

    pub fn features(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for CountingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.features().collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for CountingKey {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CountingKey::new(s.trim().split('+').map(str::trim))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateStats {
    pub key: CountingKey,
    /// `|M_k|`.
    pub model_count: usize,
    /// Model id to `f_j`.
    pub per_model_occurrences: BTreeMap<u64, usize>,
    pub tf: f64,
    pub idf: f64,
    pub tfidf: f64,
}

impl CandidateStats {
    pub fn total_occurrences(&self) -> usize {
        self.per_model_occurrences.values().sum()
    }
}

/// Collects every path feature set across models, with per-model counts.
/// Duplicated paths within one tree count separately. Output is sorted by key.
pub fn extract_candidates(models: &[(u64, Forest)], schema: &FeatureSchema) -> Vec<CandidateStats> {
    let names = schema.names();
    let mut counts: HashMap<CountingKey, BTreeMap<u64, usize>> = HashMap::new();
    for (model_id, forest) in models {
        for path in enumerate_paths(forest) {
            let key = CountingKey(path.iter().map(|&i| names[i].clone()).collect());
            *counts.entry(key).or_default().entry(*model_id).or_insert(0) += 1;
        }
    }
    let mut out: Vec<CandidateStats> = counts
        .into_iter()
        .map(|(key, per_model_occurrences)| CandidateStats {
            key,
            model_count: per_model_occurrences.len(),
            per_model_occurrences,
            tf: 0.0,
            idf: 0.0,
            tfidf: 0.0,
        })
        .collect();
    out.sort_by(|a, b| a.key.cmp(&b.key));
    out
}

pub fn score_tfidf(mut stats: Vec<CandidateStats>, n_models: usize) -> Vec<CandidateStats> {
    for s in &mut stats {
        debug_assert!(s.model_count <= n_models);
        s.tf = s.total_occurrences() as f64 / s.model_count as f64;
        s.idf = (n_models as f64 / (1.0 + s.model_count as f64)).ln();
        s.tfidf = s.tf * s.idf;
    }
    stats
}

/// Descending tf-idf, then more models, then lexicographic key.
pub fn rank(stats: &mut [CandidateStats]) {
    stats.sort_by(|a, b| {
        b.tfidf
            .total_cmp(&a.tfidf)
            .then(b.model_count.cmp(&a.model_count))
            .then_with(|| a.key.cmp(&b.key))
    });
}

pub fn select_top_k(scored: &[CandidateStats], k: usize) -> Vec<CountingKey> {
    let mut ranked = scored.to_vec();
    rank(&mut ranked);
    ranked.into_iter().take(k).map(|s| s.key).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub keys: Vec<CountingKey>,
    /// All scored candidates in rank order.
    pub candidates: Vec<CandidateStats>,
    /// Users whose models were trained, ascending id.
    pub users: Vec<u64>,
    /// One forest per entry of `users`.
    pub models: Vec<(u64, Forest)>,
}

/// The `n` users with most impressions; ties go to the smaller id.
pub fn top_users(dataset: &Dataset, n: usize) -> Vec<u64> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for imp in dataset.impressions() {
        *counts.entry(imp.user_id).or_default() += 1;
    }
    let mut users: Vec<(u64, usize)> = counts.into_iter().collect();
    users.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<u64> = users.into_iter().take(n).map(|(u, _)| u).collect();
    picked.sort_unstable();
    picked
}

/// Trains one forest per user on that user's impressions.
pub fn train_user_models(
    dataset: &Dataset,
    users: &[u64],
    params: &TrainParams,
    exec: Execution,
) -> Result<Vec<(u64, Forest)>, TreeError> {
    let n_features = dataset.schema().len();
    let mut per_user: HashMap<u64, (FeatureMatrix, Vec<u8>)> = users
        .iter()
        .map(|&u| (u, (FeatureMatrix::new(n_features), Vec::new())))
        .collect();
    for imp in dataset.impressions() {
        if let Some((x, y)) = per_user.get_mut(&imp.user_id) {
            x.push(&imp.values)?;
            y.push(imp.label);
        }
    }
    let jobs: Vec<(u64, FeatureMatrix, Vec<u8>)> = users
        .iter()
        .map(|u| {
            let (x, y) = per_user.remove(u).expect("every user has an entry");
            (*u, x, y)
        })
        .collect();
    map_slice(&jobs, exec, |(u, x, y)| train_forest(x, y, params).map(|f| (*u, f)))
        .into_iter()
        .collect()
}

pub fn run_selection(
    dataset: &Dataset,
    params: &TrainParams,
    n_top_users: usize,
    k: usize,
    exec: Execution,
) -> Result<Selection, KeyError> {
    if dataset.is_empty() {
        return Err(KeyError::EmptyData);
    }
    let users = top_users(dataset, n_top_users);
    let models = train_user_models(dataset, &users, params, exec)?;
    let mut candidates = score_tfidf(extract_candidates(&models, dataset.schema()), models.len());
    rank(&mut candidates);
    let keys = candidates.iter().take(k).map(|c| c.key.clone()).collect();
    Ok(Selection {
        keys,
        candidates,
        users,
        models,
    })
}

/// Tab-separated candidate report, rows in the given order.
pub fn candidate_report(ranked: &[CandidateStats]) -> String {
    let mut s = String::from("features\tmodel_count\ttotal_occurrences\ttf\tidf\ttfidf\n");
    for c in ranked {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            c.key,
            c.model_count,
            c.total_occurrences(),
            c.tf,
            c.idf,
            c.tfidf
        );
    }
    s
}

/// One key per line, features joined by `+`.
pub fn keys_to_text(keys: &[CountingKey]) -> String {
    keys.iter().map(|k| format!("{k}\n")).collect()
}

pub fn keys_from_text(text: &str) -> Result<Vec<CountingKey>, KeyError> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}
