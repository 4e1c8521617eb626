//! CTR predictors: online logistic regression over GBDT leaf encodings and a
//! batch wide-and-deep network, plus the feature plumbing both share.

mod encoder;
mod experiment;
mod widedeep;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::countstore::{CountError, CountTable, HistoricalFeatures};
use crate::data::{FeatureSchema, Impression};
use crate::keyselect::CountingKey;
use crate::metrics::MetricsError;
use crate::trees::TreeError;

pub use encoder::{train_encoder, LeafEncoder, OnlineLr};
pub use experiment::{
    counting_feature_quality, is_holdout, run_batch_experiment, run_online_experiment, BatchConfig, ExperimentRun,
    OnlineConfig,
};
pub use widedeep::{gradient_check, train_wide_deep, WdInput, WideDeep, WideDeepParams};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("empty stream")]
    EmptyStream,
    #[error("no holdout impressions")]
    NoHoldout,
    #[error("empty training set")]
    EmptyTrain,
    #[error("no test impressions")]
    EmptyTest,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: malformed model: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Count(#[from] CountError),
}

/// Which features a predictor sees besides the contextual ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureSet {
    /// Contextual features only.
    Base,
    /// Contextual plus counting features from selected keys.
    Acf,
    /// Contextual plus counting features from random size-3 keys.
    RandomSparse,
}

impl FeatureSet {
    pub fn uses_counts(self) -> bool {
        self != FeatureSet::Base
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSet::Base => "BASE",
            FeatureSet::Acf => "ACF",
            FeatureSet::RandomSparse => "RANDOM-SPARSE",
        })
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BASE" => Ok(FeatureSet::Base),
            "ACF" => Ok(FeatureSet::Acf),
            "RANDOM-SPARSE" | "RANDOM_SPARSE" => Ok(FeatureSet::RandomSparse),
            _ => Err(format!("unknown feature set `{s}` (BASE, ACF or RANDOM-SPARSE)")),
        }
    }
}

/// `k` distinct random keys of `size` features each, drawn with `seed`.
pub fn random_sparse_keys(schema: &FeatureSchema, k: usize, size: usize, seed: u64) -> Vec<CountingKey> {
    let names = schema.names();
    let size = size.min(names.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<CountingKey> = Vec::with_capacity(k);
    // Bounded retries: small schemas may not have k distinct subsets.
    for _ in 0..k * 100 {
        if out.len() == k {
            break;
        }
        let pick: Vec<&str> = names.choose_multiple(&mut rng, size).map(String::as_str).collect();
        let key = CountingKey::new(pick).expect("schema names are valid key features");
        if !out.contains(&key) {
            out.push(key);
        }
    }
    out
}

/// Joins contextual values with optional frozen counting features.
#[derive(Debug, Clone)]
pub struct FeatureBuilder {
    schema: FeatureSchema,
    set: FeatureSet,
    table: Option<CountTable>,
}

/// Integer scale for `h_p` when it feeds the tree learner.
pub const CTR_SCALE: f64 = 1000.0;

impl FeatureBuilder {
    pub fn base(schema: FeatureSchema) -> Self {
        Self {
            schema,
            set: FeatureSet::Base,
            table: None,
        }
    }

    pub fn with_counts(schema: FeatureSchema, set: FeatureSet, table: CountTable) -> Result<Self, PredictError> {
        if !set.uses_counts() {
            return Err(PredictError::InvalidConfig("BASE takes no count table".into()));
        }
        Ok(Self {
            schema,
            set,
            table: Some(table),
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn set(&self) -> FeatureSet {
        self.set
    }

    pub fn table(&self) -> Option<&CountTable> {
        self.table.as_ref()
    }

    pub fn table_mut(&mut self) -> Option<&mut CountTable> {
        self.table.as_mut()
    }

    pub fn n_counting(&self) -> usize {
        self.table.as_ref().map_or(0, |t| 3 * t.keys().len())
    }

    pub fn counting_names(&self) -> Vec<String> {
        self.table.as_ref().map_or_else(Vec::new, CountTable::feature_names)
    }

    /// Width of a tree input row.
    pub fn n_tree_features(&self) -> usize {
        self.schema.len() + self.n_counting()
    }

    pub fn historical(&self, impression: &Impression) -> Option<HistoricalFeatures> {
        self.table.as_ref().map(|t| t.join(impression))
    }

    /// Contextual values followed by `h_i`, `h_e` and `round(h_p * 1000)` per key.
    pub fn tree_row(&self, impression: &Impression) -> Vec<u32> {
        let mut row = impression.values.clone();
        if let Some(h) = self.historical(impression) {
            for t in h.values.chunks(3) {
                let sat = |v: f64| v.min(f64::from(u32::MAX)) as u32;
                row.extend([sat(t[0]), sat(t[1]), (t[2] * CTR_SCALE).round() as u32]);
            }
        }
        row
    }

    pub fn wd_input(&self, impression: &Impression) -> WdInput {
        WdInput {
            cats: impression.values.clone(),
            counts: self.historical(impression).map_or_else(Vec::new, |h| h.values),
        }
    }
}
