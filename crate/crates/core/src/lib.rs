//! Automatic counting-key selection for CTR prediction.
//!
//! The pipeline trains one boosted forest per heavy user, treats every
//! root-to-leaf feature set as a candidate counting key, ranks candidates
//! by tf-idf across users, materializes impression/engagement/CTR counts for
//! the winners and measures their value with an online GBDT+LR model and a
//! batch wide & deep model.
//!
//! Modules, bottom-up:
//!
//! * [`data`]: feature schema, impressions, dataset files, key projection.
//! * [`synth`]: seeded impression streams with planted interactions.
//! * [`trees`]: gradient-boosted trees plus the entropy oracle.
//! * [`keyselect`]: candidate extraction, tf-idf scoring, top-k selection.
//! * [`countstore`]: count tables, joins and streaming updates.
//! * [`predict`]: leaf encoder, online LR, wide & deep, experiment drivers.
//! * [`metrics`]: CE/RCE, coverage, Pearson and the experiment report.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is on and runs sequentially otherwise.

pub mod conf;
pub mod countstore;
pub mod data;
pub mod exec;
pub mod keyselect;
pub mod math;
pub mod metrics;
pub mod predict;
pub mod rng;
pub mod synth;
pub mod trees;

pub use countstore::{CountRecord, CountTable, HistoricalFeatures};
pub use data::{Dataset, FeatureDescriptor, FeatureKind, FeatureSchema, Impression, ValueTuple};
pub use exec::Execution;
pub use keyselect::{CandidateStats, CountingKey, Selection};
pub use metrics::ExperimentReport;
pub use trees::{Forest, TrainParams};
