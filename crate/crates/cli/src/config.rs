//! Pipeline configuration: the synth keys plus window, model and experiment
//! settings, all in one `key = value` file.
//!
//! ```text
//! seed = 42
//! workdir = run
//! selection_days = 15
//! count_days = 15
//! eval_days = 3
//! n_trees = 20
//! widths = 64,32
//!
//! [planted]
//! features = device_type,placement
//! ```
//!
//! Unknown keys are rejected. See `configs/default.conf` for every key.

use std::path::{Path, PathBuf};

use countkey::conf::{ConfDoc, Section};
use countkey::predict::{BatchConfig, OnlineConfig, WideDeepParams};
use countkey::synth::{SynthConfig, SECONDS_PER_DAY};
use countkey::{Execution, TrainParams};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub workdir: PathBuf,
    pub selection_days: u32,
    pub count_days: u32,
    pub eval_days: u32,
    pub trees: TrainParams,
    pub n_top_users: usize,
    pub k: usize,
    pub random_sparse_size: usize,
    pub online: OnlineConfig,
    pub batch: BatchConfig,
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            workdir: PathBuf::from("run"),
            selection_days: 15,
            count_days: 15,
            eval_days: 3,
            trees: TrainParams::default(),
            n_top_users: 100,
            k: 5,
            random_sparse_size: 3,
            online: OnlineConfig::default(),
            batch: BatchConfig::default(),
            parallel: true,
        }
    }
}

fn set<T>(s: &mut Section, key: &str, slot: &mut T) -> Result<(), CliError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    if let Some(v) = s.take_parsed(key)? {
        *slot = v;
    }
    Ok(())
}

fn parse_widths(s: &str) -> Result<Vec<usize>, CliError> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad layer width `{w}`")))
        })
        .collect()
}

/// Half-open time range `[start, end)`.
pub type Window = (i64, i64);

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut doc = ConfDoc::parse(text)?;
        let mut cfg = PipelineConfig {
            synth: SynthConfig::from_conf(&mut doc)?,
            ..PipelineConfig::default()
        };
        let t = &mut doc.top;
        if let Some(w) = t.take("workdir") {
            cfg.workdir = PathBuf::from(w.value);
        }
        set(t, "selection_days", &mut cfg.selection_days)?;
        set(t, "count_days", &mut cfg.count_days)?;
        set(t, "eval_days", &mut cfg.eval_days)?;
        set(t, "n_trees", &mut cfg.trees.n_trees)?;
        set(t, "max_depth", &mut cfg.trees.max_depth)?;
        set(t, "learning_rate", &mut cfg.trees.learning_rate)?;
        set(t, "min_samples_leaf", &mut cfg.trees.min_samples_leaf)?;
        set(t, "min_gain", &mut cfg.trees.min_gain)?;
        set(t, "lambda", &mut cfg.trees.lambda)?;
        set(t, "n_top_users", &mut cfg.n_top_users)?;
        set(t, "k", &mut cfg.k)?;
        set(t, "random_sparse_size", &mut cfg.random_sparse_size)?;
        let o = &mut cfg.online;
        set(t, "holdout_rate", &mut o.holdout_rate)?;
        set(t, "bucket_seconds", &mut o.bucket_seconds)?;
        set(t, "eta0", &mut o.eta0)?;
        set(t, "decay_steps", &mut o.decay_steps)?;
        set(t, "encoder_train_seconds", &mut o.encoder_train_seconds)?;
        set(t, "streaming_counts", &mut o.streaming_counts)?;
        let m = &mut cfg.batch.model;
        set(t, "epochs", &mut m.epochs)?;
        set(t, "batch_size", &mut m.batch_size)?;
        set(t, "step_size", &mut m.step_size)?;
        set(t, "embed_dim", &mut m.embed_dim)?;
        if let Some(w) = t.take("widths") {
            m.widths = parse_widths(&w.value)?;
        }
        set(t, "parallel", &mut cfg.parallel)?;
        doc.finish()?;
        cfg.sync_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// One seed drives generation, holdout routing, network init and the
    /// random keys.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.sync_seed();
        self
    }

    fn sync_seed(&mut self) {
        let seed = self.synth.seed;
        self.online.seed = seed;
        self.batch.model.seed = seed;
        self.online.encoder = self.trees.clone();
    }

    pub fn seed(&self) -> u64 {
        self.synth.seed
    }

    pub fn exec(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.selection_days == 0 || self.count_days == 0 || self.eval_days == 0 {
            return bad("selection_days, count_days and eval_days must be at least 1".into());
        }
        if self.selection_days > self.synth.n_days {
            return bad(format!(
                "selection_days {} exceeds n_days {}",
                self.selection_days, self.synth.n_days
            ));
        }
        if self.count_days + self.eval_days > self.synth.n_days {
            return bad(format!(
                "count_days + eval_days = {} exceeds n_days {}",
                self.count_days + self.eval_days,
                self.synth.n_days
            ));
        }
        if self.n_top_users == 0 || self.k == 0 || self.random_sparse_size == 0 {
            return bad("n_top_users, k and random_sparse_size must be at least 1".into());
        }
        self.trees.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.online.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.batch
            .model
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    fn days(&self, from: u32, n: u32) -> Window {
        (i64::from(from) * SECONDS_PER_DAY, i64::from(from + n) * SECONDS_PER_DAY)
    }

    pub fn selection_window(&self) -> Window {
        self.days(0, self.selection_days)
    }

    pub fn count_window(&self) -> Window {
        self.days(0, self.count_days)
    }

    /// Starts where the count window ends.
    pub fn eval_window(&self) -> Window {
        self.days(self.count_days, self.eval_days)
    }

    /// Key/value pairs echoed into every report.
    pub fn echo(&self) -> Vec<(String, String)> {
        let m: &WideDeepParams = &self.batch.model;
        let widths: Vec<String> = m.widths.iter().map(usize::to_string).collect();
        [
            ("selection_days", self.selection_days.to_string()),
            ("count_days", self.count_days.to_string()),
            ("eval_days", self.eval_days.to_string()),
            ("n_trees", self.trees.n_trees.to_string()),
            ("max_depth", self.trees.max_depth.to_string()),
            ("n_top_users", self.n_top_users.to_string()),
            ("k", self.k.to_string()),
            ("holdout_rate", self.online.holdout_rate.to_string()),
            ("bucket_seconds", self.online.bucket_seconds.to_string()),
            ("eta0", self.online.eta0.to_string()),
            ("epochs", m.epochs.to_string()),
            ("step_size", m.step_size.to_string()),
            (
                "widths",
                if widths.is_empty() {
                    "none".into()
                } else {
                    widths.join(",")
                },
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}
