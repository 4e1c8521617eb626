use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use countkey::countstore::build_counts;
use countkey::data::write_dataset;
use countkey::keyselect::{candidate_report, keys_from_text, keys_to_text, run_selection};
use countkey::metrics::emit_report;
use countkey::predict::{
    counting_feature_quality, random_sparse_keys, run_batch_experiment, run_online_experiment, FeatureBuilder,
    FeatureSet,
};
use countkey::synth::{generate, ground_truth_keys, SECONDS_PER_DAY};
use countkey::trees::entropy::{bound_sweep, SweepSummary};
use countkey::trees::write_forest;
use countkey::{CountTable, CountingKey, Dataset, Execution, ExperimentReport, FeatureSchema};
use log::info;

use crate::config::{PipelineConfig, Window};
use crate::CliError;

pub const DATASET_FILE: &str = "dataset.tsv";
pub const SCHEMA_FILE: &str = "schema.tsv";
pub const TRUTH_FILE: &str = "truth_keys.txt";
pub const KEYS_FILE: &str = "keys.txt";
pub const CANDIDATES_FILE: &str = "candidates.tsv";
pub const MODELS_DIR: &str = "models";
pub const RANDOM_KEYS_FILE: &str = "keys_random-sparse.txt";

fn set_tag(set: FeatureSet) -> String {
    set.to_string().to_ascii_lowercase()
}

pub fn counts_file(set: FeatureSet) -> String {
    format!("counts_{}.tsv", set_tag(set))
}

pub fn report_file(mode: EvalMode, set: FeatureSet) -> String {
    format!("report_{mode}_{}.tsv", set_tag(set))
}

pub fn checkpoint_file(set: FeatureSet) -> String {
    format!("model_batch_{}.txt", set_tag(set))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Online,
    Batch,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Online => "online",
            EvalMode::Batch => "batch",
        })
    }
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "online" => Ok(EvalMode::Online),
            "batch" => Ok(EvalMode::Batch),
            _ => Err(format!("unknown mode `{s}` (online or batch)")),
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let schema = FeatureSchema::parse(&read_text(&dir.join(SCHEMA_FILE))?)?;
    let path = dir.join(DATASET_FILE);
    let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(Dataset::from_reader(std::io::BufReader::new(file), schema)?)
}

/// Day windows are counted from the day of the first impression.
fn slice(dataset: &Dataset, (start, end): Window) -> Dataset {
    let origin = dataset
        .impressions()
        .first()
        .map_or(0, |i| i.timestamp.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY);
    dataset.window(origin + start, origin + end)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub n_impressions: usize,
    pub n_clicks: u64,
    pub truth: Vec<CountingKey>,
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<SynthSummary, CliError> {
    let dataset = generate(&cfg.synth)?;
    let dir = &cfg.workdir;
    write_text(&dir.join(SCHEMA_FILE), &dataset.schema().to_text())?;
    write_dataset(&dataset, &dir.join(DATASET_FILE))?;
    let truth = ground_truth_keys(&cfg.synth);
    write_text(&dir.join(TRUTH_FILE), &keys_to_text(&truth))?;
    info!("synth: {} impressions, {} clicks", dataset.len(), dataset.click_count());
    Ok(SynthSummary {
        n_impressions: dataset.len(),
        n_clicks: dataset.click_count(),
        truth,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectSummary {
    pub keys: Vec<CountingKey>,
    pub n_users: usize,
    pub n_candidates: usize,
    pub n_impressions: usize,
}

pub fn cmd_select(cfg: &PipelineConfig) -> Result<SelectSummary, CliError> {
    let dir = &cfg.workdir;
    let window = slice(&load_dataset(dir)?, cfg.selection_window());
    let sel = run_selection(&window, &cfg.trees, cfg.n_top_users, cfg.k, cfg.exec())?;
    write_text(&dir.join(KEYS_FILE), &keys_to_text(&sel.keys))?;
    write_text(&dir.join(CANDIDATES_FILE), &candidate_report(&sel.candidates))?;
    let models = dir.join(MODELS_DIR);
    if models.is_dir() {
        fs::remove_dir_all(&models).map_err(|e| CliError::io(&models, e))?;
    }
    for (user, forest) in &sel.models {
        write_text(&models.join(format!("user_{user}.forest")), &write_forest(forest))?;
    }
    info!("select: {} users, {} candidates", sel.users.len(), sel.candidates.len());
    Ok(SelectSummary {
        keys: sel.keys,
        n_users: sel.users.len(),
        n_candidates: sel.candidates.len(),
        n_impressions: window.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountsSummary {
    pub keys: Vec<CountingKey>,
    pub n_entries: usize,
    pub n_impressions: usize,
    pub n_clicks: u64,
    /// `(impressions, engagements)` summed over each key's table.
    pub totals: Vec<(u64, u64)>,
    pub path: PathBuf,
}

/// Builds the count table of `set` over the count window, writes it and
/// checks conservation and the file round trip.
pub fn cmd_counts(cfg: &PipelineConfig, set: FeatureSet) -> Result<CountsSummary, CliError> {
    let dir = &cfg.workdir;
    let dataset = load_dataset(dir)?;
    let keys = match set {
        FeatureSet::Base => return Err(CliError::Usage("BASE has no counting features".into())),
        FeatureSet::Acf => keys_from_text(&read_text(&dir.join(KEYS_FILE))?)?,
        FeatureSet::RandomSparse => {
            let keys = random_sparse_keys(dataset.schema(), cfg.k, cfg.random_sparse_size, cfg.seed());
            write_text(&dir.join(RANDOM_KEYS_FILE), &keys_to_text(&keys))?;
            keys
        }
    };
    let history = slice(&dataset, cfg.count_window());
    let table = build_counts(&history, keys, cfg.exec())?;

    let totals = table.totals();
    let expected = (history.len() as u64, history.click_count());
    for (key, t) in table.keys().iter().zip(&totals) {
        if *t != expected {
            return Err(CliError::CheckFailed(format!(
                "counts for {key} sum to {t:?}, window has {expected:?}"
            )));
        }
    }
    let path = dir.join(counts_file(set));
    write_text(&path, &table.to_text())?;
    let reloaded = CountTable::parse(&read_text(&path)?, dataset.schema())?;
    if reloaded != table {
        return Err(CliError::CheckFailed(format!(
            "{} does not reload to the built table",
            path.display()
        )));
    }
    info!(
        "counts {set}: {} entries over {} impressions",
        table.n_entries(),
        history.len()
    );
    Ok(CountsSummary {
        keys: table.keys().to_vec(),
        n_entries: table.n_entries(),
        n_impressions: history.len(),
        n_clicks: history.click_count(),
        totals,
        path,
    })
}

/// Runs one experiment on the eval window and writes its report.
pub fn cmd_eval(
    cfg: &PipelineConfig,
    mode: EvalMode,
    set: FeatureSet,
) -> Result<(ExperimentReport, PathBuf), CliError> {
    let dir = &cfg.workdir;
    let dataset = load_dataset(dir)?;
    let schema = dataset.schema().clone();
    let builder = if set.uses_counts() {
        let table = CountTable::parse(&read_text(&dir.join(counts_file(set)))?, &schema)?;
        FeatureBuilder::with_counts(schema, set, table)?
    } else {
        FeatureBuilder::base(schema)
    };
    let eval = slice(&dataset, cfg.eval_window());
    let run = match mode {
        EvalMode::Online => run_online_experiment(&eval, &builder, &cfg.online)?,
        EvalMode::Batch => run_batch_experiment(&eval, &builder, &cfg.batch, cfg.exec())?,
    };
    if let Some(model) = &run.model {
        write_text(&dir.join(checkpoint_file(set)), &model.to_text())?;
    }
    let mut report = run.report;
    let keys: Vec<String> = builder
        .table()
        .map_or_else(Vec::new, |t| t.keys().iter().map(|k| k.to_string()).collect());
    report.config = vec![
        ("mode".to_string(), mode.to_string()),
        ("features".to_string(), set.to_string()),
        (
            "keys".to_string(),
            if keys.is_empty() { "none".into() } else { keys.join(";") },
        ),
        ("n_eval".to_string(), eval.len().to_string()),
    ];
    report.config.extend(cfg.echo());
    let (coverage, correlation) = counting_feature_quality(&eval, &builder)?;
    report.coverage = coverage;
    report.correlation = correlation;
    let path = dir.join(report_file(mode, set));
    emit_report(&report, &path)?;
    info!("eval {mode} {set}: final RCE {:.4}", report.final_rce);
    Ok((report, path))
}

/// Randomized sweep of the split-gain lower bound. Fails when any trial
/// violates it.
pub fn cmd_verify_bound(n_trials: usize, seed: u64, exec: Execution) -> Result<SweepSummary, CliError> {
    if n_trials == 0 {
        return Err(CliError::Usage("n_trials must be at least 1".into()));
    }
    let summary = bound_sweep(n_trials, seed, exec);
    info!(
        "verify-bound: {} trials, {} violations",
        summary.n_trials, summary.violations
    );
    if summary.violations > 0 {
        return Err(CliError::CheckFailed(format!(
            "{} of {} trials violate the bound (min slack {})",
            summary.violations, summary.n_trials, summary.min_slack
        )));
    }
    Ok(summary)
}

pub const ALL_SETS: [FeatureSet; 3] = [FeatureSet::Base, FeatureSet::Acf, FeatureSet::RandomSparse];

/// Every stage in order, both modes over every feature set. Returns the
/// report paths.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    cmd_synth(cfg)?;
    cmd_select(cfg)?;
    cmd_counts(cfg, FeatureSet::Acf)?;
    cmd_counts(cfg, FeatureSet::RandomSparse)?;
    let mut reports = Vec::new();
    for mode in [EvalMode::Online, EvalMode::Batch] {
        for set in ALL_SETS {
            reports.push(cmd_eval(cfg, mode, set)?.1);
        }
    }
    Ok(reports)
}
