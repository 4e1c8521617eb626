use crate::data::Dataset;
use crate::exec::Execution;
use crate::metrics::{bucketize, coverage, pearson, rce, ExperimentReport, Scored};
use crate::rng::{hash_words, to_unit};
use crate::synth::SECONDS_PER_DAY;
use crate::trees::{FeatureMatrix, Forest, TrainParams};

use super::{
    train_encoder, train_wide_deep, FeatureBuilder, LeafEncoder, OnlineLr, PredictError, WideDeep, WideDeepParams,
};

/// Salt that separates holdout routing from other uses of the seed.
const TAG_HOLDOUT: u64 = 0x686f_6c64;

/// Seeded, id-based holdout routing. The same seed and id always route the
/// same way, whatever features the model sees.
pub fn is_holdout(seed: u64, id: u64, rate: f64) -> bool {
    to_unit(hash_words(seed, &[TAG_HOLDOUT, id])) < rate
}

fn smoothed_ctr(clicks: usize, n: usize) -> f64 {
    (clicks as f64 + 0.5) / (n as f64 + 1.0)
}

fn day_of(ts: i64) -> i64 {
    ts.div_euclid(SECONDS_PER_DAY)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig {
    pub holdout_rate: f64,
    pub bucket_seconds: i64,
    pub seed: u64,
    pub eta0: f64,
    pub decay_steps: f64,
    pub encoder: TrainParams,
    /// Length of the stream prefix whose training impressions fit the encoder.
    pub encoder_train_seconds: i64,
    /// Update the count table after each impression instead of keeping it frozen.
    pub streaming_counts: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            holdout_rate: 0.01,
            bucket_seconds: 7200,
            seed: 0,
            eta0: 0.1,
            decay_steps: 1e4,
            encoder: TrainParams::default(),
            encoder_train_seconds: SECONDS_PER_DAY,
            streaming_counts: false,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<(), PredictError> {
        let bad = |m: &str| Err(PredictError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.holdout_rate) {
            return bad("holdout_rate must lie in [0, 1]");
        }
        if self.bucket_seconds <= 0 {
            return bad("bucket_seconds must be positive");
        }
        if !(self.eta0 >= 0.0 && self.eta0.is_finite()) || self.decay_steps.is_nan() || self.decay_steps <= 0.0 {
            return bad("eta0 must be non-negative and decay_steps positive");
        }
        self.encoder.validate()?;
        Ok(())
    }
}

/// Report plus the recorded holdout predictions as `(id, p, label)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub predictions: Vec<(u64, f64, u8)>,
    /// The trained network of a batch run.
    pub model: Option<WideDeep>,
    /// The leaf encoder of an online run.
    pub encoder: Option<LeafEncoder>,
}

fn finish_report(
    scored: &[Scored],
    origin: i64,
    bucket_seconds: i64,
    baseline: f64,
    final_from: i64,
    seed: u64,
) -> Result<ExperimentReport, PredictError> {
    let buckets = bucketize(scored, origin, bucket_seconds, baseline)?;
    let (p, y): (Vec<f64>, Vec<u8>) = scored
        .iter()
        .filter(|s| s.timestamp >= final_from)
        .map(|s| (s.prediction, s.label))
        .unzip();
    Ok(ExperimentReport {
        seed,
        buckets,
        final_rce: rce(&p, &y, baseline)?,
        baseline_ctr: baseline,
        n_holdout: scored.len(),
        ..ExperimentReport::default()
    })
}

/// Chronological online run. The encoder is fit on the training impressions
/// of the first `encoder_train_seconds`; then each impression is encoded and
/// either scored only (holdout) or scored and learned from. The final RCE
/// pools the holdout predictions of the last day that has any.
pub fn run_online_experiment(
    stream: &Dataset,
    builder: &FeatureBuilder,
    cfg: &OnlineConfig,
) -> Result<ExperimentRun, PredictError> {
    cfg.validate()?;
    let imps = stream.impressions();
    let first = imps.first().ok_or(PredictError::EmptyStream)?;
    let holdout: Vec<bool> = imps
        .iter()
        .map(|i| is_holdout(cfg.seed, i.id, cfg.holdout_rate))
        .collect();
    if !holdout.contains(&true) {
        return Err(PredictError::NoHoldout);
    }

    let width = builder.n_tree_features();
    let mut x = FeatureMatrix::new(width);
    let mut y = Vec::new();
    let encoder_end = first.timestamp + cfg.encoder_train_seconds;
    for (imp, &h) in imps.iter().zip(&holdout) {
        if imp.timestamp >= encoder_end {
            break;
        }
        if !h {
            x.push(&builder.tree_row(imp))?;
            y.push(imp.label);
        }
    }
    let encoder = if y.is_empty() {
        LeafEncoder::new(Forest::constant(
            width,
            cfg.encoder.n_trees,
            cfg.encoder.learning_rate,
            0.0,
        ))
    } else {
        train_encoder(&x, &y, &cfg.encoder)?
    };

    let (train_n, train_clicks) = imps
        .iter()
        .zip(&holdout)
        .filter(|(_, &h)| !h)
        .fold((0, 0), |(n, c), (i, _)| (n + 1, c + usize::from(i.label)));
    let baseline = smoothed_ctr(train_clicks, train_n);

    let mut live = builder.clone();
    let mut lr = OnlineLr::new(encoder.width(), cfg.eta0, cfg.decay_steps);
    let mut scored = Vec::new();
    let mut predictions = Vec::new();
    for (imp, &h) in imps.iter().zip(&holdout) {
        let active = encoder.encode(&live.tree_row(imp))?;
        if h {
            let p = lr.predict(&active);
            scored.push(Scored {
                timestamp: imp.timestamp,
                prediction: p,
                label: imp.label,
            });
            predictions.push((imp.id, p, imp.label));
        } else {
            lr.step(&active, imp.label);
        }
        if cfg.streaming_counts {
            if let Some(t) = live.table_mut() {
                t.stream_update(imp)?;
            }
        }
    }
    let last_day = day_of(scored.last().expect("holdout is nonempty").timestamp);
    let report = finish_report(
        &scored,
        first.timestamp,
        cfg.bucket_seconds,
        baseline,
        last_day * SECONDS_PER_DAY,
        cfg.seed,
    )?;
    Ok(ExperimentRun {
        report,
        predictions,
        model: None,
        encoder: Some(encoder),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub model: WideDeepParams,
    pub bucket_seconds: i64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            model: WideDeepParams::default(),
            bucket_seconds: 7200,
        }
    }
}

/// Trains wide&deep on every day but the last and tests on the last day.
pub fn run_batch_experiment(
    eval: &Dataset,
    builder: &FeatureBuilder,
    cfg: &BatchConfig,
    exec: Execution,
) -> Result<ExperimentRun, PredictError> {
    let imps = eval.impressions();
    let last = imps.last().ok_or(PredictError::EmptyStream)?;
    let test_from = day_of(last.timestamp) * SECONDS_PER_DAY;
    let split = imps.partition_point(|i| i.timestamp < test_from);
    let (train, test) = imps.split_at(split);
    if train.is_empty() {
        return Err(PredictError::EmptyTrain);
    }
    let xs: Vec<_> = train.iter().map(|i| builder.wd_input(i)).collect();
    let ys: Vec<u8> = train.iter().map(|i| i.label).collect();
    let cards = eval.schema().cardinalities();
    let (model, _) = train_wide_deep(&xs, &ys, &cards, &cfg.model, exec)?;

    let tx: Vec<_> = test.iter().map(|i| builder.wd_input(i)).collect();
    let preds = model.predict_batch(&tx, exec)?;
    let scored: Vec<Scored> = test
        .iter()
        .zip(&preds)
        .map(|(i, &p)| Scored {
            timestamp: i.timestamp,
            prediction: p,
            label: i.label,
        })
        .collect();
    let clicks = ys.iter().filter(|&&y| y == 1).count();
    let baseline = smoothed_ctr(clicks, ys.len());
    let report = finish_report(
        &scored,
        test_from,
        cfg.bucket_seconds,
        baseline,
        test_from,
        cfg.model.seed,
    )?;
    let predictions = test.iter().zip(preds).map(|(i, p)| (i.id, p, i.label)).collect();
    Ok(ExperimentRun {
        report,
        predictions,
        model: Some(model),
        encoder: None,
    })
}

/// Coverage and Pearson correlation with the label of every counting
/// feature over `dataset`. Empty when the builder has no counts.
#[allow(clippy::type_complexity)]
pub fn counting_feature_quality(
    dataset: &Dataset,
    builder: &FeatureBuilder,
) -> Result<(Vec<(String, f64)>, Vec<(String, Option<f64>)>), PredictError> {
    let names = builder.counting_names();
    if names.is_empty() || dataset.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let joined: Vec<_> = dataset
        .impressions()
        .iter()
        .map(|i| builder.historical(i).expect("has counts"))
        .collect();
    let labels: Vec<u8> = dataset.impressions().iter().map(|i| i.label).collect();
    let mut cov = Vec::with_capacity(names.len());
    let mut cor = Vec::with_capacity(names.len());
    for (f, name) in names.into_iter().enumerate() {
        let values: Vec<f64> = joined.iter().map(|h| h.values[f]).collect();
        let present: Vec<bool> = joined.iter().map(|h| h.present[f / 3]).collect();
        cov.push((name.clone(), coverage(&values, &present)?));
        let c = match pearson(&values, &present, &labels) {
            Ok(c) => c,
            Err(crate::metrics::MetricsError::InsufficientData(_)) => None,
            Err(e) => return Err(e.into()),
        };
        cor.push((name, c));
    }
    Ok((cov, cor))
}
