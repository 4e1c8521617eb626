//! Seeded impression streams with planted, per-user feature interactions.
//!
//! Every random draw comes from one [`SplitMix64`] stream seeded with
//! `config.seed`, consumed in a fixed order:
//!
//! 1. one draw per user for its daily impression rate, from a power law with
//!    density proportional to `x^-alpha` truncated to the configured range;
//! 2. for each day, for each user, `floor(rate)` impressions plus one more
//!    with probability `fract(rate)`; per impression: second of day, ad id,
//!    one code per schema feature, then the click draw.
//!
//! A planted key is active for a user when
//! `unit(hash(seed, [ACTIVE, key, user])) < user_fraction`, and a value
//! tuple is hot for that user when
//! `unit(hash(seed, [HOT, key, user, values...])) < hot_fraction`.
//! Click probability is `base_ctr` times the lift of every active planted key
//! whose tuple is hot, clamped to `[0, 1]`.
//!
//! Impressions are sorted by `(timestamp, generation order)` and numbered
//! from 0 in that order.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::conf::{ConfDoc, ConfError, Section};
use crate::data::{Dataset, FeatureDescriptor, FeatureKind, FeatureSchema, Impression};
use crate::keyselect::CountingKey;
use crate::rng::{hash_words, to_unit, SplitMix64};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Share of users a planted key applies to unless configured otherwise.
pub const DEFAULT_USER_FRACTION: f64 = 0.2;

const TAG_ACTIVE: u64 = 0x6163_7469_7665;
const TAG_HOT: u64 = 0x0068_6f74;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Conf(#[from] ConfError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedKey {
    pub features: Vec<String>,
    /// Share of a user's value tuples that are hot.
    pub hot_fraction: f64,
    /// CTR multiplier on hot tuples.
    pub lift: f64,
    /// Share of users for whom the interaction exists at all.
    pub user_fraction: f64,
}

impl PlantedKey {
    pub fn new(features: &[&str], hot_fraction: f64, lift: f64, user_fraction: f64) -> Self {
        Self {
            features: features.iter().map(|s| s.to_string()).collect(),
            hot_fraction,
            lift,
            user_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_users: u64,
    pub n_ads: u64,
    pub n_days: u32,
    /// Inclusive range of a user's daily impression rate.
    pub impressions_per_user_per_day: (f64, f64),
    /// Power-law exponent of the rate density.
    pub rate_exponent: f64,
    pub base_ctr: f64,
    pub schema: FeatureSchema,
    pub planted: Vec<PlantedKey>,
}

/// Eight categorical features, cardinalities 3 to 24.
pub fn default_schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        FeatureDescriptor::categorical("hour_of_day", 24),
        FeatureDescriptor::categorical("item_objective", 5),
        FeatureDescriptor::categorical("engagement_option", 4),
        FeatureDescriptor::categorical("device_type", 3),
        FeatureDescriptor::categorical("day_of_week", 7),
        FeatureDescriptor::categorical("placement", 6),
        FeatureDescriptor::categorical("advertiser_category", 12),
        FeatureDescriptor::categorical("age_bucket", 8),
    ])
    .expect("default schema is valid")
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_users: 100,
            n_ads: 500,
            n_days: 18,
            impressions_per_user_per_day: (20.0, 200.0),
            rate_exponent: 2.0,
            base_ctr: 0.1,
            schema: default_schema(),
            planted: vec![
                PlantedKey::new(
                    &["engagement_option", "item_objective"],
                    0.2,
                    5.0,
                    DEFAULT_USER_FRACTION,
                ),
                PlantedKey::new(&["device_type", "placement"], 0.2, 5.0, DEFAULT_USER_FRACTION),
            ],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if !(self.base_ctr > 0.0 && self.base_ctr < 1.0) {
            return bad(format!("base_ctr must lie in (0, 1), got {}", self.base_ctr));
        }
        if self.n_users == 0 || self.n_ads == 0 || self.n_days == 0 {
            return bad("n_users, n_ads and n_days must be >= 1".into());
        }
        let (lo, hi) = self.impressions_per_user_per_day;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return bad(format!(
                "impressions_per_user_per_day must satisfy 1 <= min <= max, got {lo}..{hi}"
            ));
        }
        if !(self.rate_exponent > 1.0 && self.rate_exponent.is_finite()) {
            return bad(format!("rate_exponent must exceed 1, got {}", self.rate_exponent));
        }
        for (j, p) in self.planted.iter().enumerate() {
            if p.features.is_empty() || p.features.len() > 2 {
                return bad(format!("planted key {j} must have 1 or 2 features"));
            }
            let distinct: BTreeSet<&String> = p.features.iter().collect();
            if distinct.len() != p.features.len() {
                return bad(format!("planted key {j} repeats a feature"));
            }
            for f in &p.features {
                if self.schema.index_of(f).is_none() {
                    return bad(format!("planted key {j} names unknown feature `{f}`"));
                }
            }
            if !(p.hot_fraction > 0.0 && p.hot_fraction < 1.0) {
                return bad(format!("planted key {j}: hot_fraction must lie in (0, 1)"));
            }
            if !(p.lift >= 1.0 && p.lift.is_finite()) {
                return bad(format!("planted key {j}: lift must be >= 1"));
            }
            if !(p.user_fraction > 0.0 && p.user_fraction <= 1.0) {
                return bad(format!("planted key {j}: user_fraction must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// Reads the synth keys from a parsed config, leaving other keys in place.
    /// `[feature]` stanzas replace the default schema; `[planted]` stanzas
    /// replace the default planted keys.
    pub fn from_conf(doc: &mut ConfDoc) -> Result<Self, SynthError> {
        let mut cfg = SynthConfig::default();
        let top = &mut doc.top;
        set(top, "seed", &mut cfg.seed)?;
        set(top, "n_users", &mut cfg.n_users)?;
        set(top, "n_ads", &mut cfg.n_ads)?;
        set(top, "n_days", &mut cfg.n_days)?;
        set(top, "min_impressions_per_day", &mut cfg.impressions_per_user_per_day.0)?;
        set(top, "max_impressions_per_day", &mut cfg.impressions_per_user_per_day.1)?;
        set(top, "rate_exponent", &mut cfg.rate_exponent)?;
        set(top, "base_ctr", &mut cfg.base_ctr)?;

        let features = doc.take_stanzas("feature");
        if !features.is_empty() {
            let mut descs = Vec::new();
            for mut s in features {
                let kind: FeatureKind = s.take_parsed("kind")?.unwrap_or(FeatureKind::Categorical);
                descs.push(FeatureDescriptor {
                    name: s.require("name")?,
                    kind,
                    cardinality: s.require("cardinality")?,
                });
                s.finish()?;
            }
            cfg.schema = FeatureSchema::new(descs).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        }
        let planted = doc.take_stanzas("planted");
        if !planted.is_empty() || doc.top.take("no_planted").is_some() {
            cfg.planted.clear();
        }
        for mut s in planted {
            let list: String = s.require("features")?;
            let features = list
                .split(',')
                .map(|f| f.trim().to_string())
                .filter(|f| !f.is_empty())
                .collect();
            cfg.planted.push(PlantedKey {
                features,
                hot_fraction: s.take_parsed("hot_fraction")?.unwrap_or(0.2),
                lift: s.take_parsed("lift")?.unwrap_or(5.0),
                user_fraction: s.take_parsed("user_fraction")?.unwrap_or(DEFAULT_USER_FRACTION),
            });
            s.finish()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut doc = ConfDoc::parse(text)?;
        let cfg = Self::from_conf(&mut doc)?;
        doc.finish()?;
        Ok(cfg)
    }

    /// Renders the config in the format [`SynthConfig::parse`] accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "n_users = {}", self.n_users);
        let _ = writeln!(s, "n_ads = {}", self.n_ads);
        let _ = writeln!(s, "n_days = {}", self.n_days);
        let _ = writeln!(s, "min_impressions_per_day = {}", self.impressions_per_user_per_day.0);
        let _ = writeln!(s, "max_impressions_per_day = {}", self.impressions_per_user_per_day.1);
        let _ = writeln!(s, "rate_exponent = {}", self.rate_exponent);
        let _ = writeln!(s, "base_ctr = {}", self.base_ctr);
        if self.planted.is_empty() {
            let _ = writeln!(s, "no_planted = true");
        }
        for f in self.schema.features() {
            let _ = write!(
                s,
                "\n[feature]\nname = {}\nkind = {}\ncardinality = {}\n",
                f.name, f.kind, f.cardinality
            );
        }
        for p in &self.planted {
            let _ = write!(
                s,
                "\n[planted]\nfeatures = {}\nhot_fraction = {}\nlift = {}\nuser_fraction = {}\n",
                p.features.join(","),
                p.hot_fraction,
                p.lift,
                p.user_fraction
            );
        }
        s
    }
}

fn set<T>(section: &mut Section, key: &str, slot: &mut T) -> Result<(), ConfError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    if let Some(v) = section.take_parsed(key)? {
        *slot = v;
    }
    Ok(())
}

/// Planted keys with their schema indices resolved.
struct Planted<'a> {
    key: &'a PlantedKey,
    indices: Vec<usize>,
}

impl SynthConfig {
    fn resolved(&self) -> Vec<Planted<'_>> {
        self.planted
            .iter()
            .map(|key| Planted {
                key,
                indices: key
                    .features
                    .iter()
                    .map(|f| self.schema.index_of(f).expect("validated"))
                    .collect(),
            })
            .collect()
    }

    /// Whether planted key `j` applies to `user`.
    pub fn is_active(&self, j: usize, user: u64) -> bool {
        to_unit(hash_words(self.seed, &[TAG_ACTIVE, j as u64, user])) < self.planted[j].user_fraction
    }

    /// Whether the impression's tuple for planted key `j` is hot (ignores activity).
    pub fn is_hot(&self, j: usize, impression: &Impression) -> bool {
        let p = &self.planted[j];
        let mut words = vec![TAG_HOT, j as u64, impression.user_id];
        for f in &p.features {
            let i = self.schema.index_of(f).expect("validated");
            words.push(u64::from(impression.values[i]));
        }
        to_unit(hash_words(self.seed, &words)) < p.hot_fraction
    }

    /// Click probability the generator uses for this impression.
    pub fn click_probability(&self, impression: &Impression) -> f64 {
        let mut p = self.base_ctr;
        for (j, planted) in self.planted.iter().enumerate() {
            if self.is_active(j, impression.user_id) && self.is_hot(j, impression) {
                p *= planted.lift;
            }
        }
        p.clamp(0.0, 1.0)
    }
}

fn draw_rate(rng: &mut SplitMix64, lo: f64, hi: f64, alpha: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    // Inverse CDF of x^-alpha on [lo, hi].
    let a = 1.0 - alpha;
    let u = rng.unit();
    let (la, ha) = (lo.powf(a), hi.powf(a));
    (la + u * (ha - la)).powf(1.0 / a).clamp(lo, hi)
}

pub fn generate(config: &SynthConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let (lo, hi) = config.impressions_per_user_per_day;
    let rates: Vec<f64> = (0..config.n_users)
        .map(|_| draw_rate(&mut rng, lo, hi, config.rate_exponent))
        .collect();
    let planted = config.resolved();
    let active: Vec<Vec<bool>> = (0..planted.len())
        .map(|j| (0..config.n_users).map(|u| config.is_active(j, u)).collect())
        .collect();
    let cards = config.schema.cardinalities();

    let mut rows: Vec<(i64, u64, Impression)> = Vec::new();
    let mut seq = 0u64;
    let mut words = Vec::with_capacity(8);
    for day in 0..i64::from(config.n_days) {
        for (u, &rate) in rates.iter().enumerate() {
            let user = u as u64;
            let extra = rng.bernoulli(rate.fract());
            let count = rate.floor() as u64 + u64::from(extra);
            for _ in 0..count {
                let timestamp = day * SECONDS_PER_DAY + rng.below(SECONDS_PER_DAY as u64) as i64;
                let ad_id = rng.below(config.n_ads);
                let values: Vec<u32> = cards.iter().map(|&c| rng.below(u64::from(c)) as u32).collect();
                let mut p = config.base_ctr;
                for (j, pk) in planted.iter().enumerate() {
                    if !active[j][u] {
                        continue;
                    }
                    words.clear();
                    words.extend([TAG_HOT, j as u64, user]);
                    words.extend(pk.indices.iter().map(|&i| u64::from(values[i])));
                    if to_unit(hash_words(config.seed, &words)) < pk.key.hot_fraction {
                        p *= pk.key.lift;
                    }
                }
                let label = u8::from(rng.bernoulli(p.clamp(0.0, 1.0)));
                rows.push((
                    timestamp,
                    seq,
                    Impression {
                        id: 0,
                        timestamp,
                        user_id: user,
                        ad_id,
                        label,
                        values,
                    },
                ));
                seq += 1;
            }
        }
    }
    rows.sort_by_key(|(ts, s, _)| (*ts, *s));
    let impressions = rows
        .into_iter()
        .enumerate()
        .map(|(i, (_, _, mut imp))| {
            imp.id = i as u64;
            imp
        })
        .collect();
    Dataset::new(config.schema.clone(), impressions).map_err(|e| SynthError::InvalidConfig(e.to_string()))
}

/// Planted feature sets as canonical, deduplicated counting keys.
pub fn ground_truth_keys(config: &SynthConfig) -> Vec<CountingKey> {
    let keys: BTreeSet<CountingKey> = config
        .planted
        .iter()
        .filter_map(|p| CountingKey::new(p.features.iter().map(String::as_str)).ok())
        .collect();
    keys.into_iter().collect()
}
