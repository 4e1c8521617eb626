//! Counting features: per key value tuple, the number of past impressions
//! `h_i`, past engagements `h_e` and past CTR `h_p = h_e / h_i`.
//!
//! Table file, one record per line:
//!
//! ```text
//! #window<TAB>start<TAB>end          (or `-<TAB>-` for an empty table)
//! #key<TAB>index<TAB>feature+feature
//! key_index<TAB>user,v1,v2<TAB>h_i<TAB>h_e
//! ```
//!
//! `h_p` is recomputed on load. Records are written sorted by key index, then
//! tuple.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{DataError, Dataset, FeatureSchema, Impression, ValueTuple};
use crate::exec::{map_slice, Execution};
use crate::keyselect::CountingKey;

#[derive(Debug, Error)]
pub enum CountError {
    #[error("update at {got} precedes window end {end}")]
    OutOfOrderUpdate { got: i64, end: i64 },
    #[error("no counting keys")]
    MissingKeys,
    #[error("line {line}: malformed count table: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountRecord {
    pub impressions: u64,
    pub engagements: u64,
}

impl CountRecord {
    /// Past CTR, 0 when the tuple has no impressions.
    pub fn ctr(&self) -> f64 {
        if self.impressions == 0 {
            0.0
        } else {
            self.engagements as f64 / self.impressions as f64
        }
    }

    fn add(&mut self, label: u8) {
        self.impressions += 1;
        self.engagements += u64::from(label);
    }
}

/// Joined counting features: `(h_i, h_e, h_p)` per key, in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalFeatures {
    pub values: Vec<f64>,
    /// One flag per key; false when the tuple never occurred.
    pub present: Vec<bool>,
}

impl HistoricalFeatures {
    pub fn triple(&self, key: usize) -> (f64, f64, f64) {
        (self.values[3 * key], self.values[3 * key + 1], self.values[3 * key + 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    keys: Vec<CountingKey>,
    indices: Vec<Vec<usize>>,
    records: Vec<HashMap<ValueTuple, CountRecord>>,
    /// Inclusive timestamp range of the counted impressions.
    window: Option<(i64, i64)>,
}

/// Names of the three statistics, in the order they are joined.
pub const STAT_NAMES: [&str; 3] = ["h_i", "h_e", "h_p"];

impl CountTable {
    pub fn new(schema: &FeatureSchema, keys: Vec<CountingKey>) -> Result<Self, CountError> {
        if keys.is_empty() {
            return Err(CountError::MissingKeys);
        }
        let indices = keys
            .iter()
            .map(|k| schema.key_indices(k))
            .collect::<Result<Vec<_>, _>>()?;
        let records = vec![HashMap::new(); keys.len()];
        Ok(Self {
            keys,
            indices,
            records,
            window: None,
        })
    }

    pub fn keys(&self) -> &[CountingKey] {
        &self.keys
    }

    pub fn window(&self) -> Option<(i64, i64)> {
        self.window
    }

    pub fn n_entries(&self) -> usize {
        self.records.iter().map(HashMap::len).sum()
    }

    pub fn get(&self, key: usize, tuple: &ValueTuple) -> Option<CountRecord> {
        self.records[key].get(tuple).copied()
    }

    /// Feature names for the joined vector, e.g. `hour_of_day:h_p`.
    pub fn feature_names(&self) -> Vec<String> {
        self.keys
            .iter()
            .flat_map(|k| STAT_NAMES.iter().map(move |s| format!("{k}:{s}")))
            .collect()
    }

    /// `(sum h_i, sum h_e)` per key.
    pub fn totals(&self) -> Vec<(u64, u64)> {
        self.records
            .iter()
            .map(|m| {
                m.values()
                    .fold((0, 0), |(i, e), r| (i + r.impressions, e + r.engagements))
            })
            .collect()
    }

    pub fn join(&self, impression: &Impression) -> HistoricalFeatures {
        let mut values = Vec::with_capacity(3 * self.keys.len());
        let mut present = Vec::with_capacity(self.keys.len());
        for (indices, records) in self.indices.iter().zip(&self.records) {
            match records.get(&ValueTuple::project(impression, indices)) {
                Some(r) => {
                    values.extend([r.impressions as f64, r.engagements as f64, r.ctr()]);
                    present.push(true);
                }
                None => {
                    values.extend([0.0; 3]);
                    present.push(false);
                }
            }
        }
        HistoricalFeatures { values, present }
    }

    /// Counts one more impression. Join first, then update, so an
    /// impression never sees its own label.
    pub fn stream_update(&mut self, impression: &Impression) -> Result<(), CountError> {
        let ts = impression.timestamp;
        self.window = match self.window {
            None => Some((ts, ts)),
            Some((_, end)) if ts < end => return Err(CountError::OutOfOrderUpdate { got: ts, end }),
            Some((start, _)) => Some((start, ts)),
        };
        for (indices, records) in self.indices.iter().zip(self.records.iter_mut()) {
            records
                .entry(ValueTuple::project(impression, indices))
                .or_default()
                .add(impression.label);
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match self.window {
            Some((a, b)) => _ = writeln!(s, "#window\t{a}\t{b}"),
            None => s.push_str("#window\t-\t-\n"),
        }
        for (i, k) in self.keys.iter().enumerate() {
            let _ = writeln!(s, "#key\t{i}\t{k}");
        }
        for (i, records) in self.records.iter().enumerate() {
            let mut rows: Vec<(&ValueTuple, &CountRecord)> = records.iter().collect();
            rows.sort_by(|a, b| a.0.cmp(b.0));
            for (t, r) in rows {
                let _ = writeln!(s, "{i}\t{t}\t{}\t{}", r.impressions, r.engagements);
            }
        }
        s
    }

    pub fn parse(text: &str, schema: &FeatureSchema) -> Result<Self, CountError> {
        let bad = |line: usize, reason: String| CountError::Malformed { line, reason };
        let mut window = None;
        let mut keys = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            match f[0] {
                "#window" if f.len() == 3 => {
                    if f[1] != "-" {
                        let a = f[1].parse::<i64>().map_err(|e| bad(ln, e.to_string()))?;
                        let b = f[2].parse::<i64>().map_err(|e| bad(ln, e.to_string()))?;
                        window = Some((a, b));
                    }
                }
                "#key" if f.len() == 3 => {
                    if f[1].parse::<usize>().ok() != Some(keys.len()) {
                        return Err(bad(ln, "key indices must be consecutive".into()));
                    }
                    keys.push(f[2].parse::<CountingKey>().map_err(|e| bad(ln, e.to_string()))?);
                }
                _ if f.len() == 4 => rows.push((ln, f)),
                _ => return Err(bad(ln, format!("unexpected line `{line}`"))),
            }
        }
        let mut table = CountTable::new(schema, keys)?;
        table.window = window;
        for (ln, f) in rows {
            let key: usize = f[0].parse().map_err(|_| bad(ln, format!("bad key index `{}`", f[0])))?;
            if key >= table.keys.len() {
                return Err(bad(ln, format!("key index {key} out of range")));
            }
            let tuple: ValueTuple = f[1].parse().map_err(|e| bad(ln, e))?;
            if tuple.0.len() != 1 + table.indices[key].len() {
                return Err(bad(ln, "tuple arity does not match key".into()));
            }
            let impressions: u64 = f[2].parse().map_err(|_| bad(ln, "bad h_i".into()))?;
            let engagements: u64 = f[3].parse().map_err(|_| bad(ln, "bad h_e".into()))?;
            if engagements > impressions {
                return Err(bad(ln, "h_e exceeds h_i".into()));
            }
            if table.records[key]
                .insert(
                    tuple,
                    CountRecord {
                        impressions,
                        engagements,
                    },
                )
                .is_some()
            {
                return Err(bad(ln, "duplicate tuple".into()));
            }
        }
        Ok(table)
    }
}

/// Counts every key over `history` in one pass per key; keys are counted in
/// parallel when `exec` allows.
pub fn build_counts(history: &Dataset, keys: Vec<CountingKey>, exec: Execution) -> Result<CountTable, CountError> {
    let mut table = CountTable::new(history.schema(), keys)?;
    let imps = history.impressions();
    table.records = map_slice(&table.indices, exec, |indices| {
        let mut m: HashMap<ValueTuple, CountRecord> = HashMap::new();
        for imp in imps {
            m.entry(ValueTuple::project(imp, indices)).or_default().add(imp.label);
        }
        m
    });
    table.window = match (imps.first(), imps.last()) {
        (Some(a), Some(b)) => Some((a.timestamp, b.timestamp)),
        _ => None,
    };
    Ok(table)
}
