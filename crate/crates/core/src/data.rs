//! Feature schema, impression records and the tab-separated dataset files.
//!
//! Impression file: one record per line, tab-separated, in the order
//! `id, timestamp, user_id, ad_id, label`, then one integer code per schema
//! feature in schema order. Schema file: one feature per line as
//! `name<TAB>kind<TAB>cardinality`, with kind `categorical` or `ordinal`.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::keyselect::CountingKey;

/// Names that belong to the impression envelope, never to the schema.
pub const RESERVED_NAMES: [&str; 4] = ["user_id", "ad_id", "timestamp", "label"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: schema mismatch: {reason}")]
    SchemaMismatch { line: usize, reason: String },
    #[error("duplicate impression id {0}")]
    DuplicateId(u64),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Categorical,
    Ordinal,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Categorical => "categorical",
            FeatureKind::Ordinal => "ordinal",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "categorical" => Ok(FeatureKind::Categorical),
            "ordinal" => Ok(FeatureKind::Ordinal),
            other => Err(format!("unknown feature kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureDescriptor {
    pub name: String,
    pub kind: FeatureKind,
    pub cardinality: u32,
}

impl FeatureDescriptor {
    pub fn categorical(name: &str, cardinality: u32) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Categorical,
            cardinality,
        }
    }
}

/// Ordered contextual features. Codes are dense integers in
/// `[0, cardinality)`; their order is the declaration order of the values.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureSchema {
    features: Vec<FeatureDescriptor>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureDescriptor>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for f in &features {
            if f.name.is_empty() {
                return Err(DataError::InvalidSchema("empty feature name".into()));
            }
            if f.name.contains(['\t', '\n', '+', ',']) || f.name.trim() != f.name {
                return Err(DataError::InvalidSchema(format!(
                    "illegal character in name `{}`",
                    f.name
                )));
            }
            if RESERVED_NAMES.contains(&f.name.as_str()) {
                return Err(DataError::InvalidSchema(format!("`{}` is a reserved name", f.name)));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(DataError::InvalidSchema(format!("duplicate feature `{}`", f.name)));
            }
            let min_card = match f.kind {
                FeatureKind::Categorical => 2,
                FeatureKind::Ordinal => 1,
            };
            if f.cardinality < min_card {
                return Err(DataError::InvalidSchema(format!(
                    "feature `{}` needs cardinality >= {min_card}, got {}",
                    f.name, f.cardinality
                )));
            }
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &[FeatureDescriptor] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.features.iter().map(|f| f.cardinality).collect()
    }

    /// Resolves a key's features to schema indices in the key's canonical order.
    pub fn key_indices(&self, key: &CountingKey) -> Result<Vec<usize>, DataError> {
        key.features()
            .map(|name| {
                self.index_of(name)
                    .ok_or_else(|| DataError::UnknownFeature(name.to_string()))
            })
            .collect()
    }

    /// `(user_id, key feature values...)` with features in canonical name order.
    pub fn project(&self, impression: &Impression, key: &CountingKey) -> Result<ValueTuple, DataError> {
        let indices = self.key_indices(key)?;
        Ok(ValueTuple::project(impression, &indices))
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut features = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| DataError::MalformedRecord { line: i + 1, reason };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", cols.len())));
            }
            let kind = cols[1].parse::<FeatureKind>().map_err(bad)?;
            let cardinality = cols[2].parse::<u32>().map_err(|e| DataError::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
            features.push(FeatureDescriptor {
                name: cols[0].to_string(),
                kind,
                cardinality,
            });
        }
        Self::new(features)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.features {
            out.push_str(&format!("{}\t{}\t{}\n", f.name, f.kind, f.cardinality));
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// One ad shown to one user.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Impression {
    pub id: u64,
    pub timestamp: i64,
    pub user_id: u64,
    pub ad_id: u64,
    pub label: u8,
    /// Codes aligned with the schema.
    pub values: Vec<u32>,
}

impl Impression {
    fn check(&self, schema: &FeatureSchema, line: usize) -> Result<(), DataError> {
        if self.label > 1 {
            return Err(DataError::MalformedRecord {
                line,
                reason: format!("label {} is not 0 or 1", self.label),
            });
        }
        if self.values.len() != schema.len() {
            return Err(DataError::SchemaMismatch {
                line,
                reason: format!("expected {} feature values, got {}", schema.len(), self.values.len()),
            });
        }
        for (v, f) in self.values.iter().zip(schema.features()) {
            if *v >= f.cardinality {
                return Err(DataError::SchemaMismatch {
                    line,
                    reason: format!("code {v} out of range for `{}` (cardinality {})", f.name, f.cardinality),
                });
            }
        }
        Ok(())
    }
}

/// Projection of an impression onto a counting key: user id first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueTuple(pub Vec<u64>);

impl ValueTuple {
    /// Projects onto pre-resolved schema indices (see [`FeatureSchema::key_indices`]).
    pub fn project(impression: &Impression, indices: &[usize]) -> Self {
        let mut v = Vec::with_capacity(indices.len() + 1);
        v.push(impression.user_id);
        v.extend(indices.iter().map(|&i| u64::from(impression.values[i])));
        ValueTuple(v)
    }
}

impl fmt::Display for ValueTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for ValueTuple {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|p| p.parse::<u64>().map_err(|e| format!("bad tuple component `{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(ValueTuple)
    }
}

/// Impressions sorted by `(timestamp, id)` with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    schema: FeatureSchema,
    impressions: Vec<Impression>,
}

impl Dataset {
    /// Validates every record against the schema and sorts by `(timestamp, id)`.
    pub fn new(schema: FeatureSchema, impressions: Vec<Impression>) -> Result<Self, DataError> {
        for (i, imp) in impressions.iter().enumerate() {
            imp.check(&schema, i + 1)?;
        }
        Self::from_checked(schema, impressions)
    }

    fn from_checked(schema: FeatureSchema, mut impressions: Vec<Impression>) -> Result<Self, DataError> {
        impressions.sort_by_key(|imp| (imp.timestamp, imp.id));
        let mut ids = HashSet::with_capacity(impressions.len());
        for imp in &impressions {
            if !ids.insert(imp.id) {
                return Err(DataError::DuplicateId(imp.id));
            }
        }
        Ok(Self { schema, impressions })
    }

    pub fn empty(schema: FeatureSchema) -> Self {
        Self {
            schema,
            impressions: Vec::new(),
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn impressions(&self) -> &[Impression] {
        &self.impressions
    }

    pub fn len(&self) -> usize {
        self.impressions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.impressions.is_empty()
    }

    /// Impressions with `start <= timestamp < end`; stays sorted.
    pub fn window(&self, start: i64, end: i64) -> Dataset {
        let lo = self.impressions.partition_point(|imp| imp.timestamp < start);
        let hi = self.impressions.partition_point(|imp| imp.timestamp < end);
        Dataset {
            schema: self.schema.clone(),
            impressions: self.impressions[lo..hi.max(lo)].to_vec(),
        }
    }

    /// Builds a dataset from a subset that is already sorted and validated.
    pub fn filtered<F: Fn(&Impression) -> bool>(&self, keep: F) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            impressions: self.impressions.iter().filter(|imp| keep(imp)).cloned().collect(),
        }
    }

    pub fn click_count(&self) -> u64 {
        self.impressions.iter().map(|imp| u64::from(imp.label)).sum()
    }

    pub fn from_reader<R: Read>(reader: R, schema: FeatureSchema) -> Result<Self, DataError> {
        let mut impressions = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let imp = parse_record(&line, i + 1, &schema)?;
            imp.check(&schema, i + 1)?;
            impressions.push(imp);
        }
        Self::from_checked(schema, impressions)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut w = BufWriter::new(writer);
        for imp in &self.impressions {
            write!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                imp.id, imp.timestamp, imp.user_id, imp.ad_id, imp.label
            )?;
            for v in &imp.values {
                write!(w, "\t{v}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

fn parse_record(line: &str, lineno: usize, schema: &FeatureSchema) -> Result<Impression, DataError> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 5 {
        return Err(DataError::MalformedRecord {
            line: lineno,
            reason: format!("expected >= 5 fields, got {}", cols.len()),
        });
    }
    if cols.len() != 5 + schema.len() {
        return Err(DataError::SchemaMismatch {
            line: lineno,
            reason: format!("expected {} feature values, got {}", schema.len(), cols.len() - 5),
        });
    }
    fn field<T: FromStr>(s: &str, name: &str, line: usize) -> Result<T, DataError>
    where
        T::Err: fmt::Display,
    {
        s.parse::<T>().map_err(|e| DataError::MalformedRecord {
            line,
            reason: format!("{name} `{s}`: {e}"),
        })
    }
    let label: u8 = field(cols[4], "label", lineno)?;
    let values = cols[5..]
        .iter()
        .zip(schema.features())
        .map(|(s, f)| field::<u32>(s, &f.name, lineno))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Impression {
        id: field(cols[0], "id", lineno)?,
        timestamp: field(cols[1], "timestamp", lineno)?,
        user_id: field(cols[2], "user_id", lineno)?,
        ad_id: field(cols[3], "ad_id", lineno)?,
        label,
        values,
    })
}

pub fn read_dataset(path: &Path, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    Dataset::from_reader(File::open(path)?, schema.clone())
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    dataset.to_writer(File::create(path)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureDescriptor::categorical("hour_of_day", 24),
            FeatureDescriptor::categorical("item_objective", 5),
        ])
        .unwrap()
    }

    fn imp(id: u64, ts: i64, user: u64, label: u8, values: Vec<u32>) -> Impression {
        Impression {
            id,
            timestamp: ts,
            user_id: user,
            ad_id: 3,
            label,
            values,
        }
    }

    fn read_str(s: &str) -> Result<Dataset, DataError> {
        Dataset::from_reader(s.as_bytes(), schema())
    }

    #[test]
    fn schema_rejects_bad_declarations() {
        let dup = vec![
            FeatureDescriptor::categorical("a", 3),
            FeatureDescriptor::categorical("a", 3),
        ];
        assert!(FeatureSchema::new(dup).is_err());
        assert!(FeatureSchema::new(vec![FeatureDescriptor::categorical("a", 1)]).is_err());
        assert!(FeatureSchema::new(vec![FeatureDescriptor::categorical("user_id", 3)]).is_err());
        assert!(FeatureSchema::new(vec![FeatureDescriptor::categorical("", 3)]).is_err());
    }

    #[test]
    fn schema_file_round_trip() {
        let s = schema();
        assert_eq!(
            s.to_text(),
            "hour_of_day\tcategorical\t24\nitem_objective\tcategorical\t5\n"
        );
        assert_eq!(FeatureSchema::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn empty_file_gives_empty_dataset() {
        assert!(read_str("").unwrap().is_empty());
    }

    #[test]
    fn out_of_order_records_are_sorted() {
        let d = read_str("2\t50\t1\t0\t0\t3\t1\n1\t10\t1\t0\t1\t4\t2\n").unwrap();
        let ts: Vec<i64> = d.impressions().iter().map(|i| i.timestamp).collect();
        assert_eq!(ts, vec![10, 50]);
    }

    #[test]
    fn timestamp_ties_break_by_id() {
        let d = read_str("9\t10\t1\t0\t0\t3\t1\n4\t10\t1\t0\t1\t4\t2\n").unwrap();
        assert_eq!(d.impressions()[0].id, 4);
    }

    #[test]
    fn code_at_cardinality_is_a_schema_mismatch() {
        let err = read_str("1\t10\t1\t0\t0\t24\t1\n").unwrap_err();
        assert!(matches!(err, DataError::SchemaMismatch { line: 1, .. }), "{err}");
    }

    #[test]
    fn malformed_and_duplicate_records() {
        assert!(matches!(
            read_str("1\t10\t1\t0\t2\t3\t1\n"),
            Err(DataError::MalformedRecord { line: 1, .. })
        ));
        assert!(matches!(
            read_str("ok\n"),
            Err(DataError::MalformedRecord { line: 1, .. })
        ));
        assert!(matches!(
            read_str("1\t1\t1\t0\t0\tx\t1\n"),
            Err(DataError::MalformedRecord { .. })
        ));
        assert!(matches!(
            read_str("1\t1\t1\t0\t0\t3\n"),
            Err(DataError::SchemaMismatch { .. })
        ));
        assert!(matches!(
            read_str("1\t10\t1\t0\t0\t3\t1\n1\t11\t1\t0\t0\t3\t1\n"),
            Err(DataError::DuplicateId(1))
        ));
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        let d = Dataset::new(
            schema(),
            vec![
                imp(1, 5, 7, 1, vec![9, 0]),
                imp(2, 6, 8, 0, vec![23, 4]),
                imp(3, 6, 7, 1, vec![0, 2]),
            ],
        )
        .unwrap();
        write_dataset(&d, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap().lines().next().unwrap(),
            "1\t5\t7\t3\t1\t9\t0"
        );
        assert_eq!(read_dataset(&path, &schema()).unwrap(), d);

        let empty = Dataset::empty(schema());
        write_dataset(&empty, &path).unwrap();
        assert_eq!(read_dataset(&path, &schema()).unwrap(), empty);
    }

    #[test]
    fn projection_uses_canonical_order() {
        let s = schema();
        let i = imp(1, 0, 7, 0, vec![9, 2]);
        let k1 = CountingKey::new(["hour_of_day"]).unwrap();
        assert_eq!(s.project(&i, &k1).unwrap(), ValueTuple(vec![7, 9]));
        let k2 = CountingKey::new(["item_objective", "hour_of_day"]).unwrap();
        assert_eq!(s.project(&i, &k2).unwrap(), ValueTuple(vec![7, 9, 2]));
        assert_eq!(s.project(&i, &k2).unwrap(), s.project(&i, &k2).unwrap());
        let unknown = CountingKey::new(["device"]).unwrap();
        assert!(matches!(s.project(&i, &unknown), Err(DataError::UnknownFeature(_))));
    }

    #[test]
    fn window_slices_half_open() {
        let d = Dataset::new(schema(), (0..10).map(|t| imp(t as u64, t, 1, 0, vec![0, 0])).collect()).unwrap();
        let w = d.window(3, 7);
        assert_eq!(w.len(), 4);
        assert_eq!(w.impressions()[0].timestamp, 3);
        assert!(d.window(8, 2).is_empty());
    }
}
