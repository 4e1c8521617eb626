//! Parser for the flat `key = value` config format with `[stanza]` blocks.
//!
//! ```text
//! # comment
//! seed = 42
//! n_users = 100
//!
//! [planted]
//! features = hour_of_day
//! lift = 5
//! ```
//!
//! Keys before the first stanza header are top-level. Every `[name]` header
//! opens a new stanza; repeated names yield repeated stanzas in file order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: invalid value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("unknown key `{key}` (line {line})")]
    UnknownKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

/// One block of key/value pairs; keys are consumed as they are read so
/// leftovers can be reported as unknown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    pub fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    pub fn take_parsed<T>(&mut self, key: &str) -> Result<Option<T>, ConfError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|err| ConfError::BadValue {
                line: e.line,
                key: key.to_string(),
                reason: err.to_string(),
            }),
        }
    }

    pub fn require<T>(&mut self, key: &str) -> Result<T, ConfError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.take_parsed(key)?
            .ok_or_else(|| ConfError::Missing(key.to_string()))
    }

    /// Errors on the first key nobody consumed.
    pub fn finish(self) -> Result<(), ConfError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, e)) => Err(ConfError::UnknownKey { line: e.line, key }),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfDoc {
    pub top: Section,
    pub stanzas: Vec<Section>,
}

impl ConfDoc {
    pub fn parse(text: &str) -> Result<Self, ConfError> {
        let mut doc = ConfDoc::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfError::Syntax {
                    line,
                    reason: format!("unterminated stanza header `{s}`"),
                })?;
                doc.stanzas.push(Section {
                    name: name.trim().to_string(),
                    line,
                    entries: BTreeMap::new(),
                });
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| ConfError::Syntax {
                line,
                reason: format!("expected `key = value`, got `{s}`"),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfError::Syntax {
                    line,
                    reason: "empty key".into(),
                });
            }
            let section = doc.stanzas.last_mut().unwrap_or(&mut doc.top);
            let entry = Entry {
                value: v.trim().to_string(),
                line,
            };
            if section.entries.insert(key.clone(), entry).is_some() {
                return Err(ConfError::Syntax {
                    line,
                    reason: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(doc)
    }

    /// Removes and returns every stanza called `name`, in file order.
    pub fn take_stanzas(&mut self, name: &str) -> Vec<Section> {
        let (hit, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.stanzas)
            .into_iter()
            .partition(|s| s.name == name);
        self.stanzas = rest;
        hit
    }

    pub fn finish(self) -> Result<(), ConfError> {
        if let Some(s) = self.stanzas.first() {
            return Err(ConfError::Syntax {
                line: s.line,
                reason: format!("unknown stanza [{}]", s.name),
            });
        }
        self.top.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_top_and_stanzas() {
        let text = "# c\nseed = 7\nname = a b\n\n[planted]\nlift = 5\n[planted]\nlift=2\n";
        let mut doc = ConfDoc::parse(text).unwrap();
        assert_eq!(doc.top.require::<u64>("seed").unwrap(), 7);
        assert_eq!(doc.top.take("name").unwrap().value, "a b");
        let planted = doc.take_stanzas("planted");
        assert_eq!(planted.len(), 2);
        assert_eq!(planted[1].clone().require::<f64>("lift").unwrap(), 2.0);
        doc.finish().unwrap();
    }

    #[test]
    fn reports_leftovers_and_bad_values() {
        let mut doc = ConfDoc::parse("seed = x\nextra = 1\n").unwrap();
        assert!(matches!(
            doc.top.require::<u64>("seed"),
            Err(ConfError::BadValue { line: 1, .. })
        ));
        assert!(matches!(doc.finish(), Err(ConfError::UnknownKey { line: 2, .. })));
        assert!(matches!(
            ConfDoc::parse("novalue\n"),
            Err(ConfError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            ConfDoc::parse("a=1\na=2\n"),
            Err(ConfError::Syntax { line: 2, .. })
        ));
    }
}
