//! Line-oriented forest format.
//!
//! ```text
//! forest<TAB>n_features<TAB>learning_rate<TAB>base_score<TAB>n_trees
//! tree<TAB>index<TAB>n_nodes
//! node_id<TAB>split<TAB>feature<TAB>threshold<TAB>left_id<TAB>right_id
//! node_id<TAB>leaf<TAB>-<TAB>score<TAB>-<TAB>-
//! ```
//!
//! Node ids are local to their tree and listed in order `0..n_nodes`; the
//! root is node 0. Reals use the shortest representation that parses back
//! to the same bits.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{Forest, Node, Tree, TreeError};

pub fn write_forest(forest: &Forest) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "forest\t{}\t{}\t{}\t{}",
        forest.n_features,
        forest.learning_rate,
        forest.base_score,
        forest.trees.len()
    );
    for (i, t) in forest.trees.iter().enumerate() {
        let _ = writeln!(s, "tree\t{i}\t{}", t.nodes.len());
        for (id, n) in t.nodes.iter().enumerate() {
            let _ = match n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    writeln!(s, "{id}\tsplit\t{feature}\t{threshold}\t{left}\t{right}")
                }
                Node::Leaf { score } => writeln!(s, "{id}\tleaf\t-\t{score}\t-\t-"),
            };
        }
    }
    s
}

fn num<T: FromStr>(s: &str, line: usize) -> Result<T, TreeError> {
    s.parse().map_err(|_| TreeError::Malformed {
        line,
        reason: format!("bad number `{s}`"),
    })
}

pub fn parse_forest(text: &str) -> Result<Forest, TreeError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, reason: &str| TreeError::Malformed {
        line,
        reason: reason.to_string(),
    };
    let (i, header) = lines.next().ok_or_else(|| bad(1, "missing forest header"))?;
    let h: Vec<&str> = header.split('\t').collect();
    if h.len() != 5 || h[0] != "forest" {
        return Err(bad(i + 1, "expected `forest` header with 4 fields"));
    }
    let n_features: usize = num(h[1], i + 1)?;
    let learning_rate: f64 = num(h[2], i + 1)?;
    let base_score: f64 = num(h[3], i + 1)?;
    let n_trees: usize = num(h[4], i + 1)?;
    let mut trees = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let (i, th) = lines.next().ok_or_else(|| bad(0, "missing tree header"))?;
        let th: Vec<&str> = th.split('\t').collect();
        if th.len() != 3 || th[0] != "tree" || num::<usize>(th[1], i + 1)? != t {
            return Err(bad(i + 1, "expected `tree` header in sequence"));
        }
        let n_nodes: usize = num(th[2], i + 1)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for id in 0..n_nodes {
            let (i, nl) = lines.next().ok_or_else(|| bad(0, "missing node line"))?;
            let f: Vec<&str> = nl.split('\t').collect();
            if f.len() != 6 || num::<usize>(f[0], i + 1)? != id {
                return Err(bad(i + 1, "expected node line with 6 fields in id order"));
            }
            let node = match f[1] {
                "split" => {
                    let (left, right) = (num(f[4], i + 1)?, num(f[5], i + 1)?);
                    if left >= n_nodes || right >= n_nodes || left <= id || right <= id {
                        return Err(bad(i + 1, "child id out of range"));
                    }
                    let feature: usize = num(f[2], i + 1)?;
                    if feature >= n_features {
                        return Err(bad(i + 1, "feature index out of range"));
                    }
                    Node::Split {
                        feature,
                        threshold: num(f[3], i + 1)?,
                        left,
                        right,
                    }
                }
                "leaf" => Node::Leaf {
                    score: num(f[3], i + 1)?,
                },
                other => return Err(bad(i + 1, &format!("unknown node kind `{other}`"))),
            };
            nodes.push(node);
        }
        if nodes.is_empty() {
            return Err(bad(i + 1, "tree without nodes"));
        }
        trees.push(Tree { nodes });
    }
    if let Some((i, _)) = lines.next() {
        return Err(bad(i + 1, "trailing content"));
    }
    Ok(Forest {
        trees,
        learning_rate,
        base_score,
        n_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{train_forest, FeatureMatrix, TrainParams};

    #[test]
    fn golden_stump_text() {
        let f = Forest {
            trees: vec![Tree {
                nodes: vec![
                    Node::Split {
                        feature: 1,
                        threshold: 3,
                        left: 1,
                        right: 2,
                    },
                    Node::Leaf { score: -0.25 },
                    Node::Leaf { score: 0.5 },
                ],
            }],
            learning_rate: 0.3,
            base_score: -1.5,
            n_features: 2,
        };
        let text = write_forest(&f);
        assert_eq!(
            text,
            "forest\t2\t0.3\t-1.5\t1\ntree\t0\t3\n0\tsplit\t1\t3\t1\t2\n1\tleaf\t-\t-0.25\t-\t-\n2\tleaf\t-\t0.5\t-\t-\n"
        );
        assert_eq!(parse_forest(&text).unwrap(), f);
    }

    #[test]
    fn trained_forest_round_trips_bit_exactly() {
        let mut g = crate::rng::SplitMix64::new(8);
        let rows: Vec<Vec<u32>> = (0..300).map(|_| vec![g.below(5) as u32, g.below(7) as u32]).collect();
        let y: Vec<u8> = rows
            .iter()
            .map(|r| u8::from(g.bernoulli(if r[0] == 2 { 0.6 } else { 0.1 })))
            .collect();
        let x = FeatureMatrix::from_rows(2, &rows).unwrap();
        let f = train_forest(&x, &y, &TrainParams::default()).unwrap();
        assert_eq!(parse_forest(&write_forest(&f)).unwrap(), f);
    }

    #[test]
    fn rejects_broken_text() {
        assert!(parse_forest("").is_err());
        assert!(parse_forest("forest\t1\t0.3\t0\t1\ntree\t0\t1\n0\tleaf\t-\tx\t-\t-\n").is_err());
        assert!(parse_forest("forest\t1\t0.3\t0\t1\ntree\t0\t3\n0\tsplit\t0\t1\t0\t2\n").is_err());
        assert!(parse_forest("forest\t1\t0.3\t0\t0\nextra\n").is_err());
    }
}
