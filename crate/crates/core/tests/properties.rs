use std::collections::{BTreeMap, BTreeSet};

use countkey::countstore::build_counts;
use countkey::keyselect::{extract_candidates, rank, score_tfidf, CandidateStats};
use countkey::metrics::{coverage, cross_entropy, pearson, rce, ExperimentReport};
use countkey::predict::{LeafEncoder, WdInput, WideDeep};
use countkey::rng::SplitMix64;
use countkey::trees::{train_forest, training_log_loss, FeatureMatrix, Node, Tree};
use countkey::{
    CountTable, CountingKey, Dataset, Execution, FeatureDescriptor, FeatureSchema, Forest, Impression, TrainParams,
    ValueTuple,
};
use proptest::prelude::*;

const N_FEATURES: usize = 4;

fn schema() -> FeatureSchema {
    FeatureSchema::new(
        (0..N_FEATURES)
            .map(|i| FeatureDescriptor::categorical(&format!("f{i}"), 5))
            .collect(),
    )
    .unwrap()
}

/// Random tree of depth at most `depth`, thresholds and scores included.
fn random_tree(g: &mut SplitMix64, depth: usize) -> Tree {
    fn grow(g: &mut SplitMix64, nodes: &mut Vec<Node>, depth: usize) -> usize {
        let id = nodes.len();
        if depth == 0 || g.below(4) == 0 {
            nodes.push(Node::Leaf { score: g.unit() - 0.5 });
            return id;
        }
        nodes.push(Node::Leaf { score: 0.0 });
        let feature = g.below(N_FEATURES as u64) as usize;
        let threshold = 1 + g.below(4) as u32;
        let left = grow(g, nodes, depth - 1);
        let right = grow(g, nodes, depth - 1);
        nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
    let mut nodes = Vec::new();
    grow(g, &mut nodes, depth);
    Tree { nodes }
}

fn random_models(seed: u64, n_models: usize) -> Vec<(u64, Forest)> {
    let mut g = SplitMix64::new(seed);
    (0..n_models)
        .map(|m| {
            let trees = (0..1 + g.below(4)).map(|_| random_tree(&mut g, 3)).collect();
            (
                m as u64 * 7 + 3,
                Forest {
                    trees,
                    learning_rate: 0.3,
                    base_score: 0.0,
                    n_features: N_FEATURES,
                },
            )
        })
        .collect()
}

/// Path feature sets by direct recursion from each root.
fn oracle_paths(tree: &Tree) -> Vec<BTreeSet<usize>> {
    fn walk(t: &Tree, id: usize, mut acc: BTreeSet<usize>, out: &mut Vec<BTreeSet<usize>>) {
        match &t.nodes[id] {
            Node::Leaf { .. } => out.push(acc),
            Node::Split {
                feature, left, right, ..
            } => {
                acc.insert(*feature);
                walk(t, *left, acc.clone(), out);
                walk(t, *right, acc, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(tree, 0, BTreeSet::new(), &mut out);
    out.retain(|p| !p.is_empty());
    out
}

fn oracle_tfidf(models: &[(u64, Forest)]) -> BTreeMap<String, (f64, f64, f64)> {
    let mut per: BTreeMap<String, BTreeMap<u64, usize>> = BTreeMap::new();
    for (id, f) in models {
        for t in &f.trees {
            for p in oracle_paths(t) {
                let name = p.iter().map(|i| format!("f{i}")).collect::<Vec<_>>().join("+");
                *per.entry(name).or_default().entry(*id).or_default() += 1;
            }
        }
    }
    let n = models.len() as f64;
    per.into_iter()
        .map(|(k, m)| {
            let tf = m.values().sum::<usize>() as f64 / m.len() as f64;
            let idf = (n / (1.0 + m.len() as f64)).ln();
            (k, (tf, idf, tf * idf))
        })
        .collect()
}

fn scored(models: &[(u64, Forest)]) -> Vec<CandidateStats> {
    let mut s = score_tfidf(extract_candidates(models, &schema()), models.len());
    rank(&mut s);
    s
}

fn random_dataset(seed: u64, n: usize) -> Dataset {
    let mut g = SplitMix64::new(seed);
    let imps = (0..n as u64)
        .map(|id| Impression {
            id,
            timestamp: g.below(10 * 86_400) as i64,
            user_id: g.below(6),
            ad_id: g.below(20),
            label: u8::from(g.bernoulli(0.2)),
            values: (0..N_FEATURES).map(|_| g.below(5) as u32).collect(),
        })
        .collect();
    Dataset::new(schema(), imps).unwrap()
}

fn keys() -> Vec<CountingKey> {
    ["f0", "f1+f2", "f0+f2+f3"].iter().map(|k| k.parse().unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tfidf_matches_brute_force(seed in any::<u64>(), n in 1usize..6) {
        let models = random_models(seed, n);
        let got = scored(&models);
        let want = oracle_tfidf(&models);
        prop_assert_eq!(got.len(), want.len());
        for c in &got {
            let w = want[&c.key.to_string()];
            prop_assert!((c.tf - w.0).abs() < 1e-12 && (c.idf - w.1).abs() < 1e-12 && (c.tfidf - w.2).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_ignores_model_order(seed in any::<u64>(), n in 1usize..6, rot in 0usize..6) {
        let models = random_models(seed, n);
        let mut shuffled = models.clone();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let key = |s: Vec<CandidateStats>| s.into_iter().map(|c| (c.key, c.tfidf.to_bits())).collect::<Vec<_>>();
        prop_assert_eq!(key(scored(&models)), key(scored(&shuffled)));
    }

    #[test]
    fn candidates_ignore_thresholds_and_scores(seed in any::<u64>(), n in 1usize..5) {
        let models = random_models(seed, n);
        let mut g = SplitMix64::new(seed ^ 1);
        let perturbed: Vec<(u64, Forest)> = models
            .iter()
            .map(|(id, f)| {
                let mut f = f.clone();
                for t in &mut f.trees {
                    for node in &mut t.nodes {
                        match node {
                            Node::Leaf { score } => *score = g.unit() * 10.0,
                            Node::Split { threshold, .. } => *threshold = 1 + g.below(4) as u32,
                        }
                    }
                }
                (*id, f)
            })
            .collect();
        prop_assert_eq!(scored(&models), scored(&perturbed));
    }

    #[test]
    fn streaming_equals_batch_and_conserves(seed in any::<u64>(), n in 1usize..400) {
        let ds = random_dataset(seed, n);
        let batch = build_counts(&ds, keys(), Execution::Parallel).unwrap();
        prop_assert_eq!(&batch, &build_counts(&ds, keys(), Execution::Sequential).unwrap());
        let mut stream = CountTable::new(ds.schema(), keys()).unwrap();
        for imp in ds.impressions() {
            stream.stream_update(imp).unwrap();
        }
        prop_assert_eq!(&stream, &batch);
        for t in batch.totals() {
            prop_assert_eq!(t, (ds.len() as u64, ds.click_count()));
        }
    }

    /// Joining before updating sees exactly the earlier impressions.
    #[test]
    fn join_then_update_sees_only_the_past(seed in any::<u64>(), n in 1usize..200) {
        let ds = random_dataset(seed, n);
        let schema = ds.schema().clone();
        let mut table = CountTable::new(&schema, keys()).unwrap();
        let imps = ds.impressions();
        for (i, imp) in imps.iter().enumerate() {
            let h = table.join(imp);
            for (k, key) in keys().iter().enumerate() {
                let idx = schema.key_indices(key).unwrap();
                let tuple = ValueTuple::project(imp, &idx);
                let prior: Vec<_> = imps[..i].iter().filter(|p| ValueTuple::project(p, &idx) == tuple).collect();
                let clicks = prior.iter().filter(|p| p.label == 1).count();
                let (hi, he, hp) = h.triple(k);
                prop_assert_eq!(hi, prior.len() as f64);
                prop_assert_eq!(he, clicks as f64);
                prop_assert_eq!(h.present[k], !prior.is_empty());
                prop_assert!(he <= hi && (0.0..=1.0).contains(&hp));
            }
            table.stream_update(imp).unwrap();
        }
    }

    #[test]
    fn cross_entropy_monotone_in_prediction(p in 0.001f64..0.998, d in 0.0005f64..0.001) {
        let up = cross_entropy(&[p + d], &[1]).unwrap();
        prop_assert!(up < cross_entropy(&[p], &[1]).unwrap());
        let down = cross_entropy(&[p + d], &[0]).unwrap();
        prop_assert!(down > cross_entropy(&[p], &[0]).unwrap());
    }

    #[test]
    fn rce_ignores_sample_order(seed in any::<u64>(), n in 2usize..300) {
        let mut g = SplitMix64::new(seed);
        let preds: Vec<f64> = (0..n).map(|_| g.unit()).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(g.bernoulli(0.3))).collect();
        let a = rce(&preds, &labels, 0.3).unwrap();
        let (rp, rl): (Vec<f64>, Vec<u8>) = preds.iter().copied().zip(labels.iter().copied()).rev().unzip();
        let b = rce(&rp, &rl, 0.3).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn coverage_and_pearson_are_bounded(seed in any::<u64>(), n in 1usize..200) {
        let mut g = SplitMix64::new(seed);
        let values: Vec<f64> = (0..n).map(|_| if g.bernoulli(0.3) { 0.0 } else { g.unit() * 50.0 }).collect();
        let present: Vec<bool> = (0..n).map(|_| g.bernoulli(0.7)).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(g.bernoulli(0.4))).collect();
        let c = coverage(&values, &present).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        if let Ok(Some(r)) = pearson(&values, &present, &labels) {
            prop_assert!((-1.0..=1.0).contains(&r));
        }
        let flat = vec![3.0; n];
        prop_assert!(matches!(pearson(&flat, &vec![true; n], &labels), Ok(None) | Err(_)));
    }

    #[test]
    fn encoder_is_one_hot_per_tree(seed in any::<u64>(), n in 1usize..6) {
        let (_, forest) = random_models(seed, 1).remove(0);
        let e = LeafEncoder::new(forest.clone());
        let mut g = SplitMix64::new(seed ^ n as u64);
        let mut lo = 0;
        let bounds: Vec<(usize, usize)> = forest.trees.iter().map(|t| { let b = (lo, lo + t.n_leaves()); lo = b.1; b }).collect();
        prop_assert_eq!(e.width(), lo);
        for _ in 0..n {
            let x: Vec<u32> = (0..N_FEATURES).map(|_| g.below(5) as u32).collect();
            let active = e.encode(&x).unwrap();
            prop_assert_eq!(active.len(), forest.trees.len());
            for (a, (l, h)) in active.iter().zip(&bounds) {
                prop_assert!(l <= a && a < h);
            }
        }
    }

    /// Training loss of each tree prefix never increases.
    #[test]
    fn boosting_loss_is_monotone(seed in any::<u64>()) {
        let mut g = SplitMix64::new(seed);
        let rows: Vec<Vec<u32>> = (0..300).map(|_| (0..3).map(|_| g.below(5) as u32).collect()).collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from(g.bernoulli(if r[0] + r[1] > 4 { 0.7 } else { 0.2 }))).collect();
        let x = FeatureMatrix::from_rows(3, &rows).unwrap();
        let forest = train_forest(&x, &y, &TrainParams { n_trees: 10, ..TrainParams::default() }).unwrap();
        let mut last = f64::INFINITY;
        for t in 0..=forest.trees.len() {
            let prefix = Forest { trees: forest.trees[..t].to_vec(), ..forest.clone() };
            let loss = training_log_loss(&prefix, &x, &y);
            prop_assert!(loss <= last + 1e-12, "prefix {t}: {loss} > {last}");
            last = loss;
        }
    }

    #[test]
    fn dataset_text_round_trip(seed in any::<u64>(), n in 0usize..100) {
        let ds = random_dataset(seed, n);
        let mut buf = Vec::new();
        ds.to_writer(&mut buf).unwrap();
        prop_assert_eq!(Dataset::from_reader(buf.as_slice(), schema()).unwrap(), ds);
    }

    #[test]
    fn count_table_text_round_trip(seed in any::<u64>(), n in 0usize..200) {
        let table = build_counts(&random_dataset(seed, n), keys(), Execution::Sequential).unwrap();
        prop_assert_eq!(CountTable::parse(&table.to_text(), &schema()).unwrap(), table);
    }

    #[test]
    fn checkpoint_round_trip_keeps_predictions(seed in any::<u64>()) {
        let mut m = WideDeep::new(&[3, 4], 3, 2, &[4, 2], vec![0.5; 3], vec![1.5; 3]).unwrap();
        m.init_random(seed);
        let back = WideDeep::parse(&m.to_text()).unwrap();
        let x = WdInput { cats: vec![2, 3], counts: vec![4.0, 1.0, 0.25] };
        prop_assert_eq!(m.predict(&x).unwrap().to_bits(), back.predict(&x).unwrap().to_bits());
    }

    #[test]
    fn report_text_round_trip(seed in any::<u64>(), rce in -50.0f64..50.0) {
        let r = ExperimentReport {
            seed,
            final_rce: rce,
            baseline_ctr: 0.1,
            n_holdout: 5,
            config: vec![("mode".into(), "online".into())],
            coverage: vec![("a:h_i".into(), 0.5)],
            correlation: vec![("a:h_i".into(), None), ("a:h_e".into(), Some(rce / 100.0))],
            ..ExperimentReport::default()
        };
        prop_assert_eq!(ExperimentReport::parse(&r.to_text()).unwrap(), r);
    }
}
