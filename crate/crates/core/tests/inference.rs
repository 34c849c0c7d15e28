mod common;

use std::collections::BTreeMap;

use cincard::estimator::{DensityEstimator, ExactEstimator};
use cincard::evaluation::SynthSpec;
use cincard::inference::{
    estimate_cardinality, estimate_n, fresh_inputs, Combine, EstimatorSet, InferenceConfig, StepRequest,
};
use cincard::ingest::Database;
use cincard::joiner::{materialize, true_cardinality, DEFAULT_MATERIALIZE_THRESHOLD};
use cincard::query::{CodeSet, Query};
use cincard::schema::{partition, select_subschemas, QueryGraph, SubschemaHypergraph};
use cincard::Error;
use common::*;

fn setup(spec: SynthSpec) -> (Database, Vec<Bound>, SubschemaHypergraph, EstimatorSet) {
    let (db, qs) = synthetic(&spec, 7);
    let h = partition(&db.schema);
    let set = EstimatorSet::exact(&db, &h, DEFAULT_MATERIALIZE_THRESHOLD).unwrap();
    (db, qs, h, set)
}

fn spans(h: &SubschemaHypergraph, db: &Database, q: &Query) -> usize {
    select_subschemas(h, &db.schema, &q.graph).unwrap().len()
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn unpredicated_single_subschema_queries_are_exact() {
    let (db, qs, h, set) = setup(SynthSpec { queries: 120, ..SynthSpec::default() });
    let mut checked = 0;
    for b in qs.iter().filter(|b| spans(&h, &db, &b.query) == 1) {
        let bare = Query::new(b.query.graph.clone(), BTreeMap::new());
        let truth = true_cardinality(&bare, &db) as f64;
        let config = InferenceConfig { samples: 10, seed: 1, ..Default::default() };
        let est = estimate_cardinality(&bare, &h, &db, &set, &config).unwrap().cardinality;
        assert!((est - truth).abs() <= 1e-6 * truth.max(1.0), "{est} vs {truth}");
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn single_subschema_estimates_are_unbiased() {
    let (db, qs, h, set) = setup(SynthSpec { queries: 60, ..SynthSpec::default() });
    let picked: Vec<&Bound> = qs
        .iter()
        .filter(|b| spans(&h, &db, &b.query) == 1 && b.query.predicates.len() >= 2)
        .take(4)
        .collect();
    assert!(!picked.is_empty());
    for b in picked {
        let runs: Vec<f64> = (0..8)
            .map(|seed| {
                let config = InferenceConfig { samples: 20_000, seed, ..Default::default() };
                estimate_cardinality(&b.query, &h, &db, &set, &config).unwrap().cardinality
            })
            .collect();
        let (mean, se) = mean_and_stderr(&runs);
        let truth = b.truth as f64;
        assert!((mean - truth).abs() <= 4.0 * se + 1e-9 * truth, "mean {mean} se {se} truth {truth}");
    }
}

#[test]
fn sample_path_converges_across_subschemas() {
    let (db, qs, h, set) = setup(SynthSpec { queries: 80, ..SynthSpec::default() });
    let picked: Vec<&Bound> = qs.iter().filter(|b| spans(&h, &db, &b.query) == 2).take(3).collect();
    assert!(!picked.is_empty());
    for b in picked {
        let runs: Vec<f64> = (0..8)
            .map(|seed| {
                let config = InferenceConfig { samples: 20_000, seed, combine: Combine::SamplePath, ..Default::default() };
                estimate_cardinality(&b.query, &h, &db, &set, &config).unwrap().cardinality
            })
            .collect();
        let (mean, se) = mean_and_stderr(&runs);
        let truth = b.truth as f64;
        // small slack for the bias of the conditional fanout draw
        assert!((mean - truth).abs() <= 4.0 * se + 0.02 * truth, "mean {mean} se {se} truth {truth}");
    }
}

#[test]
fn estimates_are_deterministic_per_seed() {
    let (db, qs, h, set) = setup(SynthSpec { queries: 20, ..SynthSpec::default() });
    for combine in [Combine::StepMean, Combine::Separated, Combine::SamplePath] {
        let config = InferenceConfig { samples: 500, seed: 11, combine, ..Default::default() };
        for b in &qs {
            let a = estimate_cardinality(&b.query, &h, &db, &set, &config).unwrap();
            let c = estimate_cardinality(&b.query, &h, &db, &set, &config).unwrap();
            assert_eq!(a.cardinality.to_bits(), c.cardinality.to_bits());
        }
    }
}

#[test]
fn widening_a_single_range_never_lowers_the_estimate() {
    let (db, _, h, set) = setup(SynthSpec { queries: 1, ..SynthSpec::default() });
    let t = db.schema.table_id("T").unwrap();
    let col = db.schema.table(t).column_index("a").unwrap();
    let graph = QueryGraph::new(&db.schema, vec![t], vec![]).unwrap();
    let domain = db.column(t, col).domain_size() as u32;
    let config = InferenceConfig { samples: 50, seed: 2, ..Default::default() };
    let mut last = 0.0;
    for hi in 1..domain {
        let q = Query::new(graph.clone(), BTreeMap::from([((t, col), CodeSet::interval(1, hi))]));
        let est = estimate_cardinality(&q, &h, &db, &set, &config).unwrap().cardinality;
        assert!(est >= last - 1e-9, "{est} after {last}");
        assert!((est - true_cardinality(&q, &db) as f64).abs() < 1e-6);
        last = est;
    }
}

#[test]
fn ablation_agrees_on_single_subschema_queries() {
    let (db, qs, h, set) = setup(SynthSpec { queries: 40, ..SynthSpec::default() });
    for b in qs.iter().filter(|b| spans(&h, &db, &b.query) == 1) {
        let on = InferenceConfig { samples: 300, seed: 5, ..Default::default() };
        let off = InferenceConfig { condition_across: false, ..on.clone() };
        let a = estimate_cardinality(&b.query, &h, &db, &set, &on).unwrap().cardinality;
        let c = estimate_cardinality(&b.query, &h, &db, &set, &off).unwrap().cardinality;
        assert_eq!(a.to_bits(), c.to_bits());
    }
    for b in qs.iter().filter(|b| spans(&h, &db, &b.query) > 1) {
        let off = InferenceConfig { samples: 300, seed: 5, condition_across: false, ..Default::default() };
        let c = estimate_cardinality(&b.query, &h, &db, &set, &off).unwrap().cardinality;
        assert!(c.is_finite() && c >= 0.0);
    }
}

#[test]
fn flag_only_pass_returns_the_exact_presence_fraction() {
    let (db, _, h, _) = setup(SynthSpec { queries: 1, ..SynthSpec::default() });
    for sub in &h.hyperedges {
        let rel = materialize(&db, sub, DEFAULT_MATERIALIZE_THRESHOLD).unwrap();
        let layout = rel.layout.clone();
        let flags: Vec<usize> = sub.vertices.iter().map(|t| layout.flag_index(*t).unwrap()).collect();
        let present = (0..rel.columns[0].len())
            .filter(|r| flags.iter().all(|f| rel.columns[*f][*r] == 1))
            .count() as f64;
        let expected = present / rel.size as f64;
        let est = ExactEstimator::new(rel);
        let request = StepRequest { flags, ..Default::default() };
        let mut r = rng(3);
        let out = estimate_n(&est, &request, fresh_inputs(est.layout(), 16), &mut r).unwrap();
        for p in out.probabilities {
            assert!((p - expected).abs() < 1e-12, "{p} vs {expected}");
        }
    }
}

#[test]
fn zero_samples_and_missing_estimators_are_errors() {
    let (db, qs, h, set) = setup(SynthSpec { queries: 5, ..SynthSpec::default() });
    let zero = InferenceConfig { samples: 0, ..Default::default() };
    assert!(matches!(
        estimate_cardinality(&qs[0].query, &h, &db, &set, &zero),
        Err(Error::InvalidArgument(_))
    ));
    let empty = EstimatorSet::new();
    assert!(matches!(
        estimate_cardinality(&qs[0].query, &h, &db, &empty, &InferenceConfig::default()),
        Err(Error::MissingEstimator(_))
    ));
}
