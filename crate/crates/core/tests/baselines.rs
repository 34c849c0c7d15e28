mod common;

use cincard::baselines::{downscale_edges, estimate_independent, estimate_universal, HistogramSet, DEFAULT_BINS};
use cincard::estimator::ExactEstimator;
use cincard::evaluation::{q_error, SynthSpec};
use cincard::ingest::Database;
use cincard::joiner::{TreeJoin, DEFAULT_MATERIALIZE_THRESHOLD};
use cincard::schema::{partition, select_subschemas};
use common::*;

fn histogram_errors(db: &Database, qs: &[Bound]) -> Vec<f64> {
    let hist = HistogramSet::build(db, DEFAULT_BINS);
    qs.iter()
        .map(|b| q_error(b.truth as f64, estimate_independent(&b.query, &hist, &db.schema).unwrap()))
        .collect()
}

fn independent_spec() -> SynthSpec {
    SynthSpec {
        within_correlation: 0.0,
        cross_correlation: 0.0,
        fanout_skew: 0.0,
        queries: 80,
        ..SynthSpec::default()
    }
}

#[test]
fn histograms_are_accurate_on_independent_uniform_data() {
    let (db, qs) = synthetic(&independent_spec(), 21);
    let m = median(&histogram_errors(&db, &qs));
    assert!(m <= 1.3, "median Q-Error {m}");
}

#[test]
fn histograms_lose_accuracy_on_correlated_data() {
    let (db, qs) = synthetic(&independent_spec(), 21);
    let plain = median(&histogram_errors(&db, &qs));
    let correlated = SynthSpec { within_correlation: 1.0, cross_correlation: 1.0, fanout_skew: 1.0, ..independent_spec() };
    let (db, qs) = synthetic(&correlated, 21);
    let skewed = median(&histogram_errors(&db, &qs));
    assert!(skewed > plain, "correlated {skewed} vs independent {plain}");
}

#[test]
fn universal_relation_matches_truth_on_single_subschema_queries() {
    let (db, qs) = synthetic(&SynthSpec { queries: 60, ..SynthSpec::default() }, 22);
    let h = partition(&db.schema);
    let rel = TreeJoin::universal(&db).unwrap().materialize(&db, DEFAULT_MATERIALIZE_THRESHOLD).unwrap();
    let est = ExactEstimator::new(rel);
    let errors: Vec<f64> = qs
        .iter()
        .filter(|b| select_subschemas(&h, &db.schema, &b.query.graph).unwrap().len() == 1)
        .map(|b| q_error(b.truth as f64, estimate_universal(&b.query, &db, &est, 20_000, 4).unwrap()))
        .collect();
    assert!(errors.len() >= 10);
    let m = median(&errors);
    assert!(m <= 1.1, "median Q-Error {m}");
}

#[test]
fn full_schema_queries_need_no_downscaling() {
    let (db, qs) = synthetic(&SynthSpec { queries: 30, ..SynthSpec::default() }, 23);
    let n = db.schema.num_tables();
    for b in qs.iter().filter(|b| b.query.graph.tables().len() == n) {
        assert!(downscale_edges(&b.query, &db.schema).is_empty());
    }
}
