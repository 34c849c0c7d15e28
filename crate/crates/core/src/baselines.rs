//! Reference estimators: independent per-attribute histograms with uniform
//! joins, and a single estimator over the universal relation.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::DensityEstimator;
use crate::inference::{estimate_n, fresh_inputs, StepRequest};
use crate::ingest::{Code, Column, Database};
use crate::query::{CodeSet, Query};
use crate::schema::{EdgeId, SchemaGraph, TableId};

pub const DEFAULT_BINS: usize = 100;

/// Equi-depth histogram over the non-NULL codes of one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Inclusive code ranges, ascending and disjoint.
    pub bounds: Vec<(Code, Code)>,
    /// Fraction of non-NULL rows per bin.
    pub masses: Vec<f64>,
    pub null_fraction: f64,
    /// Distinct non-NULL values.
    pub distinct: usize,
}

impl Histogram {
    pub fn build(column: &Column, bins: usize) -> Histogram {
        let domain = column.domain_size();
        let mut freq = vec![0u64; domain];
        for &c in column.codes() {
            freq[c as usize] += 1;
        }
        let rows = column.codes().len() as u64;
        let non_null = rows - freq[0];
        let distinct = freq[1..].iter().filter(|f| **f > 0).count();
        let mut bounds = Vec::new();
        let mut masses = Vec::new();
        if non_null > 0 {
            let bins = bins.clamp(1, distinct.max(1)) as u64;
            let mut start = None;
            let (mut acc, mut cum) = (0u64, 0u64);
            for code in 1..domain {
                if freq[code] == 0 {
                    continue;
                }
                start.get_or_insert(code as Code);
                acc += freq[code];
                cum += freq[code];
                let target = (bounds.len() as u64 + 1) * non_null / bins;
                if cum >= target {
                    bounds.push((start.take().expect("bin start"), code as Code));
                    masses.push(acc as f64 / non_null as f64);
                    acc = 0;
                }
            }
        }
        Histogram {
            bounds,
            masses,
            null_fraction: if rows == 0 { 0.0 } else { freq[0] as f64 / rows as f64 },
            distinct,
        }
    }

    /// Estimated fraction of rows whose code lies in `range`, assuming
    /// values spread evenly over the codes of each bin.
    pub fn selectivity(&self, range: &CodeSet) -> f64 {
        let mut p = 0.0;
        for (&(lo, hi), m) in self.bounds.iter().zip(&self.masses) {
            let width = (hi - lo + 1) as f64;
            let hit = range.intersect(&CodeSet::interval(lo, hi)).len() as f64;
            p += m * hit / width;
        }
        p * (1.0 - self.null_fraction)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSet {
    pub row_counts: Vec<usize>,
    pub histograms: BTreeMap<(TableId, usize), Histogram>,
}

impl HistogramSet {
    pub fn build(db: &Database, bins: usize) -> HistogramSet {
        let mut histograms = BTreeMap::new();
        for t in db.schema.table_ids() {
            for (c, col) in db.table(t).columns.iter().enumerate() {
                histograms.insert((t, c), Histogram::build(col, bins));
            }
        }
        HistogramSet {
            row_counts: db.tables.iter().map(|t| t.row_count).collect(),
            histograms,
        }
    }

    fn get(&self, schema: &SchemaGraph, t: TableId, c: usize) -> Result<&Histogram> {
        self.histograms
            .get(&(t, c))
            .ok_or_else(|| Error::UnknownAttribute(format!("no histogram for {}", schema.column_ref(t, c))))
    }
}

/// Product of table sizes and predicate selectivities, divided by the
/// number of distinct one-side key values per join.
pub fn estimate_independent(query: &Query, histograms: &HistogramSet, schema: &SchemaGraph) -> Result<f64> {
    let mut c: f64 = query
        .graph
        .tables()
        .iter()
        .map(|t| histograms.row_counts.get(t.0).copied().unwrap_or(0) as f64)
        .product();
    for (&(t, col), range) in &query.predicates {
        c *= histograms.get(schema, t, col)?.selectivity(range);
    }
    for &e in query.graph.edges() {
        let fk = schema.edge(e);
        let d = histograms.get(schema, fk.one, fk.one_column)?.distinct;
        c /= d.max(1) as f64;
    }
    Ok(c)
}

/// Edges outside the query whose endpoint nearer the query is the one side.
/// Each such edge replicates the query's rows in the universal relation.
pub fn downscale_edges(query: &Query, schema: &SchemaGraph) -> Vec<EdgeId> {
    let mut dist: BTreeMap<TableId, usize> = query.graph.tables().iter().map(|t| (*t, 0)).collect();
    let mut queue: VecDeque<TableId> = query.graph.tables().iter().copied().collect();
    while let Some(t) = queue.pop_front() {
        let d = dist[&t];
        for e in schema.edge_ids() {
            let fk = schema.edge(e);
            for (a, b) in [(fk.one, fk.many), (fk.many, fk.one)] {
                if a == t && !dist.contains_key(&b) {
                    dist.insert(b, d + 1);
                    queue.push_back(b);
                }
            }
        }
    }
    schema
        .edge_ids()
        .filter(|e| !query.graph.contains_edge(*e))
        .filter(|e| {
            let fk = schema.edge(*e);
            matches!((dist.get(&fk.one), dist.get(&fk.many)), (Some(u), Some(w)) if u < w)
        })
        .collect()
}

/// Estimate from one estimator over the whole schema's full outer join:
/// the relation size times the mean, over progressive samples, of the
/// predicate-and-flag probability divided by the sampled replication
/// fanouts of edges the query leaves out.
pub fn estimate_universal(
    query: &Query,
    db: &Database,
    estimator: &dyn DensityEstimator,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let schema = &db.schema;
    if !schema.is_undirected_tree() {
        return Err(Error::Unsupported("the universal-relation baseline needs a tree schema".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one progressive sample is required".into()));
    }
    let layout = estimator.layout();
    let missing = |what: String| Error::UnknownAttribute(format!("{what} in {}", layout.name));
    let mut predicates = Vec::new();
    for (&(t, c), range) in &query.predicates {
        let a = layout.base_index(t, c).ok_or_else(|| missing(schema.column_ref(t, c)))?;
        if range.len_within(layout.attrs[a].domain) < layout.attrs[a].domain {
            predicates.push((a, range));
        }
    }
    predicates.sort_by_key(|(a, r)| (r.len_within(layout.attrs[*a].domain), *a));
    let flags = query
        .graph
        .tables()
        .iter()
        .map(|t| layout.flag_index(*t).ok_or_else(|| missing(format!("flag of {}", schema.table(*t).name))))
        .collect::<Result<Vec<_>>>()?;
    let fanouts = downscale_edges(query, schema)
        .into_iter()
        .map(|e| layout.fanout_index(e).ok_or_else(|| missing(schema.edge_label(e))))
        .collect::<Result<Vec<_>>>()?;
    let request = StepRequest { predicates, flags, fanouts, common: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outcome = estimate_n(estimator, &request, fresh_inputs(layout, samples), &mut rng)?;
    let total: f64 = (0..samples)
        .map(|i| {
            outcome
                .fanouts
                .iter()
                .fold(outcome.probabilities[i], |acc, f| acc / f[i].max(1) as f64)
        })
        .sum();
    Ok(estimator.relation_size() as f64 * total / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::ExactEstimator;
    use crate::ingest::{Table, Value};
    use crate::joiner::{true_cardinality, TreeJoin, DEFAULT_MATERIALIZE_THRESHOLD};
    use crate::schema::{ColumnDecl, ColumnKind, EdgeConfig, QueryGraph, SchemaConfig, TableDecl};

    fn two_tables() -> Database {
        let col = |n: &str| ColumnDecl { name: n.into(), kind: ColumnKind::Integer };
        let schema = SchemaGraph::from_config(&SchemaConfig {
            tables: vec![
                TableDecl { name: "A".into(), columns: vec![col("id"), col("x")] },
                TableDecl { name: "B".into(), columns: vec![col("a_id"), col("y")] },
            ],
            edges: vec![EdgeConfig { one: "A.id".into(), many: "B.a_id".into() }],
        })
        .unwrap();
        let int = |v: i64| Some(Value::Int(v));
        let a: Vec<_> = (0..100).map(|i| vec![int(i % 50), int(i % 4)]).collect();
        let b: Vec<_> = (0..100).map(|i| vec![int(i % 7), int(i)]).collect();
        let tables = vec![
            Table::from_rows(&schema.tables()[0], &a),
            Table::from_rows(&schema.tables()[1], &b),
        ];
        Database::new(schema, tables).unwrap()
    }

    #[test]
    fn uniform_join_arithmetic() {
        let db = two_tables();
        let h = HistogramSet::build(&db, DEFAULT_BINS);
        let g = QueryGraph::new(&db.schema, vec![TableId(0), TableId(1)], vec![EdgeId(0)]).unwrap();
        let q = Query::new(g, BTreeMap::new());
        assert_eq!(estimate_independent(&q, &h, &db.schema).unwrap(), 100.0 * 100.0 / 50.0);

        // x = 0 holds for a quarter of A
        let g = QueryGraph::new(&db.schema, vec![TableId(0)], vec![]).unwrap();
        let q = Query::new(g, BTreeMap::from([((TableId(0), 1), CodeSet::from_codes([1]))]));
        assert!((estimate_independent(&q, &h, &db.schema).unwrap() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_bins_are_monotone_and_normalized() {
        let db = two_tables();
        for bins in [1, 3, 10, 100] {
            for t in &db.tables {
                for col in &t.columns {
                    let h = Histogram::build(col, bins);
                    assert!(h.bounds.len() <= bins);
                    assert!(h.bounds.windows(2).all(|w| w[0].1 < w[1].0));
                    assert!(h.bounds.iter().all(|(lo, hi)| lo <= hi));
                    assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    let all = CodeSet::interval(1, col.domain_size() as Code);
                    assert!((h.selectivity(&all) - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn equi_depth_balances_skew() {
        let db = two_tables();
        let h = Histogram::build(&db.tables[1].columns[1], 4);
        assert_eq!(h.bounds.len(), 4);
        assert!(h.masses.iter().all(|m| (m - 0.25).abs() < 1e-9));
        // exact for ranges aligned with bins
        let (lo, hi) = h.bounds[1];
        assert!((h.selectivity(&CodeSet::interval(lo, hi)) - 0.25).abs() < 1e-12);
    }

    fn fig1_db() -> Database {
        let spec = crate::evaluation::SynthSpec {
            rows_t: 30,
            rows_v: 20,
            rows_s: 60,
            rows_u: 60,
            rows_w: 60,
            domain: 4,
            queries: 0,
            ..Default::default()
        };
        crate::evaluation::generate_synthetic(&spec, 2).unwrap().0
    }

    #[test]
    fn downscaled_edges_point_away_from_the_query() {
        let db = fig1_db();
        let s = &db.schema;
        let id = |n: &str| s.table_id(n).unwrap();
        let single = Query::new(QueryGraph::new(s, vec![id("T")], vec![]).unwrap(), BTreeMap::new());
        let labels: Vec<String> = downscale_edges(&single, s).iter().map(|e| s.edge_label(*e)).collect();
        assert_eq!(labels, vec!["T.id -> S.t_id", "T.id -> U.t_id", "T.id -> W.t_id"]);

        let u = Query::new(QueryGraph::new(s, vec![id("U")], vec![]).unwrap(), BTreeMap::new());
        let labels: Vec<String> = downscale_edges(&u, s).iter().map(|e| s.edge_label(*e)).collect();
        assert_eq!(labels, vec!["T.id -> S.t_id", "T.id -> W.t_id"]);

        let v = Query::new(QueryGraph::new(s, vec![id("V")], vec![]).unwrap(), BTreeMap::new());
        let labels: Vec<String> = downscale_edges(&v, s).iter().map(|e| s.edge_label(*e)).collect();
        assert_eq!(labels, vec!["T.id -> S.t_id", "T.id -> W.t_id", "V.id -> U.v_id"]);
    }

    #[test]
    fn exact_universal_estimate_matches_truth() {
        let db = fig1_db();
        let join = TreeJoin::universal(&db).unwrap();
        let relation = join.materialize(&db, DEFAULT_MATERIALIZE_THRESHOLD).unwrap();
        let exact = ExactEstimator::new(relation);
        let s = &db.schema;
        let id = |n: &str| s.table_id(n).unwrap();
        let all_edges: Vec<EdgeId> = s.edge_ids().collect();
        let queries = [
            QueryGraph::new(s, s.table_ids().collect(), all_edges).unwrap(),
            QueryGraph::new(s, vec![id("T")], vec![]).unwrap(),
            QueryGraph::new(s, vec![id("U")], vec![]).unwrap(),
            QueryGraph::new(s, vec![id("T"), id("U")], vec![EdgeId(1)]).unwrap(),
        ];
        for g in queries {
            let q = Query::new(g, BTreeMap::new());
            let truth = true_cardinality(&q, &db) as f64;
            let est = estimate_universal(&q, &db, &exact, 20_000, 1).unwrap();
            assert!((est / truth - 1.0).abs() < 0.05, "{} vs {truth} for {}", est, q.describe(s));
        }
    }
}
