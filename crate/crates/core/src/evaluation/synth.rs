//! Seeded synthetic data over the five-table star-of-stars schema
//! (T and V on the one side; S, U, W referencing them) and a workload of
//! tree-shaped queries with stored true cardinalities.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{bind_query, Database, JoinSpec, PredicateSpec, QuerySpec, Table, Value, Workload};
use crate::joiner::true_cardinality;
use crate::schema::{ColumnDecl, ColumnKind, EdgeConfig, SchemaConfig, SchemaGraph, TableDecl};

const MAX_ROWS: usize = 10_000;
const RETRIES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub rows_t: usize,
    pub rows_v: usize,
    pub rows_s: usize,
    pub rows_u: usize,
    pub rows_w: usize,
    /// Values of every non-key attribute are drawn from `1..=domain`.
    pub domain: i64,
    /// Probability that a table's `b` copies its own `a`.
    pub within_correlation: f64,
    /// Probability that a referencing row copies its parent's `a`.
    pub cross_correlation: f64,
    /// Zipf exponent of the parent choice; 0 is uniform.
    pub fanout_skew: f64,
    /// Probability that a foreign key is NULL.
    pub null_fk_rate: f64,
    pub queries: usize,
    pub max_tables: usize,
    pub max_predicates: usize,
    /// Relative weights of equality, range and IN predicates.
    pub op_mix: [f64; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            rows_t: 200,
            rows_v: 100,
            rows_s: 1000,
            rows_u: 1000,
            rows_w: 1000,
            domain: 10,
            within_correlation: 0.5,
            cross_correlation: 0.5,
            fanout_skew: 0.5,
            null_fk_rate: 0.05,
            queries: 50,
            max_tables: 5,
            max_predicates: 3,
            op_mix: [1.0, 1.0, 1.0],
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let rows = [self.rows_t, self.rows_v, self.rows_s, self.rows_u, self.rows_w];
        if rows.iter().any(|r| *r == 0 || *r > MAX_ROWS) {
            return Err(Error::InvalidArgument(format!("row counts must lie in 1..={MAX_ROWS}")));
        }
        if !(1..=5).contains(&self.max_tables) {
            return Err(Error::InvalidArgument(format!(
                "queries over {} tables do not fit the 5-table schema",
                self.max_tables
            )));
        }
        if self.domain < 1 {
            return Err(Error::InvalidArgument("attribute domain must be positive".into()));
        }
        for (name, p) in [
            ("within_correlation", self.within_correlation),
            ("cross_correlation", self.cross_correlation),
            ("null_fk_rate", self.null_fk_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.fanout_skew < 0.0 || self.op_mix.iter().any(|w| *w < 0.0) || self.op_mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("skew and operator weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// The five-table schema used by the generator.
pub fn synthetic_schema() -> SchemaGraph {
    let col = |n: &str| ColumnDecl { name: n.into(), kind: ColumnKind::Integer };
    let table = |n: &str, cols: &[&str]| TableDecl { name: n.into(), columns: cols.iter().map(|c| col(c)).collect() };
    let edge = |one: &str, many: &str| EdgeConfig { one: one.into(), many: many.into() };
    let config = SchemaConfig {
        tables: vec![
            table("S", &["t_id", "a", "b"]),
            table("T", &["id", "a", "b"]),
            table("U", &["t_id", "v_id", "a", "b"]),
            table("V", &["id", "a", "b"]),
            table("W", &["t_id", "a", "b"]),
        ],
        edges: vec![
            edge("T.id", "S.t_id"),
            edge("T.id", "U.t_id"),
            edge("T.id", "W.t_id"),
            edge("V.id", "U.v_id"),
        ],
    };
    SchemaGraph::from_config(&config).expect("static schema is valid")
}

struct Gen<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn value(&mut self) -> i64 {
        self.rng.random_range(1..=self.spec.domain)
    }

    fn copy_or_draw(&mut self, p: f64, source: Option<i64>) -> i64 {
        match source {
            Some(v) if self.rng.random::<f64>() < p => v,
            _ => self.value(),
        }
    }

    /// Parent table with columns id, a, b.
    fn parent(&mut self, rows: usize) -> Vec<[i64; 3]> {
        (0..rows)
            .map(|i| {
                let a = self.value();
                let b = self.copy_or_draw(self.spec.within_correlation, Some(a));
                [i as i64 + 1, a, b]
            })
            .collect()
    }

    /// Draws parent rows with Zipf weights over a shuffled order.
    fn chooser(&mut self, rows: usize) -> (Vec<usize>, WeightedIndex<f64>) {
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(&mut self.rng);
        let weights = (0..rows).map(|r| 1.0 / ((r + 1) as f64).powf(self.spec.fanout_skew));
        (order, WeightedIndex::new(weights).expect("positive weights"))
    }

    fn fk(&mut self, chooser: &(Vec<usize>, WeightedIndex<f64>)) -> Option<usize> {
        if self.rng.random::<f64>() < self.spec.null_fk_rate {
            return None;
        }
        Some(chooser.0[chooser.1.sample(&mut self.rng)])
    }
}

fn int_rows(rows: impl IntoIterator<Item = Vec<Option<i64>>>) -> Vec<Vec<Option<Value>>> {
    rows.into_iter()
        .map(|r| r.into_iter().map(|v| v.map(Value::Int)).collect())
        .collect()
}

fn generate_tables(spec: &SynthSpec, g: &mut Gen<'_>) -> Vec<Vec<Vec<Option<Value>>>> {
    let t = g.parent(spec.rows_t);
    let v = g.parent(spec.rows_v);
    let t_pick = g.chooser(spec.rows_t);
    let v_pick = g.chooser(spec.rows_v);
    let cross = spec.cross_correlation;
    let within = spec.within_correlation;

    let child = |g: &mut Gen<'_>, rows: usize| -> Vec<Vec<Option<i64>>> {
        (0..rows)
            .map(|_| {
                let p = g.fk(&t_pick);
                let a = g.copy_or_draw(cross, p.map(|r| t[r][1]));
                let b = g.copy_or_draw(within, Some(a));
                vec![p.map(|r| t[r][0]), Some(a), Some(b)]
            })
            .collect()
    };
    let s = child(g, spec.rows_s);
    let w = child(g, spec.rows_w);
    let u: Vec<Vec<Option<i64>>> = (0..spec.rows_u)
        .map(|_| {
            let pt = g.fk(&t_pick);
            let pv = g.fk(&v_pick);
            let a = g.copy_or_draw(cross, pt.map(|r| t[r][1]));
            let b = match pv {
                Some(r) if g.rng.random::<f64>() < cross => v[r][1],
                _ => g.copy_or_draw(within, Some(a)),
            };
            vec![pt.map(|r| t[r][0]), pv.map(|r| v[r][0]), Some(a), Some(b)]
        })
        .collect();
    let parent_rows = |p: &[[i64; 3]]| p.iter().map(|r| r.iter().map(|x| Some(*x)).collect()).collect::<Vec<_>>();
    vec![int_rows(s), int_rows(parent_rows(&t)), int_rows(u), int_rows(parent_rows(&v)), int_rows(w)]
}

fn random_query(spec: &SynthSpec, db: &Database, k: usize, rng: &mut ChaCha8Rng) -> QuerySpec {
    let schema = &db.schema;
    let mut tables = BTreeSet::from([schema.table_ids().nth(rng.random_range(0..schema.num_tables())).expect("table")]);
    let mut joins = Vec::new();
    while tables.len() < k {
        let frontier: Vec<_> = schema
            .edge_ids()
            .filter(|e| {
                let fk = schema.edge(*e);
                tables.contains(&fk.one) != tables.contains(&fk.many)
            })
            .collect();
        let e = frontier[rng.random_range(0..frontier.len())];
        let fk = schema.edge(e);
        tables.insert(fk.one);
        tables.insert(fk.many);
        let label = |t, c| schema.column_ref(t, c);
        joins.push(JoinSpec { one: label(fk.one, fk.one_column), many: label(fk.many, fk.many_column) });
    }

    let mut columns: Vec<String> = Vec::new();
    for t in &tables {
        let decl = schema.table(*t);
        for (c, col) in decl.columns.iter().enumerate() {
            if col.name == "a" || col.name == "b" {
                columns.push(schema.column_ref(*t, c));
            }
        }
    }
    columns.shuffle(rng);
    let count = rng.random_range(0..=spec.max_predicates.min(columns.len()));
    let ops = WeightedIndex::new(spec.op_mix).expect("validated weights");
    let d = spec.domain;
    let mut predicates = Vec::new();
    for column in columns.into_iter().take(count) {
        let (t, c) = schema.resolve(&column).expect("generated column");
        let col = db.column(t, c);
        let observed = |rng: &mut ChaCha8Rng| -> i64 {
            let r = rng.random_range(0..col.codes().len().max(1));
            match col.value(r) {
                Some(Value::Int(v)) => *v,
                _ => rng.random_range(1..=d),
            }
        };
        let pred = match ops.sample(rng) {
            0 => PredicateSpec { column, op: "=".into(), values: vec![observed(rng).into()] },
            1 => {
                let lo = observed(rng);
                let hi = (lo + rng.random_range(0..=d / 2)).min(d);
                PredicateSpec { column, op: "BETWEEN".into(), values: vec![lo.into(), hi.into()] }
            }
            _ => {
                let n = rng.random_range(2..=3);
                let mut vals: Vec<i64> = (0..n).map(|_| observed(rng)).collect();
                vals.sort_unstable();
                vals.dedup();
                PredicateSpec { column, op: "IN".into(), values: vals.into_iter().map(Into::into).collect() }
            }
        };
        predicates.push(pred);
    }
    let extra = if joins.is_empty() {
        tables.iter().map(|t| schema.table(*t).name.clone()).collect()
    } else {
        Vec::new()
    };
    QuerySpec { joins, predicates, true_cardinality: None, tables: extra }
}

/// Generates the dataset and a workload whose queries cycle through
/// 1..=max_tables joined tables. Queries with an empty result are redrawn.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<(Database, Workload)> {
    spec.validate()?;
    let schema = synthetic_schema();
    let mut g = Gen { spec, rng: ChaCha8Rng::seed_from_u64(seed) };
    let rows = generate_tables(spec, &mut g);
    let tables = schema
        .tables()
        .iter()
        .zip(&rows)
        .map(|(decl, r)| Table::from_rows(decl, r))
        .collect();
    let db = Database::new(schema, tables)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut queries = Vec::with_capacity(spec.queries);
    for i in 0..spec.queries {
        let k = 1 + i % spec.max_tables;
        let mut chosen = None;
        for _ in 0..RETRIES {
            let mut q = random_query(spec, &db, k, &mut rng);
            let card = true_cardinality(&bind_query(&q, &db)?, &db);
            if card > 0 {
                q.true_cardinality = Some(card as u64);
                chosen = Some(q);
                break;
            }
        }
        let mut q = match chosen {
            Some(q) => q,
            None => {
                let mut q = random_query(spec, &db, k, &mut rng);
                q.predicates.clear();
                q
            }
        };
        if q.true_cardinality.is_none() {
            q.true_cardinality = Some(true_cardinality(&bind_query(&q, &db)?, &db) as u64);
        }
        queries.push(q);
    }
    Ok((db, Workload { queries }))
}
