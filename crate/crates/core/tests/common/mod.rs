#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cincard::evaluation::{generate_synthetic, SynthSpec};
use cincard::ingest::{bind_query, Database};
use cincard::query::Query;
use cincard::schema::{ColumnDecl, ColumnKind, EdgeConfig, SchemaConfig, SchemaGraph, TableDecl, TableId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn int_cols(names: &[&str]) -> Vec<ColumnDecl> {
    names
        .iter()
        .map(|n| ColumnDecl { name: n.to_string(), kind: ColumnKind::Integer })
        .collect()
}

/// posts and postlinks joined twice, once per direction of the link.
pub fn posts_schema() -> SchemaGraph {
    SchemaGraph::from_config(&SchemaConfig {
        tables: vec![
            TableDecl { name: "posts".into(), columns: int_cols(&["id", "score"]) },
            TableDecl { name: "postlinks".into(), columns: int_cols(&["post_id", "related_post_id"]) },
        ],
        edges: vec![
            EdgeConfig { one: "posts.id".into(), many: "postlinks.post_id".into() },
            EdgeConfig { one: "posts.id".into(), many: "postlinks.related_post_id".into() },
        ],
    })
    .unwrap()
}

/// Random connected DAG with `n` tables. Edges point from lower to higher
/// index; a random spanning tree is extended by extra and parallel edges.
pub fn random_dag(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> SchemaGraph {
    let mut pairs = Vec::new();
    for j in 1..n {
        let i = rng.random_range(0..j);
        pairs.push((i, j));
    }
    for _ in 0..extra {
        let j = rng.random_range(1..n);
        let i = rng.random_range(0..j);
        pairs.push((i, j));
    }
    config_from_pairs(n, &pairs)
}

/// Schema whose edges are `(one, many)` index pairs; every edge gets its
/// own foreign-key column on the many side.
pub fn config_from_pairs(n: usize, pairs: &[(usize, usize)]) -> SchemaGraph {
    let mut fks: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut edges = Vec::new();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let col = format!("fk{k}");
        edges.push(EdgeConfig { one: format!("R{i}.id"), many: format!("R{j}.{col}") });
        fks[j].push(col);
    }
    let tables = (0..n)
        .map(|i| {
            let mut cols = vec!["id".to_string(), "a".to_string()];
            cols.extend(fks[i].iter().cloned());
            let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
            TableDecl { name: format!("R{i}"), columns: int_cols(&refs) }
        })
        .collect();
    SchemaGraph::from_config(&SchemaConfig { tables, edges }).unwrap()
}

/// Undirected connectivity by flood fill over table indices.
pub fn flood_connected(schema: &SchemaGraph) -> bool {
    let n = schema.num_tables();
    if n == 0 {
        return true;
    }
    let mut seen = BTreeSet::from([0usize]);
    let mut stack = vec![0usize];
    while let Some(t) = stack.pop() {
        for e in schema.edge_ids() {
            let fk = schema.edge(e);
            for (a, b) in [(fk.one.0, fk.many.0), (fk.many.0, fk.one.0)] {
                if a == t && seen.insert(b) {
                    stack.push(b);
                }
            }
        }
    }
    seen.len() == n
}

pub struct Bound {
    pub query: Query,
    pub truth: u64,
}

pub fn synthetic(spec: &SynthSpec, seed: u64) -> (Database, Vec<Bound>) {
    let (db, w) = generate_synthetic(spec, seed).unwrap();
    let queries = w
        .queries
        .iter()
        .map(|q| Bound { query: bind_query(q, &db).unwrap(), truth: q.true_cardinality.unwrap() })
        .collect();
    (db, queries)
}

pub fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Minimum C_out cost over every bushy plan on the tables of `tables`,
/// where a join may only combine two connected halves linked by an edge.
pub fn exhaustive_min_cost(
    tables: &BTreeSet<TableId>,
    edges: &[(TableId, TableId)],
    card: &dyn Fn(&BTreeSet<TableId>) -> f64,
    memo: &mut BTreeMap<BTreeSet<TableId>, f64>,
) -> f64 {
    if tables.len() == 1 {
        return 0.0;
    }
    if let Some(c) = memo.get(tables) {
        return *c;
    }
    let items: Vec<TableId> = tables.iter().copied().collect();
    let mut best = f64::INFINITY;
    // every split with the first table on the left
    for bits in 0u64..(1 << (items.len() - 1)) {
        let left: BTreeSet<TableId> = std::iter::once(items[0])
            .chain((1..items.len()).filter(|i| bits & (1 << (i - 1)) != 0).map(|i| items[i]))
            .collect();
        let right: BTreeSet<TableId> = tables.difference(&left).copied().collect();
        if right.is_empty() || !is_connected(&left, edges) || !is_connected(&right, edges) {
            continue;
        }
        let cost = exhaustive_min_cost(&left, edges, card, memo) + exhaustive_min_cost(&right, edges, card, memo) + card(tables);
        best = best.min(cost);
    }
    memo.insert(tables.clone(), best);
    best
}

pub fn is_connected(set: &BTreeSet<TableId>, edges: &[(TableId, TableId)]) -> bool {
    let Some(&first) = set.iter().next() else { return false };
    let mut seen = BTreeSet::from([first]);
    let mut stack = vec![first];
    while let Some(t) = stack.pop() {
        for &(a, b) in edges {
            for (x, y) in [(a, b), (b, a)] {
                if x == t && set.contains(&y) && seen.insert(y) {
                    stack.push(y);
                }
            }
        }
    }
    seen.len() == set.len()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
