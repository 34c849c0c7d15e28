//! Bushy dynamic-programming join ordering under the C_out cost model.
//!
//! The cost of a plan is the sum of the cardinalities of its join nodes.
//! Subsets of query tables are bitmasks over `query.graph.tables()`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::Database;
use crate::query::Query;
use crate::schema::{SchemaGraph, TableId};

/// Supplies cardinalities of connected subqueries.
pub trait CardinalitySource {
    fn cardinality(&self, subquery: &Query) -> Result<f64>;
}

impl<F: Fn(&Query) -> Result<f64>> CardinalitySource for F {
    fn cardinality(&self, subquery: &Query) -> Result<f64> {
        self(subquery)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PlanNode {
    Leaf {
        table: TableId,
        cardinality: f64,
    },
    Join {
        left: Box<PlanNode>,
        right: Box<PlanNode>,
        tables: u64,
        cardinality: f64,
    },
}

impl PlanNode {
    pub fn tables(&self) -> u64 {
        match self {
            PlanNode::Leaf { .. } => unreachable!("leaf masks are resolved by the caller"),
            PlanNode::Join { tables, .. } => *tables,
        }
    }

    pub fn cardinality(&self) -> f64 {
        match self {
            PlanNode::Leaf { cardinality, .. } | PlanNode::Join { cardinality, .. } => *cardinality,
        }
    }

    /// Join nodes as (left mask, right mask) pairs, bottom-up.
    pub fn joins(&self, tables: &[TableId]) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        self.collect_joins(tables, &mut out);
        out
    }

    fn mask(&self, tables: &[TableId]) -> u64 {
        match self {
            PlanNode::Leaf { table, .. } => 1 << tables.iter().position(|t| t == table).expect("query table"),
            PlanNode::Join { tables: m, .. } => *m,
        }
    }

    fn collect_joins(&self, tables: &[TableId], out: &mut Vec<(u64, u64)>) {
        if let PlanNode::Join { left, right, .. } = self {
            left.collect_joins(tables, out);
            right.collect_joins(tables, out);
            out.push((left.mask(tables), right.mask(tables)));
        }
    }

    pub fn render(&self, schema: &SchemaGraph) -> String {
        match self {
            PlanNode::Leaf { table, .. } => schema.table(*table).name.clone(),
            PlanNode::Join { left, right, .. } => {
                format!("({} ⋈ {})", left.render(schema), right.render(schema))
            }
        }
    }
}

/// Adjacency of query tables as bitmasks.
pub(crate) fn adjacency(query: &Query, schema: &SchemaGraph) -> Vec<u64> {
    let tables = query.graph.tables();
    let pos = |t: TableId| tables.iter().position(|x| *x == t).expect("query table");
    let mut adj = vec![0u64; tables.len()];
    for &e in query.graph.edges() {
        let fk = schema.edge(e);
        let (a, b) = (pos(fk.one), pos(fk.many));
        adj[a] |= 1 << b;
        adj[b] |= 1 << a;
    }
    adj
}

pub(crate) fn connected(mask: u64, adj: &[u64]) -> bool {
    if mask == 0 {
        return false;
    }
    let mut seen = mask & mask.wrapping_neg();
    loop {
        let mut next = seen;
        for (i, a) in adj.iter().enumerate() {
            if seen & (1 << i) != 0 {
                next |= a & mask;
            }
        }
        if next == seen {
            return seen == mask;
        }
        seen = next;
    }
}

/// Cardinalities of every connected subquery, keyed by table mask.
pub fn subquery_cardinalities(
    query: &Query,
    db: &Database,
    source: &dyn CardinalitySource,
) -> Result<BTreeMap<u64, f64>> {
    let tables = query.graph.tables();
    if tables.len() > 20 {
        return Err(Error::Unsupported("planning is limited to 20 tables".into()));
    }
    let adj = adjacency(query, &db.schema);
    let mut out = BTreeMap::new();
    for mask in 1u64..(1 << tables.len()) {
        if !connected(mask, &adj) {
            continue;
        }
        let subset: Vec<TableId> = (0..tables.len()).filter(|i| mask & (1 << i) != 0).map(|i| tables[i]).collect();
        let sub = query.restrict(&db.schema, &subset)?;
        let card = source.cardinality(&sub).map_err(|e| Error::Planner {
            subquery: sub.describe(&db.schema),
            message: e.to_string(),
        })?;
        out.insert(mask, card);
    }
    Ok(out)
}

/// Cheapest bushy plan given subquery cardinalities; ties go to the
/// numerically smallest left subset.
pub fn plan_from(query: &Query, schema: &SchemaGraph, cards: &BTreeMap<u64, f64>) -> PlanNode {
    let tables = query.graph.tables();
    let adj = adjacency(query, schema);
    let full = (1u64 << tables.len()) - 1;
    let mut best: BTreeMap<u64, (f64, Option<(u64, u64)>)> = BTreeMap::new();
    for i in 0..tables.len() {
        best.insert(1 << i, (0.0, None));
    }
    let mut masks: Vec<u64> = cards.keys().copied().filter(|m| m.count_ones() >= 2).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for mask in masks {
        let mut choice: Option<(f64, u64)> = None;
        let mut left = (mask - 1) & mask;
        let mut lefts = Vec::new();
        while left != 0 {
            lefts.push(left);
            left = (left - 1) & mask;
        }
        lefts.sort_unstable();
        for l in lefts {
            let r = mask & !l;
            let (Some(bl), Some(br)) = (best.get(&l), best.get(&r)) else { continue };
            let linked = (0..tables.len()).any(|i| l & (1 << i) != 0 && adj[i] & r != 0);
            if !linked {
                continue;
            }
            let cost = bl.0 + br.0 + cards[&mask];
            if choice.is_none_or(|(c, _)| cost < c) {
                choice = Some((cost, l));
            }
        }
        if let Some((cost, l)) = choice {
            best.insert(mask, (cost, Some((l, mask & !l))));
        }
    }
    build(full, &best, tables, cards)
}

fn build(mask: u64, best: &BTreeMap<u64, (f64, Option<(u64, u64)>)>, tables: &[TableId], cards: &BTreeMap<u64, f64>) -> PlanNode {
    match best[&mask].1 {
        None => PlanNode::Leaf {
            table: tables[mask.trailing_zeros() as usize],
            cardinality: cards.get(&mask).copied().unwrap_or(f64::NAN),
        },
        Some((l, r)) => PlanNode::Join {
            left: Box::new(build(l, best, tables, cards)),
            right: Box::new(build(r, best, tables, cards)),
            tables: mask,
            cardinality: cards[&mask],
        },
    }
}

/// C_out cost of `plan` evaluated with the given cardinalities.
pub fn plan_cost(plan: &PlanNode, tables: &[TableId], cards: &BTreeMap<u64, f64>) -> f64 {
    plan.joins(tables)
        .iter()
        .map(|(l, r)| cards[&(l | r)])
        .sum()
}

/// Optimal plan for `query` under `source`.
pub fn plan(query: &Query, db: &Database, source: &dyn CardinalitySource) -> Result<PlanNode> {
    let cards = subquery_cardinalities(query, db, source)?;
    Ok(plan_from(query, &db.schema, &cards))
}

/// True cost of the plan chosen with estimates over the true optimum.
pub fn p_error_from(query: &Query, schema: &SchemaGraph, estimated: &BTreeMap<u64, f64>, truth: &BTreeMap<u64, f64>) -> f64 {
    let tables = query.graph.tables();
    let chosen = plan_from(query, schema, estimated);
    let optimal = plan_from(query, schema, truth);
    let num = plan_cost(&chosen, tables, truth);
    let den = plan_cost(&optimal, tables, truth);
    if den <= 0.0 {
        if num <= 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

pub fn p_error(
    query: &Query,
    db: &Database,
    estimator: &dyn CardinalitySource,
    oracle: &dyn CardinalitySource,
) -> Result<f64> {
    let est = subquery_cardinalities(query, db, estimator)?;
    let truth = subquery_cardinalities(query, db, oracle)?;
    Ok(p_error_from(query, &db.schema, &est, &truth))
}
