//! Queries as a join tree plus per-column code sets.

use std::collections::BTreeMap;

use crate::ingest::{Code, Database, NULL_CODE};
use crate::schema::{QueryGraph, SchemaGraph, TableId};

/// Set of admissible codes for one column. NULL is never a member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CodeSet {
    /// Inclusive range `lo..=hi`; empty when `lo > hi`.
    Interval { lo: Code, hi: Code },
    /// Sorted, duplicate-free.
    Set(Vec<Code>),
}

impl CodeSet {
    pub fn interval(lo: Code, hi: Code) -> CodeSet {
        CodeSet::Interval { lo: lo.max(1), hi }
    }

    pub fn from_codes(codes: impl IntoIterator<Item = Code>) -> CodeSet {
        let mut v: Vec<Code> = codes.into_iter().filter(|c| *c != NULL_CODE).collect();
        v.sort_unstable();
        v.dedup();
        CodeSet::Set(v)
    }

    pub fn contains(&self, code: Code) -> bool {
        match self {
            CodeSet::Interval { lo, hi } => code != NULL_CODE && *lo <= code && code <= *hi,
            CodeSet::Set(v) => v.binary_search(&code).is_ok(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CodeSet::Interval { lo, hi } => (*hi as usize + 1).saturating_sub(*lo as usize),
            CodeSet::Set(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn codes(&self) -> Vec<Code> {
        match self {
            CodeSet::Interval { lo, hi } => (*lo..=*hi).collect(),
            CodeSet::Set(v) => v.clone(),
        }
    }

    /// Number of member codes below `domain`.
    pub fn len_within(&self, domain: usize) -> usize {
        match self {
            CodeSet::Interval { lo, hi } => {
                let hi = (*hi as usize).min(domain.saturating_sub(1));
                (hi + 1).saturating_sub(*lo as usize)
            }
            CodeSet::Set(v) => v.partition_point(|c| (*c as usize) < domain),
        }
    }

    /// Boolean membership over `0..domain`; index 0 (NULL) is always false.
    pub fn mask(&self, domain: usize) -> Vec<bool> {
        let mut m = vec![false; domain];
        match self {
            CodeSet::Interval { lo, hi } => {
                for c in (*lo as usize)..=(*hi as usize).min(domain.saturating_sub(1)) {
                    m[c] = true;
                }
            }
            CodeSet::Set(v) => {
                for c in v {
                    if (*c as usize) < domain {
                        m[*c as usize] = true;
                    }
                }
            }
        }
        m[0] = false;
        m
    }

    pub fn intersect(&self, other: &CodeSet) -> CodeSet {
        match (self, other) {
            (CodeSet::Interval { lo: a, hi: b }, CodeSet::Interval { lo: c, hi: d }) => {
                CodeSet::interval(*a.max(c), *b.min(d))
            }
            (CodeSet::Set(v), o) | (o, CodeSet::Set(v)) => {
                CodeSet::Set(v.iter().copied().filter(|c| o.contains(*c)).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub graph: QueryGraph,
    /// Keyed by (table, column index). Absent columns are unrestricted.
    pub predicates: BTreeMap<(TableId, usize), CodeSet>,
}

impl Query {
    pub fn new(graph: QueryGraph, predicates: BTreeMap<(TableId, usize), CodeSet>) -> Query {
        Query { graph, predicates }
    }

    /// Predicates that restrict anything, i.e. whose set is smaller than the domain.
    pub fn restrictive_predicates<'a>(
        &'a self,
        db: &'a Database,
    ) -> impl Iterator<Item = (&'a (TableId, usize), &'a CodeSet)> + 'a {
        self.predicates.iter().filter(move |((t, c), set)| {
            let dom = db.column(*t, *c).domain_size();
            set.len_within(dom) < dom
        })
    }

    /// The subquery induced on `tables`, keeping only their predicates.
    pub fn restrict(&self, schema: &SchemaGraph, tables: &[TableId]) -> crate::error::Result<Query> {
        let graph = self.graph.restrict(schema, tables)?;
        let predicates = self
            .predicates
            .iter()
            .filter(|((t, _), _)| graph.contains_table(*t))
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        Ok(Query { graph, predicates })
    }

    pub fn describe(&self, schema: &SchemaGraph) -> String {
        let tables: Vec<&str> = self
            .graph
            .tables()
            .iter()
            .map(|t| schema.table(*t).name.as_str())
            .collect();
        let preds: Vec<String> = self
            .predicates
            .iter()
            .map(|((t, c), s)| format!("{} in {} codes", schema.column_ref(*t, *c), s.len()))
            .collect();
        if preds.is_empty() {
            tables.join(" ⋈ ")
        } else {
            format!("{} | {}", tables.join(" ⋈ "), preds.join(", "))
        }
    }
}
