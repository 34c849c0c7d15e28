//! Schema graph, closed in-neighborhood partitioning and hypergraph traversal.
//!
//! An edge `(u, v, (c_u, c_v))` states that `u.c_u = v.c_v` with `u` on the
//! "one" side and `v` on the "many" side. Every table with at least one
//! incoming edge becomes the center of a subschema holding the table and all
//! of its in-neighbors; parallel edges between the same pair of tables yield
//! one subschema per edge combination.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableId(pub usize);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Integer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDecl {
    pub name: String,
    pub columns: Vec<ColumnDecl>,
}

impl TableDecl {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// Foreign-key edge: `one.one_column = many.many_column`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct FkEdge {
    pub one: TableId,
    pub one_column: usize,
    pub many: TableId,
    pub many_column: usize,
}

/// Schema config file as read from disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub tables: Vec<TableDecl>,
    pub edges: Vec<EdgeConfig>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeConfig {
    pub one: String,
    pub many: String,
}

/// Labeled directed acyclic multigraph of tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchemaGraph {
    tables: Vec<TableDecl>,
    edges: Vec<FkEdge>,
}

impl SchemaGraph {
    pub fn from_config(config: &SchemaConfig) -> Result<Self> {
        let mut names = BTreeSet::new();
        for t in &config.tables {
            if !names.insert(t.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate table `{}`", t.name)));
            }
            if t.name.contains('.') {
                return Err(Error::InvalidSchema(format!("table name `{}` contains '.'", t.name)));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return Err(Error::InvalidSchema(format!(
                        "duplicate column `{}.{}`",
                        t.name, c.name
                    )));
                }
            }
        }
        let mut edges = Vec::with_capacity(config.edges.len());
        for e in &config.edges {
            let label = format!("{} -> {}", e.one, e.many);
            let (one, one_column) = resolve_column(&config.tables, &e.one, &label)?;
            let (many, many_column) = resolve_column(&config.tables, &e.many, &label)?;
            edges.push(FkEdge {
                one,
                one_column,
                many,
                many_column,
            });
        }
        Self::new(config.tables.clone(), edges)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: SchemaConfig = serde_json::from_str(&text)?;
        Self::from_config(&config)
    }

    pub fn new(tables: Vec<TableDecl>, edges: Vec<FkEdge>) -> Result<Self> {
        for e in &edges {
            for (t, c) in [(e.one, e.one_column), (e.many, e.many_column)] {
                let table = tables.get(t.0).ok_or_else(|| {
                    Error::InvalidSchema(format!("edge references table #{}", t.0))
                })?;
                if c >= table.columns.len() {
                    return Err(Error::DanglingEdge {
                        edge: format!("{}#{}", table.name, c),
                        column: format!("#{c}"),
                    });
                }
            }
            if e.one == e.many {
                return Err(Error::InvalidSchema(format!(
                    "self-loop on table `{}`",
                    tables[e.one.0].name
                )));
            }
        }
        let graph = SchemaGraph { tables, edges };
        if let Some(cycle) = graph.find_cycle() {
            return Err(Error::CyclicSchema(
                cycle.iter().map(|t| graph.table(*t).name.clone()).collect(),
            ));
        }
        Ok(graph)
    }

    pub fn to_config(&self) -> SchemaConfig {
        SchemaConfig {
            tables: self.tables.clone(),
            edges: (0..self.edges.len())
                .map(|i| {
                    let e = self.edges[i];
                    EdgeConfig {
                        one: self.column_ref(e.one, e.one_column),
                        many: self.column_ref(e.many, e.many_column),
                    }
                })
                .collect(),
        }
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn table_ids(&self) -> impl Iterator<Item = TableId> {
        (0..self.tables.len()).map(TableId)
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> {
        (0..self.edges.len()).map(EdgeId)
    }

    pub fn table(&self, id: TableId) -> &TableDecl {
        &self.tables[id.0]
    }

    pub fn tables(&self) -> &[TableDecl] {
        &self.tables
    }

    pub fn edge(&self, id: EdgeId) -> FkEdge {
        self.edges[id.0]
    }

    pub fn table_id(&self, name: &str) -> Option<TableId> {
        self.tables.iter().position(|t| t.name == name).map(TableId)
    }

    pub fn column_ref(&self, table: TableId, column: usize) -> String {
        let t = self.table(table);
        format!("{}.{}", t.name, t.columns[column].name)
    }

    /// Resolves `"T.col"`.
    pub fn resolve(&self, reference: &str) -> Result<(TableId, usize)> {
        resolve_column(&self.tables, reference, reference)
    }

    pub fn edge_label(&self, id: EdgeId) -> String {
        let e = self.edge(id);
        format!(
            "{} -> {}",
            self.column_ref(e.one, e.one_column),
            self.column_ref(e.many, e.many_column)
        )
    }

    /// Edge matching the given one-side and many-side column references.
    pub fn find_edge(&self, one: (TableId, usize), many: (TableId, usize)) -> Option<EdgeId> {
        self.edges
            .iter()
            .position(|e| {
                e.one == one.0 && e.one_column == one.1 && e.many == many.0 && e.many_column == many.1
            })
            .map(EdgeId)
    }

    pub fn in_edges(&self, v: TableId) -> impl Iterator<Item = EdgeId> + '_ {
        self.edge_ids().filter(move |e| self.edge(*e).many == v)
    }

    pub fn out_edges(&self, u: TableId) -> impl Iterator<Item = EdgeId> + '_ {
        self.edge_ids().filter(move |e| self.edge(*e).one == u)
    }

    /// True when the undirected simple graph underlying the schema is a tree.
    pub fn is_undirected_tree(&self) -> bool {
        let n = self.tables.len();
        if n == 0 || self.edges.len() != n - 1 {
            return false;
        }
        let mut uf = UnionFind::new(n);
        for e in &self.edges {
            if !uf.union(e.one.0, e.many.0) {
                return false;
            }
        }
        true
    }

    /// Connectivity of the schema viewed as an undirected graph.
    pub fn is_connected(&self) -> bool {
        let n = self.tables.len();
        let mut uf = UnionFind::new(n);
        for e in &self.edges {
            uf.union(e.one.0, e.many.0);
        }
        uf.components() <= 1
    }

    fn find_cycle(&self) -> Option<Vec<TableId>> {
        // Kahn's algorithm; whatever remains lies on or behind a cycle.
        let n = self.tables.len();
        let mut indeg = vec![0usize; n];
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for e in &self.edges {
            if adj[e.one.0].insert(e.many.0) {
                indeg[e.many.0] += 1;
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|v| indeg[*v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop_front() {
            seen += 1;
            for &w in &adj[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        if seen == n {
            return None;
        }
        // Walk predecessors inside the residual graph until a vertex repeats.
        let residual: BTreeSet<usize> = (0..n).filter(|v| indeg[*v] > 0).collect();
        let start = *residual.iter().next()?;
        let mut path = vec![start];
        let mut pos = BTreeMap::from([(start, 0usize)]);
        let mut cur = start;
        loop {
            let prev = (0..n)
                .find(|u| residual.contains(u) && adj[*u].contains(&cur))
                .expect("residual vertex has a residual predecessor");
            if let Some(&i) = pos.get(&prev) {
                let mut cycle: Vec<TableId> = path[i..].iter().map(|v| TableId(*v)).collect();
                cycle.reverse();
                return Some(cycle);
            }
            pos.insert(prev, path.len());
            path.push(prev);
            cur = prev;
        }
    }
}

fn resolve_column(tables: &[TableDecl], reference: &str, context: &str) -> Result<(TableId, usize)> {
    let (t, c) = reference.split_once('.').ok_or_else(|| Error::DanglingEdge {
        edge: context.to_string(),
        column: reference.to_string(),
    })?;
    let ti = tables
        .iter()
        .position(|x| x.name == t)
        .ok_or_else(|| Error::DanglingEdge {
            edge: context.to_string(),
            column: reference.to_string(),
        })?;
    let ci = tables[ti].column_index(c).ok_or_else(|| Error::DanglingEdge {
        edge: context.to_string(),
        column: reference.to_string(),
    })?;
    Ok((TableId(ti), ci))
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }

    /// Returns false when `a` and `b` were already joined.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }

    pub(crate) fn components(&mut self) -> usize {
        (0..self.parent.len()).filter(|x| self.find(*x) == *x).count()
    }
}

/// Tables and foreign-key edges touched by a query; an undirected tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGraph {
    tables: Vec<TableId>,
    edges: Vec<EdgeId>,
}

impl QueryGraph {
    pub fn new(schema: &SchemaGraph, tables: Vec<TableId>, edges: Vec<EdgeId>) -> Result<Self> {
        let tables: Vec<TableId> = tables.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let edges: Vec<EdgeId> = edges.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if tables.is_empty() {
            return Err(Error::InvalidQuery("query references no tables".into()));
        }
        for t in &tables {
            if t.0 >= schema.num_tables() {
                return Err(Error::InvalidQuery(format!("unknown table #{}", t.0)));
            }
        }
        let index: BTreeMap<TableId, usize> = tables.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let mut uf = UnionFind::new(tables.len());
        let mut pairs = BTreeSet::new();
        for e in &edges {
            if e.0 >= schema.edges.len() {
                return Err(Error::InvalidQuery(format!("unknown edge #{}", e.0)));
            }
            let fk = schema.edge(*e);
            let (Some(&a), Some(&b)) = (index.get(&fk.one), index.get(&fk.many)) else {
                return Err(Error::InvalidQuery(format!(
                    "join {} touches a table outside the query",
                    schema.edge_label(*e)
                )));
            };
            if !pairs.insert((fk.one.min(fk.many), fk.one.max(fk.many))) {
                return Err(Error::CyclicQuery(format!(
                    "parallel joins between `{}` and `{}`",
                    schema.table(fk.one).name,
                    schema.table(fk.many).name
                )));
            }
            if !uf.union(a, b) {
                return Err(Error::CyclicQuery(format!(
                    "join {} closes a cycle",
                    schema.edge_label(*e)
                )));
            }
        }
        if uf.components() != 1 {
            return Err(Error::InvalidQuery("query join graph is disconnected".into()));
        }
        Ok(QueryGraph { tables, edges })
    }

    pub fn tables(&self) -> &[TableId] {
        &self.tables
    }

    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    pub fn contains_table(&self, t: TableId) -> bool {
        self.tables.binary_search(&t).is_ok()
    }

    pub fn contains_edge(&self, e: EdgeId) -> bool {
        self.edges.binary_search(&e).is_ok()
    }

    /// Induced query subgraph on `subset`; must be connected.
    pub fn restrict(&self, schema: &SchemaGraph, subset: &[TableId]) -> Result<QueryGraph> {
        let set: BTreeSet<TableId> = subset.iter().copied().collect();
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|e| {
                let fk = schema.edge(*e);
                set.contains(&fk.one) && set.contains(&fk.many)
            })
            .collect();
        QueryGraph::new(schema, set.into_iter().collect(), edges)
    }
}

/// Closed in-neighborhood of `center` with one chosen edge per in-neighbor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subschema {
    pub name: String,
    pub center: TableId,
    pub vertices: Vec<TableId>,
    pub edge_choice: Vec<EdgeId>,
    pub external_fanout_edges: Vec<EdgeId>,
}

impl Subschema {
    pub fn contains(&self, t: TableId) -> bool {
        self.vertices.binary_search(&t).is_ok()
    }

    /// Query tables represented by this subschema: the center when queried
    /// plus every in-neighbor whose chosen edge is a query join.
    pub fn active_tables(&self, schema: &SchemaGraph, q: &QueryGraph) -> Vec<TableId> {
        let mut out = BTreeSet::new();
        if q.contains_table(self.center) {
            out.insert(self.center);
        }
        for e in &self.edge_choice {
            if q.contains_edge(*e) {
                out.insert(schema.edge(*e).one);
            }
        }
        out.into_iter().collect()
    }

    fn order_key<'a>(&'a self, schema: &'a SchemaGraph) -> (&'a str, &'a [EdgeId]) {
        (schema.table(self.center).name.as_str(), &self.edge_choice)
    }

    pub fn describe(&self, schema: &SchemaGraph) -> String {
        let names: Vec<&str> = self.vertices.iter().map(|t| schema.table(*t).name.as_str()).collect();
        let edges: Vec<String> = self.edge_choice.iter().map(|e| schema.edge_label(*e)).collect();
        let fanouts: Vec<String> = self
            .external_fanout_edges
            .iter()
            .map(|e| schema.edge_label(*e))
            .collect();
        format!(
            "{}: center={} tables={{{}}} edges=[{}] fanouts=[{}]",
            self.name,
            schema.table(self.center).name,
            names.join(","),
            edges.join("; "),
            fanouts.join("; ")
        )
    }
}

/// Subschemas produced by [`partition`].
///
/// `hyperedges` are the closed in-neighborhoods (plus singletons for isolated
/// tables). `source_singletons` hold a single-table subschema for every
/// in-degree-0 table that is covered by some hyperedge only as a non-center;
/// they exist so single-table queries on such tables need no downscaling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubschemaHypergraph {
    pub hyperedges: Vec<Subschema>,
    pub source_singletons: Vec<Subschema>,
}

impl SubschemaHypergraph {
    pub fn all(&self) -> impl Iterator<Item = &Subschema> {
        self.hyperedges.iter().chain(self.source_singletons.iter())
    }

    pub fn get(&self, name: &str) -> Option<&Subschema> {
        self.all().find(|s| s.name == name)
    }
}

fn external_fanouts(schema: &SchemaGraph, vertices: &[TableId]) -> Vec<EdgeId> {
    schema
        .edge_ids()
        .filter(|e| {
            let fk = schema.edge(*e);
            vertices.binary_search(&fk.one).is_ok() && vertices.binary_search(&fk.many).is_err()
        })
        .collect()
}

fn singleton(schema: &SchemaGraph, t: TableId) -> Subschema {
    let vertices = vec![t];
    Subschema {
        name: schema.table(t).name.clone(),
        center: t,
        external_fanout_edges: external_fanouts(schema, &vertices),
        vertices,
        edge_choice: Vec::new(),
    }
}

/// Partitions the schema into closed in-neighborhood subschemas.
pub fn partition(schema: &SchemaGraph) -> SubschemaHypergraph {
    let mut hyperedges = Vec::new();
    for v in schema.table_ids() {
        let mut by_source: BTreeMap<TableId, Vec<EdgeId>> = BTreeMap::new();
        for e in schema.in_edges(v) {
            by_source.entry(schema.edge(e).one).or_default().push(e);
        }
        if by_source.is_empty() {
            continue;
        }
        let mut vertices: Vec<TableId> = by_source.keys().copied().collect();
        vertices.push(v);
        vertices.sort();
        let external = external_fanouts(schema, &vertices);
        let groups: Vec<Vec<EdgeId>> = by_source.into_values().collect();
        let combos = cartesian(&groups);
        let many = combos.len() > 1;
        for (k, edge_choice) in combos.into_iter().enumerate() {
            let name = if many {
                format!("{}#{}", schema.table(v).name, k)
            } else {
                schema.table(v).name.clone()
            };
            hyperedges.push(Subschema {
                name,
                center: v,
                vertices: vertices.clone(),
                edge_choice,
                external_fanout_edges: external.clone(),
            });
        }
    }
    let covered: BTreeSet<TableId> = hyperedges.iter().flat_map(|h| h.vertices.iter().copied()).collect();
    let mut source_singletons = Vec::new();
    for t in schema.table_ids() {
        if !covered.contains(&t) {
            hyperedges.push(singleton(schema, t));
        } else if schema.in_edges(t).next().is_none() {
            source_singletons.push(singleton(schema, t));
        }
    }
    SubschemaHypergraph {
        hyperedges,
        source_singletons,
    }
}

fn cartesian(groups: &[Vec<EdgeId>]) -> Vec<Vec<EdgeId>> {
    let mut out: Vec<Vec<EdgeId>> = vec![Vec::new()];
    for g in groups {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                g.iter().map(move |e| {
                    let mut p = prefix.clone();
                    p.push(*e);
                    p
                })
            })
            .collect();
    }
    out
}

/// Whether the hyperedges connect every table of the schema.
pub fn check_connected(h: &SubschemaHypergraph, schema: &SchemaGraph) -> bool {
    let mut uf = UnionFind::new(schema.num_tables());
    for he in &h.hyperedges {
        for w in he.vertices.windows(2) {
            uf.union(w[0].0, w[1].0);
        }
    }
    uf.components() <= 1
}

/// Picks a minimal set of subschemas whose chosen edges cover every query join.
pub fn select_subschemas(
    h: &SubschemaHypergraph,
    schema: &SchemaGraph,
    q: &QueryGraph,
) -> Result<Vec<Subschema>> {
    if q.edges().is_empty() {
        let t = q.tables()[0];
        let best = h
            .all()
            .filter(|s| s.contains(t))
            .min_by(|a, b| {
                (a.center != t, a.vertices.len(), a.order_key(schema))
                    .cmp(&(b.center != t, b.vertices.len(), b.order_key(schema)))
            })
            .ok_or_else(|| {
                Error::UncoverableQuery(format!("table `{}` is in no subschema", schema.table(t).name))
            })?;
        return Ok(vec![best.clone()]);
    }

    let mut candidates: Vec<&Subschema> = h.hyperedges.iter().collect();
    candidates.sort_by(|a, b| a.order_key(schema).cmp(&b.order_key(schema)));
    let mut uncovered: BTreeSet<EdgeId> = q.edges().iter().copied().collect();
    let mut chosen: Vec<Subschema> = Vec::new();
    while !uncovered.is_empty() {
        let mut best: Option<(usize, usize, usize)> = None; // (gain, size, index)
        for (i, c) in candidates.iter().enumerate() {
            let gain = c.edge_choice.iter().filter(|e| uncovered.contains(e)).count();
            if gain == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((g, s, _)) => gain > g || (gain == g && c.vertices.len() < s),
            };
            if better {
                best = Some((gain, c.vertices.len(), i));
            }
        }
        let Some((_, _, i)) = best else {
            let e = *uncovered.iter().next().expect("non-empty");
            return Err(Error::UncoverableQuery(schema.edge_label(e)));
        };
        for e in &candidates[i].edge_choice {
            uncovered.remove(e);
        }
        chosen.push(candidates[i].clone());
    }
    chosen.sort_by(|a, b| a.order_key(schema).cmp(&b.order_key(schema)));
    Ok(chosen)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum RootChoice {
    /// Selected subschema whose center name sorts first.
    #[default]
    SmallestCenter,
    /// Uniform pick driven by the seed.
    Seeded(u64),
}

/// One breadth-first step of a traversal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanStep {
    /// Index into [`TraversalPlan::hyperedges`].
    pub hyperedge: usize,
    pub successors: Vec<usize>,
    /// Query tables represented by this hyperedge.
    pub active_tables: Vec<TableId>,
    /// Active tables whose attributes are drawn and handed to later steps.
    pub common_tables: Vec<TableId>,
    /// Query joins from this hyperedge into a successor; each needs a fanout.
    pub fanout_edges: Vec<EdgeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraversalPlan {
    pub hyperedges: Vec<Subschema>,
    pub root: usize,
    pub steps: Vec<PlanStep>,
}

impl TraversalPlan {
    pub fn common_attributes(&self, schema: &SchemaGraph, step: usize) -> Vec<(TableId, usize)> {
        self.steps[step]
            .common_tables
            .iter()
            .flat_map(|t| (0..schema.table(*t).columns.len()).map(move |c| (*t, c)))
            .collect()
    }
}

/// Arranges the selected subschemas in a breadth-first tree rooted per `root`.
pub fn build_traversal_plan(
    selected: &[Subschema],
    schema: &SchemaGraph,
    q: &QueryGraph,
    root: RootChoice,
) -> Result<TraversalPlan> {
    if selected.is_empty() {
        return Err(Error::InvalidQuery("no subschemas selected".into()));
    }
    let n = selected.len();
    let active: Vec<BTreeSet<TableId>> = selected
        .iter()
        .map(|s| {
            let a = s.active_tables(schema, q);
            if a.is_empty() && q.edges().is_empty() {
                // single-table query answered by a subschema containing it
                q.tables().iter().copied().filter(|t| s.contains(*t)).collect()
            } else {
                a.into_iter().collect()
            }
        })
        .collect();
    let root_index = match root {
        RootChoice::SmallestCenter => (0..n)
            .min_by(|a, b| selected[*a].order_key(schema).cmp(&selected[*b].order_key(schema)))
            .expect("non-empty"),
        RootChoice::Seeded(seed) => ChaCha8Rng::seed_from_u64(seed).random_range(0..n),
    };

    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([root_index]);
    visited[root_index] = true;
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for j in 0..n {
            if !visited[j] && !active[i].is_disjoint(&active[j]) {
                visited[j] = true;
                parent[j] = Some(i);
                queue.push_back(j);
            }
        }
    }
    if order.len() != n {
        return Err(Error::InvalidQuery(
            "selected subschemas do not connect through shared query tables".into(),
        ));
    }

    let mut steps = Vec::with_capacity(n);
    for (pos, &i) in order.iter().enumerate() {
        let successors: Vec<usize> = order.iter().copied().filter(|j| parent[*j] == Some(i)).collect();
        let later: BTreeSet<TableId> = order[pos + 1..]
            .iter()
            .flat_map(|j| active[*j].iter().copied())
            .collect();
        let common_tables: Vec<TableId> = active[i].intersection(&later).copied().collect();
        let mut fanout_edges = BTreeSet::new();
        for &f in &successors {
            for &e in &selected[f].edge_choice {
                let fk = schema.edge(e);
                if q.contains_edge(e)
                    && active[i].contains(&fk.one)
                    && active[f].contains(&fk.one)
                    && !selected[i].contains(fk.many)
                {
                    fanout_edges.insert(e);
                }
            }
        }
        steps.push(PlanStep {
            hyperedge: i,
            successors,
            active_tables: active[i].iter().copied().collect(),
            common_tables,
            fanout_edges: fanout_edges.into_iter().collect(),
        });
    }
    Ok(TraversalPlan {
        hyperedges: selected.to_vec(),
        root: root_index,
        steps,
    })
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}
