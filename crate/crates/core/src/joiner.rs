//! Full outer joins over tree-shaped table sets, virtual attributes, uniform
//! join sampling and the exact inner-join counter.
//!
//! A row of the full outer join is a maximal connected combination of base
//! rows. Rooting the join tree, every such row has a unique topmost table
//! whose base row has no partner in its parent table (or is in the root).
//! Below that table the row extends into each child either with one matching
//! child row or, when no match exists, with NULLs for the whole child subtree.
//! Counting those extensions bottom-up gives exact per-row weights, which
//! drive both the join size and uniform sampling.

use std::collections::{BTreeSet, VecDeque};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{Code, Column, Database, NULL_CODE};
use crate::query::Query;
use crate::schema::{EdgeId, Subschema, TableId};

pub const DEFAULT_MATERIALIZE_THRESHOLD: u128 = 5_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttrKind {
    Base { table: TableId, column: usize },
    TableFlag(TableId),
    /// `values[code]` is the number of matching many-side rows.
    Fanout { edge: EdgeId, values: Vec<u64> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttrKind,
    pub domain: usize,
}

/// Attribute layout of a joined relation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinLayout {
    pub name: String,
    pub tables: Vec<TableId>,
    pub attrs: Vec<Attribute>,
}

impl JoinLayout {
    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn domains(&self) -> Vec<usize> {
        self.attrs.iter().map(|a| a.domain).collect()
    }

    pub fn contains_table(&self, t: TableId) -> bool {
        self.tables.contains(&t)
    }

    pub fn base_index(&self, table: TableId, column: usize) -> Option<usize> {
        self.attrs
            .iter()
            .position(|a| a.kind == AttrKind::Base { table, column })
    }

    pub fn flag_index(&self, table: TableId) -> Option<usize> {
        self.attrs.iter().position(|a| a.kind == AttrKind::TableFlag(table))
    }

    pub fn fanout_index(&self, edge: EdgeId) -> Option<usize> {
        self.attrs
            .iter()
            .position(|a| matches!(&a.kind, AttrKind::Fanout { edge: e, .. } if *e == edge))
    }

    pub fn fanout_value(&self, attr: usize, code: Code) -> u64 {
        match &self.attrs[attr].kind {
            AttrKind::Fanout { values, .. } => values[code as usize],
            other => panic!("attribute {attr} is not a fanout: {other:?}"),
        }
    }

    pub fn index_by_name(&self, name: &str) -> Option<usize> {
        self.attrs.iter().position(|a| a.name == name)
    }

    /// Stable 64-bit digest of names, kinds and domains.
    pub fn hash(&self) -> u64 {
        let bytes = serde_json::to_vec(&self.attrs).expect("layout serializes");
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Codes of `from` translated to codes of `to` holding the same value.
pub(crate) fn key_translation(from: &Column, to: &Column) -> Vec<Option<Code>> {
    let mut out = vec![None; from.domain_size()];
    for (i, v) in from.dictionary().iter().enumerate() {
        out[i + 1] = to.encode(v);
    }
    out
}

/// Child rows grouped by the parent-side key code they match.
#[derive(Clone, Debug)]
pub(crate) struct Buckets {
    offsets: Vec<usize>,
    rows: Vec<u32>,
}

impl Buckets {
    /// Groups rows of `child` by the code in `parent`'s key column.
    pub(crate) fn build(parent: &Column, child: &Column) -> (Buckets, Vec<Option<Code>>) {
        let trans = key_translation(child, parent);
        let mut counts = vec![0usize; parent.domain_size() + 1];
        for &c in child.codes() {
            if let Some(p) = trans[c as usize] {
                counts[p as usize + 1] += 1;
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut rows = vec![0u32; *offsets.last().unwrap_or(&0)];
        for (r, &c) in child.codes().iter().enumerate() {
            if let Some(p) = trans[c as usize] {
                rows[fill[p as usize]] = r as u32;
                fill[p as usize] += 1;
            }
        }
        (Buckets { offsets, rows }, trans)
    }

    pub(crate) fn range(&self, code: Code) -> std::ops::Range<usize> {
        if code == NULL_CODE {
            return 0..0;
        }
        self.offsets[code as usize]..self.offsets[code as usize + 1]
    }

    pub(crate) fn get(&self, code: Code) -> &[u32] {
        &self.rows[self.range(code)]
    }
}

/// Key columns of `edge` seen from `parent` toward `child`.
fn edge_columns(db: &Database, edge: EdgeId, parent: TableId) -> (usize, usize) {
    let fk = db.schema.edge(edge);
    if fk.one == parent {
        (fk.one_column, fk.many_column)
    } else {
        (fk.many_column, fk.one_column)
    }
}

#[derive(Clone, Debug)]
struct Link {
    parent_key: usize,
    buckets: Buckets,
    /// Per bucket slot: inclusive running sum of child weights within the bucket.
    cumulative: Vec<u128>,
    /// Whether each child row has a partner in the parent table.
    has_parent: Vec<bool>,
}

#[derive(Clone, Debug)]
struct Node {
    table: TableId,
    link: Option<Link>,
    children: Vec<usize>,
    weight: Vec<u128>,
}

#[derive(Clone, Debug)]
struct Fanout {
    from: TableId,
    per_row: Vec<Code>,
}

/// One base row per join-tree node, or `None` for a NULL-padded table.
pub type JoinTuple = Vec<Option<u32>>;

/// Rooted join tree over a set of tables connected by foreign keys.
#[derive(Clone, Debug)]
pub struct TreeJoin {
    layout: JoinLayout,
    nodes: Vec<Node>,
    strata: Vec<(usize, u32)>,
    strata_cumulative: Vec<u128>,
    fanouts: Vec<Fanout>,
    size: u128,
}

impl TreeJoin {
    /// Star join of a subschema rooted at its center.
    pub fn for_subschema(db: &Database, sub: &Subschema) -> Result<TreeJoin> {
        let links: Vec<(TableId, TableId, EdgeId)> = sub
            .edge_choice
            .iter()
            .map(|e| (sub.center, db.schema.edge(*e).one, *e))
            .collect();
        TreeJoin::build(db, &sub.name, sub.center, &links, &sub.external_fanout_edges)
    }

    /// Join of the whole schema, which must be a tree when edge directions are ignored.
    pub fn universal(db: &Database) -> Result<TreeJoin> {
        let schema = &db.schema;
        if !schema.is_undirected_tree() {
            return Err(Error::Unsupported(
                "the universal relation needs a schema that forms a tree".into(),
            ));
        }
        let root = TableId(0);
        let mut seen = BTreeSet::from([root]);
        let mut queue = VecDeque::from([root]);
        let mut links = Vec::new();
        while let Some(t) = queue.pop_front() {
            for e in schema.edge_ids() {
                let fk = schema.edge(e);
                let other = if fk.one == t {
                    fk.many
                } else if fk.many == t {
                    fk.one
                } else {
                    continue;
                };
                if seen.insert(other) {
                    links.push((t, other, e));
                    queue.push_back(other);
                }
            }
        }
        let all: Vec<EdgeId> = schema.edge_ids().collect();
        TreeJoin::build(db, "universal", root, &links, &all)
    }

    /// `links` lists (parent, child, edge) with parents introduced before children.
    fn build(
        db: &Database,
        name: &str,
        root: TableId,
        links: &[(TableId, TableId, EdgeId)],
        fanout_edges: &[EdgeId],
    ) -> Result<TreeJoin> {
        let mut nodes = vec![Node {
            table: root,
            link: None,
            children: Vec::new(),
            weight: Vec::new(),
        }];
        for &(parent, child, edge) in links {
            let p = nodes
                .iter()
                .position(|n| n.table == parent)
                .ok_or_else(|| Error::InvalidArgument(format!("join tree parent {parent} not yet placed")))?;
            if nodes.iter().any(|n| n.table == child) {
                return Err(Error::InvalidArgument(format!(
                    "table `{}` appears twice in a join tree",
                    db.table(child).name
                )));
            }
            let (pk, ck) = edge_columns(db, edge, parent);
            let (buckets, trans) = Buckets::build(db.column(parent, pk), db.column(child, ck));
            let has_parent = db
                .column(child, ck)
                .codes()
                .iter()
                .map(|c| trans[*c as usize].is_some())
                .collect();
            let idx = nodes.len();
            nodes[p].children.push(idx);
            nodes.push(Node {
                table: child,
                link: Some(Link {
                    parent_key: pk,
                    buckets,
                    cumulative: Vec::new(),
                    has_parent,
                }),
                children: Vec::new(),
                weight: Vec::new(),
            });
        }

        // Children always follow their parent, so a reverse sweep is bottom-up.
        for i in (0..nodes.len()).rev() {
            let rows = db.table(nodes[i].table).row_count;
            let mut weight = vec![1u128; rows];
            for &c in &nodes[i].children.clone() {
                let link = nodes[c].link.as_ref().expect("child has link");
                let child_weight = &nodes[c].weight;
                let mut cumulative = vec![0u128; link.buckets.rows.len()];
                let mut bucket_sum = vec![0u128; link.buckets.offsets.len() - 1];
                for (code, sum) in bucket_sum.iter_mut().enumerate() {
                    let mut acc = 0u128;
                    for slot in link.buckets.range(code as Code) {
                        acc = acc
                            .checked_add(child_weight[link.buckets.rows[slot] as usize])
                            .ok_or_else(|| overflow(name))?;
                        cumulative[slot] = acc;
                    }
                    *sum = acc;
                }
                let keys = db.column(nodes[i].table, link.parent_key).codes();
                for (r, w) in weight.iter_mut().enumerate() {
                    let s = bucket_sum[keys[r] as usize];
                    if keys[r] != NULL_CODE && s > 0 {
                        *w = w.checked_mul(s).ok_or_else(|| overflow(name))?;
                    }
                }
                nodes[c].link.as_mut().expect("child has link").cumulative = cumulative;
            }
            nodes[i].weight = weight;
        }

        let mut strata = Vec::new();
        let mut strata_cumulative = Vec::new();
        let mut total = 0u128;
        for (i, node) in nodes.iter().enumerate() {
            for (r, w) in node.weight.iter().enumerate() {
                let eligible = node.link.as_ref().is_none_or(|l| !l.has_parent[r]);
                if eligible {
                    total = total.checked_add(*w).ok_or_else(|| overflow(name))?;
                    strata.push((i, r as u32));
                    strata_cumulative.push(total);
                }
            }
        }

        let mut tables: Vec<TableId> = nodes.iter().map(|n| n.table).collect();
        tables.sort();
        let mut attrs = Vec::new();
        for &t in &tables {
            let table = db.table(t);
            for (c, col) in table.columns.iter().enumerate() {
                attrs.push(Attribute {
                    name: format!("{}.{}", table.name, col.name),
                    kind: AttrKind::Base { table: t, column: c },
                    domain: col.domain_size(),
                });
            }
        }
        for &t in &tables {
            attrs.push(Attribute {
                name: format!("N[{}]", db.table(t).name),
                kind: AttrKind::TableFlag(t),
                domain: 2,
            });
        }
        let mut fanouts = Vec::new();
        for &e in fanout_edges {
            let fk = db.schema.edge(e);
            if !tables.contains(&fk.one) {
                return Err(Error::InvalidArgument(format!(
                    "fanout edge {} starts outside the join",
                    db.schema.edge_label(e)
                )));
            }
            let one_col = db.column(fk.one, fk.one_column);
            let many_col = db.column(fk.many, fk.many_column);
            let trans = key_translation(many_col, one_col);
            let mut per_code = vec![0u64; one_col.domain_size()];
            for &c in many_col.codes() {
                if let Some(p) = trans[c as usize] {
                    per_code[p as usize] += 1;
                }
            }
            let counts: Vec<u64> = one_col.codes().iter().map(|c| per_code[*c as usize]).collect();
            let values: Vec<u64> = counts
                .iter()
                .copied()
                .chain(std::iter::once(0))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let per_row = counts
                .iter()
                .map(|v| values.binary_search(v).expect("present") as Code)
                .collect();
            attrs.push(Attribute {
                name: format!("F[{}]", db.schema.edge_label(e).replace(' ', "")),
                domain: values.len(),
                kind: AttrKind::Fanout { edge: e, values },
            });
            fanouts.push(Fanout { from: fk.one, per_row });
        }

        Ok(TreeJoin {
            layout: JoinLayout {
                name: name.to_string(),
                tables,
                attrs,
            },
            nodes,
            strata,
            strata_cumulative,
            fanouts,
            size: total,
        })
    }

    pub fn layout(&self) -> &JoinLayout {
        &self.layout
    }

    /// Exact number of rows of the full outer join.
    pub fn size(&self) -> u128 {
        self.size
    }

    /// Draws one row uniformly from the full outer join.
    pub fn sample_tuple<R: Rng>(&self, db: &Database, rng: &mut R) -> JoinTuple {
        let r = rng.random_range(0..self.size);
        let k = self.strata_cumulative.partition_point(|c| *c <= r);
        let (top, row) = self.strata[k];
        let mut tuple = vec![None; self.nodes.len()];
        tuple[top] = Some(row);
        let mut queue = VecDeque::from([top]);
        while let Some(i) = queue.pop_front() {
            let row = tuple[i].expect("expanded nodes are present");
            for &c in &self.nodes[i].children {
                let link = self.nodes[c].link.as_ref().expect("child has link");
                let key = db.column(self.nodes[i].table, link.parent_key).codes()[row as usize];
                let range = link.buckets.range(key);
                if range.is_empty() {
                    continue;
                }
                let cum = &link.cumulative[range.clone()];
                let pick = rng.random_range(0..*cum.last().expect("non-empty"));
                let slot = range.start + cum.partition_point(|c| *c <= pick);
                tuple[c] = Some(link.buckets.rows[slot]);
                queue.push_back(c);
            }
        }
        tuple
    }

    /// Every row of the full outer join, grouped by topmost table row.
    pub fn tuples(&self, db: &Database) -> Vec<JoinTuple> {
        let mut out = Vec::with_capacity(self.size.min(1 << 24) as usize);
        for &(top, row) in &self.strata {
            let mut partial = vec![vec![None; self.nodes.len()]];
            partial[0][top] = Some(row);
            // nodes are stored parents-first, so one forward sweep suffices
            for i in 0..self.nodes.len() {
                for &c in &self.nodes[i].children {
                    let link = self.nodes[c].link.as_ref().expect("child has link");
                    let keys = db.column(self.nodes[i].table, link.parent_key).codes();
                    let mut next = Vec::with_capacity(partial.len());
                    for t in partial {
                        let matches = t[i].map_or(&[][..], |r| link.buckets.get(keys[r as usize]));
                        if matches.is_empty() {
                            next.push(t);
                        } else {
                            for &m in matches {
                                let mut t2 = t.clone();
                                t2[c] = Some(m);
                                next.push(t2);
                            }
                        }
                    }
                    partial = next;
                }
            }
            out.extend(partial);
        }
        out
    }

    /// Encodes a tuple over the layout.
    pub fn encode(&self, db: &Database, tuple: &JoinTuple, out: &mut Vec<Code>) {
        out.clear();
        let row_of = |t: TableId| {
            let i = self.nodes.iter().position(|n| n.table == t).expect("table in join");
            tuple[i]
        };
        let mut fanout = 0;
        for a in &self.layout.attrs {
            let code = match &a.kind {
                AttrKind::Base { table, column } => {
                    row_of(*table).map_or(NULL_CODE, |r| db.column(*table, *column).codes()[r as usize])
                }
                AttrKind::TableFlag(t) => Code::from(row_of(*t).is_some()),
                AttrKind::Fanout { .. } => {
                    let f = &self.fanouts[fanout];
                    fanout += 1;
                    row_of(f.from).map_or(0, |r| f.per_row[r as usize])
                }
            };
            out.push(code);
        }
    }

    fn encode_all(&self, db: &Database, tuples: impl Iterator<Item = JoinTuple>) -> Vec<Vec<Code>> {
        let mut columns = vec![Vec::new(); self.layout.len()];
        let mut buf = Vec::with_capacity(self.layout.len());
        for t in tuples {
            self.encode(db, &t, &mut buf);
            for (col, code) in columns.iter_mut().zip(&buf) {
                col.push(*code);
            }
        }
        columns
    }

    pub fn materialize(&self, db: &Database, threshold: u128) -> Result<JoinedRelation> {
        if self.size > threshold {
            return Err(Error::JoinTooLarge {
                subschema: self.layout.name.clone(),
                size: self.size,
                threshold,
            });
        }
        Ok(JoinedRelation {
            layout: self.layout.clone(),
            size: self.size,
            columns: self.encode_all(db, self.tuples(db).into_iter()),
        })
    }

    pub fn sample(&self, db: &Database, n: usize, seed: u64) -> Result<JoinSample> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        if self.size == 0 {
            return Err(Error::EmptyRelation(self.layout.name.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tuples = (0..n).map(|_| self.sample_tuple(db, &mut rng));
        let columns = self.encode_all(db, tuples);
        Ok(JoinSample {
            layout: self.layout.clone(),
            seed,
            columns,
        })
    }
}

fn overflow(name: &str) -> Error {
    Error::JoinTooLarge {
        subschema: name.to_string(),
        size: u128::MAX,
        threshold: u128::MAX,
    }
}

/// Materialized full outer join in columnar form.
#[derive(Clone, Debug, PartialEq)]
pub struct JoinedRelation {
    pub layout: JoinLayout,
    pub size: u128,
    pub columns: Vec<Vec<Code>>,
}

impl JoinedRelation {
    pub fn row(&self, r: usize) -> Vec<Code> {
        self.columns.iter().map(|c| c[r]).collect()
    }
}

/// Encoded join rows drawn uniformly with replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct JoinSample {
    pub layout: JoinLayout,
    pub seed: u64,
    pub columns: Vec<Vec<Code>>,
}

impl JoinSample {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, r: usize) -> Vec<Code> {
        self.columns.iter().map(|c| c[r]).collect()
    }
}

pub fn materialize(db: &Database, sub: &Subschema, threshold: u128) -> Result<JoinedRelation> {
    TreeJoin::for_subschema(db, sub)?.materialize(db, threshold)
}

pub fn sample_join(db: &Database, sub: &Subschema, n: usize, seed: u64) -> Result<JoinSample> {
    TreeJoin::for_subschema(db, sub)?.sample(db, n, seed)
}

const SAMPLE_MAGIC: &[u8; 5] = b"CINJ1";

#[derive(Serialize, Deserialize)]
struct SampleHeader {
    layout: JoinLayout,
    count: u64,
    seed: u64,
}

pub fn write_sample(path: &Path, sample: &JoinSample) -> Result<()> {
    let header = serde_json::to_vec(&SampleHeader {
        layout: sample.layout.clone(),
        count: sample.len() as u64,
        seed: sample.seed,
    })?;
    let mut buf = Vec::with_capacity(16 + header.len() + 4 * sample.len() * sample.columns.len());
    buf.extend_from_slice(SAMPLE_MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for col in &sample.columns {
        for c in col {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_sample(path: &Path) -> Result<JoinSample> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::SampleFormat(format!("{}: {m}", path.display()));
    if bytes.len() < 9 || &bytes[..5] != SAMPLE_MAGIC {
        return Err(bad("missing CINJ1 magic"));
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let header_end = 9 + hlen;
    if bytes.len() < header_end {
        return Err(bad("truncated header"));
    }
    let header: SampleHeader =
        serde_json::from_slice(&bytes[9..header_end]).map_err(|e| bad(&e.to_string()))?;
    let n = header.count as usize;
    let ncols = header.layout.len();
    if bytes.len() != header_end + 4 * n * ncols {
        return Err(bad("column data length does not match header"));
    }
    let columns = (0..ncols)
        .map(|j| {
            let start = header_end + 4 * n * j;
            bytes[start..start + 4 * n]
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect()
        })
        .collect();
    Ok(JoinSample {
        layout: header.layout,
        seed: header.seed,
        columns,
    })
}

/// Exact inner-join result size of `query`, predicates applied.
pub fn true_cardinality(query: &Query, db: &Database) -> u128 {
    let schema = &db.schema;
    let tables = query.graph.tables();
    let pass: Vec<Vec<bool>> = tables
        .iter()
        .map(|t| {
            let n = db.table(*t).row_count;
            let mut keep = vec![true; n];
            for ((pt, c), set) in &query.predicates {
                if pt == t {
                    let codes = db.column(*t, *c).codes();
                    for (k, code) in keep.iter_mut().zip(codes) {
                        *k = *k && set.contains(*code);
                    }
                }
            }
            keep
        })
        .collect();

    // Root at the first table; order nodes parents-first.
    let pos = |t: TableId| tables.iter().position(|x| *x == t).expect("query table");
    let mut order = vec![0usize];
    let mut parent: Vec<Option<(usize, EdgeId)>> = vec![None; tables.len()];
    let mut seen = vec![false; tables.len()];
    seen[0] = true;
    let mut i = 0;
    while i < order.len() {
        let cur = order[i];
        for &e in query.graph.edges() {
            let fk = schema.edge(e);
            let (a, b) = (pos(fk.one), pos(fk.many));
            let other = if a == cur {
                b
            } else if b == cur {
                a
            } else {
                continue;
            };
            if !seen[other] {
                seen[other] = true;
                parent[other] = Some((cur, e));
                order.push(other);
            }
        }
        i += 1;
    }

    let mut count: Vec<Vec<u128>> = pass
        .iter()
        .map(|p| p.iter().map(|k| u128::from(*k)).collect())
        .collect();
    for &node in order.iter().rev() {
        let Some((p, edge)) = parent[node] else { continue };
        let (pk, ck) = edge_columns(db, edge, tables[p]);
        let parent_col = db.column(tables[p], pk);
        let child_col = db.column(tables[node], ck);
        let trans = key_translation(child_col, parent_col);
        let mut per_key = vec![0u128; parent_col.domain_size()];
        for (r, &c) in child_col.codes().iter().enumerate() {
            if let Some(pc) = trans[c as usize] {
                per_key[pc as usize] += count[node][r];
            }
        }
        let keys = parent_col.codes();
        for (r, cnt) in count[p].iter_mut().enumerate() {
            *cnt = if keys[r] == NULL_CODE { 0 } else { *cnt * per_key[keys[r] as usize] };
        }
    }
    count[0].iter().sum()
}
