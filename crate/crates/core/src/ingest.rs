//! CSV loading, dictionary encoding and workload parsing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{CodeSet, Query};
use crate::schema::{ColumnKind, QueryGraph, SchemaGraph, TableDecl, TableId};

/// Dictionary code of a value. Code 0 is reserved for NULL.
pub type Code = u32;
pub const NULL_CODE: Code = 0;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl Value {
    /// Parses a raw cell according to the column kind; empty means NULL.
    pub fn parse(raw: &str, kind: ColumnKind) -> std::result::Result<Option<Value>, String> {
        if raw.is_empty() {
            return Ok(None);
        }
        match kind {
            ColumnKind::Categorical => Ok(Some(Value::Text(raw.to_string()))),
            ColumnKind::Integer => raw
                .trim()
                .parse::<i64>()
                .map(|v| Some(Value::Int(v)))
                .map_err(|_| format!("`{raw}` is not an integer")),
        }
    }

    fn coerce(literal: &serde_json::Value, kind: ColumnKind) -> Result<Value> {
        let bad = || Error::Workload(format!("literal {literal} does not fit a {kind:?} column"));
        match (kind, literal) {
            (ColumnKind::Integer, serde_json::Value::Number(n)) => n.as_i64().map(Value::Int).ok_or_else(bad),
            (ColumnKind::Integer, serde_json::Value::String(s)) => {
                s.trim().parse().map(Value::Int).map_err(|_| bad())
            }
            (ColumnKind::Categorical, serde_json::Value::String(s)) => Ok(Value::Text(s.clone())),
            (ColumnKind::Categorical, serde_json::Value::Number(n)) => Ok(Value::Text(n.to_string())),
            _ => Err(bad()),
        }
    }
}

/// Dictionary-encoded column. `dictionary[i]` has code `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    dictionary: Vec<Value>,
    lookup: HashMap<Value, Code>,
    codes: Vec<Code>,
}

impl Column {
    pub fn from_values(name: &str, kind: ColumnKind, values: &[Option<Value>]) -> Column {
        let distinct: BTreeSet<&Value> = values.iter().flatten().collect();
        let dictionary: Vec<Value> = distinct.into_iter().cloned().collect();
        let lookup: HashMap<Value, Code> = dictionary
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as Code + 1))
            .collect();
        let codes = values
            .iter()
            .map(|v| v.as_ref().map_or(NULL_CODE, |v| lookup[v]))
            .collect();
        Column {
            name: name.to_string(),
            kind,
            dictionary,
            lookup,
            codes,
        }
    }

    /// Number of codes including NULL.
    pub fn domain_size(&self) -> usize {
        self.dictionary.len() + 1
    }

    pub fn dictionary(&self) -> &[Value] {
        &self.dictionary
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn encode(&self, value: &Value) -> Option<Code> {
        self.lookup.get(value).copied()
    }

    pub fn decode(&self, code: Code) -> Option<&Value> {
        if code == NULL_CODE {
            None
        } else {
            self.dictionary.get(code as usize - 1)
        }
    }

    pub fn value(&self, row: usize) -> Option<&Value> {
        self.decode(self.codes[row])
    }

    /// Number of dictionary entries strictly below `v`.
    fn rank(&self, v: &Value) -> usize {
        self.dictionary.partition_point(|d| d < v)
    }

    /// Number of dictionary entries at or below `v`.
    fn rank_inclusive(&self, v: &Value) -> usize {
        self.dictionary.partition_point(|d| d <= v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub row_count: usize,
}

impl Table {
    pub fn from_rows(decl: &TableDecl, rows: &[Vec<Option<Value>>]) -> Table {
        let columns = decl
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| {
                let values: Vec<Option<Value>> = rows.iter().map(|r| r[c].clone()).collect();
                Column::from_values(&col.name, col.kind, &values)
            })
            .collect();
        Table {
            name: decl.name.clone(),
            columns,
            row_count: rows.len(),
        }
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        let mut record: Vec<String> = Vec::with_capacity(self.columns.len());
        for r in 0..self.row_count {
            record.clear();
            record.extend(
                self.columns
                    .iter()
                    .map(|c| c.value(r).map_or_else(String::new, |v| v.to_string())),
            );
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads a CSV whose header names exactly the declared columns (any order).
pub fn load_table(path: &Path, decl: &TableDecl) -> Result<Table> {
    let load_err = |row: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| load_err(0, e.to_string()))?;
    let header = reader.headers().map_err(|e| load_err(0, e.to_string()))?.clone();
    let mut position = vec![usize::MAX; decl.columns.len()];
    for (i, h) in header.iter().enumerate() {
        let c = decl
            .column_index(h.trim())
            .ok_or_else(|| load_err(0, format!("unknown column `{h}` for table `{}`", decl.name)))?;
        if position[c] != usize::MAX {
            return Err(load_err(0, format!("column `{h}` appears twice")));
        }
        position[c] = i;
    }
    if let Some(missing) = position.iter().position(|p| *p == usize::MAX) {
        return Err(load_err(0, format!("missing column `{}`", decl.columns[missing].name)));
    }
    let mut rows: Vec<Vec<Option<Value>>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| load_err(row, e.to_string()))?;
        if record.len() != header.len() {
            return Err(load_err(
                row,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let mut values = Vec::with_capacity(decl.columns.len());
        for (c, col) in decl.columns.iter().enumerate() {
            let v = Value::parse(&record[position[c]], col.kind)
                .map_err(|m| load_err(row, format!("column `{}`: {m}", col.name)))?;
            values.push(v);
        }
        rows.push(values);
    }
    Ok(Table::from_rows(decl, &rows))
}

/// A schema together with its loaded tables, indexed by [`TableId`].
#[derive(Clone, Debug)]
pub struct Database {
    pub schema: SchemaGraph,
    pub tables: Vec<Table>,
}

impl Database {
    pub fn new(schema: SchemaGraph, tables: Vec<Table>) -> Result<Self> {
        if tables.len() != schema.num_tables() {
            return Err(Error::InvalidArgument(format!(
                "{} tables for a schema with {}",
                tables.len(),
                schema.num_tables()
            )));
        }
        for (t, decl) in tables.iter().zip(schema.tables()) {
            if t.name != decl.name || t.columns.len() != decl.columns.len() {
                return Err(Error::InvalidArgument(format!("table `{}` does not match its declaration", t.name)));
            }
        }
        Ok(Database { schema, tables })
    }

    /// Reads `<dir>/<table>.csv` for every declared table.
    pub fn load(schema: SchemaGraph, dir: &Path) -> Result<Self> {
        let mut tables = Vec::with_capacity(schema.num_tables());
        for decl in schema.tables() {
            let path = dir.join(format!("{}.csv", decl.name));
            if !path.exists() {
                return Err(Error::Load {
                    path,
                    row: 0,
                    message: format!("missing data file for table `{}`", decl.name),
                });
            }
            tables.push(load_table(&path, decl)?);
        }
        Database::new(schema, tables)
    }

    pub fn table(&self, id: TableId) -> &Table {
        &self.tables[id.0]
    }

    pub fn column(&self, table: TableId, column: usize) -> &Column {
        &self.tables[table.0].columns[column]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinSpec {
    pub one: String,
    pub many: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateSpec {
    pub column: String,
    pub op: String,
    pub values: Vec<serde_json::Value>,
}

/// Query as written in a workload file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    #[serde(default)]
    pub joins: Vec<JoinSpec>,
    #[serde(default)]
    pub predicates: Vec<PredicateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_cardinality: Option<u64>,
    /// Extra tables to include; needed for predicate-free single-table queries.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub queries: Vec<QuerySpec>,
}

impl Workload {
    pub fn read(path: &Path) -> Result<Workload> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Workload(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Bound query plus the stored true cardinality, if any.
#[derive(Clone, Debug)]
pub struct WorkloadQuery {
    pub query: Query,
    pub true_cardinality: Option<u64>,
}

/// Reads and binds every query of a workload file against `db`.
pub fn parse_workload(path: &Path, db: &Database) -> Result<Vec<WorkloadQuery>> {
    let workload = Workload::read(path)?;
    workload
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            bind_query(q, db)
                .map(|query| WorkloadQuery {
                    query,
                    true_cardinality: q.true_cardinality,
                })
                .map_err(|e| match e {
                    Error::CyclicQuery(m) => Error::CyclicQuery(format!("query {i}: {m}")),
                    other => Error::Workload(format!("query {i}: {other}")),
                })
        })
        .collect()
}

/// Resolves names and normalizes predicates to code sets.
pub fn bind_query(spec: &QuerySpec, db: &Database) -> Result<Query> {
    let schema = &db.schema;
    let mut tables = BTreeSet::new();
    let mut edges = Vec::new();
    for j in &spec.joins {
        let one = schema.resolve(&j.one)?;
        let many = schema.resolve(&j.many)?;
        let e = schema
            .find_edge(one, many)
            .ok_or_else(|| Error::InvalidQuery(format!("no foreign key {} -> {}", j.one, j.many)))?;
        tables.insert(one.0);
        tables.insert(many.0);
        edges.push(e);
    }
    for t in &spec.tables {
        tables.insert(
            schema
                .table_id(t)
                .ok_or_else(|| Error::InvalidQuery(format!("unknown table `{t}`")))?,
        );
    }
    let mut predicates: BTreeMap<(TableId, usize), CodeSet> = BTreeMap::new();
    for p in &spec.predicates {
        let (t, c) = schema
            .resolve(&p.column)
            .map_err(|_| Error::UnknownAttribute(p.column.clone()))?;
        tables.insert(t);
        let set = normalize_predicate(db.column(t, c), &p.op, &p.values)?;
        let merged = match predicates.remove(&(t, c)) {
            Some(prev) => prev.intersect(&set),
            None => set,
        };
        predicates.insert((t, c), merged);
    }
    let graph = QueryGraph::new(schema, tables.into_iter().collect(), edges)?;
    Ok(Query::new(graph, predicates))
}

/// Maps a predicate over raw values onto the codes of `column`.
pub fn normalize_predicate(column: &Column, op: &str, values: &[serde_json::Value]) -> Result<CodeSet> {
    let arity = |n: usize| {
        if values.len() == n {
            Ok(())
        } else {
            Err(Error::Workload(format!("operator {op} takes {n} value(s), got {}", values.len())))
        }
    };
    let lit = |i: usize| Value::coerce(&values[i], column.kind);
    let max = column.dictionary.len() as Code;
    // dictionary positions [lo, hi) map to codes lo+1 ..= hi
    let interval = |lo: usize, hi: usize| CodeSet::interval(lo as Code + 1, hi as Code);
    let set = match op.to_ascii_uppercase().as_str() {
        "=" => {
            arity(1)?;
            CodeSet::from_codes(column.encode(&lit(0)?))
        }
        "!=" | "<>" => {
            arity(1)?;
            let skip = column.encode(&lit(0)?);
            CodeSet::from_codes((1..=max).filter(|c| Some(*c) != skip))
        }
        "<" => {
            arity(1)?;
            interval(0, column.rank(&lit(0)?))
        }
        "<=" => {
            arity(1)?;
            interval(0, column.rank_inclusive(&lit(0)?))
        }
        ">" => {
            arity(1)?;
            interval(column.rank_inclusive(&lit(0)?), max as usize)
        }
        ">=" => {
            arity(1)?;
            interval(column.rank(&lit(0)?), max as usize)
        }
        "BETWEEN" => {
            arity(2)?;
            interval(column.rank(&lit(0)?), column.rank_inclusive(&lit(1)?))
        }
        "IN" => {
            if values.is_empty() {
                return Err(Error::Workload("IN needs at least one value".into()));
            }
            let mut codes = Vec::new();
            for i in 0..values.len() {
                codes.extend(column.encode(&lit(i)?));
            }
            CodeSet::from_codes(codes)
        }
        other => return Err(Error::Workload(format!("unknown operator `{other}`"))),
    };
    Ok(set)
}
