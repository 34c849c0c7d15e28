//! Runs estimators over a workload and aggregates their errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{q_error, Percentiles};
use super::planner::{p_error_from, subquery_cardinalities};
use crate::error::Result;
use crate::ingest::{Database, WorkloadQuery};
use crate::joiner::true_cardinality;
use crate::query::Query;

/// A cardinality estimator under evaluation.
pub trait Method {
    fn name(&self) -> &str;
    fn estimate(&self, query: &Query) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Also plan every query and report P-Error.
    pub p_error: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { p_error: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub query: usize,
    pub true_cardinality: u64,
    pub estimate: Option<f64>,
    pub q_error: Option<f64>,
    pub p_error: Option<f64>,
    pub error: Option<String>,
    /// Wall-clock time of the top-level estimate; kept out of the results file.
    #[serde(skip)]
    pub response_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub queries: usize,
    pub failures: usize,
    pub q_error: Option<Percentiles>,
    pub p_error: Option<Percentiles>,
    #[serde(skip)]
    pub mean_response_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<MetricRow>,
    pub summaries: Vec<MethodSummary>,
}

impl BenchReport {
    /// One JSON record per row followed by one `{"summary": ...}` record per method.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        for s in &self.summaries {
            out.push_str(&serde_json::to_string(&serde_json::json!({ "summary": s }))?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Per-row timings, separate from the deterministic results.
    pub fn timings_json(&self) -> Result<String> {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| serde_json::json!({ "method": r.method, "query": r.query, "response_ms": r.response_ms }))
            .collect();
        let means: BTreeMap<_, _> = self.summaries.iter().map(|s| (s.method.clone(), s.mean_response_ms)).collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({ "rows": rows, "mean_response_ms": means }))?)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>5} {:>5} | {:>9} {:>9} {:>9} {:>9} {:>9} | {:>9} {:>9} {:>9} {:>9} {:>9}",
            "method", "n", "fail", "q50", "q90", "q95", "q99", "qmax", "p50", "p90", "p95", "p99", "pmax"
        );
        let cells = |p: &Option<Percentiles>| match p {
            Some(p) => [p.median, p.p90, p.p95, p.p99, p.max].map(|v| format!("{v:>9.3}")).join(" "),
            None => ["-"; 5].map(|v| format!("{v:>9}")).join(" "),
        };
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{:<12} {:>5} {:>5} | {} | {}",
                s.method,
                s.queries,
                s.failures,
                cells(&s.q_error),
                cells(&s.p_error)
            );
        }
        out
    }

    pub fn timing_table(&self) -> String {
        let mut out = String::new();
        for s in &self.summaries {
            let _ = writeln!(out, "{:<12} mean response {:.3} ms", s.method, s.mean_response_ms);
        }
        out
    }
}

/// Evaluates every method on every query. A failing estimate is recorded
/// in its row and does not stop the run.
pub fn run_benchmark(
    db: &Database,
    workload: &[WorkloadQuery],
    methods: &[&dyn Method],
    config: &BenchConfig,
) -> Result<BenchReport> {
    let truths: Vec<u64> = workload
        .iter()
        .map(|q| q.true_cardinality.unwrap_or_else(|| true_cardinality(&q.query, db) as u64))
        .collect();
    let oracle = |q: &Query| Ok(true_cardinality(q, db) as f64);
    let true_subs = if config.p_error {
        workload
            .iter()
            .map(|q| subquery_cardinalities(&q.query, db, &oracle).map(Some))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; workload.len()]
    };

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for m in methods {
        let mut q_errors = Vec::new();
        let mut p_errors = Vec::new();
        let mut failures = 0;
        let mut total_ms = 0.0;
        for (i, wq) in workload.iter().enumerate() {
            let start = Instant::now();
            let estimate = m.estimate(&wq.query);
            let response_ms = start.elapsed().as_secs_f64() * 1e3;
            total_ms += response_ms;
            let mut row = MetricRow {
                method: m.name().to_string(),
                query: i,
                true_cardinality: truths[i],
                estimate: None,
                q_error: None,
                p_error: None,
                error: None,
                response_ms,
            };
            match estimate {
                Ok(c) => {
                    row.estimate = Some(c);
                    let q = q_error(truths[i] as f64, c);
                    row.q_error = Some(q);
                    q_errors.push(q);
                    if let Some(truth) = &true_subs[i] {
                        let est = |sub: &Query| m.estimate(sub);
                        match subquery_cardinalities(&wq.query, db, &est) {
                            Ok(est) => {
                                let p = p_error_from(&wq.query, &db.schema, &est, truth);
                                row.p_error = Some(p);
                                p_errors.push(p);
                            }
                            Err(e) => row.error = Some(e.to_string()),
                        }
                    }
                }
                Err(e) => {
                    failures += 1;
                    row.error = Some(e.to_string());
                }
            }
            rows.push(row);
        }
        summaries.push(MethodSummary {
            method: m.name().to_string(),
            queries: workload.len(),
            failures,
            q_error: (!q_errors.is_empty()).then(|| Percentiles::of(&q_errors)),
            p_error: (!p_errors.is_empty()).then(|| Percentiles::of(&p_errors)),
            mean_response_ms: if workload.is_empty() { 0.0 } else { total_ms / workload.len() as f64 },
        });
    }
    Ok(BenchReport { rows, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::evaluation::synth::{generate_synthetic, SynthSpec};
    use crate::ingest::bind_query;

    struct Truth<'a>(&'a Database);
    impl Method for Truth<'_> {
        fn name(&self) -> &str {
            "truth"
        }
        fn estimate(&self, q: &Query) -> Result<f64> {
            Ok(true_cardinality(q, self.0) as f64)
        }
    }

    struct Broken;
    impl Method for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn estimate(&self, q: &Query) -> Result<f64> {
            if q.graph.tables().len() > 2 {
                Err(Error::Unsupported("too wide".into()))
            } else {
                Ok(1.0)
            }
        }
    }

    #[test]
    fn oracle_scores_one_and_failures_are_recorded() {
        let spec = SynthSpec { rows_s: 200, rows_u: 200, rows_w: 200, queries: 10, ..SynthSpec::default() };
        let (db, w) = generate_synthetic(&spec, 5).unwrap();
        let wl: Vec<WorkloadQuery> = w
            .queries
            .iter()
            .map(|q| WorkloadQuery { query: bind_query(q, &db).unwrap(), true_cardinality: q.true_cardinality })
            .collect();
        let truth = Truth(&db);
        let report = run_benchmark(&db, &wl, &[&truth, &Broken], &BenchConfig::default()).unwrap();
        assert_eq!(report.rows.len(), 20);
        let s = &report.summaries[0];
        assert_eq!(s.q_error.as_ref().unwrap().max, 1.0);
        assert_eq!(s.p_error.as_ref().unwrap().max, 1.0);
        let b = &report.summaries[1];
        assert!(b.failures > 0 && b.failures < 10);
        assert!(report.rows[10..].iter().all(|r| r.p_error.is_none_or(|p| p >= 1.0)));
        let jsonl = report.to_jsonl().unwrap();
        assert_eq!(jsonl.lines().count(), 22);
        assert!(!jsonl.contains("response"));
        assert!(report.table().contains("broken"));
    }
}
