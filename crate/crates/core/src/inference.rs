//! Cardinality estimation by traversing the selected subschemas.
//!
//! The root subschema contributes its join size. Every step then estimates,
//! by progressive sampling, the probability that a join row satisfies the
//! query's predicates and contains all required tables, multiplied by the
//! fanouts into the next subschemas. Values drawn for tables shared with
//! later steps are carried forward so later estimators condition on them.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{DensityEstimator, ExactEstimator, MASK};
use crate::ingest::{Code, Database};
use crate::joiner::JoinLayout;
pub use crate::query::{CodeSet, Query};
use crate::schema::{
    build_traversal_plan, select_subschemas, RootChoice, SubschemaHypergraph, TableId,
};

pub const DEFAULT_SAMPLES: usize = 2000;

/// How per-step results are folded into one estimate.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combine {
    /// Each step multiplies the estimate by the mean over samples of
    /// probability times sampled fanouts.
    #[default]
    StepMean,
    /// Each step multiplies by the mean probability and, separately, by the
    /// mean of every sampled fanout.
    Separated,
    /// Per-sample products are accumulated along each sample's path through
    /// all steps and averaged once at the end.
    SamplePath,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub samples: usize,
    pub seed: u64,
    pub combine: Combine,
    /// Carry sampled values of shared tables into later steps.
    pub condition_across: bool,
    #[serde(skip)]
    pub root: RootChoice,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            samples: DEFAULT_SAMPLES,
            seed: 0,
            combine: Combine::default(),
            condition_across: true,
            root: RootChoice::default(),
        }
    }
}

/// Named per-subschema estimators.
#[derive(Default)]
pub struct EstimatorSet {
    map: BTreeMap<String, Box<dyn DensityEstimator>>,
}

impl EstimatorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, estimator: Box<dyn DensityEstimator>) {
        self.map.insert(name.into(), estimator);
    }

    pub fn get(&self, name: &str) -> Result<&dyn DensityEstimator> {
        self.map
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::MissingEstimator(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Exact estimators over the materialized join of every subschema.
    pub fn exact(db: &Database, hypergraph: &SubschemaHypergraph, threshold: u128) -> Result<Self> {
        let mut set = EstimatorSet::new();
        for sub in hypergraph.all() {
            let relation = crate::joiner::materialize(db, sub, threshold)?;
            set.insert(sub.name.clone(), Box::new(ExactEstimator::new(relation)));
        }
        Ok(set)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub subschema: String,
    /// Mean over samples of the predicate-and-flag probability.
    pub selectivity: f64,
    pub mean_fanouts: Vec<f64>,
    /// Factor this step contributed to the estimate (1 under [`Combine::SamplePath`]).
    pub factor: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub cardinality: f64,
    pub root_size: f64,
    pub steps: Vec<StepDiagnostics>,
}

/// Membership mask of a predicate range over `0..domain`; NULL is never set.
pub fn evaluate_predicate_range(range: &CodeSet, domain: usize) -> Vec<bool> {
    range.mask(domain)
}

/// Attributes to process in one progressive-sampling pass, by layout index.
#[derive(Clone, Debug, Default)]
pub struct StepRequest<'a> {
    /// Processed in the given order.
    pub predicates: Vec<(usize, &'a CodeSet)>,
    pub flags: Vec<usize>,
    pub fanouts: Vec<usize>,
    pub common: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Per sample: product of filtered masses and flag probabilities.
    pub probabilities: Vec<f64>,
    /// Per requested fanout attribute, per sample: the sampled fanout value.
    pub fanouts: Vec<Vec<u64>>,
    /// Final inputs, `samples x layout width`, including every drawn value.
    pub inputs: Vec<Code>,
}

fn draw<R: Rng>(rng: &mut R, dist: &[f64], mask: Option<&[bool]>, total: f64) -> Code {
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (c, p) in dist.iter().enumerate() {
        if mask.is_some_and(|m| !m[c]) || *p <= 0.0 {
            continue;
        }
        last = Some(c);
        if u < *p {
            return c as Code;
        }
        u -= p;
    }
    last.unwrap_or(0) as Code
}

/// Progressive sampling over one estimator.
///
/// `inputs` arrives pre-filled with conditioning values (MASK elsewhere).
/// Predicated attributes are filtered, their mass accumulated and a value
/// drawn from the renormalized distribution; table flags are then fixed to
/// true with their probability accumulated; fanouts and common attributes
/// are drawn unfiltered. A sample whose filtered mass is zero scores zero
/// and keeps drawing from the unfiltered distribution.
pub fn estimate_n<R: Rng>(
    estimator: &dyn DensityEstimator,
    request: &StepRequest<'_>,
    mut inputs: Vec<Code>,
    rng: &mut R,
) -> Result<StepOutcome> {
    let layout = estimator.layout();
    let width = layout.len();
    let n = inputs.len() / width.max(1);
    let mut prob = vec![1.0f64; n];

    for &(attr, range) in &request.predicates {
        let dom = layout.attrs[attr].domain;
        let mask = evaluate_predicate_range(range, dom);
        let dist = estimator.conditionals(&inputs, attr)?;
        for i in 0..n {
            let d = &dist[i * dom..(i + 1) * dom];
            let mass: f64 = d.iter().zip(&mask).filter(|(_, m)| **m).map(|(p, _)| *p).sum();
            let code = if mass > 0.0 {
                prob[i] *= mass;
                draw(rng, d, Some(&mask), mass)
            } else {
                prob[i] = 0.0;
                draw(rng, d, None, d.iter().sum())
            };
            inputs[i * width + attr] = code;
        }
    }

    for &attr in &request.flags {
        let dist = estimator.conditionals(&inputs, attr)?;
        for i in 0..n {
            prob[i] *= dist[i * 2 + 1];
            inputs[i * width + attr] = 1;
        }
    }

    let mut fanouts = Vec::with_capacity(request.fanouts.len());
    for &attr in &request.fanouts {
        let dom = layout.attrs[attr].domain;
        let dist = estimator.conditionals(&inputs, attr)?;
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let d = &dist[i * dom..(i + 1) * dom];
            let code = draw(rng, d, None, d.iter().sum());
            inputs[i * width + attr] = code;
            values.push(layout.fanout_value(attr, code));
        }
        fanouts.push(values);
    }

    for &attr in &request.common {
        let dom = layout.attrs[attr].domain;
        let dist = estimator.conditionals(&inputs, attr)?;
        for i in 0..n {
            let d = &dist[i * dom..(i + 1) * dom];
            inputs[i * width + attr] = draw(rng, d, None, d.iter().sum());
        }
    }

    Ok(StepOutcome {
        probabilities: prob,
        fanouts,
        inputs,
    })
}

/// Sampled values of shared tables, one column per (table, column).
#[derive(Clone, Debug, Default)]
pub struct SampleBank {
    values: BTreeMap<(TableId, usize), Vec<Code>>,
}

impl SampleBank {
    pub fn tables(&self) -> BTreeSet<TableId> {
        self.values.keys().map(|(t, _)| *t).collect()
    }

    pub fn get(&self, table: TableId, column: usize) -> Option<&[Code]> {
        self.values.get(&(table, column)).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn layout_index(layout: &JoinLayout, what: &str, found: Option<usize>) -> Result<usize> {
    found.ok_or_else(|| Error::UnknownAttribute(format!("{what} in {}", layout.name)))
}

/// Estimates the inner-join cardinality of `query`.
pub fn estimate_cardinality(
    query: &Query,
    hypergraph: &SubschemaHypergraph,
    db: &Database,
    estimators: &EstimatorSet,
    config: &InferenceConfig,
) -> Result<EstimateResult> {
    if config.samples == 0 {
        return Err(Error::InvalidArgument("at least one progressive sample is required".into()));
    }
    let schema = &db.schema;
    let selected = select_subschemas(hypergraph, schema, &query.graph)?;
    let plan = build_traversal_plan(&selected, schema, &query.graph, config.root)?;
    for s in &plan.hyperedges {
        estimators.get(&s.name)?;
    }
    let n = config.samples;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let root = estimators.get(&plan.hyperedges[plan.root].name)?;
    let root_size = root.relation_size() as f64;

    let mut bank = SampleBank::default();
    let mut visited: BTreeSet<TableId> = BTreeSet::new();
    let mut path = vec![1.0f64; n];
    let mut estimate = root_size;
    let mut diagnostics = Vec::with_capacity(plan.steps.len());

    for step in &plan.steps {
        let sub = &plan.hyperedges[step.hyperedge];
        let est = estimators.get(&sub.name)?;
        let layout = est.layout();
        let width = layout.len();

        let mut inputs = vec![MASK; n * width];
        for t in visited.iter().filter(|t| layout.contains_table(**t)) {
            let f = layout_index(layout, "table flag", layout.flag_index(*t))?;
            for i in 0..n {
                inputs[i * width + f] = 1;
            }
        }
        for (&(t, c), values) in &bank.values {
            if let Some(a) = layout.base_index(t, c) {
                for i in 0..n {
                    inputs[i * width + a] = values[i];
                }
            }
        }

        let fresh: Vec<TableId> = step
            .active_tables
            .iter()
            .copied()
            .filter(|t| !visited.contains(t))
            .collect();
        let mut predicates = Vec::new();
        for &t in &fresh {
            for (&(pt, c), range) in query.predicates.range((t, 0)..=(t, usize::MAX)) {
                let a = layout_index(layout, &schema.column_ref(pt, c), layout.base_index(pt, c))?;
                if inputs[a] == MASK && range.len_within(layout.attrs[a].domain) < layout.attrs[a].domain {
                    predicates.push((a, range));
                }
            }
        }
        predicates.sort_by_key(|(a, r)| (r.len_within(layout.attrs[*a].domain), *a));
        let flags = fresh
            .iter()
            .map(|t| layout_index(layout, "table flag", layout.flag_index(*t)))
            .collect::<Result<Vec<_>>>()?;
        let fanouts = step
            .fanout_edges
            .iter()
            .map(|e| layout_index(layout, &schema.edge_label(*e), layout.fanout_index(*e)))
            .collect::<Result<Vec<_>>>()?;
        let mut common = Vec::new();
        if config.condition_across {
            for &t in &step.common_tables {
                for c in 0..schema.table(t).columns.len() {
                    let a = layout_index(layout, &schema.column_ref(t, c), layout.base_index(t, c))?;
                    if inputs[a] == MASK && !predicates.iter().any(|(p, _)| *p == a) {
                        common.push(a);
                    }
                }
            }
        }
        let request = StepRequest {
            predicates,
            flags,
            fanouts,
            common,
        };
        let outcome = estimate_n(est, &request, inputs, &mut rng)?;

        let per_sample: Vec<f64> = (0..n)
            .map(|i| {
                outcome
                    .fanouts
                    .iter()
                    .fold(outcome.probabilities[i], |acc, f| acc * f[i] as f64)
            })
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let selectivity = mean(&outcome.probabilities);
        let mean_fanouts: Vec<f64> = outcome
            .fanouts
            .iter()
            .map(|f| f.iter().map(|v| *v as f64).sum::<f64>() / n as f64)
            .collect();
        let factor = match config.combine {
            Combine::StepMean => mean(&per_sample),
            Combine::Separated => selectivity * mean_fanouts.iter().product::<f64>(),
            Combine::SamplePath => {
                for (p, s) in path.iter_mut().zip(&per_sample) {
                    *p *= s;
                }
                1.0
            }
        };
        estimate *= factor;
        diagnostics.push(StepDiagnostics {
            subschema: sub.name.clone(),
            selectivity,
            mean_fanouts,
            factor,
            samples: n,
        });

        if config.condition_across {
            for &t in &step.common_tables {
                for c in 0..schema.table(t).columns.len() {
                    let a = layout.base_index(t, c).expect("checked above");
                    let col = (0..n).map(|i| outcome.inputs[i * width + a]).collect();
                    bank.values.insert((t, c), col);
                }
            }
        }
        visited.extend(step.active_tables.iter().copied());
    }

    if config.combine == Combine::SamplePath {
        estimate *= path.iter().sum::<f64>() / n as f64;
    }
    Ok(EstimateResult {
        cardinality: estimate.max(0.0),
        root_size,
        steps: diagnostics,
    })
}

/// Samples used for one [`estimate_n`] pass when called directly.
pub fn fresh_inputs(layout: &JoinLayout, samples: usize) -> Vec<Code> {
    vec![MASK; samples * layout.len()]
}

/// Splits a seed so independent callers draw independent streams.
pub fn derive_seed(seed: u64, salt: &str) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::evaluation::stable_hash(salt));
    rng.random()
}
