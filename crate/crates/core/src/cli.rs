//! Command-line surface: `partition`, `join-sample`, `train`, `estimate`,
//! `evaluate` and `synth`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{estimate_independent, estimate_universal, HistogramSet, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::estimator::{load_model, save_model, train_dae, DaeConfig, DensityEstimator, ExactEstimator};
use crate::evaluation::{generate_synthetic, run_benchmark, BenchConfig, Method, SynthSpec};
use crate::inference::{derive_seed, estimate_cardinality, Combine, EstimatorSet, InferenceConfig, DEFAULT_SAMPLES};
use crate::ingest::{parse_workload, Database};
use crate::joiner::{write_sample, TreeJoin, DEFAULT_MATERIALIZE_THRESHOLD};
use crate::query::Query;
use crate::schema::{check_connected, partition, RootChoice, SchemaGraph, Subschema, SubschemaHypergraph};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Name of the model file trained on the whole schema's join.
pub const UNIVERSAL_MODEL: &str = "universal";

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Exact,
    Dae,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub backend: Backend,
    /// Join samples drawn per subschema for training.
    pub train_samples: usize,
    /// Progressive samples per estimate.
    pub samples: usize,
    pub seed: u64,
    pub combine: Combine,
    pub condition_across: bool,
    pub dae: DaeConfig,
    pub methods: Vec<String>,
    pub histogram_bins: usize,
    /// Also train a model over the universal relation.
    pub train_universal: bool,
    pub materialize_threshold: u128,
    pub p_error: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: None,
            data: None,
            models: None,
            backend: Backend::Exact,
            train_samples: 10_000,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            combine: Combine::default(),
            condition_across: true,
            dae: DaeConfig::default(),
            methods: vec!["subschema".into()],
            histogram_bins: DEFAULT_BINS,
            train_universal: false,
            materialize_threshold: DEFAULT_MATERIALIZE_THRESHOLD,
            p_error: true,
        }
    }
}

impl RunConfig {
    fn schema_path(&self) -> Result<&Path> {
        self.schema.as_deref().ok_or_else(|| usage("no schema given (--schema or config `schema`)"))
    }

    fn data_dir(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| usage("no data directory given (--data or config `data`)"))
    }

    fn model_dir(&self) -> Result<&Path> {
        self.models.as_deref().ok_or_else(|| usage("no model directory given (--models or config `models`)"))
    }

    fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            samples: self.samples,
            seed: self.seed,
            combine: self.combine,
            condition_across: self.condition_across,
            root: RootChoice::default(),
        }
    }
}

fn usage(msg: &str) -> Error {
    Error::InvalidArgument(msg.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "cincard", version, about = "Join cardinality estimation over schema subgraphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the subschemas of a schema and whether they connect.
    Partition {
        #[arg(long)]
        schema: PathBuf,
    },
    /// Draw join samples for subschemas and write them as CINJ1 files.
    JoinSample {
        #[command(flatten)]
        run: RunArgs,
        /// Subschema name; all subschemas when absent.
        #[arg(long)]
        subschema: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per subschema.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Parallel training jobs; 1 trains sequentially.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Estimate every query of a workload.
    Estimate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare methods on a workload and write per-query metrics.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        workload: PathBuf,
        /// Comma-separated: subschema, histogram, universal.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic dataset and workload.
    Synth {
        /// JSON generator spec; defaults apply to absent fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Config file plus overrides; flags win.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub universal: bool,
    #[arg(long)]
    pub no_conditioning: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| usage(&format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| usage(&format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = &self.schema {
            c.schema = Some(v.clone());
        }
        if let Some(v) = &self.data {
            c.data = Some(v.clone());
        }
        if let Some(v) = &self.models {
            c.models = Some(v.clone());
        }
        if let Some(v) = self.backend {
            c.backend = v;
        }
        if let Some(v) = self.train_samples {
            c.train_samples = v;
        }
        if let Some(v) = self.samples {
            c.samples = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.steps {
            c.dae.steps = v;
        }
        c.train_universal |= self.universal;
        if self.no_conditioning {
            c.condition_across = false;
        }
        Ok(c)
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::TrainingDiverged { .. }
        | Error::JoinTooLarge { .. }
        | Error::EmptyRelation(_)
        | Error::Planner { .. }
        | Error::Unsupported(_) => EXIT_RUNTIME,
        _ => EXIT_USAGE,
    }
}

struct Loaded {
    db: Database,
    hypergraph: SubschemaHypergraph,
}

fn load(config: &RunConfig) -> Result<Loaded> {
    let schema = SchemaGraph::load(config.schema_path()?)?;
    let db = Database::load(schema, config.data_dir()?)?;
    let hypergraph = partition(&db.schema);
    Ok(Loaded { db, hypergraph })
}

fn model_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.cinm"))
}

fn existing_model(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = model_path(dir, name);
    if p.exists() {
        Ok(p)
    } else {
        Err(usage(&format!("model file {} is missing; run `train` first", p.display())))
    }
}

pub fn partition_report(schema: &SchemaGraph) -> String {
    let h = partition(schema);
    let mut out = String::new();
    let _ = writeln!(out, "{} subschemas", h.hyperedges.len() + h.source_singletons.len());
    for s in h.all() {
        let _ = writeln!(out, "{}", s.describe(schema));
    }
    let verdict = if check_connected(&h, schema) { "connected" } else { "disconnected" };
    let _ = writeln!(out, "hypergraph: {verdict}");
    out
}

fn train_one(db: &Database, sub: &Subschema, config: &RunConfig, dir: &Path) -> Result<f64> {
    let join = TreeJoin::for_subschema(db, sub)?;
    train_join(db, &join, &sub.name, config, dir)
}

fn train_join(db: &Database, join: &TreeJoin, name: &str, config: &RunConfig, dir: &Path) -> Result<f64> {
    let sample = join.sample(db, config.train_samples, derive_seed(config.seed, &format!("sample:{name}")))?;
    let dae = DaeConfig { seed: derive_seed(config.seed, &format!("model:{name}")), ..config.dae.clone() };
    let (model, report) = train_dae(&sample, join.size(), &dae)?;
    save_model(&model_path(dir, name), &model)?;
    Ok(report.seconds)
}

/// Trains every subschema model, `workers` at a time (0 uses all cores).
pub fn train_all(config: &RunConfig, workers: usize) -> Result<Vec<(String, f64)>> {
    let Loaded { db, hypergraph } = load(config)?;
    let dir = config.model_dir()?;
    std::fs::create_dir_all(dir)?;
    let subs: Vec<&Subschema> = hypergraph.all().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut times = pool.install(|| {
        subs.par_iter()
            .map(|s| train_one(&db, s, config, dir).map(|t| (s.name.clone(), t)))
            .collect::<Result<Vec<_>>>()
    })?;
    if config.train_universal {
        let join = TreeJoin::universal(&db)?;
        times.push((UNIVERSAL_MODEL.into(), train_join(&db, &join, UNIVERSAL_MODEL, config, dir)?));
    }
    Ok(times)
}

fn estimators(loaded: &Loaded, config: &RunConfig) -> Result<EstimatorSet> {
    match config.backend {
        Backend::Exact => EstimatorSet::exact(&loaded.db, &loaded.hypergraph, config.materialize_threshold),
        Backend::Dae => {
            let dir = config.model_dir()?;
            let mut set = EstimatorSet::new();
            for sub in loaded.hypergraph.all() {
                let layout = TreeJoin::for_subschema(&loaded.db, sub)?.layout().clone();
                let model = load_model(&existing_model(dir, &sub.name)?, Some(&layout))?;
                set.insert(sub.name.clone(), Box::new(model));
            }
            Ok(set)
        }
    }
}

fn universal_estimator(loaded: &Loaded, config: &RunConfig) -> Result<Box<dyn DensityEstimator>> {
    let join = TreeJoin::universal(&loaded.db)?;
    Ok(match config.backend {
        Backend::Exact => Box::new(ExactEstimator::new(join.materialize(&loaded.db, config.materialize_threshold)?)),
        Backend::Dae => Box::new(load_model(&existing_model(config.model_dir()?, UNIVERSAL_MODEL)?, Some(join.layout()))?),
    })
}

struct Subschemas<'a> {
    loaded: &'a Loaded,
    set: EstimatorSet,
    config: InferenceConfig,
}

impl Method for Subschemas<'_> {
    fn name(&self) -> &str {
        "subschema"
    }
    fn estimate(&self, query: &Query) -> Result<f64> {
        let r = estimate_cardinality(query, &self.loaded.hypergraph, &self.loaded.db, &self.set, &self.config)?;
        Ok(r.cardinality)
    }
}

struct Histograms<'a> {
    loaded: &'a Loaded,
    set: HistogramSet,
}

impl Method for Histograms<'_> {
    fn name(&self) -> &str {
        "histogram"
    }
    fn estimate(&self, query: &Query) -> Result<f64> {
        estimate_independent(query, &self.set, &self.loaded.db.schema)
    }
}

struct Universal<'a> {
    loaded: &'a Loaded,
    estimator: Box<dyn DensityEstimator>,
    samples: usize,
    seed: u64,
}

impl Method for Universal<'_> {
    fn name(&self) -> &str {
        "universal"
    }
    fn estimate(&self, query: &Query) -> Result<f64> {
        estimate_universal(query, &self.loaded.db, self.estimator.as_ref(), self.samples, self.seed)
    }
}

fn methods<'a>(loaded: &'a Loaded, config: &RunConfig, names: &[String]) -> Result<Vec<Box<dyn Method + 'a>>> {
    let mut seen = BTreeSet::new();
    let mut out: Vec<Box<dyn Method + 'a>> = Vec::new();
    for name in names {
        if !seen.insert(name.as_str()) {
            continue;
        }
        match name.as_str() {
            "subschema" => out.push(Box::new(Subschemas {
                loaded,
                set: estimators(loaded, config)?,
                config: config.inference(),
            })),
            "histogram" => out.push(Box::new(Histograms {
                loaded,
                set: HistogramSet::build(&loaded.db, config.histogram_bins),
            })),
            "universal" => out.push(Box::new(Universal {
                loaded,
                estimator: universal_estimator(loaded, config)?,
                samples: config.samples,
                seed: config.seed,
            })),
            other => {
                return Err(usage(&format!(
                    "unknown method `{other}` (expected subschema, histogram or universal)"
                )))
            }
        }
    }
    Ok(out)
}

fn write_estimates(config: &RunConfig, workload: &Path, out: &Path) -> Result<()> {
    let loaded = load(config)?;
    let queries = parse_workload(workload, &loaded.db)?;
    let set = estimators(&loaded, config)?;
    let inference = config.inference();
    let mut text = String::new();
    for (i, q) in queries.iter().enumerate() {
        let record = match estimate_cardinality(&q.query, &loaded.hypergraph, &loaded.db, &set, &inference) {
            Ok(r) => serde_json::json!({ "query": i, "estimate": r.cardinality, "steps": r.steps }),
            Err(e) => serde_json::json!({ "query": i, "error": e.to_string() }),
        };
        text.push_str(&serde_json::to_string(&record)?);
        text.push('\n');
    }
    std::fs::write(out, text)?;
    Ok(())
}

/// Writes `out` (JSON lines) and `<out>.timings.json`; returns the text table.
pub fn evaluate(config: &RunConfig, workload: &Path, out: &Path) -> Result<String> {
    let loaded = load(config)?;
    let queries = parse_workload(workload, &loaded.db)?;
    let methods = methods(&loaded, config, &config.methods)?;
    let refs: Vec<&dyn Method> = methods.iter().map(|m| m.as_ref()).collect();
    let report = run_benchmark(&loaded.db, &queries, &refs, &BenchConfig { p_error: config.p_error })?;
    std::fs::write(out, report.to_jsonl()?)?;
    let mut timings = out.as_os_str().to_owned();
    timings.push(".timings.json");
    std::fs::write(PathBuf::from(timings), report.timings_json()? + "\n")?;
    Ok(report.table() + &report.timing_table())
}

/// Writes `schema.json`, one CSV per table and `workload.json` into `out`.
pub fn synth(spec: &SynthSpec, seed: u64, out: &Path) -> Result<()> {
    let (db, workload) = generate_synthetic(spec, seed)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("schema.json"),
        serde_json::to_string_pretty(&db.schema.to_config())? + "\n",
    )?;
    for t in &db.tables {
        t.write_csv(&out.join(format!("{}.csv", t.name)))?;
    }
    workload.write(&out.join("workload.json"))
}

/// Runs a parsed command, returning what to print on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Partition { schema } => Ok(partition_report(&SchemaGraph::load(&schema)?)),
        Command::JoinSample { run, subschema, out } => {
            let config = run.resolve()?;
            let loaded = load(&config)?;
            let subs: Vec<&Subschema> = match &subschema {
                Some(name) => vec![loaded
                    .hypergraph
                    .get(name)
                    .ok_or_else(|| usage(&format!("unknown subschema `{name}`")))?],
                None => loaded.hypergraph.all().collect(),
            };
            std::fs::create_dir_all(&out)?;
            let mut report = String::new();
            for s in subs {
                let join = TreeJoin::for_subschema(&loaded.db, s)?;
                let seed = derive_seed(config.seed, &format!("sample:{}", s.name));
                let sample = join.sample(&loaded.db, config.train_samples, seed)?;
                write_sample(&out.join(format!("{}.cinj", s.name)), &sample)?;
                let _ = writeln!(report, "{}: {} samples of {} join rows", s.name, sample.len(), join.size());
            }
            Ok(report)
        }
        Command::Train { run, workers } => {
            let config = run.resolve()?;
            let times = train_all(&config, workers)?;
            Ok(times.iter().map(|(n, t)| format!("{n}: trained in {t:.2} s\n")).collect())
        }
        Command::Estimate { run, workload, out } => {
            write_estimates(&run.resolve()?, &workload, &out)?;
            Ok(String::new())
        }
        Command::Evaluate { run, workload, methods, out } => {
            let mut config = run.resolve()?;
            if let Some(m) = methods {
                config.methods = m;
            }
            evaluate(&config, &workload, &out)
        }
        Command::Synth { spec, seed, out } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)?;
                    serde_json::from_str(&text).map_err(|e| usage(&format!("spec {}: {e}", p.display())))?
                }
                None => SynthSpec::default(),
            };
            synth(&spec, seed, &out)?;
            Ok(String::new())
        }
    }
}
