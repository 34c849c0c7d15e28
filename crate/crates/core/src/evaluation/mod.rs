//! Metrics, join-order planning, synthetic data and benchmark runs.

pub mod bench;
pub mod metrics;
pub mod planner;
pub mod synth;

pub use bench::{run_benchmark, BenchConfig, BenchReport, Method, MethodSummary, MetricRow};
pub use metrics::{percentile, q_error, Percentiles};
pub use planner::{p_error, plan, plan_cost, CardinalitySource, PlanNode};
pub use synth::{generate_synthetic, SynthSpec};

use sha2::{Digest, Sha256};

/// Platform-independent 64-bit hash of a string.
pub fn stable_hash(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
