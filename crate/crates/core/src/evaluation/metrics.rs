use serde::{Deserialize, Serialize};

/// `max(C, Ĉ) / min(C, Ĉ)` with both sides clamped to at least 1, so zero
/// true or estimated counts still give a finite error.
pub fn q_error(truth: f64, estimate: f64) -> f64 {
    let c = if truth.is_finite() { truth.max(1.0) } else { f64::MAX };
    let e = if estimate.is_finite() { estimate.max(1.0) } else { f64::MAX };
    c.max(e) / c.min(e)
}

/// Linear-interpolation percentile of a sorted slice, `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub median: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Percentiles {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        v.sort_by(f64::total_cmp);
        Percentiles {
            median: percentile(&v, 50.0),
            p90: percentile(&v, 90.0),
            p95: percentile(&v, 95.0),
            p99: percentile(&v, 99.0),
            max: v.last().copied().unwrap_or(f64::NAN),
        }
    }
}
