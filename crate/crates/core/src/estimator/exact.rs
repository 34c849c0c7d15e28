use std::collections::HashMap;

use super::{check_inputs, check_target, DensityEstimator, MASK};
use crate::error::Result;
use crate::ingest::Code;
use crate::joiner::{JoinLayout, JoinedRelation};

/// Exact relative frequencies over a materialized join.
///
/// When no row matches a conditioning assignment the answer is uniform over
/// the target domain, which keeps downstream sampling well defined.
#[derive(Clone, Debug)]
pub struct ExactEstimator {
    relation: JoinedRelation,
    postings: Vec<Vec<Vec<u32>>>,
}

impl ExactEstimator {
    pub fn new(relation: JoinedRelation) -> ExactEstimator {
        let postings = relation
            .layout
            .attrs
            .iter()
            .zip(&relation.columns)
            .map(|(a, col)| {
                let mut lists = vec![Vec::new(); a.domain];
                for (r, &c) in col.iter().enumerate() {
                    lists[c as usize].push(r as u32);
                }
                lists
            })
            .collect();
        ExactEstimator { relation, postings }
    }

    pub fn relation(&self) -> &JoinedRelation {
        &self.relation
    }

    /// Counts of each target code among rows matching `assigned`.
    pub fn counts(&self, assigned: &[(usize, Code)], target: usize) -> Vec<u64> {
        let mut hist = vec![0u64; self.relation.layout.attrs[target].domain];
        let col = &self.relation.columns[target];
        let Some(&(pivot, code)) = assigned
            .iter()
            .min_by_key(|(a, c)| self.postings[*a].get(*c as usize).map_or(0, Vec::len))
        else {
            for &c in col {
                hist[c as usize] += 1;
            }
            return hist;
        };
        let Some(list) = self.postings[pivot].get(code as usize) else {
            return hist;
        };
        'rows: for &r in list {
            for &(a, c) in assigned {
                if self.relation.columns[a][r as usize] != c {
                    continue 'rows;
                }
            }
            hist[col[r as usize] as usize] += 1;
        }
        hist
    }
}

fn normalize(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        let p = 1.0 / counts.len() as f64;
        return vec![p; counts.len()];
    }
    counts.iter().map(|c| *c as f64 / total as f64).collect()
}

impl DensityEstimator for ExactEstimator {
    fn layout(&self) -> &JoinLayout {
        &self.relation.layout
    }

    fn relation_size(&self) -> u128 {
        self.relation.size
    }

    fn conditionals(&self, inputs: &[Code], target: usize) -> Result<Vec<f64>> {
        let layout = &self.relation.layout;
        check_target(layout, target)?;
        let rows = check_inputs(layout, inputs)?;
        let width = layout.len();
        let dom = layout.attrs[target].domain;
        let mut cache: HashMap<Vec<(usize, Code)>, Vec<f64>> = HashMap::new();
        let mut out = Vec::with_capacity(rows * dom);
        let mut key = Vec::new();
        for row in inputs.chunks_exact(width) {
            key.clear();
            key.extend(
                row.iter()
                    .enumerate()
                    .filter(|(a, c)| **c != MASK && *a != target)
                    .map(|(a, c)| (a, *c)),
            );
            if let Some(d) = cache.get(&key) {
                out.extend_from_slice(d);
                continue;
            }
            let d = normalize(&self.counts(&key, target));
            out.extend_from_slice(&d);
            cache.insert(key.clone(), d);
        }
        Ok(out)
    }
}
