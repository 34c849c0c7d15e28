//! Density estimators over joined relations.
//!
//! An estimator answers, for a batch of partial assignments, the categorical
//! distribution of one target attribute conditioned on the assigned values.

mod dae;
mod exact;
mod model_io;

pub use dae::{draw_mask, train_dae, DaeConfig, DaeModel, Real, TrainReport};
pub use exact::ExactEstimator;
pub use model_io::{load_model, save_model};

use crate::error::{Error, Result};
use crate::ingest::Code;
use crate::joiner::JoinLayout;

/// Marks an attribute as unassigned in an input row.
pub const MASK: Code = Code::MAX;

pub trait DensityEstimator: Send + Sync {
    fn layout(&self) -> &JoinLayout;

    /// Row count of the full outer join the estimator describes.
    fn relation_size(&self) -> u128;

    /// `inputs` holds `layout().len()` codes per row, [`MASK`] where unassigned.
    /// Returns one distribution of width `domain(target)` per row, row-major.
    /// Any value given for `target` itself is ignored.
    fn conditionals(&self, inputs: &[Code], target: usize) -> Result<Vec<f64>>;
}

/// Distribution of `target` given a single partial assignment.
pub fn conditional_distribution(
    estimator: &dyn DensityEstimator,
    assigned: &[(usize, Code)],
    target: usize,
) -> Result<Vec<f64>> {
    let layout = estimator.layout();
    check_target(layout, target)?;
    let mut row = vec![MASK; layout.len()];
    for &(a, c) in assigned {
        let attr = layout
            .attrs
            .get(a)
            .ok_or_else(|| Error::UnknownAttribute(format!("#{a} in {}", layout.name)))?;
        if c as usize >= attr.domain {
            return Err(Error::InvalidArgument(format!(
                "code {c} outside the domain of {}",
                attr.name
            )));
        }
        row[a] = c;
    }
    estimator.conditionals(&row, target)
}

pub(crate) fn check_target(layout: &JoinLayout, target: usize) -> Result<()> {
    if target >= layout.len() {
        return Err(Error::UnknownAttribute(format!("#{target} in {}", layout.name)));
    }
    Ok(())
}

pub(crate) fn check_inputs(layout: &JoinLayout, inputs: &[Code]) -> Result<usize> {
    let width = layout.len();
    if width == 0 || inputs.len() % width != 0 {
        return Err(Error::InvalidArgument(format!(
            "input length {} is not a multiple of the layout width {width}",
            inputs.len()
        )));
    }
    Ok(inputs.len() / width)
}
