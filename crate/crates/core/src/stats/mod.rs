//! Correlation inference: Pearson r with its t test, Fisher's z, Steiger's
//! test for dependent correlations, Holm adjustment, and resampling.

mod correlation;
mod delta;
mod holm;
mod resample;
mod steiger;

pub use correlation::{corr_t_test, fisher_z, pearson, Ci, CorrelationResult, TTest};
pub use delta::{correlate, delta_r, DeltaR};
pub use holm::holm_adjust;
pub use resample::{
    bootstrap_ci, permutation_test, permutation_test_with, quantile_sorted, PermutationOutcome,
    DEFAULT_RESAMPLES,
};
pub use steiger::{steiger_z, SteigerResult};

use crate::aggregate::Method;
use crate::data::Group;
use crate::index::{paired, DatasetIndex};

/// r(P, D_g) under an arbitrary annotator assignment; the statistic the
/// demographic permutation test recomputes.
pub fn group_correlation(
    index: &DatasetIndex,
    model: &[Option<u8>],
    assignment: &[Option<Group>],
    group: Group,
    method: Method,
) -> Option<f64> {
    let truth = index.group_truths(method, assignment, Some(group));
    let (x, y) = paired(model, &truth);
    pearson(&x, &y).ok()
}
