// SPDX-License-Identifier: MIT OR Apache-2.0

use super::{ExtractError, LayerActivations, DEGENERACY_THRESHOLD};
use crate::linalg;

/// Normalized mean of the per-pair differences `pos_i − neg_i`.
pub fn md_vector(acts: &LayerActivations) -> Result<Vec<f64>, ExtractError> {
    let mean = acts.differences().column_mean();
    linalg::normalized(&mean, DEGENERACY_THRESHOLD)
        .ok_or_else(|| ExtractError::degenerate("md", "mean difference is zero"))
}
