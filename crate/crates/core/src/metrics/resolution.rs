//! What happened to first-pass disagreements in the second pass.

use serde::{Deserialize, Serialize};

use super::{LabelMatrix, MetricsError, Result};
use crate::domain::AnnotatorId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionCounts {
    pub disagreed_pass1: usize,
    /// Pass-1 disagreements that agree in pass 2.
    pub resolved: usize,
    pub unresolved: usize,
    /// Pass-1 agreements that disagree in pass 2.
    pub introduced: usize,
}

impl ResolutionCounts {
    pub fn add(&mut self, other: &ResolutionCounts) {
        self.disagreed_pass1 += other.disagreed_pass1;
        self.resolved += other.resolved;
        self.unresolved += other.unresolved;
        self.introduced += other.introduced;
    }
}

/// Resolution accounting for one annotator pair given both passes of each.
pub fn resolution_counts<T: PartialEq>(
    a1: &[T],
    b1: &[T],
    a2: &[T],
    b2: &[T],
) -> Result<ResolutionCounts> {
    let n = a1.len();
    for other in [b1.len(), a2.len(), b2.len()] {
        if other != n {
            return Err(MetricsError::LengthMismatch {
                left: n,
                right: other,
            });
        }
    }
    let mut c = ResolutionCounts::default();
    for i in 0..n {
        let before = a1[i] == b1[i];
        let after = a2[i] == b2[i];
        match (before, after) {
            (false, true) => {
                c.disagreed_pass1 += 1;
                c.resolved += 1;
            }
            (false, false) => {
                c.disagreed_pass1 += 1;
                c.unresolved += 1;
            }
            (true, false) => c.introduced += 1,
            (true, true) => {}
        }
    }
    debug_assert_eq!(c.resolved + c.unresolved, c.disagreed_pass1);
    Ok(c)
}

/// Resolution accounting for annotators `a` and `b` over the instances on
/// which both have labels in both passes.
pub fn disagreement_resolution(
    pass1: &LabelMatrix,
    pass2: &LabelMatrix,
    a: &AnnotatorId,
    b: &AnnotatorId,
) -> Result<ResolutionCounts> {
    if !pass1.same_shape(pass2) {
        return Err(MetricsError::ShapeMismatch);
    }
    let (ia, ib) = (pass1.annotator_index(a)?, pass1.annotator_index(b)?);
    let mut cols: [Vec<usize>; 4] = Default::default();
    for i in 0..pass1.instances().len() {
        if let (Some(w), Some(x), Some(y), Some(z)) = (
            pass1.get(ia, i),
            pass1.get(ib, i),
            pass2.get(ia, i),
            pass2.get(ib, i),
        ) {
            for (col, v) in cols.iter_mut().zip([w, x, y, z]) {
                col.push(v);
            }
        }
    }
    resolution_counts(&cols[0], &cols[1], &cols[2], &cols[3])
}
