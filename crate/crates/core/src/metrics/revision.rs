//! Revision rate (annotator effort proxy) and revision direction counts.

use serde::{Deserialize, Serialize};

use super::{LabelMatrix, MetricsError, Result};
use crate::domain::{AnnotatorId, CategoryId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorAep {
    pub annotator: AnnotatorId,
    pub revised: usize,
    pub total: usize,
    pub ratio: Option<f64>,
}

/// Share of labels that changed between the two passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aep {
    pub ratio: f64,
    pub revised: usize,
    /// Annotator-label cells present in both passes.
    pub total: usize,
    pub per_annotator: Vec<AnnotatorAep>,
}

fn check_shape(pass1: &LabelMatrix, pass2: &LabelMatrix) -> Result<()> {
    if pass1.same_shape(pass2) {
        Ok(())
    } else {
        Err(MetricsError::ShapeMismatch)
    }
}

/// Revised labels divided by total labels, over cells present in both passes.
pub fn aep(pass1: &LabelMatrix, pass2: &LabelMatrix) -> Result<Aep> {
    check_shape(pass1, pass2)?;
    let mut per_annotator = Vec::with_capacity(pass1.annotators().len());
    let (mut revised, mut total) = (0usize, 0usize);
    for (a, id) in pass1.annotators().iter().enumerate() {
        let (mut r, mut t) = (0usize, 0usize);
        for (x, y) in pass1.row(a).iter().zip(pass2.row(a)) {
            if let (Some(x), Some(y)) = (x, y) {
                t += 1;
                if x != y {
                    r += 1;
                }
            }
        }
        revised += r;
        total += t;
        per_annotator.push(AnnotatorAep {
            annotator: id.clone(),
            revised: r,
            total: t,
            ratio: (t > 0).then(|| r as f64 / t as f64),
        });
    }
    if total == 0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(Aep {
        ratio: revised as f64 / total as f64,
        revised,
        total,
        per_annotator,
    })
}

/// Counts of pass-1 → pass-2 label transitions, indexed `[from][to]` in
/// task category order. The diagonal is always zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionMatrix {
    pub categories: Vec<CategoryId>,
    pub counts: Vec<Vec<usize>>,
}

impl RevisionMatrix {
    pub fn get(&self, from: usize, to: usize) -> usize {
        self.counts[from][to]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Non-zero `(from, to)` directions.
    pub fn directions(&self) -> Vec<(usize, usize)> {
        let k = self.categories.len();
        (0..k)
            .flat_map(|f| (0..k).map(move |t| (f, t)))
            .filter(|&(f, t)| self.counts[f][t] > 0)
            .collect()
    }

    /// True when some category pair was revised in both directions.
    pub fn is_bidirectional(&self) -> bool {
        let k = self.categories.len();
        (0..k).any(|f| (f + 1..k).any(|t| self.counts[f][t] > 0 && self.counts[t][f] > 0))
    }
}

pub fn revision_matrix(pass1: &LabelMatrix, pass2: &LabelMatrix) -> Result<RevisionMatrix> {
    check_shape(pass1, pass2)?;
    let k = pass1.categories().len();
    let mut counts = vec![vec![0usize; k]; k];
    for a in 0..pass1.annotators().len() {
        for (x, y) in pass1.row(a).iter().zip(pass2.row(a)) {
            if let (Some(x), Some(y)) = (x, y) {
                if x != y {
                    counts[*x][*y] += 1;
                }
            }
        }
    }
    Ok(RevisionMatrix {
        categories: pass1.categories().to_vec(),
        counts,
    })
}
