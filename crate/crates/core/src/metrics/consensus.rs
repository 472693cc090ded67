//! Majority consensus over second-pass labels and the multiclass Brier score.

use serde::{Deserialize, Serialize};

use super::{LabelMatrix, MetricsError, Result};
use crate::domain::SOFT_LABEL_SUM_TOLERANCE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consensus {
    /// Category index held by a strict majority of present labels.
    Majority(usize),
    Tied,
}

impl Consensus {
    pub fn label(self) -> Option<usize> {
        match self {
            Consensus::Majority(c) => Some(c),
            Consensus::Tied => None,
        }
    }
}

/// Strict-majority label per instance. Instances without one (including
/// instances with no labels at all) are [`Consensus::Tied`].
pub fn consensus_labels(m: &LabelMatrix) -> Vec<Consensus> {
    let k = m.categories().len();
    let n_ann = m.annotators().len();
    (0..m.instances().len())
        .map(|i| {
            let mut counts = vec![0usize; k];
            let mut present = 0usize;
            for a in 0..n_ann {
                if let Some(l) = m.get(a, i) {
                    counts[l] += 1;
                    present += 1;
                }
            }
            counts
                .iter()
                .position(|&c| 2 * c > present)
                .map_or(Consensus::Tied, Consensus::Majority)
        })
        .collect()
}

/// Mean over instances of `Σ_c (p_c − y_c)²` with `y` one-hot at the
/// consensus label. Tied instances are skipped.
pub fn brier_score(soft: &[Vec<f64>], consensus: &[Consensus]) -> Result<f64> {
    if soft.len() != consensus.len() {
        return Err(MetricsError::LengthMismatch {
            left: soft.len(),
            right: consensus.len(),
        });
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for (index, (probs, cons)) in soft.iter().zip(consensus).enumerate() {
        let Some(label) = cons.label() else { continue };
        if label >= probs.len() {
            return Err(MetricsError::CategoryOutOfRange {
                index: label,
                count: probs.len(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SOFT_LABEL_SUM_TOLERANCE
            || probs.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(MetricsError::NotNormalized { index, sum });
        }
        total += probs
            .iter()
            .enumerate()
            .map(|(c, p)| {
                let y = if c == label { 1.0 } else { 0.0 };
                (p - y) * (p - y)
            })
            .sum::<f64>();
        used += 1;
    }
    if used == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(total / used as f64)
}
