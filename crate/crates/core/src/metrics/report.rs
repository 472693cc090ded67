//! Assembly of the per-task summary across both passes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    aep, brier_score, consensus_labels, disagreement_resolution, mean_pairwise_kappa,
    revision_matrix, Aep, Consensus, LabelMatrix, MetricsError, ResolutionCounts, Result,
    RevisionMatrix,
};
use crate::domain::{AnnotatorId, InstanceId, TaskSpec};

pub const TABLE_HEADER: &str = "Task | κ₁ | κ₂ | AEP (%)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseKappas {
    pub first: AnnotatorId,
    pub second: AnnotatorId,
    pub items: usize,
    pub pass1: Option<f64>,
    pub pass2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResolution {
    pub first: AnnotatorId,
    pub second: AnnotatorId,
    pub counts: ResolutionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrierSummary {
    pub score: f64,
    pub instances_scored: usize,
    /// Instances without a strict-majority consensus.
    pub ties_excluded: usize,
    /// Instances with a consensus but no soft labels.
    pub without_soft_labels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task_id: String,
    pub task_name: String,
    pub annotators: Vec<AnnotatorId>,
    pub instances: usize,
    /// Annotator-instance cells left out because a pass was force-closed
    /// without them.
    pub excluded_cells: usize,
    pub kappa_pass1: f64,
    pub kappa_pass2: f64,
    pub pairwise_kappas: Vec<PairwiseKappas>,
    pub aep: Aep,
    pub revision_matrix: RevisionMatrix,
    pub resolution: Vec<PairResolution>,
    pub resolution_total: ResolutionCounts,
    pub brier: Option<BrierSummary>,
    pub interrun_r: Option<f64>,
    /// Instances that had no scaffold in the second pass.
    pub scaffold_missing: Vec<InstanceId>,
    pub decisions_without_scaffold: usize,
}

impl MetricsReport {
    /// One row of the summary table. AEP is printed as a percentage.
    pub fn table_row(&self) -> String {
        format!(
            "{} | {:.2} | {:.2} | {:.2}",
            self.task_name,
            self.kappa_pass1,
            self.kappa_pass2,
            self.aep.ratio * 100.0
        )
    }
}

/// Header plus one row per report.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{}", r.table_row());
    }
    out
}

pub struct ReportInput<'a> {
    pub task: &'a TaskSpec,
    /// Both matrices must be masked to the cells present in both passes.
    pub pass1: &'a LabelMatrix,
    pub pass2: &'a LabelMatrix,
    /// Hidden soft labels per instance, aligned with the matrix instances.
    pub soft_labels: &'a [Option<Vec<f64>>],
    pub interrun_r: Option<f64>,
    pub excluded_cells: usize,
    pub scaffold_missing: Vec<InstanceId>,
    pub decisions_without_scaffold: usize,
}

pub fn build_report(input: ReportInput<'_>) -> Result<MetricsReport> {
    let ReportInput {
        task,
        pass1,
        pass2,
        soft_labels,
        interrun_r,
        excluded_cells,
        scaffold_missing,
        decisions_without_scaffold,
    } = input;
    if !pass1.same_shape(pass2) {
        return Err(MetricsError::ShapeMismatch);
    }
    if soft_labels.len() != pass1.instances().len() {
        return Err(MetricsError::LengthMismatch {
            left: soft_labels.len(),
            right: pass1.instances().len(),
        });
    }

    let k1 = mean_pairwise_kappa(pass1)?;
    let k2 = mean_pairwise_kappa(pass2)?;
    let pairwise_kappas = k1
        .pairs
        .iter()
        .zip(&k2.pairs)
        .map(|(a, b)| PairwiseKappas {
            first: a.first.clone(),
            second: a.second.clone(),
            items: a.items,
            pass1: a.kappa,
            pass2: b.kappa,
        })
        .collect();

    let aep = aep(pass1, pass2)?;
    let revision_matrix = revision_matrix(pass1, pass2)?;
    debug_assert_eq!(revision_matrix.total(), aep.revised);

    let mut resolution = Vec::new();
    let mut resolution_total = ResolutionCounts::default();
    let anns = pass1.annotators();
    for (i, a) in anns.iter().enumerate() {
        for b in &anns[i + 1..] {
            let counts = disagreement_resolution(pass1, pass2, a, b)?;
            resolution_total.add(&counts);
            resolution.push(PairResolution {
                first: a.clone(),
                second: b.clone(),
                counts,
            });
        }
    }

    let brier = brier_summary(pass2, soft_labels)?;

    Ok(MetricsReport {
        task_id: task.task_id.clone(),
        task_name: task.name.clone(),
        annotators: anns.to_vec(),
        instances: pass1.instances().len(),
        excluded_cells,
        kappa_pass1: k1.mean,
        kappa_pass2: k2.mean,
        pairwise_kappas,
        aep,
        revision_matrix,
        resolution,
        resolution_total,
        brier,
        interrun_r,
        scaffold_missing,
        decisions_without_scaffold,
    })
}

fn brier_summary(
    pass2: &LabelMatrix,
    soft_labels: &[Option<Vec<f64>>],
) -> Result<Option<BrierSummary>> {
    let consensus = consensus_labels(pass2);
    let ties_excluded = consensus.iter().filter(|c| **c == Consensus::Tied).count();
    let mut soft = Vec::new();
    let mut cons = Vec::new();
    let mut without_soft_labels = 0;
    for (probs, c) in soft_labels.iter().zip(&consensus) {
        match (probs, c) {
            (_, Consensus::Tied) => {}
            (None, _) => without_soft_labels += 1,
            (Some(p), c) => {
                soft.push(p.clone());
                cons.push(*c);
            }
        }
    }
    if soft.is_empty() {
        return Ok(None);
    }
    let score = brier_score(&soft, &cons)?;
    Ok(Some(BrierSummary {
        score,
        instances_scored: soft.len(),
        ties_excluded,
        without_soft_labels,
    }))
}
