//! Annotator work queues.
//!
//! While labeling is open the payload carries nothing beyond the item, the
//! categories and the annotator's own answers. Review-only fields are
//! `None` and skipped during serialization, so a queue fetched before the
//! review phase has no trace of one.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::state::{Phase, ProjectState};
use crate::domain::{AnnotatorId, CategoryId, DecisionKind, InstanceId, LabelCategory, Pass};

/// Instance order for one annotator: a shuffle seeded by the annotator id,
/// identical across calls and phases.
pub fn queue_order(annotator: &AnnotatorId, instances: &[InstanceId]) -> Vec<InstanceId> {
    let digest = Sha256::digest(annotator.as_str().as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut order = instances.to_vec();
    order.shuffle(&mut ChaCha8Rng::from_seed(seed));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueStatus {
    /// Nothing to do right now.
    Waiting,
    Labeling,
    Review,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    pub instance_id: InstanceId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub done: bool,
    /// The label this annotator submitted while labeling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<CategoryId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation_available: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorQueue {
    pub annotator_id: AnnotatorId,
    pub status: QueueStatus,
    pub guidelines: String,
    pub categories: Vec<LabelCategory>,
    pub completed: usize,
    pub total: usize,
    pub items: Vec<QueueItem>,
}

pub(crate) fn build_queue(state: &ProjectState, annotator: &AnnotatorId) -> AnnotatorQueue {
    let status = match state.phase {
        Phase::Pass1Open => QueueStatus::Labeling,
        Phase::Pass2Open => QueueStatus::Review,
        _ => QueueStatus::Waiting,
    };
    let ids: Vec<InstanceId> = state.instances.keys().cloned().collect();
    let mut items = Vec::new();
    if status != QueueStatus::Waiting {
        for id in queue_order(annotator, &ids) {
            let inst = &state.instances[&id];
            let first = state.record(Pass::First, annotator, &id);
            let context = if state.settings.show_context {
                inst.context.clone()
            } else {
                None
            };
            let item = match status {
                QueueStatus::Labeling => QueueItem {
                    instance_id: id.clone(),
                    text: inst.text.clone(),
                    context,
                    done: first.is_some(),
                    label: first.map(|r| r.label.clone()),
                    decision: None,
                    explanation_available: None,
                },
                _ => {
                    // only instances this annotator labeled can be reviewed
                    let Some(first) = first else { continue };
                    let second = state.record(Pass::Second, annotator, &id);
                    QueueItem {
                        instance_id: id.clone(),
                        text: inst.text.clone(),
                        context,
                        done: second.is_some(),
                        label: Some(first.label.clone()),
                        decision: second.map(|r| r.decision_kind),
                        explanation_available: Some(state.scaffolds.contains_key(&id)),
                    }
                }
            };
            items.push(item);
        }
    }
    AnnotatorQueue {
        annotator_id: annotator.clone(),
        status,
        guidelines: state.task.guidelines.clone(),
        categories: state.task.categories.clone(),
        completed: items.iter().filter(|i| i.done).count(),
        total: items.len(),
        items,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_a_stable_permutation() {
        let ids: Vec<InstanceId> = (0..50).map(|i| InstanceId::new(format!("u{i}"))).collect();
        let a = queue_order(&"ann1".into(), &ids);
        assert_eq!(a, queue_order(&"ann1".into(), &ids));
        assert_ne!(a, queue_order(&"ann2".into(), &ids));
        let mut sorted = a.clone();
        sorted.sort();
        let mut expect = ids.clone();
        expect.sort();
        assert_eq!(sorted, expect);
    }
}
