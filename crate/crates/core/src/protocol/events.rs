use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::state::{Phase, ProjectSettings};
use crate::domain::{AnnotationRecord, AnnotatorId, Instance, InstanceId, Pass, ProjectId, Scaffold, TaskSpec};
use crate::scaffold::ScaffoldFailure;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum Actor {
    System,
    Annotator(AnnotatorId),
}

/// An annotator-instance pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub annotator: AnnotatorId,
    pub instance: InstanceId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    ProjectCreated {
        project_id: ProjectId,
        task: TaskSpec,
        settings: ProjectSettings,
    },
    InstancesImported {
        instances: Vec<Instance>,
    },
    AnnotatorRegistered {
        annotator_id: AnnotatorId,
    },
    PhaseTransition {
        from: Phase,
        to: Phase,
    },
    /// A pass closed with cells still open; those cells are excluded from
    /// every metric.
    ForcedClosure {
        pass: Pass,
        from: Phase,
        to: Phase,
        missing: Vec<Cell>,
    },
    Submission {
        record: AnnotationRecord,
    },
    ScaffoldsAttached {
        scaffolds: Vec<Scaffold>,
        failed: Vec<ScaffoldFailure>,
        /// Instances for which neither a scaffold nor a failure was supplied.
        missing: Vec<InstanceId>,
    },
    ScaffoldAccess {
        annotator_id: AnnotatorId,
        instance_id: InstanceId,
        available: bool,
    },
    RedactionWarning {
        annotator_id: AnnotatorId,
        instance_id: InstanceId,
        pattern: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::ProjectCreated { .. } => "project_created",
            EventKind::InstancesImported { .. } => "instances_imported",
            EventKind::AnnotatorRegistered { .. } => "annotator_registered",
            EventKind::PhaseTransition { .. } => "phase_transition",
            EventKind::ForcedClosure { .. } => "forced_closure",
            EventKind::Submission { .. } => "submission",
            EventKind::ScaffoldsAttached { .. } => "scaffolds_attached",
            EventKind::ScaffoldAccess { .. } => "scaffold_access",
            EventKind::RedactionWarning { .. } => "redaction_warning",
        }
    }
}

/// One entry of a project's append-only audit log. Sequence numbers start
/// at 1 and have no gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub actor: Actor,
    pub event: EventKind,
}
