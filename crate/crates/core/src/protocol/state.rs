use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::events::{AuditEvent, Cell, EventKind};
use crate::domain::{
    AnnotationRecord, AnnotatorId, Instance, InstanceId, Pass, ProjectId, Scaffold, TaskSpec,
};
use crate::scaffold::RedactionPatterns;

/// Project lifecycle. Phases only ever advance one step at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Draft,
    Pass1Open,
    Pass1Closed,
    ScaffoldsReady,
    Pass2Open,
    Pass2Closed,
    Reported,
}

impl Phase {
    pub fn next(self) -> Option<Phase> {
        use Phase::*;
        match self {
            Draft => Some(Pass1Open),
            Pass1Open => Some(Pass1Closed),
            Pass1Closed => Some(ScaffoldsReady),
            ScaffoldsReady => Some(Pass2Open),
            Pass2Open => Some(Pass2Closed),
            Pass2Closed => Some(Reported),
            Reported => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Draft => "draft",
            Phase::Pass1Open => "pass1_open",
            Phase::Pass1Closed => "pass1_closed",
            Phase::ScaffoldsReady => "scaffolds_ready",
            Phase::Pass2Open => "pass2_open",
            Phase::Pass2Closed => "pass2_closed",
            Phase::Reported => "reported",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectSettings {
    /// Whether annotators see the preceding turns of an utterance.
    #[serde(default)]
    pub show_context: bool,
    #[serde(default)]
    pub redaction_patterns: RedactionPatterns,
}

type RecordsByAnnotator = BTreeMap<AnnotatorId, BTreeMap<InstanceId, AnnotationRecord>>;

/// Full state of one project. Built only by folding audit events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    pub project_id: ProjectId,
    pub phase: Phase,
    pub task: TaskSpec,
    pub settings: ProjectSettings,
    pub instances: IndexMap<InstanceId, Instance>,
    pub annotators: Vec<AnnotatorId>,
    pub pass1: RecordsByAnnotator,
    pub pass2: RecordsByAnnotator,
    pub scaffolds: BTreeMap<InstanceId, Scaffold>,
    /// Instances without a scaffold, with the reason.
    pub scaffold_missing: BTreeMap<InstanceId, String>,
    /// Cells left open at a forced closure.
    pub excluded: BTreeSet<Cell>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("audit log is empty")]
    Empty,
    #[error("first event must create the project, found {0}")]
    NotCreated(&'static str),
    #[error("sequence gap: expected {expected}, found {found}")]
    Gap { expected: u64, found: u64 },
    #[error("event {seq} ({kind}) cannot be applied in phase {phase}")]
    Inconsistent {
        seq: u64,
        kind: &'static str,
        phase: Phase,
    },
}

impl ProjectState {
    fn created(project_id: ProjectId, task: TaskSpec, settings: ProjectSettings) -> Self {
        Self {
            project_id,
            phase: Phase::Draft,
            task,
            settings,
            instances: IndexMap::new(),
            annotators: Vec::new(),
            pass1: BTreeMap::new(),
            pass2: BTreeMap::new(),
            scaffolds: BTreeMap::new(),
            scaffold_missing: BTreeMap::new(),
            excluded: BTreeSet::new(),
        }
    }

    /// Rebuilds a project from its complete audit log.
    pub fn replay(events: &[AuditEvent]) -> Result<Self, ReplayError> {
        let first = events.first().ok_or(ReplayError::Empty)?;
        let EventKind::ProjectCreated {
            project_id,
            task,
            settings,
        } = &first.event
        else {
            return Err(ReplayError::NotCreated(first.event.name()));
        };
        if first.seq != 1 {
            return Err(ReplayError::Gap {
                expected: 1,
                found: first.seq,
            });
        }
        let mut state = Self::created(project_id.clone(), task.clone(), settings.clone());
        for (i, ev) in events.iter().enumerate().skip(1) {
            let expected = i as u64 + 1;
            if ev.seq != expected {
                return Err(ReplayError::Gap {
                    expected,
                    found: ev.seq,
                });
            }
            if !state.accepts(&ev.event) {
                return Err(ReplayError::Inconsistent {
                    seq: ev.seq,
                    kind: ev.event.name(),
                    phase: state.phase,
                });
            }
            state.apply(&ev.event);
        }
        Ok(state)
    }

    /// Coarse phase check used during replay. Commands do the full
    /// validation before an event is ever written.
    fn accepts(&self, ev: &EventKind) -> bool {
        use Phase::*;
        match ev {
            EventKind::ProjectCreated { .. } => false,
            EventKind::InstancesImported { .. } | EventKind::AnnotatorRegistered { .. } => {
                self.phase == Draft
            }
            EventKind::PhaseTransition { from, to } | EventKind::ForcedClosure { from, to, .. } => {
                *from == self.phase && self.phase.next() == Some(*to)
            }
            EventKind::Submission { record } => match record.pass {
                Pass::First => self.phase == Pass1Open,
                Pass::Second => self.phase == Pass2Open,
            },
            EventKind::ScaffoldsAttached { .. } => self.phase == Pass1Closed,
            EventKind::ScaffoldAccess { .. } | EventKind::RedactionWarning { .. } => {
                self.phase >= Pass2Open
            }
        }
    }

    pub(crate) fn apply(&mut self, ev: &EventKind) {
        match ev {
            EventKind::ProjectCreated { .. } => {}
            EventKind::InstancesImported { instances } => {
                for inst in instances {
                    self.instances.insert(inst.instance_id.clone(), inst.clone());
                }
            }
            EventKind::AnnotatorRegistered { annotator_id } => {
                self.annotators.push(annotator_id.clone());
            }
            EventKind::PhaseTransition { to, .. } => self.phase = *to,
            EventKind::ForcedClosure { to, missing, .. } => {
                self.excluded.extend(missing.iter().cloned());
                self.phase = *to;
            }
            EventKind::Submission { record } => {
                let book = match record.pass {
                    Pass::First => &mut self.pass1,
                    Pass::Second => &mut self.pass2,
                };
                book.entry(record.annotator_id.clone())
                    .or_default()
                    .insert(record.instance_id.clone(), record.clone());
            }
            EventKind::ScaffoldsAttached {
                scaffolds,
                failed,
                missing,
            } => {
                for s in scaffolds {
                    self.scaffolds.insert(s.instance_id.clone(), s.clone());
                }
                for f in failed {
                    self.scaffold_missing
                        .insert(f.instance_id.clone(), format!("generation failed: {}", f.cause));
                }
                for id in missing {
                    self.scaffold_missing
                        .insert(id.clone(), "no scaffold supplied".to_owned());
                }
                self.phase = Phase::ScaffoldsReady;
            }
            EventKind::ScaffoldAccess { .. } | EventKind::RedactionWarning { .. } => {}
        }
    }

    pub fn record(&self, pass: Pass, annotator: &AnnotatorId, instance: &InstanceId) -> Option<&AnnotationRecord> {
        let book = match pass {
            Pass::First => &self.pass1,
            Pass::Second => &self.pass2,
        };
        book.get(annotator)?.get(instance)
    }

    pub fn is_annotator(&self, id: &AnnotatorId) -> bool {
        self.annotators.contains(id)
    }

    pub fn count(&self, pass: Pass, annotator: &AnnotatorId) -> usize {
        let book = match pass {
            Pass::First => &self.pass1,
            Pass::Second => &self.pass2,
        };
        book.get(annotator).map_or(0, BTreeMap::len)
    }

    /// Cells still open in `pass`: every (annotator, instance) for pass 1;
    /// cells with a pass-1 record for pass 2.
    pub fn open_cells(&self, pass: Pass) -> Vec<Cell> {
        let mut out = Vec::new();
        for a in &self.annotators {
            for id in self.instances.keys() {
                let todo = match pass {
                    Pass::First => self.record(Pass::First, a, id).is_none(),
                    Pass::Second => {
                        self.record(Pass::First, a, id).is_some()
                            && self.record(Pass::Second, a, id).is_none()
                    }
                };
                if todo {
                    out.push(Cell {
                        annotator: a.clone(),
                        instance: id.clone(),
                    });
                }
            }
        }
        out
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn state_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
