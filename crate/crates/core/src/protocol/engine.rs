use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info};

use super::events::{Actor, AuditEvent, Cell, EventKind};
use super::queue::{build_queue, AnnotatorQueue};
use super::state::{Phase, ProjectSettings, ProjectState};
use crate::domain::{
    validate_task_spec, AnnotationRecord, AnnotatorId, AnnotatorScaffoldView, CategoryId,
    Decision, DomainError, Instance, InstanceId, Pass, ProjectId, Scaffold, TaskSpec, Violation,
};
use crate::metrics::{self, LabelMatrix, MetricsError, MetricsReport, ReportInput};
use crate::scaffold::{generate_batch, redact_for_annotator, GenConfig, Provider, ScaffoldOutcome};
use crate::store::{Store, StoreError};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// Coarse error classes, used to pick a response status at the API edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    InvalidInput,
    NotFound,
    Conflict,
    Forbidden,
    Internal,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid task spec: {}", join(.0))]
    InvalidTaskSpec(Vec<Violation>),
    #[error("unknown project '{0}'")]
    UnknownProject(ProjectId),
    #[error("project '{0}' already exists")]
    DuplicateProject(ProjectId),
    #[error("protocol violation: cannot {operation} in phase {phase} (requires {expected})")]
    WrongPhase {
        operation: &'static str,
        phase: Phase,
        expected: Phase,
    },
    #[error("protocol violation: scaffold not yet available")]
    ScaffoldNotAvailable,
    #[error("precondition failed: {}", .0.join("; "))]
    Precondition(Vec<String>),
    #[error("unknown annotator '{0}'")]
    UnknownAnnotator(AnnotatorId),
    #[error("annotator id must not be empty")]
    EmptyAnnotatorId,
    #[error("annotator '{0}' is already registered")]
    DuplicateAnnotator(AnnotatorId),
    #[error("unknown instance '{0}'")]
    UnknownInstance(InstanceId),
    #[error("already labeled: '{annotator}' has a first-pass label for '{instance}'")]
    AlreadyLabeled {
        annotator: AnnotatorId,
        instance: InstanceId,
    },
    #[error("already decided: '{annotator}' has a decision for '{instance}'")]
    AlreadyDecided {
        annotator: AnnotatorId,
        instance: InstanceId,
    },
    #[error("unknown category '{0}'")]
    UnknownCategory(CategoryId),
    #[error("'{annotator}' has no label for '{instance}'")]
    NotLabeled {
        annotator: AnnotatorId,
        instance: InstanceId,
    },
    #[error("revise must change the label (current label is '{0}')")]
    NoOpRevise(CategoryId),
    #[error("pass {pass} incomplete: {}", missing_list(.missing))]
    Incomplete {
        pass: Pass,
        missing: BTreeMap<AnnotatorId, usize>,
    },
    #[error("duplicate scaffold for instance '{0}'")]
    DuplicateScaffold(InstanceId),
    #[error(transparent)]
    InvalidScaffold(DomainError),
    #[error("generation config: {0}")]
    GenConfig(String),
    #[error("storage: {0}")]
    Storage(#[from] StoreError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn missing_list(m: &BTreeMap<AnnotatorId, usize>) -> String {
    let mut s = String::new();
    for (i, (a, n)) in m.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{a} missing {n}");
    }
    s
}

impl ProtocolError {
    pub fn kind(&self) -> ErrorKind {
        use ProtocolError::*;
        match self {
            InvalidTaskSpec(_) | EmptyAnnotatorId | UnknownCategory(_) | NoOpRevise(_)
            | InvalidScaffold(_) | GenConfig(_) => ErrorKind::InvalidInput,
            UnknownProject(_) | UnknownAnnotator(_) | UnknownInstance(_) => ErrorKind::NotFound,
            NotLabeled { .. } => ErrorKind::Forbidden,
            DuplicateProject(_) | WrongPhase { .. } | ScaffoldNotAvailable | Precondition(_)
            | DuplicateAnnotator(_) | AlreadyLabeled { .. } | AlreadyDecided { .. }
            | Incomplete { .. } | DuplicateScaffold(_) => ErrorKind::Conflict,
            Storage(_) | Metrics(_) => ErrorKind::Internal,
        }
    }
}

type Result<T> = std::result::Result<T, ProtocolError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedInstance {
    pub instance_id: InstanceId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportOutcome {
    pub accepted: usize,
    pub rejected: Vec<RejectedInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosureSummary {
    pub pass: Pass,
    pub phase: Phase,
    pub forced: bool,
    /// Cells without a record at closure. Empty unless forced.
    pub missing: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachSummary {
    pub attached: usize,
    pub failed: usize,
    pub missing: Vec<InstanceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub annotator_id: AnnotatorId,
    pub pass1_done: usize,
    pub pass2_done: usize,
    /// Instances the annotator can review (those with a first-pass label).
    pub pass2_total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectStatus {
    pub project_id: ProjectId,
    pub task_id: String,
    pub phase: Phase,
    pub instances: usize,
    pub annotators: Vec<AnnotatorProgress>,
    pub scaffolds: usize,
    pub scaffold_missing: usize,
    pub excluded_cells: usize,
    pub events: u64,
}

struct Project {
    state: ProjectState,
    log: Vec<AuditEvent>,
}

/// Runs the protocol for any number of projects. Mutations of one project
/// are serialized behind that project's lock; reads take a shared lock and
/// see the state as of the last committed event.
pub struct Engine {
    projects: RwLock<BTreeMap<ProjectId, Arc<RwLock<Project>>>>,
    store: Option<Arc<Store>>,
    clock: Clock,
}

impl Default for Engine {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Engine {
    pub fn in_memory() -> Self {
        Self {
            projects: RwLock::new(BTreeMap::new()),
            store: None,
            clock: Arc::new(Utc::now),
        }
    }

    /// An engine backed by `store`, with every stored project replayed.
    pub fn with_store(store: Arc<Store>) -> Result<Self> {
        let mut projects = BTreeMap::new();
        for pid in store.list_projects()? {
            let (state, log) = store.load_project(&pid)?;
            debug!(project = %pid, events = log.len(), "loaded project");
            projects.insert(pid, Arc::new(RwLock::new(Project { state, log })));
        }
        Ok(Self {
            projects: RwLock::new(projects),
            store: Some(store),
            clock: Arc::new(Utc::now),
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn store(&self) -> Option<&Arc<Store>> {
        self.store.as_ref()
    }

    fn project(&self, pid: &ProjectId) -> Result<Arc<RwLock<Project>>> {
        self.projects
            .read()
            .get(pid)
            .cloned()
            .ok_or_else(|| ProtocolError::UnknownProject(pid.clone()))
    }

    /// Persists and applies one event. Nothing changes in memory if the
    /// store rejects the write.
    fn commit(&self, p: &mut Project, actor: Actor, event: EventKind) -> Result<u64> {
        let ev = AuditEvent {
            seq: p.log.len() as u64 + 1,
            timestamp: (self.clock)(),
            actor,
            event,
        };
        if let Some(store) = &self.store {
            store.append_event(&p.state.project_id, &ev)?;
        }
        let phase_before = p.state.phase;
        p.state.apply(&ev.event);
        let seq = ev.seq;
        p.log.push(ev);
        if p.state.phase != phase_before {
            info!(project = %p.state.project_id, from = %phase_before, to = %p.state.phase, "phase change");
            if let Some(store) = &self.store {
                store.write_snapshot(&p.state, seq)?;
            }
        }
        Ok(seq)
    }

    fn require(p: &Project, operation: &'static str, expected: Phase) -> Result<()> {
        if p.state.phase != expected {
            return Err(ProtocolError::WrongPhase {
                operation,
                phase: p.state.phase,
                expected,
            });
        }
        Ok(())
    }

    fn require_annotator(p: &Project, a: &AnnotatorId) -> Result<()> {
        if !p.state.is_annotator(a) {
            return Err(ProtocolError::UnknownAnnotator(a.clone()));
        }
        Ok(())
    }

    fn require_instance(p: &Project, i: &InstanceId) -> Result<()> {
        if !p.state.instances.contains_key(i) {
            return Err(ProtocolError::UnknownInstance(i.clone()));
        }
        Ok(())
    }

    pub fn create_project(
        &self,
        task: TaskSpec,
        settings: ProjectSettings,
        id: Option<ProjectId>,
    ) -> Result<ProjectId> {
        validate_task_spec(&task).map_err(ProtocolError::InvalidTaskSpec)?;
        let pid = id.unwrap_or_else(|| ProjectId::new(uuid::Uuid::new_v4().simple().to_string()));
        let mut projects = self.projects.write();
        if projects.contains_key(&pid) {
            return Err(ProtocolError::DuplicateProject(pid));
        }
        if let Some(store) = &self.store {
            store.create_project(&pid).map_err(|e| match e {
                StoreError::ProjectExists(p) => ProtocolError::DuplicateProject(p),
                e => e.into(),
            })?;
        }
        let event = EventKind::ProjectCreated {
            project_id: pid.clone(),
            task: task.clone(),
            settings: settings.clone(),
        };
        let ev = AuditEvent {
            seq: 1,
            timestamp: (self.clock)(),
            actor: Actor::System,
            event,
        };
        if let Some(store) = &self.store {
            store.append_event(&pid, &ev)?;
        }
        let state = ProjectState::replay(std::slice::from_ref(&ev))
            .expect("a creation event always replays");
        projects.insert(
            pid.clone(),
            Arc::new(RwLock::new(Project {
                state,
                log: vec![ev],
            })),
        );
        info!(project = %pid, task = %task.task_id, "project created");
        Ok(pid)
    }

    pub fn list_projects(&self) -> Vec<ProjectId> {
        self.projects.read().keys().cloned().collect()
    }

    pub fn import_instances(&self, pid: &ProjectId, batch: Vec<Instance>) -> Result<ImportOutcome> {
        let cell = self.project(pid)?;
        let mut p = cell.write();
        Self::require(&p, "import instances", Phase::Draft)?;
        let mut seen: HashSet<InstanceId> = p.state.instances.keys().cloned().collect();
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        for inst in batch {
            let reason = if let Err(e) = inst.validate() {
                Some(e.to_string())
            } else if seen.contains(&inst.instance_id) {
                Some(format!("duplicate instance id '{}'", inst.instance_id))
            } else {
                None
            };
            match reason {
                Some(reason) => rejected.push(RejectedInstance {
                    instance_id: inst.instance_id,
                    reason,
                }),
                None => {
                    seen.insert(inst.instance_id.clone());
                    accepted.push(inst);
                }
            }
        }
        let n = accepted.len();
        if n > 0 {
            self.commit(
                &mut p,
                Actor::System,
                EventKind::InstancesImported {
                    instances: accepted,
                },
            )?;
        }
        Ok(ImportOutcome {
            accepted: n,
            rejected,
        })
    }

    pub fn register_annotator(&self, pid: &ProjectId, annotator: AnnotatorId) -> Result<()> {
        let cell = self.project(pid)?;
        let mut p = cell.write();
        Self::require(&p, "register annotator", Phase::Draft)?;
        if annotator.as_str().trim().is_empty() {
            return Err(ProtocolError::EmptyAnnotatorId);
        }
        if p.state.is_annotator(&annotator) {
            return Err(ProtocolError::DuplicateAnnotator(annotator));
        }
        self.commit(
            &mut p,
            Actor::System,
            EventKind::AnnotatorRegistered {
                annotator_id: annotator,
            },
        )?;
        Ok(())
    }

    fn transition(&self, p: &mut Project, from: Phase) -> Result<()> {
        let to = from.next().expect("caller checked the phase");
        self.commit(p, Actor::System, EventKind::PhaseTransition { from, to })?;
        Ok(())
    }

    pub fn open_pass1(&self, pid: &ProjectId) -> Result<()> {
        let cell = self.project(pid)?;
        let mut p = cell.write();
        Self::require(&p, "open pass 1", Phase::Draft)?;
        let mut unmet = Vec::new();
        if p.state.instances.is_empty() {
            unmet.push("at least one instance is required".to_owned());
        }
        if p.state.annotators.len() < 2 {
            unmet.push(format!(
                "at least two annotators are required (have {})",
                p.state.annotators.len()
            ));
        }
        if !unmet.is_empty() {
            return Err(ProtocolError::Precondition(unmet));
        }
        self.transition(&mut p, Phase::Draft)
    }

    pub fn submit_pass1_label(
        &self,
        pid: &ProjectId,
        annotator: &AnnotatorId,
        instance: &InstanceId,
        label: CategoryId,
    ) -> Result<AnnotationRecord> {
        let cell = self.project(pid)?;
        let mut p = cell.write();
        Self::require(&p, "submit a label", Phase::Pass1Open)?;
        Self::require_annotator(&p, annotator)?;
        Self::require_instance(&p, instance)?;
        if p.state.record(Pass::First, annotator, instance).is_some() {
            return Err(ProtocolError::AlreadyLabeled {
                annotator: annotator.clone(),
                instance: instance.clone(),
            });
        }
        if !p.state.task.has_category(&label) {
            return Err(ProtocolError::UnknownCategory(label));
        }
        let record =
            AnnotationRecord::fresh(annotator.clone(), instance.clone(), label, (self.clock)());
        self.commit(
            &mut p,
            Actor::Annotator(annotator.clone()),
            EventKind::Submission {
                record: record.clone(),
            },
        )?;
        Ok(record)
    }

    fn close(&self, pid: &ProjectId, pass: Pass, force: bool) -> Result<ClosureSummary> {
        let (operation, from) = match pass {
            Pass::First => ("close pass 1", Phase::Pass1Open),
            Pass::Second => ("close pass 2", Phase::Pass2Open),
        };
        let cell = self.project(pid)?;
        let mut p = cell.write();
        Self::require(&p, operation, from)?;
        let missing = p.state.open_cells(pass);
        let to = from.next().expect("open phases have a successor");
        if missing.is_empty() {
            self.transition(&mut p, from)?;
        } else if force {
            info!(project = %pid, pass = pass.number(), missing = missing.len(), "forced closure");
            self.commit(
                &mut p,
                Actor::System,
                EventKind::ForcedClosure {
                    pass,
                    from,
                    to,
                    missing: missing.clone(),
                },
            )?;
        } else {
            let mut per: BTreeMap<AnnotatorId, usize> = BTreeMap::new();
            for c in &missing {
                *per.entry(c.annotator.clone()).or_default() += 1;
            }
            return Err(ProtocolError::Incomplete { pass, missing: per });
        }
        Ok(ClosureSummary {
            pass,
            phase: to,
            forced: !missing.is_empty(),
            missing,
        })
    }

    pub fn close_pass1(&self, pid: &ProjectId, force: bool) -> Result<ClosureSummary> {
        self.close(pid, Pass::First, force)
    }

    /// Attaches generated scaffolds and recorded failures. Instances with
    /// neither are recorded as missing; none of this blocks the next pass.
    pub fn attach_scaffolds(
        &self,
        pid: &ProjectId,
        outcomes: Vec<ScaffoldOutcome>,
    ) -> Result<AttachSummary> {
        let cell = self.project(pid)?;
        let mut p = cell.write();
        Self::require(&p, "attach scaffolds", Phase::Pass1Closed)?;
        let mut seen = BTreeSet::new();
        let mut scaffolds = Vec::new();
        let mut failed = Vec::new();
        for o in outcomes {
            let id = o.instance_id().clone();
            Self::require_instance(&p, &id)?;
            if !seen.insert(id.clone()) {
                return Err(ProtocolError::DuplicateScaffold(id));
            }
            match o {
                ScaffoldOutcome::Generated(s) => {
                    s.validate(&p.state.task)
                        .map_err(ProtocolError::InvalidScaffold)?;
                    scaffolds.push(s);
                }
                ScaffoldOutcome::Failed(f) => failed.push(f),
            }
        }
        let missing: Vec<InstanceId> = p
            .state
            .instances
            .keys()
            .filter(|id| !seen.contains(*id))
            .cloned()
            .collect();
        let summary = AttachSummary {
            attached: scaffolds.len(),
            failed: failed.len(),
            missing: missing.clone(),
        };
        self.commit(
            &mut p,
            Actor::System,
            EventKind::ScaffoldsAttached {
                scaffolds,
                failed,
                missing,
            },
        )?;
        Ok(summary)
    }

    /// Generates a scaffold for every instance with `provider` and attaches
    /// the results.
    pub fn generate_scaffolds(
        &self,
        pid: &ProjectId,
        provider: &dyn Provider,
        cfg: &GenConfig,
        parallelism: usize,
    ) -> Result<AttachSummary> {
        cfg.validate().map_err(ProtocolError::GenConfig)?;
        let (task, instances) = {
            let cell = self.project(pid)?;
            let p = cell.read();
            Self::require(&p, "generate scaffolds", Phase::Pass1Closed)?;
            let instances: Vec<Instance> = p.state.instances.values().cloned().collect();
            (p.state.task.clone(), instances)
        };
        let outcomes = generate_batch(provider, &task, &instances, cfg, parallelism);
        self.attach_scaffolds(pid, outcomes)
    }

    pub fn open_pass2(&self, pid: &ProjectId) -> Result<()> {
        let cell = self.project(pid)?;
        let mut p = cell.write();
        Self::require(&p, "open pass 2", Phase::ScaffoldsReady)?;
        self.transition(&mut p, Phase::ScaffoldsReady)
    }

    fn require_first_label<'a>(
        p: &'a Project,
        annotator: &AnnotatorId,
        instance: &InstanceId,
    ) -> Result<&'a AnnotationRecord> {
        p.state
            .record(Pass::First, annotator, instance)
            .ok_or_else(|| ProtocolError::NotLabeled {
                annotator: annotator.clone(),
                instance: instance.clone(),
            })
    }

    pub fn submit_pass2_decision(
        &self,
        pid: &ProjectId,
        annotator: &AnnotatorId,
        instance: &InstanceId,
        decision: Decision,
    ) -> Result<AnnotationRecord> {
        let cell = self.project(pid)?;
        let mut p = cell.write();
        Self::require(&p, "submit a decision", Phase::Pass2Open)?;
        Self::require_annotator(&p, annotator)?;
        Self::require_instance(&p, instance)?;
        let first = Self::require_first_label(&p, annotator, instance)?;
        if p.state.record(Pass::Second, annotator, instance).is_some() {
            return Err(ProtocolError::AlreadyDecided {
                annotator: annotator.clone(),
                instance: instance.clone(),
            });
        }
        if let Decision::Revise { label } = &decision {
            if !p.state.task.has_category(label) {
                return Err(ProtocolError::UnknownCategory(label.clone()));
            }
        }
        let record = AnnotationRecord::second_pass(first, &decision, (self.clock)())
            .map_err(|e| match e {
                DomainError::NoOpRevise(l) => ProtocolError::NoOpRevise(l),
                e => ProtocolError::InvalidScaffold(e),
            })?;
        self.commit(
            &mut p,
            Actor::Annotator(annotator.clone()),
            EventKind::Submission {
                record: record.clone(),
            },
        )?;
        Ok(record)
    }

    pub fn close_pass2(&self, pid: &ProjectId, force: bool) -> Result<ClosureSummary> {
        self.close(pid, Pass::Second, force)
    }

    /// The annotator-facing explanation for one instance. The access is
    /// logged, along with a warning for any reasoning phrase that looks
    /// like a stated label.
    pub fn fetch_scaffold_view(
        &self,
        pid: &ProjectId,
        annotator: &AnnotatorId,
        instance: &InstanceId,
    ) -> Result<AnnotatorScaffoldView> {
        let cell = self.project(pid)?;
        let mut p = cell.write();
        if p.state.phase < Phase::Pass2Open {
            return Err(ProtocolError::ScaffoldNotAvailable);
        }
        Self::require(&p, "view explanations", Phase::Pass2Open)?;
        Self::require_annotator(&p, annotator)?;
        Self::require_instance(&p, instance)?;
        Self::require_first_label(&p, annotator, instance)?;

        let (view, warnings) = match p.state.scaffolds.get(instance) {
            Some(s) => {
                let r = redact_for_annotator(s, &p.state.settings.redaction_patterns);
                (r.view, r.warnings)
            }
            None => (AnnotatorScaffoldView::unavailable(instance.clone()), Vec::new()),
        };
        let actor = Actor::Annotator(annotator.clone());
        self.commit(
            &mut p,
            actor.clone(),
            EventKind::ScaffoldAccess {
                annotator_id: annotator.clone(),
                instance_id: instance.clone(),
                available: view.is_available(),
            },
        )?;
        for w in warnings {
            self.commit(
                &mut p,
                actor.clone(),
                EventKind::RedactionWarning {
                    annotator_id: annotator.clone(),
                    instance_id: w.instance_id,
                    pattern: w.pattern,
                },
            )?;
        }
        Ok(view)
    }

    /// Full scaffold including hidden fields. Admin use only.
    pub fn scaffold(&self, pid: &ProjectId, instance: &InstanceId) -> Result<Option<Scaffold>> {
        let cell = self.project(pid)?;
        let p = cell.read();
        Self::require_instance(&p, instance)?;
        Ok(p.state.scaffolds.get(instance).cloned())
    }

    pub fn project_status(&self, pid: &ProjectId) -> Result<ProjectStatus> {
        let cell = self.project(pid)?;
        let p = cell.read();
        let s = &p.state;
        let annotators = s
            .annotators
            .iter()
            .map(|a| AnnotatorProgress {
                annotator_id: a.clone(),
                pass1_done: s.count(Pass::First, a),
                pass2_done: s.count(Pass::Second, a),
                pass2_total: s.count(Pass::First, a),
            })
            .collect();
        Ok(ProjectStatus {
            project_id: s.project_id.clone(),
            task_id: s.task.task_id.clone(),
            phase: s.phase,
            instances: s.instances.len(),
            annotators,
            scaffolds: s.scaffolds.len(),
            scaffold_missing: s.scaffold_missing.len(),
            excluded_cells: s.excluded.len(),
            events: p.log.len() as u64,
        })
    }

    pub fn annotator_queue(&self, pid: &ProjectId, annotator: &AnnotatorId) -> Result<AnnotatorQueue> {
        let cell = self.project(pid)?;
        let p = cell.read();
        Self::require_annotator(&p, annotator)?;
        Ok(build_queue(&p.state, annotator))
    }

    /// Computes the metrics report and, the first time, moves the project to
    /// `Reported`.
    pub fn build_report(&self, pid: &ProjectId, interrun_r: Option<f64>) -> Result<MetricsReport> {
        let cell = self.project(pid)?;
        let mut p = cell.write();
        if p.state.phase < Phase::Pass2Closed {
            return Err(ProtocolError::WrongPhase {
                operation: "build a report",
                phase: p.state.phase,
                expected: Phase::Pass2Closed,
            });
        }
        let report = report_for(&p.state, interrun_r)?;
        if p.state.phase == Phase::Pass2Closed {
            self.transition(&mut p, Phase::Pass2Closed)?;
        }
        if let Some(store) = &self.store {
            store.write_json(pid, "report", &report)?;
        }
        Ok(report)
    }

    pub fn state(&self, pid: &ProjectId) -> Result<ProjectState> {
        Ok(self.project(pid)?.read().state.clone())
    }

    pub fn events(&self, pid: &ProjectId) -> Result<Vec<AuditEvent>> {
        Ok(self.project(pid)?.read().log.clone())
    }

    /// Writes a snapshot of the current state to the store, if any.
    pub fn checkpoint(&self, pid: &ProjectId) -> Result<()> {
        let cell = self.project(pid)?;
        let p = cell.read();
        if let Some(store) = &self.store {
            store.write_snapshot(&p.state, p.log.len() as u64)?;
        }
        Ok(())
    }
}

/// Pass-1 and pass-2 matrices over the cells that hold a record in both
/// passes; every other cell is masked.
pub(crate) fn paired_matrices(state: &ProjectState) -> (LabelMatrix, LabelMatrix, usize) {
    let cats = state.task.category_ids();
    let ids: Vec<InstanceId> = state.instances.keys().cloned().collect();
    let mut m1 = LabelMatrix::new(cats.clone(), state.annotators.clone(), ids.clone());
    let mut m2 = LabelMatrix::new(cats, state.annotators.clone(), ids.clone());
    let mut excluded = 0;
    for a in &state.annotators {
        for id in &ids {
            match (
                state.record(Pass::First, a, id),
                state.record(Pass::Second, a, id),
            ) {
                (Some(r1), Some(r2)) => {
                    m1.set_label(a, id, &r1.label).expect("labels were validated");
                    m2.set_label(a, id, &r2.label).expect("labels were validated");
                }
                _ => excluded += 1,
            }
        }
    }
    (m1, m2, excluded)
}

pub(crate) fn report_for(state: &ProjectState, interrun_r: Option<f64>) -> Result<MetricsReport> {
    let (m1, m2, excluded) = paired_matrices(state);
    let soft: Vec<Option<Vec<f64>>> = m1
        .instances()
        .iter()
        .map(|id| state.scaffolds.get(id).map(|s| s.soft_labels.clone()))
        .collect();
    let scaffold_missing: Vec<InstanceId> = state.scaffold_missing.keys().cloned().collect();
    let decisions_without_scaffold = state
        .pass2
        .values()
        .flat_map(|book| book.keys())
        .filter(|id| !state.scaffolds.contains_key(*id))
        .count();
    Ok(metrics::build_report(ReportInput {
        task: &state.task,
        pass1: &m1,
        pass2: &m2,
        soft_labels: &soft,
        interrun_r,
        excluded_cells: excluded,
        scaffold_missing,
        decisions_without_scaffold,
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine() -> Engine {
        Engine::in_memory().with_clock(Arc::new(|| DateTime::UNIX_EPOCH))
    }

    fn drafted(e: &Engine, n: usize) -> ProjectId {
        let pid = e
            .create_project(TaskSpec::sentiment(), ProjectSettings::default(), None)
            .unwrap();
        let batch = (0..n)
            .map(|i| Instance::new(format!("u{i}"), format!("utterance number {i}")))
            .collect();
        assert_eq!(e.import_instances(&pid, batch).unwrap().accepted, n);
        e.register_annotator(&pid, "a1".into()).unwrap();
        e.register_annotator(&pid, "a2".into()).unwrap();
        pid
    }

    #[test]
    fn create_rejects_invalid_spec_and_ids_are_distinct() {
        let e = engine();
        let mut bad = TaskSpec::sentiment();
        bad.categories.truncate(1);
        let err = e
            .create_project(bad, ProjectSettings::default(), None)
            .unwrap_err();
        assert!(err.to_string().starts_with("invalid task spec"), "{err}");
        let a = e
            .create_project(TaskSpec::opinion(), ProjectSettings::default(), None)
            .unwrap();
        let b = e
            .create_project(TaskSpec::opinion(), ProjectSettings::default(), None)
            .unwrap();
        assert_ne!(a, b);
        assert_eq!(e.project_status(&a).unwrap().phase, Phase::Draft);
    }

    #[test]
    fn duplicate_instance_rejected_individually() {
        let e = engine();
        let pid = e
            .create_project(TaskSpec::sentiment(), ProjectSettings::default(), None)
            .unwrap();
        let mut batch: Vec<Instance> = (0..9)
            .map(|i| Instance::new(format!("u{i}"), "text"))
            .collect();
        batch.push(Instance::new("u3", "again"));
        let out = e.import_instances(&pid, batch).unwrap();
        assert_eq!(out.accepted, 9);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].instance_id, InstanceId::new("u3"));
    }

    #[test]
    fn open_pass1_names_each_unmet_precondition() {
        let e = engine();
        let pid = e
            .create_project(TaskSpec::sentiment(), ProjectSettings::default(), None)
            .unwrap();
        match e.open_pass1(&pid) {
            Err(ProtocolError::Precondition(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pass1_labels_are_immutable_and_checked() {
        let e = engine();
        let pid = drafted(&e, 3);
        e.open_pass1(&pid).unwrap();
        let (a1, u) = (AnnotatorId::new("a1"), InstanceId::new("u1"));
        e.submit_pass1_label(&pid, &a1, &u, "negative".into()).unwrap();
        let err = e
            .submit_pass1_label(&pid, &a1, &u, "positive".into())
            .unwrap_err();
        assert!(err.to_string().starts_with("already labeled"), "{err}");
        let err = e
            .submit_pass1_label(&pid, &a1, &"u2".into(), "happy".into())
            .unwrap_err();
        assert_eq!(err.to_string(), "unknown category 'happy'");
        let err = e
            .import_instances(&pid, vec![Instance::new("x", "late")])
            .unwrap_err();
        assert!(err.to_string().starts_with("protocol violation"), "{err}");
        assert!(matches!(
            e.register_annotator(&pid, "a3".into()),
            Err(ProtocolError::WrongPhase { .. })
        ));
    }

    #[test]
    fn close_lists_missing_per_annotator_unless_forced() {
        let e = engine();
        let pid = drafted(&e, 3);
        e.open_pass1(&pid).unwrap();
        e.submit_pass1_label(&pid, &"a1".into(), &"u0".into(), "neutral".into())
            .unwrap();
        let err = e.close_pass1(&pid, false).unwrap_err();
        assert_eq!(err.to_string(), "pass 1 incomplete: a1 missing 2, a2 missing 3");
        let s = e.close_pass1(&pid, true).unwrap();
        assert!(s.forced);
        assert_eq!(s.missing.len(), 5);
        assert_eq!(e.state(&pid).unwrap().excluded.len(), 5);
    }

    fn run_to_pass2(e: &Engine, pid: &ProjectId) {
        e.open_pass1(pid).unwrap();
        for a in ["a1", "a2"] {
            for i in 0..3 {
                e.submit_pass1_label(pid, &a.into(), &format!("u{i}").into(), "negative".into())
                    .unwrap();
            }
        }
        e.close_pass1(pid, false).unwrap();
    }

    #[test]
    fn scaffold_fetch_is_gated_and_logged() {
        let e = engine();
        let pid = drafted(&e, 3);
        let (a1, u1) = (AnnotatorId::new("a1"), InstanceId::new("u1"));
        assert!(matches!(
            e.fetch_scaffold_view(&pid, &a1, &u1),
            Err(ProtocolError::ScaffoldNotAvailable)
        ));
        run_to_pass2(&e, &pid);
        let err = e.fetch_scaffold_view(&pid, &a1, &u1).unwrap_err();
        assert_eq!(err.to_string(), "protocol violation: scaffold not yet available");

        let provider = crate::scaffold::StubProvider::new(TaskSpec::sentiment());
        let cfg = GenConfig::default();
        // u2 gets no scaffold at all
        let task = TaskSpec::sentiment();
        let insts: Vec<Instance> = e.state(&pid).unwrap().instances.values().take(2).cloned().collect();
        let outcomes = generate_batch(&provider, &task, &insts, &cfg, 2);
        let summary = e.attach_scaffolds(&pid, outcomes).unwrap();
        assert_eq!(summary.attached, 2);
        assert_eq!(summary.missing, vec![InstanceId::new("u2")]);
        e.open_pass2(&pid).unwrap();

        let before = e.events(&pid).unwrap().len();
        let view = e.fetch_scaffold_view(&pid, &a1, &u1).unwrap();
        assert!(view.is_available());
        let log = e.events(&pid).unwrap();
        assert_eq!(log.len(), before + 1);
        assert!(matches!(log.last().unwrap().event, EventKind::ScaffoldAccess { available: true, .. }));

        let view = e.fetch_scaffold_view(&pid, &a1, &"u2".into()).unwrap();
        assert!(!view.is_available());
        assert!(view.note.is_some());
    }

    #[test]
    fn pass2_decisions_follow_the_pass1_label() {
        let e = engine();
        let pid = drafted(&e, 3);
        run_to_pass2(&e, &pid);
        e.attach_scaffolds(&pid, Vec::new()).unwrap();
        e.open_pass2(&pid).unwrap();
        let a1 = AnnotatorId::new("a1");
        let kept = e
            .submit_pass2_decision(&pid, &a1, &"u0".into(), Decision::Keep)
            .unwrap();
        assert_eq!(kept.label, CategoryId::new("negative"));
        let revised = e
            .submit_pass2_decision(
                &pid,
                &a1,
                &"u1".into(),
                Decision::Revise {
                    label: "positive".into(),
                },
            )
            .unwrap();
        assert_eq!(revised.revised_from, Some(CategoryId::new("negative")));
        let err = e
            .submit_pass2_decision(
                &pid,
                &a1,
                &"u2".into(),
                Decision::Revise {
                    label: "negative".into(),
                },
            )
            .unwrap_err();
        assert!(err.to_string().starts_with("revise must change the label"), "{err}");
        assert!(matches!(
            e.submit_pass2_decision(&pid, &a1, &"u0".into(), Decision::Keep),
            Err(ProtocolError::AlreadyDecided { .. })
        ));
    }

    #[test]
    fn report_requires_closed_pass2_and_marks_reported() {
        let e = engine();
        let pid = drafted(&e, 3);
        run_to_pass2(&e, &pid);
        assert!(matches!(e.build_report(&pid, None), Err(ProtocolError::WrongPhase { .. })));
        e.attach_scaffolds(&pid, Vec::new()).unwrap();
        e.open_pass2(&pid).unwrap();
        for a in ["a1", "a2"] {
            for i in 0..3 {
                e.submit_pass2_decision(&pid, &a.into(), &format!("u{i}").into(), Decision::Keep)
                    .unwrap();
            }
        }
        e.close_pass2(&pid, false).unwrap();
        let r = e.build_report(&pid, None).unwrap();
        assert_eq!(r.aep.ratio, 0.0);
        assert_eq!(r.decisions_without_scaffold, 6);
        assert_eq!(e.project_status(&pid).unwrap().phase, Phase::Reported);
        let again = e.build_report(&pid, None).unwrap();
        assert_eq!(again, r);

        let log = e.events(&pid).unwrap();
        let replayed = ProjectState::replay(&log).unwrap();
        assert_eq!(replayed, e.state(&pid).unwrap());
    }

    #[test]
    fn store_backed_engine_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path()).unwrap());
        let pid = {
            let e = Engine::with_store(store.clone()).unwrap();
            let pid = drafted(&e, 3);
            run_to_pass2(&e, &pid);
            pid
        };
        let e = Engine::with_store(Arc::new(Store::open(dir.path()).unwrap())).unwrap();
        assert_eq!(e.project_status(&pid).unwrap().phase, Phase::Pass1Closed);
        assert_eq!(e.events(&pid).unwrap().len(), store.load_events(&pid).unwrap().len());
    }
}
