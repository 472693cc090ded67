//! File-backed persistence and line-delimited JSON import/export.
//!
//! Layout under the store root:
//!
//! ```text
//! <root>/<project>/events.jsonl     audit log, one event per line
//! <root>/<project>/snapshot.json    last checkpointed state
//! <root>/<project>/<name>.json      auxiliary documents (reports, studies)
//! ```
//!
//! Export writes hidden scaffold fields to `scaffolds.admin.jsonl` and the
//! annotator-visible subset to `scaffolds.annotator.jsonl`, so the two never
//! share a file.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Instance, InstanceId, Pass, ProjectId, SelfExample};
use crate::metrics::{render_table, MetricsReport};
use crate::protocol::{AuditEvent, ProjectState, ReplayError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("event sequence {found} does not follow {last}")]
    Sequence { last: u64, found: u64 },
    #[error("project '{0}' already exists")]
    ProjectExists(ProjectId),
    #[error("project '{0}' not found in store")]
    UnknownProject(ProjectId),
    #[error("replaying project '{project}': {source}")]
    Replay {
        project: ProjectId,
        #[source]
        source: ReplayError,
    },
    #[error("snapshot of project '{0}' disagrees with its audit log")]
    SnapshotMismatch(ProjectId),
    #[error("serializing {what}: {message}")]
    Encode { what: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn to_line<T: Serialize>(what: &str, value: &T) -> Result<String, StoreError> {
    serde_json::to_string(value).map_err(|e| StoreError::Encode {
        what: what.to_owned(),
        message: e.to_string(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    state: ProjectState,
}

struct LogWriter {
    file: File,
    last_seq: u64,
}

/// Durable per-project storage. One writer per project at a time; callers
/// serialize appends per project.
pub struct Store {
    root: PathBuf,
    writers: Mutex<HashMap<ProjectId, LogWriter>>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self {
            root,
            writers: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn project_dir(&self, project: &ProjectId) -> PathBuf {
        self.root.join(project.as_str())
    }

    fn events_path(&self, project: &ProjectId) -> PathBuf {
        self.project_dir(project).join("events.jsonl")
    }

    pub fn create_project(&self, project: &ProjectId) -> Result<(), StoreError> {
        let dir = self.project_dir(project);
        if dir.exists() {
            return Err(StoreError::ProjectExists(project.clone()));
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))
    }

    pub fn list_projects(&self) -> Result<Vec<ProjectId>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if entry.path().join("events.jsonl").is_file() {
                out.push(ProjectId::new(entry.file_name().to_string_lossy().into_owned()));
            }
        }
        out.sort();
        Ok(out)
    }

    /// Appends `event` and syncs it to disk before returning its sequence
    /// number. The sequence must directly follow the last stored one.
    pub fn append_event(&self, project: &ProjectId, event: &AuditEvent) -> Result<u64, StoreError> {
        let mut writers = self.writers.lock();
        if !writers.contains_key(project) {
            let path = self.events_path(project);
            if !self.project_dir(project).is_dir() {
                return Err(StoreError::UnknownProject(project.clone()));
            }
            let last_seq = if path.exists() {
                self.load_events(project)?.last().map_or(0, |e| e.seq)
            } else {
                0
            };
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            writers.insert(project.clone(), LogWriter { file, last_seq });
        }
        let w = writers.get_mut(project).expect("inserted above");
        if event.seq != w.last_seq + 1 {
            return Err(StoreError::Sequence {
                last: w.last_seq,
                found: event.seq,
            });
        }
        let mut line = to_line("audit event", event)?;
        line.push('\n');
        let path = self.events_path(project);
        w.file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        w.file.sync_data().map_err(io_err(&path))?;
        w.last_seq = event.seq;
        Ok(event.seq)
    }

    pub fn load_events(&self, project: &ProjectId) -> Result<Vec<AuditEvent>, StoreError> {
        let path = self.events_path(project);
        if !path.exists() {
            return Err(StoreError::UnknownProject(project.clone()));
        }
        read_jsonl(&path)
    }

    pub fn write_snapshot(&self, state: &ProjectState, seq: u64) -> Result<(), StoreError> {
        let snap = Snapshot {
            seq,
            state: state.clone(),
        };
        self.write_json(&state.project_id, "snapshot", &snap)
    }

    /// Replays the audit log and checks it against the snapshot, when one
    /// exists for the same sequence number.
    pub fn load_project(
        &self,
        project: &ProjectId,
    ) -> Result<(ProjectState, Vec<AuditEvent>), StoreError> {
        let events = self.load_events(project)?;
        let state = ProjectState::replay(&events).map_err(|source| StoreError::Replay {
            project: project.clone(),
            source,
        })?;
        if let Some(snap) = self.read_json::<Snapshot>(project, "snapshot")? {
            if snap.seq == events.len() as u64 && snap.state != state {
                return Err(StoreError::SnapshotMismatch(project.clone()));
            }
        }
        Ok((state, events))
    }

    /// Writes `<project>/<name>.json` atomically.
    pub fn write_json<T: Serialize>(
        &self,
        project: &ProjectId,
        name: &str,
        value: &T,
    ) -> Result<(), StoreError> {
        let dir = self.project_dir(project);
        let path = dir.join(format!("{name}.json"));
        let tmp = dir.join(format!(".{name}.json.tmp"));
        let body = serde_json::to_vec_pretty(value).map_err(|e| StoreError::Encode {
            what: name.to_owned(),
            message: e.to_string(),
        })?;
        fs::write(&tmp, body).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn read_json<T: DeserializeOwned>(
        &self,
        project: &ProjectId,
        name: &str,
    ) -> Result<Option<T>, StoreError> {
        let path = self.project_dir(project).join(format!("{name}.json"));
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| StoreError::Malformed {
                path,
                line: e.line(),
                message: e.to_string(),
            })
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| StoreError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    what: &str,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<usize, StoreError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut n = 0;
    for item in items {
        writeln!(w, "{}", to_line(what, item)?).map_err(io_err(path))?;
        n += 1;
    }
    w.flush().map_err(io_err(path))?;
    Ok(n)
}

/// A rejected line of an instances file (1-based line number).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportedInstances {
    pub instances: Vec<Instance>,
    pub errors: Vec<LineError>,
}

/// Reads one instance object per line. Under `strict` the first malformed
/// line aborts the import; otherwise malformed lines are reported and the
/// rest are returned.
pub fn import_instances_file(path: &Path, strict: bool) -> Result<ImportedInstances, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut instances = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Instance>(&line)
            .map_err(|e| e.to_string())
            .and_then(|inst| inst.validate().map(|_| inst).map_err(|e| e.to_string()));
        match parsed {
            Ok(inst) => instances.push(inst),
            Err(message) if strict => {
                return Err(StoreError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                })
            }
            Err(message) => errors.push(LineError {
                line: i + 1,
                message,
            }),
        }
    }
    Ok(ImportedInstances { instances, errors })
}

pub fn write_instances_file(path: &Path, instances: &[Instance]) -> Result<usize, StoreError> {
    write_jsonl(path, "instance", instances)
}

/// Annotator-visible part of a scaffold as written to the annotator export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorScaffoldLine {
    pub instance: InstanceId,
    pub self_examples: Vec<SelfExample>,
    pub reasoning_text: String,
}

pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const ADMIN_SCAFFOLDS_FILE: &str = "scaffolds.admin.jsonl";
pub const ANNOTATOR_SCAFFOLDS_FILE: &str = "scaffolds.annotator.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub files: Vec<PathBuf>,
    pub instances: usize,
    pub records: usize,
    pub scaffolds: usize,
}

/// Writes the project's export file set into `dir`.
pub fn export_project(
    state: &ProjectState,
    report: Option<&MetricsReport>,
    dir: &Path,
) -> Result<ExportSummary, StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();

    let p = dir.join(INSTANCES_FILE);
    let instances = write_jsonl(&p, "instance", state.instances.values())?;
    files.push(p);

    let mut records = Vec::new();
    for pass in [Pass::First, Pass::Second] {
        for a in &state.annotators {
            for id in state.instances.keys() {
                if let Some(r) = state.record(pass, a, id) {
                    records.push(r);
                }
            }
        }
    }
    let p = dir.join(RECORDS_FILE);
    let n_records = write_jsonl(&p, "record", records)?;
    files.push(p);

    let ordered: Vec<_> = state
        .instances
        .keys()
        .filter_map(|id| state.scaffolds.get(id))
        .collect();
    let p = dir.join(ADMIN_SCAFFOLDS_FILE);
    let scaffolds = write_jsonl(&p, "scaffold", ordered.iter().copied())?;
    files.push(p);

    let views: Vec<AnnotatorScaffoldLine> = ordered
        .iter()
        .map(|s| AnnotatorScaffoldLine {
            instance: s.instance_id.clone(),
            self_examples: s.self_examples.clone(),
            reasoning_text: s.reasoning_text.clone(),
        })
        .collect();
    let p = dir.join(ANNOTATOR_SCAFFOLDS_FILE);
    write_jsonl(&p, "scaffold view", &views)?;
    files.push(p);

    if let Some(report) = report {
        let p = dir.join(REPORT_FILE);
        let body = serde_json::to_vec_pretty(report).map_err(|e| StoreError::Encode {
            what: "report".into(),
            message: e.to_string(),
        })?;
        fs::write(&p, body).map_err(io_err(&p))?;
        files.push(p);
        let p = dir.join(REPORT_TABLE_FILE);
        fs::write(&p, render_table(std::slice::from_ref(report))).map_err(io_err(&p))?;
        files.push(p);
    }

    Ok(ExportSummary {
        files,
        instances,
        records: n_records,
        scaffolds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Actor, EventKind, ProjectSettings};
    use crate::domain::TaskSpec;
    use chrono::DateTime;

    fn created(seq: u64) -> AuditEvent {
        AuditEvent {
            seq,
            timestamp: DateTime::UNIX_EPOCH,
            actor: Actor::System,
            event: EventKind::ProjectCreated {
                project_id: "p".into(),
                task: TaskSpec::opinion(),
                settings: ProjectSettings::default(),
            },
        }
    }

    fn registered(seq: u64, who: &str) -> AuditEvent {
        AuditEvent {
            seq,
            timestamp: DateTime::UNIX_EPOCH,
            actor: Actor::System,
            event: EventKind::AnnotatorRegistered {
                annotator_id: who.into(),
            },
        }
    }

    #[test]
    fn sequences_start_at_one_and_have_no_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let pid = ProjectId::new("p");
        store.create_project(&pid).unwrap();
        assert_eq!(store.append_event(&pid, &created(1)).unwrap(), 1);
        assert_eq!(store.append_event(&pid, &registered(2, "a")).unwrap(), 2);
        assert!(matches!(
            store.append_event(&pid, &registered(4, "b")),
            Err(StoreError::Sequence { last: 2, found: 4 })
        ));
        assert_eq!(store.load_events(&pid).unwrap().len(), 2);

        // a fresh handle picks up where the file left off
        let again = Store::open(dir.path()).unwrap();
        assert!(again.append_event(&pid, &registered(2, "b")).is_err());
        assert_eq!(again.append_event(&pid, &registered(3, "b")).unwrap(), 3);
        let (state, events) = again.load_project(&pid).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(state.annotators.len(), 2);
        assert_eq!(again.list_projects().unwrap(), vec![pid]);
    }

    #[test]
    fn duplicate_and_unknown_projects() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let pid = ProjectId::new("p");
        store.create_project(&pid).unwrap();
        assert!(matches!(store.create_project(&pid), Err(StoreError::ProjectExists(_))));
        assert!(matches!(
            store.append_event(&"q".into(), &created(1)),
            Err(StoreError::UnknownProject(_))
        ));
    }

    #[test]
    fn snapshot_must_agree_with_log() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let pid = ProjectId::new("p");
        store.create_project(&pid).unwrap();
        store.append_event(&pid, &created(1)).unwrap();
        let (mut state, _) = store.load_project(&pid).unwrap();
        store.write_snapshot(&state, 1).unwrap();
        assert!(store.load_project(&pid).is_ok());
        state.annotators.push("ghost".into());
        store.write_snapshot(&state, 1).unwrap();
        assert!(matches!(store.load_project(&pid), Err(StoreError::SnapshotMismatch(_))));
    }

    fn write_lines(dir: &Path, lines: &[String]) -> PathBuf {
        let p = dir.join("in.jsonl");
        fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    #[test]
    fn strict_import_names_the_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut lines: Vec<String> = (0..100)
            .map(|i| format!(r#"{{"id":"u{i}","text":"utterance {i}"}}"#))
            .collect();
        lines[41] = r#"{"id":"u41","text":"#.into();
        let p = write_lines(dir.path(), &lines);
        match import_instances_file(&p, true) {
            Err(StoreError::Malformed { line, .. }) => assert_eq!(line, 42),
            other => panic!("expected malformed line, got {other:?}"),
        }
        let lenient = import_instances_file(&p, false).unwrap();
        assert_eq!(lenient.instances.len(), 99);
        assert_eq!(lenient.errors.len(), 1);
        assert_eq!(lenient.errors[0].line, 42);
    }

    #[test]
    fn empty_text_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &[r#"{"id":"u1","text":""}"#.into()]);
        assert!(import_instances_file(&p, true).is_err());
    }

    #[test]
    fn instances_round_trip_byte_equal() {
        let dir = tempfile::tempdir().unwrap();
        let insts = vec![
            Instance::new("u1", "sure, whatever you say"),
            Instance::new("u2", "Thanks a lot!").with_context("A: I fixed it."),
        ];
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        write_instances_file(&a, &insts).unwrap();
        let back = import_instances_file(&a, true).unwrap().instances;
        assert_eq!(back, insts);
        write_instances_file(&b, &back).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}
