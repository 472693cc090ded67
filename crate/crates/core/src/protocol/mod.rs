//! The two-pass protocol as an event-sourced state machine.
//!
//! Every mutation of a project is recorded as exactly one [`AuditEvent`];
//! [`ProjectState::replay`] folds a log back into the state it produced.

mod engine;
mod events;
mod queue;
mod state;

pub use engine::{
    AttachSummary, AnnotatorProgress, ClosureSummary, Clock, Engine, ErrorKind, ImportOutcome,
    ProjectStatus, ProtocolError, RejectedInstance,
};
pub use events::{Actor, AuditEvent, Cell, EventKind};
pub use queue::{queue_order, AnnotatorQueue, QueueItem, QueueStatus};
pub use state::{Phase, ProjectSettings, ProjectState, ReplayError};
