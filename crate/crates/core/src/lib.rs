//! Two-pass human/model co-annotation.
//!
//! Annotators label a corpus independently, then revisit their labels after
//! reading model-generated reasoning whose predicted label is withheld. The
//! crate provides the protocol state machine, scaffold generation, the
//! agreement and revision metrics, persistence, and a seeded simulator.

pub mod domain;
pub mod metrics;
pub mod protocol;
pub mod scaffold;
pub mod sim;
pub mod store;
