//! Scaffold generation: prompt construction, provider calls, response
//! parsing, redaction for annotators, and the repeated-run consistency study.

mod consistency;
mod generate;
mod parse;
mod prompt;
mod provider;
mod redact;

pub use consistency::{run_consistency_study, ConsistencyResult, RunFailure, RunPairCorrelation, StudyError};
pub use generate::{
    generate_batch, generate_scaffold, GenConfig, ScaffoldFailure, ScaffoldOutcome,
    DEFAULT_TEMPERATURE,
};
pub use parse::{format_response, parse_scaffold_response, ParseError, ParsedScaffold, Section};
pub use prompt::build_prompt;
pub use provider::{
    HttpProvider, NoisyStubProvider, Provider, ProviderError, ProviderResponse, ProviderSettings,
    StubProvider,
};
pub use redact::{redact_for_annotator, redact_outcome, Redacted, RedactionPatterns, RedactionWarning};
