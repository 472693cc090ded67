use serde::{Deserialize, Serialize};
use tracing::warn;

use super::generate::ScaffoldOutcome;
use crate::domain::{AnnotatorScaffoldView, InstanceId, Scaffold};

/// Phrases that suggest reasoning text is asserting a final label.
/// Matching is case-insensitive substring search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RedactionPatterns(pub Vec<String>);

impl Default for RedactionPatterns {
    fn default() -> Self {
        Self(
            [
                "the label is",
                "the correct label",
                "the correct answer is",
                "the answer is",
                "i classify this as",
                "i would classify this as",
                "should be labeled",
                "should be labelled",
                "final answer",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        )
    }
}

impl RedactionPatterns {
    pub fn matches<'a>(&'a self, text: &str) -> Vec<&'a str> {
        let lower = text.to_lowercase();
        self.0
            .iter()
            .filter(|p| !p.is_empty() && lower.contains(&p.to_lowercase()))
            .map(String::as_str)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionWarning {
    pub instance_id: InstanceId,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Redacted {
    pub view: AnnotatorScaffoldView,
    pub warnings: Vec<RedactionWarning>,
}

/// The annotator view of `s`. Reasoning text is passed through unchanged;
/// phrases that look like a stated label only produce warnings.
pub fn redact_for_annotator(s: &Scaffold, patterns: &RedactionPatterns) -> Redacted {
    let warnings: Vec<RedactionWarning> = patterns
        .matches(&s.reasoning_text)
        .into_iter()
        .map(|p| {
            warn!(instance = %s.instance_id, pattern = p, "reasoning text appears to state a label");
            RedactionWarning {
                instance_id: s.instance_id.clone(),
                pattern: p.to_owned(),
            }
        })
        .collect();
    Redacted {
        view: AnnotatorScaffoldView::from_scaffold(s),
        warnings,
    }
}

pub fn redact_outcome(o: &ScaffoldOutcome, patterns: &RedactionPatterns) -> Redacted {
    match o {
        ScaffoldOutcome::Generated(s) => redact_for_annotator(s, patterns),
        ScaffoldOutcome::Failed(f) => Redacted {
            view: AnnotatorScaffoldView::unavailable(f.instance_id.clone()),
            warnings: Vec::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Instance, TaskSpec};
    use crate::scaffold::generate::{generate_scaffold, GenConfig, ScaffoldFailure};
    use crate::scaffold::parse::format_response;
    use crate::scaffold::provider::{Provider, ProviderError, ProviderResponse, StubProvider};

    /// Stub whose reasoning ends by stating a label outright.
    struct Leaky(StubProvider);

    impl Provider for Leaky {
        fn complete(&self, p: &str, _: f64, _: u32) -> Result<ProviderResponse, ProviderError> {
            let mut a = self.0.answer(p);
            a.reasoning_text.push_str("\nOverall, the label is positive.");
            Ok(ProviderResponse {
                raw_text: format_response(&a),
                provider_meta: serde_json::Value::Null,
            })
        }
        fn model(&self) -> &str {
            "leaky"
        }
    }

    fn scaffold_from(p: &dyn Provider) -> Scaffold {
        let spec = TaskSpec::sentiment();
        generate_scaffold(p, &spec, &Instance::new("u1", "great, just great"), &GenConfig::default())
            .scaffold()
            .cloned()
            .unwrap()
    }

    #[test]
    fn view_has_no_verdict_field() {
        let s = scaffold_from(&StubProvider::new(TaskSpec::sentiment()));
        let r = redact_for_annotator(&s, &RedactionPatterns::default());
        assert!(r.warnings.is_empty());
        let json = serde_json::to_string(&r.view).unwrap();
        assert!(!json.contains("verdict"));
        assert!(!json.contains("soft_labels"));
        assert_eq!(r.view.reasoning_text.as_deref(), Some(s.reasoning_text.as_str()));
    }

    #[test]
    fn stated_label_is_warned_not_removed() {
        let s = scaffold_from(&Leaky(StubProvider::new(TaskSpec::sentiment())));
        let r = redact_for_annotator(&s, &RedactionPatterns::default());
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.warnings[0].pattern, "the label is");
        assert!(r.view.reasoning_text.unwrap().contains("the label is positive"));
    }

    #[test]
    fn custom_patterns() {
        let s = scaffold_from(&StubProvider::new(TaskSpec::sentiment()));
        let pats = RedactionPatterns(vec!["LEXICAL CUES".into()]);
        assert_eq!(redact_for_annotator(&s, &pats).warnings.len(), 1);
    }

    #[test]
    fn failed_outcome_gives_note() {
        let o = ScaffoldOutcome::Failed(ScaffoldFailure {
            instance_id: "u1".into(),
            attempts: 3,
            cause: "parse".into(),
        });
        let r = redact_outcome(&o, &RedactionPatterns::default());
        assert!(r.view.reasoning_text.is_none());
        assert!(r.view.note.is_some());
    }
}
