//! Shared domain types: tasks, instances, annotation records and scaffolds.
//!
//! Everything here is a plain value. Validation lives next to the type it
//! guards; nothing in this module performs I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(
    /// Identifier of a label category, unique within a [`TaskSpec`].
    CategoryId
);
id_type!(InstanceId);
id_type!(AnnotatorId);
id_type!(ProjectId);

/// Tolerance on the sum of a stored soft-label vector.
pub const SOFT_LABEL_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCategory {
    pub category_id: CategoryId,
    pub display_name: String,
    /// Shown to annotators as guideline material.
    pub definition: String,
}

impl LabelCategory {
    pub fn new(id: &str, display_name: &str, definition: &str) -> Self {
        Self {
            category_id: CategoryId::new(id),
            display_name: display_name.to_owned(),
            definition: definition.to_owned(),
        }
    }
}

/// A subjective single-label classification task.
///
/// The order of `categories` is the index basis for every probability
/// vector in the system and must not change after creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub name: String,
    pub categories: Vec<LabelCategory>,
    pub guidelines: String,
    pub description: String,
}

/// A single failed rule from [`validate_task_spec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    #[error("empty task id")]
    EmptyTaskId,
    #[error("fewer than two categories")]
    FewerThanTwoCategories { count: usize },
    #[error("empty category id at position {position}")]
    EmptyCategoryId { position: usize },
    #[error("duplicate category id '{category}'")]
    DuplicateCategoryId { category: CategoryId },
    #[error("category '{category}' has an empty definition")]
    EmptyDefinition { category: CategoryId },
}

/// Checks every [`TaskSpec`] invariant and returns all violations found.
pub fn validate_task_spec(spec: &TaskSpec) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if spec.task_id.trim().is_empty() {
        violations.push(Violation::EmptyTaskId);
    }
    if spec.categories.len() < 2 {
        violations.push(Violation::FewerThanTwoCategories {
            count: spec.categories.len(),
        });
    }
    let mut seen = BTreeSet::new();
    for (position, cat) in spec.categories.iter().enumerate() {
        if cat.category_id.as_str().trim().is_empty() {
            violations.push(Violation::EmptyCategoryId { position });
            continue;
        }
        if !seen.insert(&cat.category_id) {
            violations.push(Violation::DuplicateCategoryId {
                category: cat.category_id.clone(),
            });
        }
        if cat.definition.trim().is_empty() {
            violations.push(Violation::EmptyDefinition {
                category: cat.category_id.clone(),
            });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

impl TaskSpec {
    /// Three-way affective stance of an utterance.
    pub fn sentiment() -> Self {
        Self {
            task_id: "sentiment".into(),
            name: "Sentiment".into(),
            categories: vec![
                LabelCategory::new(
                    "positive",
                    "Positive",
                    "The speaker expresses a favourable affective stance: approval, satisfaction, enthusiasm or gratitude.",
                ),
                LabelCategory::new(
                    "negative",
                    "Negative",
                    "The speaker expresses an unfavourable affective stance: complaint, frustration, disappointment or criticism.",
                ),
                LabelCategory::new(
                    "neutral",
                    "Neutral",
                    "The utterance carries no clear affective stance, or positive and negative cues cancel out.",
                ),
            ],
            guidelines: "Label the affective stance the speaker expresses in the utterance. \
                Judge the utterance itself; use preceding turns only to resolve references. \
                Indirect complaints and sarcasm count towards the stance they convey."
                .into(),
            description: "Classify each conversational utterance as positive, negative, or neutral."
                .into(),
        }
    }

    /// Binary opinion detection.
    pub fn opinion() -> Self {
        Self {
            task_id: "opinion".into(),
            name: "Opinion".into(),
            categories: vec![
                LabelCategory::new(
                    "opinion",
                    "Opinion",
                    "The utterance conveys a personal evaluation, judgment, preference, or stance.",
                ),
                LabelCategory::new(
                    "non-opinion",
                    "Non-opinion",
                    "The utterance states facts, asks questions, or performs social actions without evaluating anything.",
                ),
            ],
            guidelines: "Decide whether the speaker expresses a personal evaluation, judgment, \
                preference, or stance. Hedged evaluations (\"I guess it's fine\") still count as opinions."
                .into(),
            description: "Classify each conversational utterance as opinion or non-opinion.".into(),
        }
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, id: &CategoryId) -> Option<usize> {
        self.categories.iter().position(|c| &c.category_id == id)
    }

    pub fn has_category(&self, id: &CategoryId) -> bool {
        self.category_index(id).is_some()
    }

    pub fn category_ids(&self) -> Vec<CategoryId> {
        self.categories.iter().map(|c| c.category_id.clone()).collect()
    }
}

/// One conversational utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(rename = "id")]
    pub instance_id: InstanceId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(rename = "meta", default, skip_serializing_if = "BTreeMap::is_empty")]
    pub source_meta: BTreeMap<String, String>,
}

impl Instance {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            instance_id: InstanceId::new(id),
            text: text.into(),
            context: None,
            source_meta: BTreeMap::new(),
        }
    }

    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.context = Some(context.into());
        self
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.instance_id.as_str().trim().is_empty() {
            return Err(DomainError::EmptyInstanceId);
        }
        if self.text.trim().is_empty() {
            return Err(DomainError::EmptyText(self.instance_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Pass {
    First,
    Second,
}

impl Pass {
    pub fn number(self) -> u8 {
        match self {
            Pass::First => 1,
            Pass::Second => 2,
        }
    }
}

impl From<Pass> for u8 {
    fn from(p: Pass) -> u8 {
        p.number()
    }
}

impl TryFrom<u8> for Pass {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        match n {
            1 => Ok(Pass::First),
            2 => Ok(Pass::Second),
            other => Err(format!("pass must be 1 or 2, got {other}")),
        }
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionKind {
    Fresh,
    Keep,
    Revise,
}

/// A second-pass decision on a previously labeled instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Revise { label: CategoryId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("instance id is empty")]
    EmptyInstanceId,
    #[error("instance '{0}' has empty text")]
    EmptyText(InstanceId),
    #[error("unknown category '{0}'")]
    UnknownCategory(CategoryId),
    #[error("revise must change the label (pass-1 label is '{0}')")]
    NoOpRevise(CategoryId),
    #[error("invalid annotation record: {0}")]
    InvalidRecord(String),
    #[error("invalid scaffold for instance '{instance}': {reason}")]
    InvalidScaffold { instance: InstanceId, reason: String },
}

/// One annotator's decision for one instance in one pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(rename = "annotator")]
    pub annotator_id: AnnotatorId,
    #[serde(rename = "instance")]
    pub instance_id: InstanceId,
    pub pass: Pass,
    pub label: CategoryId,
    pub decision_kind: DecisionKind,
    pub revised_from: Option<CategoryId>,
    pub decided_at: DateTime<Utc>,
}

impl AnnotationRecord {
    pub fn fresh(
        annotator_id: AnnotatorId,
        instance_id: InstanceId,
        label: CategoryId,
        decided_at: DateTime<Utc>,
    ) -> Self {
        Self {
            annotator_id,
            instance_id,
            pass: Pass::First,
            label,
            decision_kind: DecisionKind::Fresh,
            revised_from: None,
            decided_at,
        }
    }

    /// Builds the pass-2 record for `decision` given the annotator's
    /// pass-1 record on the same instance.
    pub fn second_pass(
        first: &AnnotationRecord,
        decision: &Decision,
        decided_at: DateTime<Utc>,
    ) -> Result<Self, DomainError> {
        if first.pass != Pass::First {
            return Err(DomainError::InvalidRecord(
                "second-pass decision must reference a pass-1 record".into(),
            ));
        }
        let (label, kind, revised_from) = match decision {
            Decision::Keep => (first.label.clone(), DecisionKind::Keep, None),
            Decision::Revise { label } if *label == first.label => {
                return Err(DomainError::NoOpRevise(first.label.clone()))
            }
            Decision::Revise { label } => (
                label.clone(),
                DecisionKind::Revise,
                Some(first.label.clone()),
            ),
        };
        Ok(Self {
            annotator_id: first.annotator_id.clone(),
            instance_id: first.instance_id.clone(),
            pass: Pass::Second,
            label,
            decision_kind: kind,
            revised_from,
            decided_at,
        })
    }

    /// Checks the pass/decision-kind invariants. `first_label` is the
    /// annotator's pass-1 label and is required for pass-2 records.
    pub fn check(&self, first_label: Option<&CategoryId>) -> Result<(), DomainError> {
        let bad = |m: &str| Err(DomainError::InvalidRecord(m.to_owned()));
        match (self.pass, self.decision_kind) {
            (Pass::First, DecisionKind::Fresh) => {
                if self.revised_from.is_some() {
                    return bad("pass-1 record cannot carry revised_from");
                }
                Ok(())
            }
            (Pass::First, _) => bad("pass-1 record must be fresh"),
            (Pass::Second, DecisionKind::Fresh) => bad("pass-2 record must be keep or revise"),
            (Pass::Second, kind) => {
                let Some(first) = first_label else {
                    return bad("pass-2 record without pass-1 label");
                };
                match kind {
                    DecisionKind::Keep if self.label != *first => {
                        bad("keep must retain the pass-1 label")
                    }
                    DecisionKind::Keep if self.revised_from.is_some() => {
                        bad("keep cannot carry revised_from")
                    }
                    DecisionKind::Revise if self.label == *first => {
                        bad("revise must change the label")
                    }
                    DecisionKind::Revise if self.revised_from.as_ref() != Some(first) => {
                        bad("revised_from must equal the pass-1 label")
                    }
                    _ => Ok(()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfExample {
    pub category_id: CategoryId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenMeta {
    pub model: String,
    pub temperature: f64,
    pub run_index: u32,
    pub created_at: DateTime<Utc>,
}

/// Full model output for one instance, including the hidden verdict and
/// soft labels. Only admin-scoped code paths may hand this out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaffold {
    pub instance_id: InstanceId,
    pub self_examples: Vec<SelfExample>,
    pub reasoning_text: String,
    pub verdict: CategoryId,
    pub soft_labels: Vec<f64>,
    pub gen_meta: GenMeta,
}

impl Scaffold {
    pub fn validate(&self, spec: &TaskSpec) -> Result<(), DomainError> {
        let fail = |reason: String| {
            Err(DomainError::InvalidScaffold {
                instance: self.instance_id.clone(),
                reason,
            })
        };
        if self.self_examples.len() != spec.category_count() {
            return fail(format!(
                "expected {} self-examples, got {}",
                spec.category_count(),
                self.self_examples.len()
            ));
        }
        for cat in &spec.categories {
            let n = self
                .self_examples
                .iter()
                .filter(|e| e.category_id == cat.category_id)
                .count();
            if n != 1 {
                return fail(format!(
                    "expected one self-example for '{}', got {n}",
                    cat.category_id
                ));
            }
        }
        if !spec.has_category(&self.verdict) {
            return fail(format!("verdict '{}' is not a category", self.verdict));
        }
        if self.soft_labels.len() != spec.category_count() {
            return fail(format!(
                "soft label vector has {} entries for {} categories",
                self.soft_labels.len(),
                spec.category_count()
            ));
        }
        if self
            .soft_labels
            .iter()
            .any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return fail("soft label outside [0, 1]".into());
        }
        let sum: f64 = self.soft_labels.iter().sum();
        if (sum - 1.0).abs() > SOFT_LABEL_SUM_TOLERANCE {
            return fail(format!("soft labels sum to {sum}"));
        }
        Ok(())
    }
}

/// Shown above every explanation.
pub const CAVEAT_TEXT: &str = "This explanation was written by an automated system and can be wrong. \
Treat it as one argument to weigh against your own reading, not as an answer.";

const UNAVAILABLE_NOTE: &str = "No explanation is available for this item. Decide using the guidelines alone.";

/// What an annotator sees of a scaffold. The type has no field that could
/// carry the hidden verdict or soft labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorScaffoldView {
    pub instance_id: InstanceId,
    pub self_examples: Vec<SelfExample>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning_text: Option<String>,
    pub caveat_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AnnotatorScaffoldView {
    pub fn from_scaffold(s: &Scaffold) -> Self {
        Self {
            instance_id: s.instance_id.clone(),
            self_examples: s.self_examples.clone(),
            reasoning_text: Some(s.reasoning_text.clone()),
            caveat_text: CAVEAT_TEXT.to_owned(),
            note: None,
        }
    }

    /// View for an instance whose scaffold could not be generated.
    pub fn unavailable(instance_id: InstanceId) -> Self {
        Self {
            instance_id,
            self_examples: Vec::new(),
            reasoning_text: None,
            caveat_text: CAVEAT_TEXT.to_owned(),
            note: Some(UNAVAILABLE_NOTE.to_owned()),
        }
    }

    pub fn is_available(&self) -> bool {
        self.reasoning_text.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts() -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000, 0).unwrap()
    }

    #[test]
    fn preset_specs_validate() {
        assert_eq!(validate_task_spec(&TaskSpec::sentiment()), Ok(()));
        assert_eq!(validate_task_spec(&TaskSpec::opinion()), Ok(()));
        let ids = TaskSpec::sentiment().category_ids();
        assert_eq!(ids, vec!["positive".into(), "negative".into(), "neutral".into()]);
    }

    #[test]
    fn single_category_is_rejected() {
        let mut spec = TaskSpec::opinion();
        spec.categories.truncate(1);
        let errs = validate_task_spec(&spec).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].to_string(), "fewer than two categories");
    }

    #[test]
    fn duplicate_category_is_rejected() {
        let mut spec = TaskSpec::opinion();
        spec.categories = vec![
            LabelCategory::new("pos", "Pos", "good"),
            LabelCategory::new("pos", "Pos again", "also good"),
        ];
        let errs = validate_task_spec(&spec).unwrap_err();
        assert!(errs
            .iter()
            .any(|v| v.to_string().starts_with("duplicate category id")));
    }

    #[test]
    fn empty_definition_and_id_are_reported_together() {
        let mut spec = TaskSpec::sentiment();
        spec.categories[0].definition = " ".into();
        spec.categories[1].category_id = CategoryId::new("");
        let errs = validate_task_spec(&spec).unwrap_err();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn record_wire_names() {
        let r = AnnotationRecord::fresh("ann1".into(), "u17".into(), "negative".into(), ts());
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["annotator"], "ann1");
        assert_eq!(v["instance"], "u17");
        assert_eq!(v["pass"], 1);
        assert_eq!(v["decision_kind"], "fresh");
        assert!(v["revised_from"].is_null());
        let back: AnnotationRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn second_pass_keep_and_revise() {
        let first = AnnotationRecord::fresh("ann1".into(), "u17".into(), "negative".into(), ts());
        let keep = AnnotationRecord::second_pass(&first, &Decision::Keep, ts()).unwrap();
        assert_eq!(keep.label, first.label);
        assert_eq!(keep.decision_kind, DecisionKind::Keep);
        assert_eq!(keep.check(Some(&first.label)), Ok(()));

        let rev = AnnotationRecord::second_pass(
            &first,
            &Decision::Revise {
                label: "positive".into(),
            },
            ts(),
        )
        .unwrap();
        assert_eq!(rev.label, CategoryId::new("positive"));
        assert_eq!(rev.revised_from, Some(CategoryId::new("negative")));
        assert_eq!(rev.check(Some(&first.label)), Ok(()));

        let noop = AnnotationRecord::second_pass(
            &first,
            &Decision::Revise {
                label: "negative".into(),
            },
            ts(),
        );
        assert_eq!(noop, Err(DomainError::NoOpRevise("negative".into())));
    }

    #[test]
    fn check_catches_inconsistent_records() {
        let mut r = AnnotationRecord::fresh("a".into(), "i".into(), "x".into(), ts());
        r.revised_from = Some("y".into());
        assert!(r.check(None).is_err());
        r.pass = Pass::Second;
        r.decision_kind = DecisionKind::Keep;
        r.revised_from = None;
        assert!(r.check(Some(&"y".into())).is_err());
    }

    #[test]
    fn decision_wire_format() {
        let keep: Decision = serde_json::from_str(r#"{"decision":"keep"}"#).unwrap();
        assert_eq!(keep, Decision::Keep);
        let rev: Decision =
            serde_json::from_str(r#"{"decision":"revise","label":"positive"}"#).unwrap();
        assert_eq!(
            rev,
            Decision::Revise {
                label: "positive".into()
            }
        );
    }

    #[test]
    fn pass_rejects_other_numbers() {
        assert!(serde_json::from_str::<Pass>("3").is_err());
        assert_eq!(serde_json::from_str::<Pass>("2").unwrap(), Pass::Second);
    }

    #[test]
    fn instance_file_fields() {
        let line = r#"{"id":"u1","text":"fine, I guess","context":"A: how was it?","meta":{"src":"x"}}"#;
        let inst: Instance = serde_json::from_str(line).unwrap();
        assert_eq!(inst.instance_id.as_str(), "u1");
        assert_eq!(serde_json::to_string(&inst).unwrap(), line);
        assert!(Instance::new("u2", "  ").validate().is_err());
    }

    fn scaffold() -> Scaffold {
        let spec = TaskSpec::sentiment();
        Scaffold {
            instance_id: "u1".into(),
            self_examples: spec
                .categories
                .iter()
                .map(|c| SelfExample {
                    category_id: c.category_id.clone(),
                    text: format!("an example for {}", c.category_id),
                })
                .collect(),
            reasoning_text: "The speaker hedges.".into(),
            verdict: "neutral".into(),
            soft_labels: vec![0.2, 0.3, 0.5],
            gen_meta: GenMeta {
                model: "stub".into(),
                temperature: 0.2,
                run_index: 0,
                created_at: ts(),
            },
        }
    }

    #[test]
    fn scaffold_validation() {
        let spec = TaskSpec::sentiment();
        assert_eq!(scaffold().validate(&spec), Ok(()));

        let mut s = scaffold();
        s.soft_labels = vec![0.5, 0.5];
        assert!(s.validate(&spec).is_err());

        let mut s = scaffold();
        s.verdict = "happy".into();
        assert!(s.validate(&spec).is_err());

        let mut s = scaffold();
        s.self_examples[2].category_id = "positive".into();
        assert!(s.validate(&spec).is_err());

        let mut s = scaffold();
        s.soft_labels = vec![0.2, 0.3, 0.6];
        assert!(s.validate(&spec).is_err());
    }

    #[test]
    fn view_serialization_has_no_hidden_fields() {
        let view = AnnotatorScaffoldView::from_scaffold(&scaffold());
        let json = serde_json::to_string(&view).unwrap();
        assert!(!json.contains("verdict"));
        assert!(!json.contains("soft_labels"));
        assert!(!json.contains("0.5"));
        assert!(json.contains("The speaker hedges."));

        let missing = AnnotatorScaffoldView::unavailable("u9".into());
        assert!(!missing.is_available());
        let json = serde_json::to_string(&missing).unwrap();
        assert!(!json.contains("reasoning_text"));
        assert!(json.contains("note"));
    }
}
