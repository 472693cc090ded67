//! Parsing of the four-section scaffold response and its inverse.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::domain::{CategoryId, SelfExample, TaskSpec};

/// Accepted distance of the raw distribution sum from 1 before
/// renormalization.
pub const DISTRIBUTION_SUM_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Examples,
    Reasoning,
    Verdict,
    Distribution,
}

impl Section {
    pub const ALL: [Section; 4] = [
        Section::Examples,
        Section::Reasoning,
        Section::Verdict,
        Section::Distribution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Section::Examples => "EXAMPLES",
            Section::Reasoning => "REASONING",
            Section::Verdict => "VERDICT",
            Section::Distribution => "DISTRIBUTION",
        }
    }

    pub fn header(self) -> &'static str {
        match self {
            Section::Examples => "### EXAMPLES",
            Section::Reasoning => "### REASONING",
            Section::Verdict => "### VERDICT",
            Section::Distribution => "### DISTRIBUTION",
        }
    }

    fn from_header(line: &str) -> Option<Section> {
        let line = line.trim();
        Section::ALL.into_iter().find(|s| line.eq_ignore_ascii_case(s.header()))
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("{0} missing")]
    MissingSection(Section),
    #[error("{0} appears more than once")]
    DuplicateSection(Section),
    #[error("{0} is empty")]
    EmptySection(Section),
    #[error("{section}: unrecognised line '{line}'")]
    Unrecognised { section: Section, line: String },
    #[error("{section}: '{name}' is not a category")]
    UnknownCategory { section: Section, name: String },
    #[error("{section}: category '{category}' listed more than once")]
    Duplicate { section: Section, category: CategoryId },
    #[error("{section}: no entry for category '{category}'")]
    MissingCategory { section: Section, category: CategoryId },
    #[error("VERDICT '{0}' does not name a category")]
    BadVerdict(String),
    #[error("DISTRIBUTION: '{value}' for '{category}' is not a probability")]
    BadProbability { category: CategoryId, value: String },
    #[error("DISTRIBUTION sums to {0}, outside 1 ± {DISTRIBUTION_SUM_TOLERANCE}")]
    DistributionSum(f64),
}

/// The four parts of a scaffold response, in task category order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScaffold {
    pub self_examples: Vec<SelfExample>,
    pub reasoning_text: String,
    pub verdict: CategoryId,
    pub soft_labels: Vec<f64>,
}

fn strip_bullet(line: &str) -> &str {
    line.trim()
        .trim_start_matches(['-', '*', '•'])
        .trim()
}

fn match_category(spec: &TaskSpec, name: &str) -> Option<usize> {
    let name = name.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '*');
    spec.categories.iter().position(|c| {
        c.category_id.as_str().eq_ignore_ascii_case(name) || c.display_name.eq_ignore_ascii_case(name)
    })
}

fn split_sections(raw: &str) -> Result<[Option<Vec<&str>>; 4], ParseError> {
    let mut sections: [Option<Vec<&str>>; 4] = Default::default();
    let mut current: Option<usize> = None;
    for line in raw.lines() {
        if let Some(sec) = Section::from_header(line) {
            let idx = sec as usize;
            if sections[idx].is_some() {
                return Err(ParseError::DuplicateSection(sec));
            }
            sections[idx] = Some(Vec::new());
            current = Some(idx);
        } else if let Some(idx) = current {
            sections[idx].as_mut().expect("open section").push(line);
        }
    }
    Ok(sections)
}

/// Lines of the form `category: text`, one entry per category.
fn keyed_lines<'a>(
    spec: &TaskSpec,
    section: Section,
    lines: &[&'a str],
) -> Result<Vec<String>, ParseError> {
    let mut values: Vec<Option<String>> = vec![None; spec.category_count()];
    let mut last: Option<usize> = None;
    for line in lines {
        let stripped = strip_bullet(line);
        if stripped.is_empty() {
            continue;
        }
        let keyed = stripped
            .split_once(':')
            .and_then(|(k, v)| match_category(spec, k).map(|i| (i, v.trim())));
        match keyed {
            Some((i, v)) => {
                if values[i].is_some() {
                    return Err(ParseError::Duplicate {
                        section,
                        category: spec.categories[i].category_id.clone(),
                    });
                }
                values[i] = Some(v.to_owned());
                last = Some(i);
            }
            // continuation of a wrapped example
            None if section == Section::Examples && last.is_some() => {
                let v = values[last.unwrap()].as_mut().expect("set above");
                if !v.is_empty() {
                    v.push(' ');
                }
                v.push_str(stripped);
            }
            None => match stripped.split_once(':') {
                Some((k, _)) => {
                    return Err(ParseError::UnknownCategory {
                        section,
                        name: k.trim().to_owned(),
                    })
                }
                None => {
                    return Err(ParseError::Unrecognised {
                        section,
                        line: stripped.to_owned(),
                    })
                }
            },
        }
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| ParseError::MissingCategory {
                section,
                category: spec.categories[i].category_id.clone(),
            })
        })
        .collect()
}

fn parse_probability(category: &CategoryId, value: &str) -> Result<f64, ParseError> {
    let bad = || ParseError::BadProbability {
        category: category.clone(),
        value: value.to_owned(),
    };
    let v = value.trim();
    let (num, scale) = match v.strip_suffix('%') {
        Some(n) => (n.trim(), 100.0),
        None => (v, 1.0),
    };
    let p: f64 = num.parse().map_err(|_| bad())?;
    if !p.is_finite() {
        return Err(bad());
    }
    Ok(p / scale)
}

/// Extracts the four sections of a scaffold response.
///
/// Probabilities are clamped to `[0, 1]` and renormalized when their sum is
/// within [`DISTRIBUTION_SUM_TOLERANCE`] of 1; otherwise the response is
/// rejected.
pub fn parse_scaffold_response(raw: &str, spec: &TaskSpec) -> Result<ParsedScaffold, ParseError> {
    let sections = split_sections(raw)?;
    let get = |s: Section| sections[s as usize].as_ref().ok_or(ParseError::MissingSection(s));
    let (ex, re, ve, di) = (
        get(Section::Examples)?,
        get(Section::Reasoning)?,
        get(Section::Verdict)?,
        get(Section::Distribution)?,
    );

    let self_examples = keyed_lines(spec, Section::Examples, ex)?
        .into_iter()
        .zip(&spec.categories)
        .map(|(text, cat)| {
            if text.is_empty() {
                Err(ParseError::MissingCategory {
                    section: Section::Examples,
                    category: cat.category_id.clone(),
                })
            } else {
                Ok(SelfExample {
                    category_id: cat.category_id.clone(),
                    text,
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let reasoning_text = re.join("\n").trim().to_owned();
    if reasoning_text.is_empty() {
        return Err(ParseError::EmptySection(Section::Reasoning));
    }

    let verdict_line = ve
        .iter()
        .map(|l| strip_bullet(l))
        .find(|l| !l.is_empty())
        .ok_or(ParseError::EmptySection(Section::Verdict))?;
    let verdict_name = verdict_line.trim_end_matches('.');
    let verdict = match_category(spec, verdict_name)
        .map(|i| spec.categories[i].category_id.clone())
        .ok_or_else(|| ParseError::BadVerdict(verdict_name.to_owned()))?;

    let raw_probs = keyed_lines(spec, Section::Distribution, di)?;
    let mut soft_labels = Vec::with_capacity(raw_probs.len());
    for (value, cat) in raw_probs.iter().zip(&spec.categories) {
        soft_labels.push(parse_probability(&cat.category_id, value)?.clamp(0.0, 1.0));
    }
    let sum: f64 = soft_labels.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
        return Err(ParseError::DistributionSum(sum));
    }
    // already normalized up to rounding: leave values untouched
    if (sum - 1.0).abs() > 1e-12 {
        for p in &mut soft_labels {
            *p /= sum;
        }
    }

    Ok(ParsedScaffold {
        self_examples,
        reasoning_text,
        verdict,
        soft_labels,
    })
}

/// Renders parts in the response layout that [`parse_scaffold_response`]
/// reads. Example texts must be single lines.
pub fn format_response(parts: &ParsedScaffold) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", Section::Examples.header());
    for ex in &parts.self_examples {
        let _ = writeln!(out, "{}: {}", ex.category_id, ex.text);
    }
    let _ = writeln!(out, "{}\n{}", Section::Reasoning.header(), parts.reasoning_text);
    let _ = writeln!(out, "{}\n{}", Section::Verdict.header(), parts.verdict);
    let _ = writeln!(out, "{}", Section::Distribution.header());
    for (ex, p) in parts.self_examples.iter().zip(&parts.soft_labels) {
        let _ = writeln!(out, "{}: {}", ex.category_id, p);
    }
    out
}
