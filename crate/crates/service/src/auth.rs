use std::collections::HashMap;
use std::path::Path;

use coannotate_core::domain::{AnnotatorId, ProjectId};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    Admin,
    Annotator(AnnotatorId),
}

/// The caller behind a bearer token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub role: Role,
    /// Restricts the session to one project when set.
    pub project: Option<ProjectId>,
}

impl Session {
    pub fn may_access(&self, project: &ProjectId) -> bool {
        self.project.as_ref().is_none_or(|p| p == project)
    }
}

#[derive(Debug, Error)]
pub enum TokenError {
    #[error("reading token file {path}: {message}")]
    Read { path: String, message: String },
    #[error("token file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("token file defines no tokens")]
    Empty,
    #[error("token entry {0}: empty token")]
    EmptyToken(usize),
    #[error("token entry {0}: duplicate token")]
    Duplicate(usize),
    #[error("token entry {0}: annotator tokens need an annotator_id")]
    MissingAnnotator(usize),
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RoleName {
    Admin,
    Annotator,
}

#[derive(Debug, Deserialize)]
struct TokenEntry {
    token: String,
    role: RoleName,
    #[serde(default)]
    annotator_id: Option<AnnotatorId>,
    #[serde(default)]
    project: Option<ProjectId>,
}

#[derive(Debug, Deserialize)]
struct TokenFile {
    tokens: Vec<TokenEntry>,
}

/// Static bearer tokens loaded once at startup.
#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    sessions: HashMap<String, Session>,
}

impl TokenTable {
    /// Parses a token document:
    ///
    /// ```json
    /// {"tokens": [
    ///   {"token": "s3cret", "role": "admin"},
    ///   {"token": "t1", "role": "annotator", "annotator_id": "ann1", "project": "p1"}
    /// ]}
    /// ```
    pub fn from_json(text: &str, origin: &str) -> Result<Self, TokenError> {
        let file: TokenFile = serde_json::from_str(text).map_err(|e| TokenError::Parse {
            path: origin.to_owned(),
            message: e.to_string(),
        })?;
        if file.tokens.is_empty() {
            return Err(TokenError::Empty);
        }
        let mut sessions = HashMap::new();
        for (i, e) in file.tokens.into_iter().enumerate() {
            if e.token.trim().is_empty() {
                return Err(TokenError::EmptyToken(i));
            }
            let role = match e.role {
                RoleName::Admin => Role::Admin,
                RoleName::Annotator => Role::Annotator(
                    e.annotator_id
                        .filter(|a| !a.as_str().is_empty())
                        .ok_or(TokenError::MissingAnnotator(i))?,
                ),
            };
            let session = Session {
                role,
                project: e.project,
            };
            if sessions.insert(e.token, session).is_some() {
                return Err(TokenError::Duplicate(i));
            }
        }
        Ok(Self { sessions })
    }

    pub fn load(path: &Path) -> Result<Self, TokenError> {
        let text = std::fs::read_to_string(path).map_err(|e| TokenError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn insert(&mut self, token: impl Into<String>, session: Session) {
        self.sessions.insert(token.into(), session);
    }

    pub fn lookup(&self, token: &str) -> Option<&Session> {
        self.sessions.get(token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_roles_and_scopes() {
        let t = TokenTable::from_json(
            r#"{"tokens":[{"token":"a","role":"admin"},
                {"token":"b","role":"annotator","annotator_id":"ann1","project":"p1"}]}"#,
            "test",
        )
        .unwrap();
        assert_eq!(t.lookup("a").unwrap().role, Role::Admin);
        let s = t.lookup("b").unwrap();
        assert_eq!(s.role, Role::Annotator("ann1".into()));
        assert!(s.may_access(&"p1".into()));
        assert!(!s.may_access(&"p2".into()));
        assert!(t.lookup("c").is_none());
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(matches!(
            TokenTable::from_json(r#"{"tokens":[]}"#, "t"),
            Err(TokenError::Empty)
        ));
        assert!(matches!(
            TokenTable::from_json(r#"{"tokens":[{"token":"x","role":"annotator"}]}"#, "t"),
            Err(TokenError::MissingAnnotator(0))
        ));
        assert!(matches!(
            TokenTable::from_json(
                r#"{"tokens":[{"token":"x","role":"admin"},{"token":"x","role":"admin"}]}"#,
                "t"
            ),
            Err(TokenError::Duplicate(1))
        ));
        assert!(TokenTable::from_json("not json", "t").is_err());
    }
}
