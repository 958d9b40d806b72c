//! Structured case records and the corpus loader.
//!
//! A case is the tuple of name, summary, evidence and legal issues that every
//! trial is grounded in. Corpora are stored as a JSON array of case objects.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_CORPUS: &str = include_str!("../data/cases.json");

/// A single piece of evidence, e.g. "Security camera footage".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvidenceItem {
    pub description: String,
}

/// A legal question argued in every round, e.g. "self-defense".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LegalIssue {
    pub label: String,
}

impl From<&str> for EvidenceItem {
    fn from(s: &str) -> Self {
        Self { description: s.to_string() }
    }
}

impl From<&str> for LegalIssue {
    fn from(s: &str) -> Self {
        Self { label: s.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub name: String,
    pub summary: String,
    pub evidence: Vec<EvidenceItem>,
    pub issues: Vec<LegalIssue>,
    /// Informational only; the protocol always seats prosecution and defense.
    #[serde(default)]
    pub roles: Vec<String>,
}

impl Case {
    /// Builds a case whose id is the slug of its name.
    pub fn new(
        name: &str,
        summary: &str,
        evidence: &[&str],
        issues: &[&str],
    ) -> Self {
        Self {
            id: slugify(name),
            name: name.to_string(),
            summary: summary.to_string(),
            evidence: evidence.iter().map(|e| EvidenceItem::from(*e)).collect(),
            issues: issues.iter().map(|i| LegalIssue::from(*i)).collect(),
            roles: Vec::new(),
        }
    }
}

/// One failed case invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    BlankId,
    BlankName,
    EvidenceEmpty,
    IssuesEmpty,
    BlankEvidence { index: usize },
    BlankIssue { index: usize },
    DuplicateIssue { label: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BlankId => write!(f, "id non-blank"),
            Violation::BlankName => write!(f, "name non-blank"),
            Violation::EvidenceEmpty => write!(f, "evidence non-empty"),
            Violation::IssuesEmpty => write!(f, "issues non-empty"),
            Violation::BlankEvidence { index } => {
                write!(f, "evidence non-blank (item {})", index + 1)
            }
            Violation::BlankIssue { index } => write!(f, "issues non-blank (item {})", index + 1),
            Violation::DuplicateIssue { label } => write!(f, "issues unique ({label:?} repeated)"),
        }
    }
}

/// Checks every case invariant and returns all violations found.
pub fn validate_case(case: &Case) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if case.id.trim().is_empty() {
        violations.push(Violation::BlankId);
    }
    if case.name.trim().is_empty() {
        violations.push(Violation::BlankName);
    }
    if case.evidence.is_empty() {
        violations.push(Violation::EvidenceEmpty);
    }
    if case.issues.is_empty() {
        violations.push(Violation::IssuesEmpty);
    }
    for (index, item) in case.evidence.iter().enumerate() {
        if item.description.trim().is_empty() {
            violations.push(Violation::BlankEvidence { index });
        }
    }
    let mut seen = BTreeSet::new();
    for (index, issue) in case.issues.iter().enumerate() {
        if issue.label.trim().is_empty() {
            violations.push(Violation::BlankIssue { index });
        } else if !seen.insert(issue.label.as_str()) {
            violations.push(Violation::DuplicateIssue { label: issue.label.clone() });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus file not found: {0}")]
    NotFound(String),
    #[error("failed to read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("case {id:?} failed validation: {}", join_violations(.violations))]
    Invalid { id: String, violations: Vec<Violation> },
    #[error("duplicate case id {0:?}")]
    DuplicateId(String),
    #[error("corpus contains no cases")]
    Empty,
    #[error("unknown case id {0:?}")]
    UnknownCase(String),
}

fn join_violations(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseCorpus {
    pub cases: Vec<Case>,
    pub source_path: Option<String>,
}

impl CaseCorpus {
    /// Validates every case and the corpus-level invariants.
    pub fn new(cases: Vec<Case>, source_path: Option<String>) -> Result<Self, CorpusError> {
        if cases.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut ids = BTreeSet::new();
        for case in &cases {
            if let Err(violations) = validate_case(case) {
                return Err(CorpusError::Invalid { id: case.id.clone(), violations });
            }
            if !ids.insert(case.id.as_str()) {
                return Err(CorpusError::DuplicateId(case.id.clone()));
            }
        }
        Ok(Self { cases, source_path })
    }

    pub fn from_json_str(text: &str) -> Result<Self, CorpusError> {
        let cases: Vec<Case> = serde_json::from_str(text)?;
        Self::new(cases, None)
    }

    /// The ten-case corpus shipped with the crate.
    pub fn bundled() -> Self {
        let mut corpus = Self::from_json_str(BUNDLED_CORPUS).expect("bundled corpus is valid");
        corpus.source_path = Some("<bundled>".to_string());
        corpus
    }

    pub fn get(&self, id: &str) -> Option<&Case> {
        self.cases.iter().find(|c| c.id == id)
    }

    /// Returns the cases with the given ids, in the order requested.
    /// An empty selection means the whole corpus.
    pub fn select(&self, ids: &[String]) -> Result<Vec<Case>, CorpusError> {
        if ids.is_empty() {
            return Ok(self.cases.clone());
        }
        ids.iter()
            .map(|id| self.get(id).cloned().ok_or_else(|| CorpusError::UnknownCase(id.clone())))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.cases).expect("cases serialize")
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CaseCorpus, CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CorpusError::NotFound(display.clone())
        } else {
            CorpusError::Io { path: display.clone(), source }
        }
    })?;
    let mut corpus = CaseCorpus::from_json_str(&text)?;
    corpus.source_path = Some(display);
    Ok(corpus)
}

pub fn save_corpus(corpus: &CaseCorpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut text = corpus.to_json();
    text.push('\n');
    fs::write(path, text).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

/// Lowercase, hyphen-separated ASCII slug: "Greenfield Corp. v. Alex Cruz" -> "greenfield-corp-v-alex-cruz".
pub fn slugify(name: &str) -> String {
    let mut slug = String::with_capacity(name.len());
    let mut pending_hyphen = false;
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_hyphen && !slug.is_empty() {
                slug.push('-');
            }
            pending_hyphen = false;
            slug.push(ch.to_ascii_lowercase());
        } else if ch != '.' && ch != '\'' {
            pending_hyphen = true;
        }
    }
    slug
}

/// Renders the case block given to every advocate: name, summary, numbered
/// evidence, numbered issues.
pub fn render_case_context(case: &Case) -> String {
    let mut out = String::new();
    out.push_str("Case: ");
    out.push_str(&case.name);
    out.push_str("\nSummary: ");
    out.push_str(&case.summary);
    out.push_str("\nEvidence:\n");
    for (i, item) in case.evidence.iter().enumerate() {
        out.push_str(&format!("  {}. {}\n", i + 1, item.description));
    }
    out.push_str("Legal issues:\n");
    for (i, issue) in case.issues.iter().enumerate() {
        out.push_str(&format!("  {}. {}\n", i + 1, issue.label));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn john_doe() -> Case {
        CaseCorpus::bundled().get("state-v-john-doe").unwrap().clone()
    }

    #[test]
    fn bundled_corpus_has_ten_cases() {
        let corpus = CaseCorpus::bundled();
        assert_eq!(corpus.len(), 10);
        let doe = john_doe();
        assert_eq!(doe.name, "State v. John Doe");
        assert_eq!(doe.evidence.len(), 3);
        let issues: Vec<_> = doe.issues.iter().map(|i| i.label.as_str()).collect();
        assert_eq!(issues, ["Self-defense", "Assault"]);
    }

    #[test]
    fn greenfield_is_valid() {
        let corpus = CaseCorpus::bundled();
        let case = corpus.get("greenfield-corp-v-alex-cruz").unwrap();
        assert_eq!(validate_case(case), Ok(()));
    }

    #[test]
    fn empty_issues_is_reported() {
        let mut case = john_doe();
        case.issues.clear();
        let violations = validate_case(&case).unwrap_err();
        assert!(violations.iter().any(|v| v.to_string() == "issues non-empty"));
    }

    #[test]
    fn blank_evidence_is_reported() {
        let mut case = john_doe();
        case.evidence.push(EvidenceItem::from(""));
        let violations = validate_case(&case).unwrap_err();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].to_string().starts_with("evidence non-blank"));
    }

    #[test]
    fn duplicate_issue_is_reported() {
        let case = Case::new("X v. Y", "s", &["e"], &["a", "a"]);
        assert_eq!(
            validate_case(&case),
            Err(vec![Violation::DuplicateIssue { label: "a".into() }])
        );
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = r#"[
            {"id":"doe","name":"A","summary":"s","evidence":["e"],"issues":["i"],"roles":[]},
            {"id":"doe","name":"B","summary":"s","evidence":["e"],"issues":["i"],"roles":[]}
        ]"#;
        assert!(matches!(CaseCorpus::from_json_str(text), Err(CorpusError::DuplicateId(id)) if id == "doe"));
    }

    #[test]
    fn invalid_case_names_id_and_rule() {
        let text = r#"[{"id":"bad","name":"A","summary":"s","evidence":["e"],"issues":[],"roles":[]}]"#;
        let err = CaseCorpus::from_json_str(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("\"bad\"") && msg.contains("issues non-empty"), "{msg}");
    }

    #[test]
    fn missing_file_is_not_found() {
        let err = load_corpus("/definitely/not/here.json").unwrap_err();
        assert!(matches!(err, CorpusError::NotFound(_)));
    }

    #[test]
    fn slugs() {
        assert_eq!(slugify("State v. John Doe"), "state-v-john-doe");
        assert_eq!(slugify("Greenfield Corp. v. Alex Cruz"), "greenfield-corp-v-alex-cruz");
        assert_eq!(slugify("Emily Park v. Phoenix Corp."), "emily-park-v-phoenix-corp");
    }

    #[test]
    fn bundled_ids_are_slugs_of_names() {
        for case in CaseCorpus::bundled().cases {
            assert_eq!(case.id, slugify(&case.name));
        }
    }

    #[test]
    fn rendered_context_order_and_numbering() {
        let text = render_case_context(&john_doe());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Case: State v. John Doe");
        assert!(lines[1].starts_with("Summary: "));
        assert_eq!(lines[2], "Evidence:");
        assert_eq!(lines[4], "  2. Security camera footage");
        assert_eq!(lines[6], "Legal issues:");
        assert_eq!(lines[7], "  1. Self-defense");
        assert_eq!(text, render_case_context(&john_doe()));
    }

    #[test]
    fn single_issue_renders_one_issue_line() {
        let case = Case::new("A v. B", "summary", &["e1", "e2"], &["negligence"]);
        let text = render_case_context(&case);
        let after: Vec<&str> = text.split("Legal issues:\n").nth(1).unwrap().lines().collect();
        assert_eq!(after, ["  1. negligence"]);
    }
}
