use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLabel {
    Guilty,
    NotGuilty,
    Undecided,
}

impl VerdictLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Guilty => "guilty",
            VerdictLabel::NotGuilty => "not_guilty",
            VerdictLabel::Undecided => "undecided",
        }
    }

    /// Courtroom-style label, e.g. "Not Guilty".
    pub fn title(self) -> &'static str {
        match self {
            VerdictLabel::Guilty => "Guilty",
            VerdictLabel::NotGuilty => "Not Guilty",
            VerdictLabel::Undecided => "Undecided",
        }
    }

    fn from_loose(text: &str) -> Option<Self> {
        let normalized: String = text
            .trim()
            .trim_end_matches('.')
            .to_ascii_lowercase()
            .replace(['_', '-'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        match normalized.as_str() {
            "guilty" => Some(VerdictLabel::Guilty),
            "not guilty" | "notguilty" => Some(VerdictLabel::NotGuilty),
            "undecided" => Some(VerdictLabel::Undecided),
            _ => None,
        }
    }
}

impl fmt::Display for VerdictLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    pub confidence: f64,
}

impl Verdict {
    /// Clamps finite confidences into [0, 1]; rejects NaN and infinities.
    pub fn new(label: VerdictLabel, confidence: f64) -> Option<Self> {
        confidence.is_finite().then(|| Self { label, confidence: confidence.clamp(0.0, 1.0) })
    }

    /// Used when the judge never produced a parseable decision.
    pub fn undecided_fallback() -> Self {
        Self { label: VerdictLabel::Undecided, confidence: 0.0 }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.confidence)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (Confidence: {:.2})", self.label.title(), self.confidence)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no verdict found in judge output")]
pub struct VerdictParseError;

static LABEL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(not[\s_-]*guilty|guilty|undecided)\b").unwrap());
static LABELLED_CONFIDENCE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)confidence[^0-9.\n]{0,20}(\d+(?:\.\d+)?|\.\d+)\s*(%?)").unwrap()
});
static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d*\.?\d+").unwrap());

/// Extracts a verdict from judge output.
///
/// Tries, in order: the whole text as a JSON object with `verdict` and
/// `confidence`; the first such JSON object embedded in the text; a
/// case-insensitive label match paired with a confidence in [0, 1].
pub fn parse_verdict(text: &str) -> Result<Verdict, VerdictParseError> {
    if let Ok(value) = serde_json::from_str::<Value>(text.trim()) {
        if let Some(verdict) = verdict_from_json(&value) {
            return Ok(verdict);
        }
    }
    if let Some(verdict) = embedded_json_verdict(text) {
        return Ok(verdict);
    }
    prose_verdict(text).ok_or(VerdictParseError)
}

fn verdict_from_json(value: &Value) -> Option<Verdict> {
    let obj = value.as_object()?;
    let label = VerdictLabel::from_loose(obj.get("verdict")?.as_str()?)?;
    let confidence = match obj.get("confidence")? {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse::<f64>().ok()?,
        _ => return None,
    };
    Verdict::new(label, confidence)
}

fn embedded_json_verdict(text: &str) -> Option<Verdict> {
    text.match_indices('{').find_map(|(start, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(value)) => verdict_from_json(&value),
            _ => None,
        }
    })
}

fn prose_verdict(text: &str) -> Option<Verdict> {
    let label = VerdictLabel::from_loose(LABEL_RE.find(text)?.as_str())?;
    let confidence = labelled_confidence(text).or_else(|| {
        NUMBER_RE
            .find_iter(text)
            .filter_map(|m| m.as_str().parse::<f64>().ok())
            .find(|v| (0.0..=1.0).contains(v))
    })?;
    Verdict::new(label, confidence)
}

fn labelled_confidence(text: &str) -> Option<f64> {
    let caps = LABELLED_CONFIDENCE_RE.captures(text)?;
    let value: f64 = caps[1].parse().ok()?;
    if &caps[2] == "%" {
        Some(value / 100.0)
    } else {
        Some(value)
    }
}
