//! Agents, prompts, verdicts and the text-generation backends behind them.

mod prompt;
mod remote;
mod scripted;
mod verdict;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::taxonomy::TraitSet;

pub use prompt::{judge_traits, render_system_prompt};
pub use remote::{EndpointConfig, RemoteBackend};
pub use scripted::{script_key, FallbackGenerator, JudgeRule, ScriptedBackend};
pub use verdict::{parse_verdict, Verdict, VerdictLabel, VerdictParseError};

/// Maximum trait count for an advocate.
pub const MAX_ADVOCATE_TRAITS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Prosecution,
    Defense,
}

impl Side {
    pub fn opponent(self) -> Side {
        match self {
            Side::Prosecution => Side::Defense,
            Side::Defense => Side::Prosecution,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Prosecution => "prosecution",
            Side::Defense => "defense",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prosecution,
    Defense,
    Judge,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Prosecution => "prosecution",
            Role::Defense => "defense",
            Role::Judge => "judge",
        }
    }

    pub fn capitalized(self) -> &'static str {
        match self {
            Role::Prosecution => "Prosecution",
            Role::Defense => "Defense",
            Role::Judge => "Judge",
        }
    }
}

impl From<Side> for Role {
    fn from(side: Side) -> Self {
        match side {
            Side::Prosecution => Role::Prosecution,
            Side::Defense => Role::Defense,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self { temperature: 0.7, top_p: 0.9, max_tokens: 512 }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(AgentError::Decoding(format!("temperature {} must be >= 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(AgentError::Decoding(format!("top_p {} must be in (0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(AgentError::Decoding("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("judge must hold exactly the traits (fair, ethical), got ({0})")]
    JudgeTraits(String),
    #[error("advocates hold 1..={MAX_ADVOCATE_TRAITS} traits, got {0}")]
    TraitCount(usize),
    #[error("invalid decoding parameters: {0}")]
    Decoding(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub role: Role,
    pub traits: TraitSet,
    pub backend_id: String,
    pub decoding: DecodingParams,
}

impl AgentConfig {
    pub fn new(
        role: Role,
        traits: TraitSet,
        backend_id: impl Into<String>,
        decoding: DecodingParams,
    ) -> Result<Self, AgentError> {
        decoding.validate()?;
        match role {
            Role::Judge if traits.traits != judge_traits().traits => {
                return Err(AgentError::JudgeTraits(traits.to_string()));
            }
            Role::Prosecution | Role::Defense
                if traits.is_empty() || traits.len() > MAX_ADVOCATE_TRAITS =>
            {
                return Err(AgentError::TraitCount(traits.len()));
            }
            _ => {}
        }
        Ok(Self { role, traits, backend_id: backend_id.into(), decoding })
    }

    pub fn judge(backend_id: impl Into<String>, decoding: DecodingParams) -> Result<Self, AgentError> {
        Self::new(Role::Judge, judge_traits(), backend_id, decoding)
    }

    pub fn system_prompt(&self) -> String {
        render_system_prompt(&self.traits, self.role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: String,
    pub text: String,
}

impl Message {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self { speaker: speaker.into(), text: text.into() }
    }
}

/// The two trait lists seated in a trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matchup {
    pub prosecution: Vec<String>,
    pub defense: Vec<String>,
}

/// Bookkeeping that identifies where a request sits in a trial. Offline
/// backends key on it; remote backends only send the prompt and messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub role: Role,
    pub traits: Vec<String>,
    /// Transcript position for advocates, attempt number for the judge.
    pub turn: usize,
    pub matchup: Option<Matchup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub decoding: DecodingParams,
    pub seed: Option<u64>,
    pub meta: RequestMeta,
}

impl GenerationRequest {
    /// SHA-256 over the canonical JSON encoding of the request.
    pub fn fingerprint(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        Sha256::digest(&bytes).into()
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no script entry for {key}")]
    MissingScript { key: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("giving up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<BackendError> },
    #[error("empty completion")]
    EmptyCompletion,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("credential variable {0} is not set")]
    Credential(String),
    #[error("system prompt is empty")]
    EmptyPrompt,
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
}

impl BackendError {
    pub fn is_timeout(&self) -> bool {
        match self {
            BackendError::Timeout => true,
            BackendError::RetriesExhausted { last, .. } => last.is_timeout(),
            _ => false,
        }
    }

    fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A text generator. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;
}

#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn Backend>>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, id: impl Into<String>, backend: impl Backend + 'static) -> Self {
        self.insert(id, Arc::new(backend));
        self
    }

    pub fn insert(&mut self, id: impl Into<String>, backend: Arc<dyn Backend>) {
        self.backends.insert(id.into(), backend);
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn Backend>, BackendError> {
        self.backends.get(id).ok_or_else(|| BackendError::UnknownBackend(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}

impl fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.backends.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoding_defaults() {
        let d = DecodingParams::default();
        assert_eq!((d.temperature, d.top_p, d.max_tokens), (0.7, 0.9, 512));
        d.validate().unwrap();
        assert!(DecodingParams { top_p: 0.0, ..d }.validate().is_err());
        assert!(DecodingParams { temperature: -0.1, ..d }.validate().is_err());
    }

    #[test]
    fn judge_config_requires_fair_ethical() {
        AgentConfig::judge("scripted", DecodingParams::default()).unwrap();
        let wrong = TraitSet::new(["fair"], false).unwrap();
        assert!(matches!(
            AgentConfig::new(Role::Judge, wrong, "scripted", DecodingParams::default()),
            Err(AgentError::JudgeTraits(_))
        ));
    }

    #[test]
    fn advocate_trait_bounds() {
        let ten: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let set = TraitSet::new(ten, false).unwrap();
        assert_eq!(
            AgentConfig::new(Role::Defense, set, "b", DecodingParams::default()),
            Err(AgentError::TraitCount(10))
        );
    }

    #[test]
    fn timeout_detection_sees_through_retries() {
        let err = BackendError::RetriesExhausted { attempts: 3, last: Box::new(BackendError::Timeout) };
        assert!(err.is_timeout());
        assert!(!BackendError::EmptyCompletion.is_timeout());
    }
}

/// Backend description as it appears in experiment config files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Scripted(ScriptedSpec),
    Remote(EndpointConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedSpec {
    /// Script file (JSON object of key → response), relative to the config file.
    #[serde(default)]
    pub script: Option<String>,
    /// Inline entries; these win over entries from `script`.
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    #[serde(default)]
    pub judge_rules: Vec<JudgeRule>,
    /// Seed of the generator answering requests no entry matches.
    #[serde(default)]
    pub fallback_seed: Option<u64>,
}

impl BackendSpec {
    /// Instantiates the backend; relative paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Arc<dyn Backend>, BackendError> {
        match self {
            BackendSpec::Scripted(spec) => {
                let mut responses = match &spec.script {
                    Some(path) => ScriptedBackend::load_script(base_dir.join(path))?,
                    None => BTreeMap::new(),
                };
                responses.extend(spec.responses.clone());
                let backend = ScriptedBackend {
                    responses,
                    judge_rules: spec.judge_rules.clone(),
                    fallback: spec.fallback_seed.map(|seed| FallbackGenerator { seed }),
                };
                Ok(Arc::new(backend))
            }
            BackendSpec::Remote(config) => Ok(Arc::new(RemoteBackend::new(config.clone()))),
        }
    }
}

impl BackendRegistry {
    pub fn from_specs<'a>(
        specs: impl IntoIterator<Item = (&'a String, &'a BackendSpec)>,
        base_dir: &Path,
    ) -> Result<Self, BackendError> {
        let mut registry = Self::new();
        for (id, spec) in specs {
            registry.insert(id.clone(), spec.build(base_dir)?);
        }
        Ok(registry)
    }
}
