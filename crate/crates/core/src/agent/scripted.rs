//! Table-driven offline backend.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, GenerationRequest, Role};

/// Key under which a scripted response is stored: `role/traitfingerprint/turn`.
pub fn script_key(role: Role, trait_fingerprint: &str, turn: usize) -> String {
    format!("{}/{}/{}", role.as_str(), trait_fingerprint, turn)
}

/// Answers every judge request whose defense holds exactly these traits
/// (in any order) with `response`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRule {
    pub defense: Vec<String>,
    pub response: String,
}

impl JudgeRule {
    fn matches(&self, defense: &[String]) -> bool {
        let mut want = self.defense.clone();
        let mut have = defense.to_vec();
        want.sort();
        have.sort();
        want == have
    }
}

/// Seeded text generator used when no script entry matches. Randomness is a
/// pure function of (generator seed, request seed, request fingerprint).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackGenerator {
    pub seed: u64,
}

const LEXICON: &[&str] = &[
    "the", "evidence", "clearly", "shows", "record", "witness", "testimony", "footage",
    "supports", "undermines", "intent", "doubt", "reasonable", "facts", "timeline", "claim",
    "consistent", "contradicts", "burden", "proof", "court", "must", "consider", "weight",
    "credible", "documented", "standard", "law", "justice", "conduct",
];

impl FallbackGenerator {
    fn rng_for(&self, request: &GenerationRequest) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(request.seed.unwrap_or(0).to_le_bytes());
        hasher.update(request.fingerprint());
        let digest: [u8; 32] = hasher.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }

    pub fn generate(&self, request: &GenerationRequest) -> String {
        let mut rng = self.rng_for(request);
        match request.meta.role {
            Role::Judge => {
                let label = if rng.random_bool(0.5) { "guilty" } else { "not guilty" };
                let confidence = f64::from(rng.random_range(50u32..=100)) / 100.0;
                serde_json::json!({ "verdict": label, "confidence": confidence }).to_string()
            }
            role => {
                let words: Vec<&str> =
                    (0..12).map(|_| *LEXICON.choose(&mut rng).expect("lexicon non-empty")).collect();
                format!(
                    "[{} {} #{}] {}.",
                    role.capitalized(),
                    request.meta.traits.join("+"),
                    request.meta.turn,
                    words.join(" ")
                )
            }
        }
    }
}

/// Deterministic backend for tests and offline experiments.
///
/// Lookup order: exact `role/fingerprint/turn` key, judge rules (judge
/// requests only), `role/fingerprint/*`, `role/*/turn`, `role/*/*`, then the
/// fallback generator.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptedBackend {
    pub responses: BTreeMap<String, String>,
    pub judge_rules: Vec<JudgeRule>,
    pub fallback: Option<FallbackGenerator>,
}

impl ScriptedBackend {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        Self { responses, ..Self::default() }
    }

    pub fn with_fallback(seed: u64) -> Self {
        Self { fallback: Some(FallbackGenerator { seed }), ..Self::default() }
    }

    pub fn fallback(mut self, seed: u64) -> Self {
        self.fallback = Some(FallbackGenerator { seed });
        self
    }

    pub fn rule(mut self, rule: JudgeRule) -> Self {
        self.judge_rules.push(rule);
        self
    }

    pub fn respond(mut self, key: impl Into<String>, text: impl Into<String>) -> Self {
        self.responses.insert(key.into(), text.into());
        self
    }

    /// Reads a script file: a JSON object mapping keys to response strings.
    pub fn load_script(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>, BackendError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Malformed(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("{}: {e}", path.display())))
    }

    fn lookup(&self, request: &GenerationRequest) -> Option<String> {
        let meta = &request.meta;
        let role = meta.role.as_str();
        let fingerprint = meta.traits.join("+");
        if let Some(text) = self.responses.get(&script_key(meta.role, &fingerprint, meta.turn)) {
            return Some(text.clone());
        }
        if meta.role == Role::Judge {
            if let Some(matchup) = &meta.matchup {
                if let Some(rule) = self.judge_rules.iter().find(|r| r.matches(&matchup.defense)) {
                    return Some(rule.response.clone());
                }
            }
        }
        [
            format!("{role}/{fingerprint}/*"),
            format!("{role}/*/{}", meta.turn),
            format!("{role}/*/*"),
        ]
        .iter()
        .find_map(|key| self.responses.get(key).cloned())
    }
}

impl Backend for ScriptedBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        if request.system_prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        if let Some(text) = self.lookup(request) {
            return Ok(text);
        }
        match &self.fallback {
            Some(generator) => Ok(generator.generate(request)),
            None => Err(BackendError::MissingScript {
                key: script_key(request.meta.role, &request.meta.traits.join("+"), request.meta.turn),
            }),
        }
    }
}
