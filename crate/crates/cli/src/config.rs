//! Config files for `run`, `train` and `evaluate`, and `--override` handling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use courtroom_core::agent::{BackendRegistry, BackendSpec, DecodingParams};
use courtroom_core::case::{load_corpus, CaseCorpus};
use courtroom_core::debate::Mode;
use courtroom_core::orchestrator::Baseline;
use courtroom_core::taxonomy::{builtin_taxonomy, load_taxonomy, Trait};
use courtroom_core::tournament::ExperimentConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Inputs shared by every config kind: where cases, traits and backends come from.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Sources {
    /// Case corpus file; the bundled corpus when absent.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Trait taxonomy file; the built-in taxonomy when absent.
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSpec>,
}

impl Sources {
    pub fn corpus(&self, base: &Path) -> Result<CaseCorpus> {
        match &self.corpus {
            Some(path) => Ok(load_corpus(base.join(path))?),
            None => Ok(CaseCorpus::bundled()),
        }
    }

    pub fn taxonomy(&self, base: &Path) -> Result<Vec<Trait>> {
        match &self.taxonomy {
            Some(path) => Ok(load_taxonomy(base.join(path))?),
            None => Ok(builtin_taxonomy()),
        }
    }

    pub fn backends(&self, base: &Path) -> Result<BackendRegistry> {
        Ok(BackendRegistry::from_specs(&self.backends, base)?)
    }
}

/// `run` config: experiment fields plus sources.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunFile {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    #[serde(flatten)]
    pub sources: Sources,
}

pub const RUN_OVERRIDES: &[&str] = &[
    "mode",
    "trait_count",
    "rounds",
    "backend_id",
    "enumeration",
    "cases",
    "traits",
    "replications",
    "seed",
    "pairings_max",
    "workers",
    "include_parse_failures",
    "judge_sees_case",
    "decoding.temperature",
    "decoding.top_p",
    "decoding.max_tokens",
];

fn default_rounds() -> usize {
    1
}

fn default_episodes() -> usize {
    500
}

fn default_rates() -> Vec<f64> {
    vec![1e-5, 5e-5, 1e-4]
}

fn default_window() -> usize {
    100
}

fn default_true() -> bool {
    true
}

fn default_n_eval() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationSpec {
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    /// Static defense trait sets the policy is compared against.
    #[serde(default)]
    pub baselines: Vec<Vec<String>>,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self { n_eval: default_n_eval(), baselines: Vec::new() }
    }
}

/// `train` / `evaluate` config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainFile {
    pub backend_id: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Cases episodes draw from; empty means the whole corpus.
    #[serde(default)]
    pub cases: Vec<String>,
    /// Policy vocabulary; empty means every taxonomy trait.
    #[serde(default)]
    pub vocabulary: Vec<String>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_rates")]
    pub learning_rates: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default = "default_window")]
    pub selection_window: usize,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub decoding: DecodingParams,
    #[serde(default = "default_true")]
    pub judge_sees_case: bool,
    #[serde(flatten)]
    pub sources: Sources,
}

pub const TRAIN_OVERRIDES: &[&str] = &[
    "backend_id",
    "mode",
    "rounds",
    "cases",
    "vocabulary",
    "episodes",
    "learning_rates",
    "seed",
    "selection_window",
    "evaluation.n_eval",
    "evaluation.baselines",
    "judge_sees_case",
];

/// Parses `key=value`; the value is read as JSON when it parses, otherwise
/// as a plain string (`mode=team` and `mode="team"` are equivalent).
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text.split_once('=').with_context(|| format!("override {text:?} is not key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("override {text:?} has an empty key");
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((key.to_string(), value))
}

fn apply_override(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => bail!("cannot apply override {key:?}: {part:?} is not inside an object"),
        };
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Reads a JSON config, applies overrides restricted to `allowed` keys and
/// deserializes it. Returns the value and the directory relative paths
/// resolve against.
pub fn load_config<T: DeserializeOwned>(
    path: &Path,
    overrides: &[String],
    allowed: &[&str],
) -> Result<(T, PathBuf)> {
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => bail!("config not found: {}", path.display()),
        Err(e) => return Err(e).with_context(|| format!("reading config {}", path.display())),
    };
    let mut doc: Value =
        serde_json::from_str(&text).with_context(|| format!("config {} is not valid JSON", path.display()))?;
    for raw in overrides {
        let (key, value) = parse_override(raw)?;
        if !allowed.contains(&key.as_str()) {
            bail!("override key {key:?} is not configurable here (allowed: {})", allowed.join(", "));
        }
        apply_override(&mut doc, &key, value)?;
    }
    let config = serde_json::from_value(doc).with_context(|| format!("invalid config {}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}
