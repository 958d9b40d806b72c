//! Defense-trait orchestrator trained with REINFORCE.
//!
//! The policy is linear-softmax: `logits = W · x`, with one row of `W` per
//! vocabulary trait. Three traits are drawn without replacement, each from a
//! softmax renormalized over the traits not yet drawn, so the log-probability
//! of the ordered triple is exact and its gradient analytic:
//!
//! `∂ log p / ∂ l_k = Σ_j (1[k = a_j] − p_j(k) · 1[k ∈ R_j])`
//!
//! where `a_j` is draw `j`, `R_j` the traits still available at draw `j` and
//! `p_j` the softmax over `R_j`. The weight gradient is that vector's outer
//! product with the features.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::agent::{BackendRegistry, DecodingParams, Verdict, VerdictLabel};
use crate::case::Case;
use crate::debate::{Mode, TrialConfig};
use crate::seed::derive_seed;
use crate::taxonomy::TraitSet;

pub const TRIPLE: usize = 3;
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("vocabulary needs at least {TRIPLE} unique traits, got {0}")]
    SmallVocabulary(usize),
    #[error("duplicate vocabulary trait {0:?}")]
    DuplicateVocabulary(String),
    #[error("weight matrix is {rows}×{cols}, expected {want_rows}×{want_cols}")]
    Shape { rows: usize, cols: usize, want_rows: usize, want_cols: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("case {0:?} is not in the feature schema")]
    UnknownCase(String),
    #[error("prosecution trait {0:?} is not in the feature schema")]
    UnknownTrait(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("empty episode batch")]
    EmptyBatch,
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("n_eval is 0: nothing to compare")]
    EmptyEvaluation,
    #[error("no baseline trait sets given")]
    NoBaselines,
    #[error("environment failed at episode {episode} (learning rate {learning_rate}): {message}")]
    Environment { learning_rate: f64, episode: usize, message: String, stats: Box<TrainingStats> },
    #[error("environment failed during evaluation {index}: {message}")]
    EvaluationEnvironment { index: usize, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Encodes a case and the prosecution's traits as a fixed-length vector:
/// one-hot case identity, issue and evidence counts scaled by the corpus
/// maximum, and multi-hot prosecution trait membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub case_ids: Vec<String>,
    pub prosecution_vocabulary: Vec<String>,
    pub issue_scale: f64,
    pub evidence_scale: f64,
}

impl FeatureSchema {
    pub fn new(cases: &[Case], prosecution_vocabulary: &[String]) -> Self {
        let max = |f: fn(&Case) -> usize| cases.iter().map(f).max().unwrap_or(1).max(1) as f64;
        Self {
            version: FEATURE_SCHEMA_VERSION,
            case_ids: cases.iter().map(|c| c.id.clone()).collect(),
            prosecution_vocabulary: prosecution_vocabulary.to_vec(),
            issue_scale: max(|c| c.issues.len()),
            evidence_scale: max(|c| c.evidence.len()),
        }
    }

    pub fn dim(&self) -> usize {
        self.case_ids.len() + 2 + self.prosecution_vocabulary.len()
    }

    pub fn featurize(&self, case: &Case, prosecution: &TraitSet) -> Result<FeatureVector, OrchestratorError> {
        let mut x = vec![0.0; self.dim()];
        let slot = self.case_ids.iter().position(|id| id == &case.id).ok_or_else(|| OrchestratorError::UnknownCase(case.id.clone()))?;
        x[slot] = 1.0;
        let base = self.case_ids.len();
        x[base] = case.issues.len() as f64 / self.issue_scale;
        x[base + 1] = case.evidence.len() as f64 / self.evidence_scale;
        for name in prosecution.iter() {
            let i = self
                .prosecution_vocabulary
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| OrchestratorError::UnknownTrait(name.to_string()))?;
            x[base + 2 + i] = 1.0;
        }
        let features = FeatureVector(x);
        features.check()?;
        Ok(features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    fn check(&self) -> Result<(), OrchestratorError> {
        if self.0.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(OrchestratorError::NonFinite("features"))
        }
    }
}

/// Linear-softmax policy over a trait vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub vocabulary: Vec<String>,
    /// `vocabulary.len()` rows of feature-dimension columns.
    pub weights: Vec<Vec<f64>>,
}

impl PolicyParams {
    pub fn zeros(vocabulary: Vec<String>, dim: usize) -> Result<Self, OrchestratorError> {
        let weights = vec![vec![0.0; dim]; vocabulary.len()];
        let policy = Self { vocabulary, weights };
        policy.validate(dim)?;
        Ok(policy)
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, dim: usize) -> Result<(), OrchestratorError> {
        if self.vocabulary.len() < TRIPLE {
            return Err(OrchestratorError::SmallVocabulary(self.vocabulary.len()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.vocabulary.iter().find(|v| !seen.insert(v.as_str())) {
            return Err(OrchestratorError::DuplicateVocabulary(dup.clone()));
        }
        let rows = self.weights.len();
        let cols = self.dim();
        if rows != self.vocabulary.len() || self.weights.iter().any(|r| r.len() != dim) {
            return Err(OrchestratorError::Shape { rows, cols, want_rows: self.vocabulary.len(), want_cols: dim });
        }
        if self.weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(OrchestratorError::NonFinite("weights"));
        }
        Ok(())
    }

    pub fn logits(&self, features: &FeatureVector) -> Result<Vec<f64>, OrchestratorError> {
        if features.0.len() != self.dim() {
            return Err(OrchestratorError::Shape {
                rows: 1,
                cols: features.0.len(),
                want_rows: 1,
                want_cols: self.dim(),
            });
        }
        let logits: Vec<f64> =
            self.weights.iter().map(|row| row.iter().zip(&features.0).map(|(w, x)| w * x).sum()).collect();
        if logits.iter().all(|l| l.is_finite()) {
            Ok(logits)
        } else {
            Err(OrchestratorError::NonFinite("logits"))
        }
    }

    /// Names of sampled indices, sorted by name (the order trials use).
    pub fn trait_set(&self, sampled: &[usize]) -> TraitSet {
        let mut names: Vec<&str> = sampled.iter().map(|&i| self.vocabulary[i].as_str()).collect();
        names.sort_unstable();
        TraitSet::new(names, false).expect("sampled indices are distinct")
    }
}

/// Softmax over `available` (stable log-sum-exp); entries outside are 0.
fn masked_softmax(logits: &[f64], available: &[bool]) -> Vec<f64> {
    let max = logits.iter().zip(available).filter(|(_, &a)| a).map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().zip(available).map(|(l, &a)| if a { (l - max).exp() } else { 0.0 }).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_sample(vocab: usize, sampled: &[usize]) -> Result<(), OrchestratorError> {
    if sampled.len() != TRIPLE {
        return Err(OrchestratorError::InvalidSample(format!("expected {TRIPLE} indices, got {}", sampled.len())));
    }
    for (j, &a) in sampled.iter().enumerate() {
        if a >= vocab {
            return Err(OrchestratorError::InvalidSample(format!("index {a} outside vocabulary of {vocab}")));
        }
        if sampled[..j].contains(&a) {
            return Err(OrchestratorError::InvalidSample(format!("index {a} repeated")));
        }
    }
    Ok(())
}

/// Draws three distinct traits by sequential softmax without replacement.
/// Returns the ordered triple and its log-probability.
pub fn sample_traits(
    policy: &PolicyParams,
    features: &FeatureVector,
    rng: &mut impl Rng,
) -> Result<([usize; TRIPLE], f64), OrchestratorError> {
    if policy.vocabulary.len() < TRIPLE {
        return Err(OrchestratorError::SmallVocabulary(policy.vocabulary.len()));
    }
    let logits = policy.logits(features)?;
    let mut available = vec![true; logits.len()];
    let mut picked = [0usize; TRIPLE];
    let mut log_prob = 0.0;
    for slot in &mut picked {
        let probs = masked_softmax(&logits, &available);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        // fall back to the last available index if rounding leaves `u` unreached
        let mut choice = available.iter().rposition(|&a| a).expect("vocabulary ≥ 3");
        for (k, &p) in probs.iter().enumerate() {
            if !available[k] || p == 0.0 {
                continue;
            }
            acc += p;
            if u < acc {
                choice = k;
                break;
            }
        }
        log_prob += probs[choice].ln();
        available[choice] = false;
        *slot = choice;
    }
    Ok((picked, log_prob))
}

/// Log-probability of an ordered triple under the sequential sampler.
pub fn log_prob(policy: &PolicyParams, features: &FeatureVector, sampled: &[usize]) -> Result<f64, OrchestratorError> {
    check_sample(policy.vocabulary.len(), sampled)?;
    let logits = policy.logits(features)?;
    let mut available = vec![true; logits.len()];
    let mut total = 0.0;
    for &a in sampled {
        total += masked_softmax(&logits, &available)[a].ln();
        available[a] = false;
    }
    Ok(total)
}

/// `∂ log p(sampled) / ∂ logits`.
pub fn logit_gradient(policy: &PolicyParams, features: &FeatureVector, sampled: &[usize]) -> Result<Vec<f64>, OrchestratorError> {
    check_sample(policy.vocabulary.len(), sampled)?;
    let logits = policy.logits(features)?;
    let mut available = vec![true; logits.len()];
    let mut grad = vec![0.0; logits.len()];
    for &a in sampled {
        let probs = masked_softmax(&logits, &available);
        for (g, p) in grad.iter_mut().zip(&probs) {
            *g -= p;
        }
        grad[a] += 1.0;
        available[a] = false;
    }
    Ok(grad)
}

/// `∂ log p(sampled) / ∂ W`, shaped like the weight matrix.
pub fn log_prob_gradient(
    policy: &PolicyParams,
    features: &FeatureVector,
    sampled: &[usize],
) -> Result<Vec<Vec<f64>>, OrchestratorError> {
    let g = logit_gradient(policy, features, sampled)?;
    Ok(g.iter().map(|gk| features.0.iter().map(|x| gk * x).collect()).collect())
}

/// `+c` for not guilty, `−c` for guilty, `0` otherwise.
pub fn reward(verdict: &Verdict) -> f64 {
    match verdict.label {
        VerdictLabel::NotGuilty => verdict.confidence,
        VerdictLabel::Guilty => -verdict.confidence,
        VerdictLabel::Undecided => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub features: FeatureVector,
    pub prosecution_traits: TraitSet,
    pub sampled: [usize; TRIPLE],
    pub log_prob: f64,
    pub reward: f64,
    pub verdict: Verdict,
}

/// Variance-reduction baseline subtracted from rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    /// Exponential moving average of past rewards, read before it is
    /// updated with the current batch.
    Ema { decay: f64, value: f64 },
    /// Mean reward of the current batch.
    BatchMean,
    None,
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline::Ema { decay: 0.95, value: 0.0 }
    }
}

impl Baseline {
    fn value_for(&self, batch: &[Episode]) -> f64 {
        match self {
            Baseline::Ema { value, .. } => *value,
            Baseline::BatchMean => batch.iter().map(|e| e.reward).sum::<f64>() / batch.len() as f64,
            Baseline::None => 0.0,
        }
    }

    fn observe(&mut self, batch: &[Episode]) {
        if let Baseline::Ema { decay, value } = self {
            for e in batch {
                *value = *decay * *value + (1.0 - *decay) * e.reward;
            }
        }
    }

    /// Current value (0 for the stateless kinds).
    pub fn current(&self) -> f64 {
        match self {
            Baseline::Ema { value, .. } => *value,
            _ => 0.0,
        }
    }
}

/// `W += lr · mean_batch((r − b) ∇ log p)`, then advances the baseline.
pub fn reinforce_update(
    policy: &PolicyParams,
    batch: &[Episode],
    learning_rate: f64,
    baseline: &mut Baseline,
) -> Result<PolicyParams, OrchestratorError> {
    if batch.is_empty() {
        return Err(OrchestratorError::EmptyBatch);
    }
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(OrchestratorError::LearningRate(learning_rate));
    }
    let b = baseline.value_for(batch);
    let scale = learning_rate / batch.len() as f64;
    let mut next = policy.clone();
    for episode in batch {
        let advantage = episode.reward - b;
        if advantage == 0.0 {
            continue;
        }
        let g = logit_gradient(policy, &episode.features, &episode.sampled)?;
        for (row, gk) in next.weights.iter_mut().zip(&g) {
            for (w, x) in row.iter_mut().zip(&episode.features.0) {
                *w += scale * advantage * gk * x;
            }
        }
    }
    if next.weights.iter().flatten().any(|w| !w.is_finite()) {
        return Err(OrchestratorError::NonFinite("gradient"));
    }
    baseline.observe(batch);
    Ok(next)
}

/// Runs one trial and reports its verdict.
pub trait TrialEnv: Sync {
    fn play(&self, case: &Case, prosecution: &TraitSet, defense: &TraitSet, seed: u64) -> Result<Verdict, String>;
}

impl<F> TrialEnv for F
where
    F: Fn(&Case, &TraitSet, &TraitSet, u64) -> Result<Verdict, String> + Sync,
{
    fn play(&self, case: &Case, prosecution: &TraitSet, defense: &TraitSet, seed: u64) -> Result<Verdict, String> {
        self(case, prosecution, defense, seed)
    }
}

/// Full debate trials through the backend registry.
pub struct DebateEnv<'a> {
    pub backends: &'a BackendRegistry,
    pub backend_id: String,
    pub mode: Mode,
    pub rounds: usize,
    pub decoding: DecodingParams,
    pub judge_sees_case: bool,
}

impl<'a> DebateEnv<'a> {
    pub fn new(backends: &'a BackendRegistry, backend_id: impl Into<String>, rounds: usize) -> Self {
        Self {
            backends,
            backend_id: backend_id.into(),
            mode: Mode::Single,
            rounds,
            decoding: DecodingParams::default(),
            judge_sees_case: true,
        }
    }
}

impl fmt::Debug for DebateEnv<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DebateEnv").field("backend_id", &self.backend_id).field("rounds", &self.rounds).finish()
    }
}

impl TrialEnv for DebateEnv<'_> {
    fn play(&self, case: &Case, prosecution: &TraitSet, defense: &TraitSet, seed: u64) -> Result<Verdict, String> {
        let config = TrialConfig {
            mode: self.mode,
            prosecution: prosecution.clone(),
            defense: defense.clone(),
            rounds: self.rounds,
            backend_id: self.backend_id.clone(),
            seed,
            decoding: self.decoding,
            judge_sees_case: self.judge_sees_case,
            replication: 0,
        };
        let record = config.replay(case, self.backends, 0).map_err(|e| e.to_string())?;
        if let Some(err) = record.error {
            return Err(err);
        }
        record.verdict().ok_or_else(|| "trial ended without a verdict".to_string())
    }
}

/// Case and prosecution draw for episode `index`; identical across
/// learning rates and evaluation arms for the same seed.
fn draw_matchup<'c>(
    cases: &'c [Case],
    prosecution_pool: &[String],
    seed: u64,
    index: usize,
) -> (&'c Case, TraitSet, u64, ChaCha8Rng) {
    let base = 3 * index as u64;
    let mut env_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, base));
    let case = &cases[env_rng.random_range(0..cases.len())];
    let mut picks = rand::seq::index::sample(&mut env_rng, prosecution_pool.len(), TRIPLE).into_vec();
    picks.sort_unstable();
    let prosecution = TraitSet::new(picks.into_iter().map(|i| prosecution_pool[i].clone()), false).expect("distinct draws");
    let policy_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, base + 1));
    (case, prosecution, derive_seed(seed, base + 2), policy_rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub learning_rates: Vec<f64>,
    pub seed: u64,
    pub baseline: Baseline,
    /// Final-window length used to pick the best learning rate.
    pub selection_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            learning_rates: vec![1e-5, 5e-5, 1e-4],
            seed: 0,
            baseline: Baseline::default(),
            selection_window: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStat {
    pub episode: usize,
    pub reward: f64,
    pub cum_reward: f64,
    pub cum_confidence: f64,
    pub cum_win_rate: f64,
    /// Baseline value after this episode's update.
    pub baseline: f64,
    pub case_id: String,
    pub defense: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub learning_rate: f64,
    pub episodes: Vec<EpisodeStat>,
}

impl TrainingStats {
    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    /// Mean reward over the last `window` episodes (all, if fewer).
    pub fn final_mean_reward(&self, window: usize) -> f64 {
        let tail = &self.episodes[self.episodes.len().saturating_sub(window)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|e| e.reward).sum::<f64>() / tail.len() as f64
    }

    /// Fraction of the last `window` episodes that fielded `defense`
    /// (compared as a set).
    pub fn selection_rate(&self, defense: &TraitSet, window: usize) -> f64 {
        let want = defense.canonical().fingerprint();
        let tail = &self.episodes[self.episodes.len().saturating_sub(window)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|e| e.defense == want).count() as f64 / tail.len() as f64
    }

    /// Least-squares slope of cumulative reward over the last `window` episodes.
    pub fn cum_reward_slope(&self, window: usize) -> f64 {
        let tail = &self.episodes[self.episodes.len().saturating_sub(window)..];
        let n = tail.len() as f64;
        if tail.len() < 2 {
            return 0.0;
        }
        let mx = tail.iter().map(|e| e.episode as f64).sum::<f64>() / n;
        let my = tail.iter().map(|e| e.cum_reward).sum::<f64>() / n;
        let (num, den) = tail.iter().fold((0.0, 0.0), |(num, den), e| {
            let dx = e.episode as f64 - mx;
            (num + dx * (e.cum_reward - my), den + dx * dx)
        });
        num / den
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,reward,cum_reward,cum_confidence,cum_win_rate,baseline,case_id,defense\n");
        for e in &self.episodes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.episode, e.reward, e.cum_reward, e.cum_confidence, e.cum_win_rate, e.baseline, e.case_id, e.defense
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub learning_rate: f64,
    pub policy: PolicyParams,
    pub stats: TrainingStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub runs: Vec<TrainRun>,
    /// Index into `runs` with the highest final-window mean reward (the
    /// first such rate on ties).
    pub best: usize,
}

impl TrainOutcome {
    pub fn best_run(&self) -> &TrainRun {
        &self.runs[self.best]
    }
}

fn check_train_inputs(cases: &[Case], prosecution_pool: &[String], config: &TrainConfig) -> Result<(), OrchestratorError> {
    if cases.is_empty() {
        return Err(OrchestratorError::InvalidConfig("no cases".into()));
    }
    if prosecution_pool.len() < TRIPLE {
        return Err(OrchestratorError::InvalidConfig(format!("prosecution pool needs at least {TRIPLE} traits")));
    }
    if config.learning_rates.is_empty() {
        return Err(OrchestratorError::InvalidConfig("no learning rates".into()));
    }
    if let Some(&lr) = config.learning_rates.iter().find(|lr| !(**lr > 0.0 && lr.is_finite())) {
        return Err(OrchestratorError::LearningRate(lr));
    }
    Ok(())
}

/// One training run per learning rate; each starts from `init` and sees the
/// same sequence of cases, prosecution draws and trial seeds.
pub fn train(
    env: &dyn TrialEnv,
    cases: &[Case],
    prosecution_pool: &[String],
    schema: &FeatureSchema,
    init: &PolicyParams,
    config: &TrainConfig,
) -> Result<TrainOutcome, OrchestratorError> {
    check_train_inputs(cases, prosecution_pool, config)?;
    init.validate(schema.dim())?;
    let mut runs = Vec::with_capacity(config.learning_rates.len());
    for &learning_rate in &config.learning_rates {
        let mut policy = init.clone();
        let mut baseline = config.baseline;
        let mut stats = TrainingStats { learning_rate, episodes: Vec::with_capacity(config.episodes) };
        let (mut cum_reward, mut cum_confidence, mut wins) = (0.0, 0.0, 0usize);
        for episode in 0..config.episodes {
            let (case, prosecution, trial_seed, mut policy_rng) = draw_matchup(cases, prosecution_pool, config.seed, episode);
            let features = schema.featurize(case, &prosecution)?;
            let (sampled, lp) = sample_traits(&policy, &features, &mut policy_rng)?;
            let defense = policy.trait_set(&sampled);
            let verdict = env.play(case, &prosecution, &defense, trial_seed).map_err(|message| {
                OrchestratorError::Environment { learning_rate, episode, message, stats: Box::new(stats.clone()) }
            })?;
            let r = reward(&verdict);
            let batch = [Episode { features, prosecution_traits: prosecution, sampled, log_prob: lp, reward: r, verdict }];
            policy = reinforce_update(&policy, &batch, learning_rate, &mut baseline)?;

            cum_reward += r;
            cum_confidence += verdict.confidence;
            wins += usize::from(verdict.label == VerdictLabel::NotGuilty);
            stats.episodes.push(EpisodeStat {
                episode,
                reward: r,
                cum_reward,
                cum_confidence,
                cum_win_rate: wins as f64 / (episode + 1) as f64,
                baseline: baseline.current(),
                case_id: case.id.clone(),
                defense: defense.fingerprint(),
            });
        }
        info!(learning_rate, final_mean = stats.final_mean_reward(config.selection_window), "training run finished");
        runs.push(TrainRun { learning_rate, policy, stats });
    }
    let best = runs
        .iter()
        .enumerate()
        .fold(0, |best, (i, run)| {
            let w = config.selection_window;
            if run.stats.final_mean_reward(w) > runs[best].stats.final_mean_reward(w) {
                i
            } else {
                best
            }
        });
    Ok(TrainOutcome { runs, best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub label: String,
    pub n: usize,
    pub defense_wins: usize,
    pub win_rate: f64,
    pub mean_reward: f64,
    /// For baseline arms: fraction of matched trials where the policy's
    /// reward was strictly higher than this arm's.
    pub policy_better: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n_eval: usize,
    pub arms: Vec<ArmResult>,
}

impl Evaluation {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,n,defense_wins,win_rate,mean_reward,policy_better\n");
        for a in &self.arms {
            let better = a.policy_better.map_or_else(String::new, |v| format!("{v:.4}"));
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4},{}\n",
                a.label, a.n, a.defense_wins, a.win_rate, a.mean_reward, better
            ));
        }
        out
    }
}

fn arm(label: String, verdicts: &[Verdict], policy_rewards: Option<&[f64]>) -> ArmResult {
    let n = verdicts.len();
    let rewards: Vec<f64> = verdicts.iter().map(reward).collect();
    let defense_wins = verdicts.iter().filter(|v| v.label == VerdictLabel::NotGuilty).count();
    ArmResult {
        label,
        n,
        defense_wins,
        win_rate: defense_wins as f64 / n as f64,
        mean_reward: rewards.iter().sum::<f64>() / n as f64,
        policy_better: policy_rewards.map(|p| p.iter().zip(&rewards).filter(|(p, b)| p > b).count() as f64 / n as f64),
    }
}

/// Matched comparison: evaluation `i` uses the same case, prosecution draw
/// and trial seed in every arm; only the defense traits differ.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    policy: &PolicyParams,
    schema: &FeatureSchema,
    baselines: &[TraitSet],
    env: &dyn TrialEnv,
    cases: &[Case],
    prosecution_pool: &[String],
    n_eval: usize,
    seed: u64,
) -> Result<Evaluation, OrchestratorError> {
    if n_eval == 0 {
        return Err(OrchestratorError::EmptyEvaluation);
    }
    if baselines.is_empty() {
        return Err(OrchestratorError::NoBaselines);
    }
    check_train_inputs(cases, prosecution_pool, &TrainConfig::default())?;
    policy.validate(schema.dim())?;
    let baselines: Vec<TraitSet> = baselines.iter().map(TraitSet::canonical).collect();
    let rows: Vec<Vec<Verdict>> = (0..n_eval)
        .into_par_iter()
        .map(|index| {
            let (case, prosecution, trial_seed, mut policy_rng) = draw_matchup(cases, prosecution_pool, seed, index);
            let features = schema.featurize(case, &prosecution)?;
            let (sampled, _) = sample_traits(policy, &features, &mut policy_rng)?;
            std::iter::once(policy.trait_set(&sampled))
                .chain(baselines.iter().cloned())
                .map(|defense| {
                    env.play(case, &prosecution, &defense, trial_seed)
                        .map_err(|message| OrchestratorError::EvaluationEnvironment { index, message })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let column = |j: usize| -> Vec<Verdict> { rows.iter().map(|r| r[j]).collect() };
    let policy_verdicts = column(0);
    let policy_rewards: Vec<f64> = policy_verdicts.iter().map(reward).collect();
    let mut arms = vec![arm("policy".into(), &policy_verdicts, None)];
    for (j, set) in baselines.iter().enumerate() {
        arms.push(arm(set.fingerprint(), &column(j + 1), Some(&policy_rewards)));
    }
    Ok(Evaluation { n_eval, arms })
}

/// Policy plus the schema needed to featurize inputs for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub feature_schema: FeatureSchema,
    pub vocabulary: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

impl PolicyCheckpoint {
    pub fn new(schema: &FeatureSchema, policy: &PolicyParams) -> Self {
        Self { feature_schema: schema.clone(), vocabulary: policy.vocabulary.clone(), weights: policy.weights.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<(FeatureSchema, PolicyParams), OrchestratorError> {
        let cp: Self = serde_json::from_str(text).map_err(|e| OrchestratorError::Checkpoint(e.to_string()))?;
        if cp.feature_schema.version != FEATURE_SCHEMA_VERSION {
            return Err(OrchestratorError::Checkpoint(format!(
                "feature schema version {} is not supported (expected {FEATURE_SCHEMA_VERSION})",
                cp.feature_schema.version
            )));
        }
        let policy = PolicyParams { vocabulary: cp.vocabulary, weights: cp.weights };
        policy.validate(cp.feature_schema.dim())?;
        Ok((cp.feature_schema, policy))
    }
}
