//! Experiment sweeps over cases and trait-set pairings, per-condition Elo,
//! and the aggregate tables built from trial records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::agent::{BackendRegistry, DecodingParams, VerdictLabel};
use crate::case::{Case, CaseCorpus, CorpusError};
use crate::debate::{Mode, ProtocolError, TrialConfig, TrialRecord};
use crate::elo::{apply_trial, rankings, EloError, EloPools, MatchOutcome, PoolKind, DEFAULT_BASE_K, DEFAULT_INITIAL_RATING};
use crate::seed::derive_seed;
use crate::taxonomy::{enumerate, Enumeration, TaxonomyError, Trait, TraitSet};

#[derive(Debug, Error)]
pub enum TournamentError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("trial {trial_index}: {source}")]
    Trial { trial_index: usize, source: ProtocolError },
    #[error(transparent)]
    Elo(#[from] EloError),
    #[error("worker pool: {0}")]
    Workers(String),
    #[error("replicated setup has {0} verdicts; at least 2 are needed")]
    TooFewReplications(usize),
}

fn one() -> u32 {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Mode,
    pub trait_count: usize,
    pub rounds: usize,
    pub backend_id: String,
    #[serde(default)]
    pub enumeration: Enumeration,
    /// Case ids to run; empty means the whole corpus.
    #[serde(default)]
    pub cases: Vec<String>,
    /// Restricts the taxonomy to these traits; empty means all of it.
    #[serde(default)]
    pub traits: Vec<String>,
    #[serde(default = "one")]
    pub replications: u32,
    /// Experiment seed; unset reads as 0 here, the CLI fills it in.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Uniformly samples this many (prosecution, defense) pairings.
    #[serde(default)]
    pub pairings_max: Option<usize>,
    /// Parallel trial width; 0 lets the runtime choose.
    #[serde(default)]
    pub workers: usize,
    /// Rate judge parse failures as draws; when false they are skipped.
    #[serde(default = "default_true")]
    pub include_parse_failures: bool,
    #[serde(default = "default_true")]
    pub judge_sees_case: bool,
    #[serde(default)]
    pub decoding: DecodingParams,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, trait_count: usize, rounds: usize, backend_id: impl Into<String>) -> Self {
        Self {
            mode,
            trait_count,
            rounds,
            backend_id: backend_id.into(),
            enumeration: Enumeration::default(),
            cases: Vec::new(),
            traits: Vec::new(),
            replications: 1,
            seed: None,
            pairings_max: None,
            workers: 0,
            include_parse_failures: true,
            judge_sees_case: true,
            decoding: DecodingParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TournamentError> {
        let bad = |m: &str| Err(TournamentError::InvalidConfig(m.to_string()));
        if self.trait_count == 0 {
            return bad("trait_count must be at least 1");
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.pairings_max == Some(0) {
            return bad("pairings_max must be at least 1");
        }
        if self.backend_id.trim().is_empty() {
            return bad("backend_id is empty");
        }
        self.decoding.validate().map_err(|e| TournamentError::InvalidConfig(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions { include_parse_failures: self.include_parse_failures, ..ReportOptions::default() }
    }
}

/// One scheduled trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialPlan {
    pub trial_index: usize,
    pub case_id: String,
    pub prosecution: TraitSet,
    pub defense: TraitSet,
    pub replication: u32,
    pub seed: u64,
}

/// Restricts `taxonomy` to `names` (keeping taxonomy order); empty keeps all.
pub fn restrict_taxonomy(taxonomy: &[Trait], names: &[String]) -> Result<Vec<Trait>, TournamentError> {
    if names.is_empty() {
        return Ok(taxonomy.to_vec());
    }
    if let Some(unknown) = names.iter().find(|n| !taxonomy.iter().any(|t| &t.name == *n)) {
        return Err(TournamentError::InvalidConfig(format!("trait {unknown:?} is not in the taxonomy")));
    }
    Ok(taxonomy.iter().filter(|t| names.contains(&t.name)).cloned().collect())
}

/// The deterministic sweep: case → prosecution set → defense set →
/// replication, with per-trial seeds derived from the experiment seed.
pub fn plan_trials(
    config: &ExperimentConfig,
    cases: &[Case],
    taxonomy: &[Trait],
) -> Result<Vec<TrialPlan>, TournamentError> {
    config.validate()?;
    let sets = enumerate(taxonomy, config.trait_count, config.enumeration)?;
    let mut pairings: Vec<(usize, usize)> =
        (0..sets.len()).flat_map(|p| (0..sets.len()).map(move |d| (p, d))).collect();
    if let Some(max) = config.pairings_max {
        if max < pairings.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed(), u64::MAX));
            let mut picked = rand::seq::index::sample(&mut rng, pairings.len(), max).into_vec();
            picked.sort_unstable();
            pairings = picked.into_iter().map(|i| pairings[i]).collect();
        }
    }
    let mut plans = Vec::with_capacity(cases.len() * pairings.len() * config.replications as usize);
    for case in cases {
        for &(p, d) in &pairings {
            for replication in 0..config.replications {
                let trial_index = plans.len();
                plans.push(TrialPlan {
                    trial_index,
                    case_id: case.id.clone(),
                    prosecution: sets[p].clone(),
                    defense: sets[d].clone(),
                    replication,
                    seed: derive_seed(config.seed(), trial_index as u64),
                });
            }
        }
    }
    Ok(plans)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<TrialRecord>,
    pub report: Report,
}

/// Runs every planned trial on a bounded worker pool, then rates and
/// aggregates the records in trial-index order.
pub fn run_experiment(
    config: &ExperimentConfig,
    corpus: &CaseCorpus,
    taxonomy: &[Trait],
    backends: &BackendRegistry,
) -> Result<ExperimentResult, TournamentError> {
    config.validate()?;
    backends
        .get(&config.backend_id)
        .map_err(|e| TournamentError::InvalidConfig(e.to_string()))?;
    let cases = corpus.select(&config.cases)?;
    let taxonomy = restrict_taxonomy(taxonomy, &config.traits)?;
    let plans = plan_trials(config, &cases, &taxonomy)?;
    info!(trials = plans.len(), cases = cases.len(), "starting sweep");

    let by_id: BTreeMap<&str, &Case> = cases.iter().map(|c| (c.id.as_str(), c)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| TournamentError::Workers(e.to_string()))?;
    // `collect` on an indexed parallel iterator keeps plan order, so the
    // records reach the Elo writer by trial index no matter when they finish.
    let outcomes: Vec<Result<TrialRecord, TournamentError>> = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| {
                let trial = TrialConfig {
                    mode: config.mode,
                    prosecution: plan.prosecution.clone(),
                    defense: plan.defense.clone(),
                    rounds: config.rounds,
                    backend_id: config.backend_id.clone(),
                    seed: plan.seed,
                    decoding: config.decoding,
                    judge_sees_case: config.judge_sees_case,
                    replication: plan.replication,
                };
                let record = trial
                    .replay(by_id[plan.case_id.as_str()], backends, plan.trial_index)
                    .map_err(|source| TournamentError::Trial { trial_index: plan.trial_index, source })?;
                if let Some(err) = &record.error {
                    warn!(trial = plan.trial_index, error = %err, "trial aborted");
                }
                Ok(record)
            })
            .collect()
    });
    let records = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let report = Report::from_records(&records, &config.report_options())?;
    Ok(ExperimentResult { records, report })
}

/// One Elo condition: (mode, trait count, rounds, model).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionKey {
    pub mode: Mode,
    pub trait_count: usize,
    pub rounds: usize,
    pub model: String,
}

impl ConditionKey {
    pub fn of(record: &TrialRecord) -> Self {
        Self {
            mode: record.config.mode,
            trait_count: record.config.prosecution.len(),
            rounds: record.config.rounds,
            model: record.config.backend_id.clone(),
        }
    }

    /// File-name-safe label, e.g. `single_k1_n3_scripted`.
    pub fn label(&self) -> String {
        let model: String = self
            .model
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        format!("{}_k{}_n{}_{}", self.mode.as_str(), self.trait_count, self.rounds, model)
    }
}

impl fmt::Display for ConditionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSummary {
    pub pools: EloPools,
    pub n_trials: usize,
    pub n_failed: usize,
    pub n_parse_failures: usize,
    /// Trials that reached a verdict (including parse-failure fallbacks).
    pub n_verdicts: usize,
    pub defense_wins: usize,
    pub prosecution_wins: usize,
    pub undecided: usize,
    /// Trials fed to the Elo writer.
    pub n_rated: usize,
}

impl ConditionSummary {
    fn new(options: &ReportOptions) -> Self {
        Self {
            pools: EloPools::new(options.base_k, options.initial_rating),
            n_trials: 0,
            n_failed: 0,
            n_parse_failures: 0,
            n_verdicts: 0,
            defense_wins: 0,
            prosecution_wins: 0,
            undecided: 0,
            n_rated: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub base_k: f64,
    pub initial_rating: f64,
    pub include_parse_failures: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { base_k: DEFAULT_BASE_K, initial_rating: DEFAULT_INITIAL_RATING, include_parse_failures: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Mode,
    Model,
    Traits,
    Rounds,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [Dimension::Mode, Dimension::Model, Dimension::Traits, Dimension::Rounds];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Mode => "mode",
            Dimension::Model => "model",
            Dimension::Traits => "traits",
            Dimension::Rounds => "rounds",
        }
    }

    fn category(self, key: &ConditionKey) -> String {
        match self {
            Dimension::Mode => key.mode.as_str().to_string(),
            Dimension::Model => key.model.clone(),
            Dimension::Traits => key.trait_count.to_string(),
            Dimension::Rounds => key.rounds.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub dimension: Dimension,
    pub category: String,
    /// Mean role-pool rating over the prosecution traits active in each
    /// condition of the category; `None` when no trial was rated.
    pub avg_prosecution_elo: Option<f64>,
    pub avg_defense_elo: Option<f64>,
    /// Defense wins over trials that reached a verdict.
    pub win_rate_defense: Option<f64>,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReversalStats {
    /// rounds → differing re-evaluations / total re-evaluations.
    pub per_rounds: BTreeMap<usize, f64>,
    /// rounds → (differing, total).
    pub counts: BTreeMap<usize, (usize, usize)>,
    /// Largest number of verdicts seen for one setup.
    pub replications: usize,
}

/// Verdict labels of one trial setup in replication order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicatedSetup {
    pub rounds: usize,
    pub labels: Vec<VerdictLabel>,
}

/// Compares runs 2..m of every setup against its first run and pools the
/// differing fraction per rounds value.
pub fn reversal_rate(setups: &[ReplicatedSetup]) -> Result<ReversalStats, TournamentError> {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut replications = 0;
    for setup in setups {
        let Some((first, rest)) = setup.labels.split_first().filter(|(_, rest)| !rest.is_empty()) else {
            return Err(TournamentError::TooFewReplications(setup.labels.len()));
        };
        let entry = counts.entry(setup.rounds).or_default();
        entry.0 += rest.iter().filter(|l| *l != first).count();
        entry.1 += rest.len();
        replications = replications.max(setup.labels.len());
    }
    let per_rounds = counts.iter().map(|(&n, &(diff, total))| (n, diff as f64 / total as f64)).collect();
    Ok(ReversalStats { per_rounds, counts, replications })
}

/// Row of the "top setups" tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetupRow {
    pub mode: Mode,
    pub traits: usize,
    pub rounds: usize,
    pub model: String,
    pub top_elo: f64,
    pub best_trait: String,
}

/// Best trait per condition in the chosen pool, conditions ranked by that
/// rating (descending; ties keep condition order). Empty pools are skipped.
pub fn top_setups(conditions: &BTreeMap<ConditionKey, ConditionSummary>, kind: PoolKind, limit: usize) -> Vec<SetupRow> {
    let mut rows: Vec<SetupRow> = conditions
        .iter()
        .filter_map(|(key, summary)| {
            let (best_trait, top_elo) = rankings(summary.pools.pool(kind)).into_iter().next()?;
            Some(SetupRow {
                mode: key.mode,
                traits: key.trait_count,
                rounds: key.rounds,
                model: key.model.clone(),
                top_elo,
                best_trait,
            })
        })
        .collect();
    rows.sort_by(|a, b| b.top_elo.total_cmp(&a.top_elo));
    rows.truncate(limit);
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraitFrequency {
    pub frequency: f64,
    pub count: usize,
}

/// For trials the side won, how often each trait appeared, normalized by
/// the number of wins.
pub fn trait_frequency_in_winners(records: &[TrialRecord], side: crate::agent::Side) -> BTreeMap<String, TraitFrequency> {
    let winning = match side {
        crate::agent::Side::Defense => VerdictLabel::NotGuilty,
        crate::agent::Side::Prosecution => VerdictLabel::Guilty,
    };
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut wins = 0usize;
    for record in records.iter().filter(|r| r.verdict().is_some_and(|v| v.label == winning)) {
        wins += 1;
        let traits = match side {
            crate::agent::Side::Defense => &record.config.defense,
            crate::agent::Side::Prosecution => &record.config.prosecution,
        };
        let unique: BTreeSet<&str> = traits.iter().collect();
        for name in unique {
            *counts.entry(name.to_string()).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(name, count)| (name, TraitFrequency { frequency: count as f64 / wins as f64, count }))
        .collect()
}

/// Everything derived from a set of trial records.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub options: ReportOptions,
    pub n_records: usize,
    pub conditions: BTreeMap<ConditionKey, ConditionSummary>,
    pub aggregates: Vec<AggregateRow>,
    pub reversal: Option<ReversalStats>,
    pub defense_frequency: BTreeMap<String, TraitFrequency>,
    pub prosecution_frequency: BTreeMap<String, TraitFrequency>,
    /// Per condition, the updates in the order they were applied.
    pub update_logs: BTreeMap<ConditionKey, Vec<crate::elo::RatingUpdate>>,
}

impl Report {
    /// Rates records in the order given (which must be trial-index order
    /// within each condition) and aggregates them.
    pub fn from_records(records: &[TrialRecord], options: &ReportOptions) -> Result<Self, TournamentError> {
        let mut conditions: BTreeMap<ConditionKey, ConditionSummary> = BTreeMap::new();
        let mut update_logs: BTreeMap<ConditionKey, Vec<crate::elo::RatingUpdate>> = BTreeMap::new();
        for record in records {
            let key = ConditionKey::of(record);
            let summary = conditions.entry(key.clone()).or_insert_with(|| ConditionSummary::new(options));
            summary.n_trials += 1;
            if record.failed() {
                summary.n_failed += 1;
            }
            let Some(verdict) = record.verdict() else { continue };
            summary.n_verdicts += 1;
            match verdict.label {
                VerdictLabel::NotGuilty => summary.defense_wins += 1,
                VerdictLabel::Guilty => summary.prosecution_wins += 1,
                VerdictLabel::Undecided => summary.undecided += 1,
            }
            if record.parse_failed() {
                summary.n_parse_failures += 1;
                if !options.include_parse_failures {
                    continue;
                }
            }
            let outcome = MatchOutcome {
                verdict,
                prosecution_traits: record.config.prosecution.clone(),
                defense_traits: record.config.defense.clone(),
            };
            let updates = apply_trial(&mut summary.pools, &outcome, record.trial_index)?;
            update_logs.entry(key).or_default().extend(updates);
            summary.n_rated += 1;
        }

        let aggregates = aggregate_rows(&conditions);
        let reversal = replicated_setups(records);
        let reversal = if reversal.is_empty() { None } else { Some(reversal_rate(&reversal)?) };
        Ok(Self {
            options: *options,
            n_records: records.len(),
            aggregates,
            reversal,
            defense_frequency: trait_frequency_in_winners(records, crate::agent::Side::Defense),
            prosecution_frequency: trait_frequency_in_winners(records, crate::agent::Side::Prosecution),
            conditions,
            update_logs,
        })
    }

    pub fn defense_wins(&self) -> usize {
        self.conditions.values().map(|c| c.defense_wins).sum()
    }

    pub fn n_verdicts(&self) -> usize {
        self.conditions.values().map(|c| c.n_verdicts).sum()
    }

    pub fn n_failed(&self) -> usize {
        self.conditions.values().map(|c| c.n_failed).sum()
    }

    /// `trials=18 failed=0 defense_win_rate=0.500 top overall=… prosecution=… defense=…`
    pub fn summary_line(&self) -> String {
        let rate = match self.n_verdicts() {
            0 => "n/a".to_string(),
            n => format!("{:.3}", self.defense_wins() as f64 / n as f64),
        };
        let mut line = format!("trials={} failed={} defense_win_rate={rate}", self.n_records, self.n_failed());
        for kind in PoolKind::ALL {
            let top = top_setups(&self.conditions, kind, 1);
            let best = top.first().map_or("-".to_string(), |r| format!("{} ({:.1})", r.best_trait, r.top_elo));
            line.push_str(&format!(" top_{}={best}", kind.as_str()));
        }
        line
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn aggregate_rows(conditions: &BTreeMap<ConditionKey, ConditionSummary>) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for dimension in Dimension::ALL {
        let mut groups: BTreeMap<String, Vec<&ConditionSummary>> = BTreeMap::new();
        for (key, summary) in conditions {
            groups.entry(dimension.category(key)).or_default().push(summary);
        }
        for (category, members) in groups {
            let prosecution: Vec<f64> =
                members.iter().flat_map(|s| s.pools.prosecution.ratings.values().copied()).collect();
            let defense: Vec<f64> = members.iter().flat_map(|s| s.pools.defense.ratings.values().copied()).collect();
            let verdicts: usize = members.iter().map(|s| s.n_verdicts).sum();
            let wins: usize = members.iter().map(|s| s.defense_wins).sum();
            rows.push(AggregateRow {
                dimension,
                category,
                avg_prosecution_elo: mean(&prosecution),
                avg_defense_elo: mean(&defense),
                win_rate_defense: (verdicts > 0).then(|| wins as f64 / verdicts as f64),
                n_trials: members.iter().map(|s| s.n_trials).sum(),
            });
        }
    }
    rows
}

/// Groups verdicts of identical setups (condition, case, both trait sets)
/// by replication; only setups with at least two verdicts are kept.
fn replicated_setups(records: &[TrialRecord]) -> Vec<ReplicatedSetup> {
    type SetupKey = (ConditionKey, String, Vec<String>, Vec<String>);
    let mut groups: BTreeMap<SetupKey, Vec<(u32, usize, VerdictLabel)>> = BTreeMap::new();
    for record in records {
        let Some(verdict) = record.verdict() else { continue };
        let key = (
            ConditionKey::of(record),
            record.case_id.clone(),
            record.config.prosecution.traits.clone(),
            record.config.defense.traits.clone(),
        );
        groups.entry(key).or_default().push((record.config.replication, record.trial_index, verdict.label));
    }
    groups
        .into_iter()
        .filter(|(_, runs)| runs.len() >= 2)
        .map(|(key, mut runs)| {
            runs.sort_by_key(|&(rep, idx, _)| (rep, idx));
            ReplicatedSetup { rounds: key.0.rounds, labels: runs.into_iter().map(|(_, _, l)| l).collect() }
        })
        .collect()
}
