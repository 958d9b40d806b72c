//! Trait-level Elo with confidence-scaled K and three role-scoped pools.
//!
//! Each trial is a match between the prosecution's trait set and the
//! defense's trait set. A side's rating is the mean rating of its traits;
//! every trait on a side moves by `K' (S - E)` where `K' = K (0.5 + c)`.
//! All deltas in a trial are computed from the pre-trial ratings.
//!
//! The role pools are read together: the prosecution mean comes from the
//! prosecution-role pool and the defense mean from the defense-role pool, so
//! a trait's role rating reflects how it fares against opponents' role
//! ratings. The overall pool reads and writes both sides itself.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Verdict, VerdictLabel};
use crate::taxonomy::TraitSet;

pub const DEFAULT_BASE_K: f64 = 32.0;
pub const DEFAULT_INITIAL_RATING: f64 = 1500.0;

#[derive(Debug, Error, PartialEq)]
pub enum EloError {
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("{0} trait set is empty")]
    EmptySide(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Overall,
    ProsecutionRole,
    DefenseRole,
}

impl PoolKind {
    pub const ALL: [PoolKind; 3] = [PoolKind::Overall, PoolKind::ProsecutionRole, PoolKind::DefenseRole];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolKind::Overall => "overall",
            PoolKind::ProsecutionRole => "prosecution_role",
            PoolKind::DefenseRole => "defense_role",
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `E_D = 1 / (1 + 10^((R_P - R_D) / 400))`; the prosecution expects `1 - E_D`.
pub fn expected_defense_score(mean_prosecution: f64, mean_defense: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((mean_prosecution - mean_defense) / 400.0))
}

/// Observed `(S_D, S_P)` for a verdict label.
pub fn observed_scores(label: VerdictLabel) -> (f64, f64) {
    match label {
        VerdictLabel::NotGuilty => (1.0, 0.0),
        VerdictLabel::Guilty => (0.0, 1.0),
        VerdictLabel::Undecided => (0.5, 0.5),
    }
}

/// `K' = K (0.5 + c)`.
pub fn effective_k(base_k: f64, confidence: f64) -> Result<f64, EloError> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(EloError::ConfidenceOutOfRange(confidence));
    }
    Ok(base_k * (0.5 + confidence))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingUpdate {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub pool: PoolKind,
    pub delta: f64,
    pub trial_index: usize,
    pub k_effective: f64,
    pub expected: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub verdict: Verdict,
    pub prosecution_traits: TraitSet,
    pub defense_traits: TraitSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EloPool {
    pub kind: PoolKind,
    pub ratings: BTreeMap<String, f64>,
    pub base_k: f64,
    pub initial_rating: f64,
    pub update_log: Vec<RatingUpdate>,
}

impl EloPool {
    pub fn new(kind: PoolKind) -> Self {
        Self::with_params(kind, DEFAULT_BASE_K, DEFAULT_INITIAL_RATING)
    }

    pub fn with_params(kind: PoolKind, base_k: f64, initial_rating: f64) -> Self {
        Self { kind, ratings: BTreeMap::new(), base_k, initial_rating, update_log: Vec::new() }
    }

    /// Current rating; unseen traits read as the initial rating.
    pub fn rating(&self, name: &str) -> f64 {
        self.ratings.get(name).copied().unwrap_or(self.initial_rating)
    }

    /// Makes a trait visible in rankings without changing its rating.
    pub fn register(&mut self, name: &str) {
        self.ratings.entry(name.to_string()).or_insert(self.initial_rating);
    }

    pub fn mean_rating<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> f64 {
        let (sum, n) = names.into_iter().fold((0.0, 0usize), |(s, n), t| (s + self.rating(t), n + 1));
        sum / n as f64
    }

    fn apply(&mut self, update: RatingUpdate) {
        let rating = self.ratings.entry(update.trait_name.clone()).or_insert(self.initial_rating);
        *rating += update.delta;
        self.update_log.push(update);
    }

    pub fn n_updates(&self, name: &str) -> usize {
        self.update_log.iter().filter(|u| u.trait_name == name).count()
    }

    /// Folds the update log from the initial rating.
    pub fn replay_log(&self) -> BTreeMap<String, f64> {
        let mut ratings: BTreeMap<String, f64> = BTreeMap::new();
        for u in &self.update_log {
            *ratings.entry(u.trait_name.clone()).or_insert(self.initial_rating) += u.delta;
        }
        ratings
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }
}

/// Descending by rating, ties broken by trait name.
pub fn rankings(pool: &EloPool) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = pool.ratings.iter().map(|(k, &v)| (k.clone(), v)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// The overall, prosecution-role and defense-role pools of one condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EloPools {
    pub overall: EloPool,
    pub prosecution: EloPool,
    pub defense: EloPool,
}

impl Default for EloPools {
    fn default() -> Self {
        Self::new(DEFAULT_BASE_K, DEFAULT_INITIAL_RATING)
    }
}

impl EloPools {
    pub fn new(base_k: f64, initial_rating: f64) -> Self {
        Self {
            overall: EloPool::with_params(PoolKind::Overall, base_k, initial_rating),
            prosecution: EloPool::with_params(PoolKind::ProsecutionRole, base_k, initial_rating),
            defense: EloPool::with_params(PoolKind::DefenseRole, base_k, initial_rating),
        }
    }

    pub fn pool(&self, kind: PoolKind) -> &EloPool {
        match kind {
            PoolKind::Overall => &self.overall,
            PoolKind::ProsecutionRole => &self.prosecution,
            PoolKind::DefenseRole => &self.defense,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &EloPool> {
        [&self.overall, &self.prosecution, &self.defense].into_iter()
    }
}

/// Applies one trial to all three pools and returns the updates in the
/// order they were applied.
pub fn apply_trial(
    pools: &mut EloPools,
    outcome: &MatchOutcome,
    trial_index: usize,
) -> Result<Vec<RatingUpdate>, EloError> {
    let p = &outcome.prosecution_traits;
    let d = &outcome.defense_traits;
    if p.is_empty() {
        return Err(EloError::EmptySide("prosecution"));
    }
    if d.is_empty() {
        return Err(EloError::EmptySide("defense"));
    }
    let (s_d, s_p) = observed_scores(outcome.verdict.label);
    let confidence = outcome.verdict.confidence;

    // Snapshot every expectation before writing anything.
    let overall_e_d = expected_defense_score(pools.overall.mean_rating(p.iter()), pools.overall.mean_rating(d.iter()));
    let role_e_d = expected_defense_score(pools.prosecution.mean_rating(p.iter()), pools.defense.mean_rating(d.iter()));

    let mut applied = Vec::new();
    let mut side_updates = |pool: &mut EloPool, traits: &TraitSet, expected: f64, observed: f64| -> Result<(), EloError> {
        let k = effective_k(pool.base_k, confidence)?;
        for name in traits.iter() {
            let update = RatingUpdate {
                trait_name: name.to_string(),
                pool: pool.kind,
                delta: k * (observed - expected),
                trial_index,
                k_effective: k,
                expected,
                observed,
            };
            applied.push(update.clone());
            pool.apply(update);
        }
        Ok(())
    };
    // overall pool deltas all come from `overall_e_d`, so writing the
    // prosecution side first cannot leak into the defense side's expectation
    side_updates(&mut pools.overall, p, 1.0 - overall_e_d, s_p)?;
    side_updates(&mut pools.overall, d, overall_e_d, s_d)?;
    side_updates(&mut pools.prosecution, p, 1.0 - role_e_d, s_p)?;
    side_updates(&mut pools.defense, d, role_e_d, s_d)?;
    Ok(applied)
}

/// `pool_kind,trait,rating,n_updates` rows for every pool.
pub fn pools_to_csv(pools: &EloPools) -> String {
    let mut out = String::from("pool_kind,trait,rating,n_updates\n");
    for pool in pools.iter() {
        for (name, rating) in &pool.ratings {
            out.push_str(&format!("{},{},{},{}\n", pool.kind, name, rating, pool.n_updates(name)));
        }
    }
    out
}
