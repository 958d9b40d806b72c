//! Trait library, team enumeration and ranking-based importance scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Archetype {
    Rhetorician,
    Technician,
    Gladiator,
    Diplomat,
    /// User-supplied traits that belong to none of the four families.
    Extended,
}

impl Archetype {
    pub const BUILTIN: [Archetype; 4] =
        [Archetype::Rhetorician, Archetype::Technician, Archetype::Gladiator, Archetype::Diplomat];
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trait {
    pub name: String,
    pub archetype: Archetype,
    pub philosophy: String,
    pub behavior: String,
}

impl Trait {
    fn builtin(name: &str, archetype: Archetype, philosophy: &str, behavior: &str) -> Self {
        Self {
            name: name.to_string(),
            archetype,
            philosophy: philosophy.to_string(),
            behavior: behavior.to_string(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("team size {k} out of range 1..={n}")]
    TeamSizeOutOfRange { k: usize, n: usize },
    #[error("trait set is empty")]
    EmptySet,
    #[error("trait {0:?} appears more than once")]
    DuplicateTrait(String),
    #[error("invalid trait name {0:?}: expected a lowercase token")]
    InvalidName(String),
    #[error("ranking has {0} entries, expected 3")]
    RankingLength(usize),
    #[error("unknown trait {0:?}")]
    UnknownTrait(String),
    #[error("{0}")]
    Io(String),
    #[error("malformed input: {0}")]
    Malformed(String),
}

/// The nine traits grouped into four archetypes.
pub fn builtin_taxonomy() -> Vec<Trait> {
    use Archetype::*;
    vec![
        Trait::builtin(
            "charismatic",
            Rhetorician,
            "Pathos",
            "Appeals to the audience's emotions and rapport to sway judgment beyond mere facts.",
        ),
        Trait::builtin(
            "folksy",
            Rhetorician,
            "Social Virtue",
            "The \"Mean\" of friendliness; appearing as a peer to the jury to foster trust.",
        ),
        Trait::builtin(
            "moralistic",
            Rhetorician,
            "Ethics",
            "Frames the case through the lens of \"The Good,\" focusing on ultimate justice.",
        ),
        Trait::builtin(
            "pedantic",
            Technician,
            "Excess of Exactness",
            "Extreme focus on the \"letter\" of the law, often at the expense of the \"spirit\" or equity.",
        ),
        Trait::builtin(
            "quantitative",
            Technician,
            "Logos",
            "Relies on logical demonstration and hard data to prove a point (Syllogistic reasoning).",
        ),
        Trait::builtin(
            "tenacious",
            Gladiator,
            "Courage",
            "The virtue of persisting in a difficult course of action despite legal or social pressure.",
        ),
        Trait::builtin(
            "provocative",
            Gladiator,
            "Irascibility",
            "Deliberately stirring up anger or conflict to gain a tactical advantage.",
        ),
        Trait::builtin(
            "transparent",
            Diplomat,
            "Truthfulness",
            "The \"Mean\" between self-deprecation and boastfulness; presenting the case exactly as it is.",
        ),
        Trait::builtin(
            "methodical",
            Diplomat,
            "Phronesis",
            "Using practical wisdom to guide the jury through a complex sequence of cause and effect.",
        ),
    ]
}

/// Lowercase ASCII letters and digits, optionally joined by single hyphens.
pub fn is_valid_trait_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('-')
        && !name.ends_with('-')
        && !name.contains("--")
        && name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
}

pub fn validate_taxonomy(traits: &[Trait]) -> Result<(), TaxonomyError> {
    let mut seen = BTreeSet::new();
    for t in traits {
        if !is_valid_trait_name(&t.name) {
            return Err(TaxonomyError::InvalidName(t.name.clone()));
        }
        if !seen.insert(t.name.as_str()) {
            return Err(TaxonomyError::DuplicateTrait(t.name.clone()));
        }
    }
    Ok(())
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Vec<Trait>, TaxonomyError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.display())))?;
    let traits: Vec<Trait> =
        serde_json::from_str(&text).map_err(|e| TaxonomyError::Malformed(e.to_string()))?;
    validate_taxonomy(&traits)?;
    Ok(traits)
}

pub fn save_taxonomy(traits: &[Trait], path: impl AsRef<Path>) -> Result<(), TaxonomyError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(traits).expect("traits serialize");
    fs::write(path, text + "\n").map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.display())))
}

/// A side's trait list. `ordered` distinguishes permutations (member order
/// matters) from combinations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraitSet {
    pub traits: Vec<String>,
    #[serde(default)]
    pub ordered: bool,
}

impl TraitSet {
    pub fn new<S: Into<String>>(
        traits: impl IntoIterator<Item = S>,
        ordered: bool,
    ) -> Result<Self, TaxonomyError> {
        let traits: Vec<String> = traits.into_iter().map(Into::into).collect();
        if traits.is_empty() {
            return Err(TaxonomyError::EmptySet);
        }
        let mut seen = BTreeSet::new();
        for t in &traits {
            if !seen.insert(t.as_str()) {
                return Err(TaxonomyError::DuplicateTrait(t.clone()));
            }
        }
        Ok(Self { traits, ordered })
    }

    pub fn len(&self) -> usize {
        self.traits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traits.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.traits.iter().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.traits.iter().any(|t| t == name)
    }

    /// Stable key used in script tables and reports: names joined by `+`.
    pub fn fingerprint(&self) -> String {
        self.traits.join("+")
    }

    /// Same members sorted by name, unordered.
    pub fn canonical(&self) -> Self {
        let mut traits = self.traits.clone();
        traits.sort();
        Self { traits, ordered: false }
    }

    pub fn same_members(&self, other: &TraitSet) -> bool {
        self.canonical().traits == other.canonical().traits
    }
}

impl fmt::Display for TraitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.traits.join(", "))
    }
}

fn check_k(n: usize, k: usize) -> Result<(), TaxonomyError> {
    if k == 0 || k > n {
        Err(TaxonomyError::TeamSizeOutOfRange { k, n })
    } else {
        Ok(())
    }
}

/// n! / (n-k)!, the number of ordered arrangements.
fn arrangements(n: usize, k: usize) -> usize {
    (n - k + 1..=n).product()
}

/// All size-`k` subsets, lexicographic in taxonomy position.
pub fn enumerate_combinations(taxonomy: &[Trait], k: usize) -> Result<Vec<TraitSet>, TaxonomyError> {
    let n = taxonomy.len();
    check_k(n, k)?;
    let count = (1..=k).fold(1usize, |acc, i| acc * (n - k + i) / i);
    let mut out = Vec::with_capacity(count);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(TraitSet {
            traits: idx.iter().map(|&i| taxonomy[i].name.clone()).collect(),
            ordered: false,
        });
        // advance to the next k-subset
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == n - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        idx[pos - 1] += 1;
        for j in pos..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    Ok(out)
}

/// All ordered size-`k` arrangements without repetition, lexicographic in
/// taxonomy position.
pub fn enumerate_permutations(taxonomy: &[Trait], k: usize) -> Result<Vec<TraitSet>, TaxonomyError> {
    let n = taxonomy.len();
    check_k(n, k)?;
    let mut out = Vec::with_capacity(arrangements(n, k));
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; n];
    permute(taxonomy, k, &mut current, &mut used, &mut out);
    Ok(out)
}

fn permute(
    taxonomy: &[Trait],
    k: usize,
    current: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<TraitSet>,
) {
    if current.len() == k {
        out.push(TraitSet {
            traits: current.iter().map(|&i| taxonomy[i].name.clone()).collect(),
            ordered: true,
        });
        return;
    }
    for i in 0..taxonomy.len() {
        if !used[i] {
            used[i] = true;
            current.push(i);
            permute(taxonomy, k, current, used, out);
            current.pop();
            used[i] = false;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enumeration {
    #[default]
    Combinations,
    Permutations,
}

pub fn enumerate(
    taxonomy: &[Trait],
    k: usize,
    scheme: Enumeration,
) -> Result<Vec<TraitSet>, TaxonomyError> {
    match scheme {
        Enumeration::Combinations => enumerate_combinations(taxonomy, k),
        Enumeration::Permutations => enumerate_permutations(taxonomy, k),
    }
}

/// Points awarded by rank position: most important first.
const RANK_POINTS: [u32; 3] = [2, 1, 0];

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ImportanceTable {
    pub scores: BTreeMap<String, f64>,
    pub raw_totals: BTreeMap<String, u32>,
}

/// Sums 2/1/0 points per trait over the rankings and normalizes by the
/// largest total.
pub fn importance_scores<S: AsRef<str>>(rankings: &[Vec<S>]) -> Result<ImportanceTable, TaxonomyError> {
    let mut raw_totals: BTreeMap<String, u32> = BTreeMap::new();
    for ranking in rankings {
        if ranking.len() != RANK_POINTS.len() {
            return Err(TaxonomyError::RankingLength(ranking.len()));
        }
        let mut seen = BTreeSet::new();
        for name in ranking {
            if !seen.insert(name.as_ref()) {
                return Err(TaxonomyError::DuplicateTrait(name.as_ref().to_string()));
            }
        }
        for (name, points) in ranking.iter().zip(RANK_POINTS) {
            *raw_totals.entry(name.as_ref().to_string()).or_default() += points;
        }
    }
    let max = raw_totals.values().copied().max().unwrap_or(0);
    let scores = raw_totals
        .iter()
        .map(|(name, &raw)| {
            let score = if max == 0 { 0.0 } else { f64::from(raw) / f64::from(max) };
            (name.clone(), score)
        })
        .collect();
    Ok(ImportanceTable { scores, raw_totals })
}

/// One row of a model ranking file.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RankingRow {
    pub model: String,
    pub trait_1: String,
    pub trait_2: String,
    pub trait_3: String,
}

impl RankingRow {
    pub fn ranking(&self) -> Vec<String> {
        vec![self.trait_1.clone(), self.trait_2.clone(), self.trait_3.clone()]
    }
}

/// Reads a `model,trait_1,trait_2,trait_3` CSV (most to least important).
pub fn read_rankings_csv(reader: impl std::io::Read) -> Result<Vec<RankingRow>, TaxonomyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize()
        .map(|row| row.map_err(|e| TaxonomyError::Malformed(e.to_string())))
        .collect()
}

/// Importance tables computed separately for each model in the ranking file.
pub fn importance_by_model(rows: &[RankingRow]) -> Result<BTreeMap<String, ImportanceTable>, TaxonomyError> {
    let mut grouped: BTreeMap<&str, Vec<Vec<String>>> = BTreeMap::new();
    for row in rows {
        grouped.entry(row.model.as_str()).or_default().push(row.ranking());
    }
    grouped
        .into_iter()
        .map(|(model, rankings)| Ok((model.to_string(), importance_scores(&rankings)?)))
        .collect()
}
