//! CSV/JSONL rendering of a [`Report`] and the trial-record file format.
//!
//! Every function here is pure: the same records always render to the same
//! bytes, which is what lets `report` regenerate run-time output exactly.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::debate::TrialRecord;
use crate::elo::{pools_to_csv, PoolKind, RatingUpdate};
use crate::tournament::{top_setups, ConditionKey, Report, TraitFrequency};

pub const TRIALS_FILE: &str = "trials.jsonl";
pub const REVERSAL_FILE: &str = "reversal.csv";

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: malformed trial record: {message}")]
    Malformed { path: String, line: usize, message: String },
}

/// One JSON object per line, in the order given.
pub fn records_to_jsonl(records: &[TrialRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_records(path: impl AsRef<Path>, records: &[TrialRecord]) -> Result<(), RecordsError> {
    let path = path.as_ref();
    fs::write(path, records_to_jsonl(records))
        .map_err(|source| RecordsError::Io { path: path.display().to_string(), source })
}

/// Reads trial records; blank lines are skipped, anything else must parse.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>, RecordsError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| RecordsError::Io { path: name.clone(), source })?;
    let mut records = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RecordsError::Io { path: name.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| RecordsError::Malformed {
            path: name.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("in-memory write");
    for row in rows {
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn opt(value: Option<f64>, precision: usize) -> String {
    value.map_or_else(String::new, |v| format!("{v:.precision$}"))
}

fn top_csv(report: &Report, kind: PoolKind) -> String {
    let rows = top_setups(&report.conditions, kind, usize::MAX);
    csv_string(
        &["rank", "mode", "traits", "rounds", "model", "top_elo", "best_trait"],
        rows.into_iter().enumerate().map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                r.mode.as_str().to_string(),
                r.traits.to_string(),
                r.rounds.to_string(),
                r.model,
                format!("{:.2}", r.top_elo),
                r.best_trait,
            ]
        }),
    )
}

fn aggregate_csv(report: &Report) -> String {
    csv_string(
        &["dimension", "category", "avg_prosecution_elo", "avg_defense_elo", "win_rate_defense", "n_trials"],
        report.aggregates.iter().map(|r| {
            vec![
                r.dimension.as_str().to_string(),
                r.category.clone(),
                opt(r.avg_prosecution_elo, 2),
                opt(r.avg_defense_elo, 2),
                opt(r.win_rate_defense, 4),
                r.n_trials.to_string(),
            ]
        }),
    )
}

fn frequency_rows<'a>(
    side: &'a str,
    table: &'a std::collections::BTreeMap<String, TraitFrequency>,
) -> impl Iterator<Item = Vec<String>> + 'a {
    let mut entries: Vec<(&String, &TraitFrequency)> = table.iter().collect();
    entries.sort_by(|a, b| b.1.count.cmp(&a.1.count).then_with(|| a.0.cmp(b.0)));
    entries
        .into_iter()
        .map(move |(name, f)| vec![side.to_string(), name.clone(), format!("{:.4}", f.frequency), f.count.to_string()])
}

fn frequency_csv(report: &Report) -> String {
    csv_string(
        &["side", "trait", "frequency", "wins"],
        frequency_rows("defense", &report.defense_frequency)
            .chain(frequency_rows("prosecution", &report.prosecution_frequency)),
    )
}

fn conditions_csv(report: &Report) -> String {
    csv_string(
        &[
            "condition",
            "mode",
            "traits",
            "rounds",
            "model",
            "n_trials",
            "n_failed",
            "n_parse_failures",
            "n_rated",
            "defense_wins",
            "prosecution_wins",
            "undecided",
        ],
        report.conditions.iter().map(|(k, s)| {
            vec![
                k.label(),
                k.mode.as_str().to_string(),
                k.trait_count.to_string(),
                k.rounds.to_string(),
                k.model.clone(),
                s.n_trials.to_string(),
                s.n_failed.to_string(),
                s.n_parse_failures.to_string(),
                s.n_rated.to_string(),
                s.defense_wins.to_string(),
                s.prosecution_wins.to_string(),
                s.undecided.to_string(),
            ]
        }),
    )
}

fn reversal_csv(report: &Report) -> Option<String> {
    let stats = report.reversal.as_ref()?;
    Some(csv_string(
        &["rounds", "reversal_rate", "differing", "comparisons", "replications"],
        stats.counts.iter().map(|(rounds, (diff, total))| {
            vec![
                rounds.to_string(),
                format!("{:.4}", stats.per_rounds[rounds]),
                diff.to_string(),
                total.to_string(),
                stats.replications.to_string(),
            ]
        }),
    ))
}

#[derive(Serialize)]
struct LoggedUpdate<'a> {
    condition: String,
    #[serde(flatten)]
    update: &'a RatingUpdate,
}

fn update_log_jsonl(report: &Report) -> String {
    let mut out = String::new();
    for (key, updates) in &report.update_logs {
        for update in updates {
            let line = LoggedUpdate { condition: key.label(), update };
            out.push_str(&serde_json::to_string(&line).expect("update serializes"));
            out.push('\n');
        }
    }
    out
}

/// File name of a condition's pool export.
pub fn pool_file_name(key: &ConditionKey) -> String {
    format!("elo_{}.csv", key.label())
}

/// `(file name, contents)` for every report file, in a fixed order.
pub fn render_bundle(report: &Report) -> Vec<(String, String)> {
    let mut files = vec![
        ("top_prosecution.csv".to_string(), top_csv(report, PoolKind::ProsecutionRole)),
        ("top_defense.csv".to_string(), top_csv(report, PoolKind::DefenseRole)),
        ("top_overall.csv".to_string(), top_csv(report, PoolKind::Overall)),
        ("aggregate.csv".to_string(), aggregate_csv(report)),
        ("trait_frequency.csv".to_string(), frequency_csv(report)),
        ("conditions.csv".to_string(), conditions_csv(report)),
        ("elo_updates.jsonl".to_string(), update_log_jsonl(report)),
    ];
    for (key, summary) in &report.conditions {
        files.push((pool_file_name(key), pools_to_csv(&summary.pools)));
    }
    if let Some(reversal) = reversal_csv(report) {
        files.push((REVERSAL_FILE.to_string(), reversal));
    }
    files
}

/// Writes the bundle into `dir` (created if absent). A stale reversal file
/// from an earlier replicated run is removed when this report has none.
pub fn write_bundle(report: &Report, dir: impl AsRef<Path>) -> io::Result<Vec<String>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = render_bundle(report);
    if report.reversal.is_none() {
        match fs::remove_file(dir.join(REVERSAL_FILE)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
            _ => {}
        }
    }
    let mut names = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let mut file = fs::File::create(dir.join(&name))?;
        file.write_all(contents.as_bytes())?;
        names.push(name);
    }
    Ok(names)
}

/// Ranked `(trait, rating)` rows of one pool kind for every condition.
pub fn rankings_table(report: &Report, kind: PoolKind) -> String {
    csv_string(
        &["condition", "rank", "trait", "rating"],
        report.conditions.iter().flat_map(|(key, summary)| {
            crate::elo::rankings(summary.pools.pool(kind))
                .into_iter()
                .enumerate()
                .map(move |(i, (name, rating))| vec![key.label(), (i + 1).to_string(), name, format!("{rating:.2}")])
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{BackendRegistry, ScriptedBackend};
    use crate::case::CaseCorpus;
    use crate::debate::Mode;
    use crate::taxonomy::builtin_taxonomy;
    use crate::tournament::{run_experiment, ExperimentConfig, ReportOptions};

    fn demo() -> crate::tournament::ExperimentResult {
        let mut cfg = ExperimentConfig::new(Mode::Single, 1, 1, "scripted");
        cfg.seed = Some(3);
        cfg.cases = vec!["state-v-john-doe".into()];
        cfg.traits = vec!["charismatic".into(), "quantitative".into()];
        cfg.replications = 2;
        let registry = BackendRegistry::new().with("scripted", ScriptedBackend::with_fallback(1));
        run_experiment(&cfg, &CaseCorpus::bundled(), &builtin_taxonomy(), &registry).unwrap()
    }

    #[test]
    fn records_roundtrip_and_rerender() {
        let result = demo();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TRIALS_FILE);
        write_records(&path, &result.records).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, result.records);
        let again = Report::from_records(&back, &ReportOptions::default()).unwrap();
        assert_eq!(render_bundle(&again), render_bundle(&result.report));
    }

    #[test]
    fn malformed_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TRIALS_FILE);
        let records = demo().records;
        let mut text = records_to_jsonl(&records);
        text.push_str("{\"trial_index\": 9, \"case_id\"\n");
        fs::write(&path, text).unwrap();
        match read_records(&path) {
            Err(RecordsError::Malformed { line, .. }) => assert_eq!(line, records.len() + 1),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn empty_records_give_empty_reports() {
        let report = Report::from_records(&[], &ReportOptions::default()).unwrap();
        let files = render_bundle(&report);
        assert!(files.iter().all(|(name, _)| name != REVERSAL_FILE));
        let top = &files.iter().find(|(n, _)| n == "top_overall.csv").unwrap().1;
        assert_eq!(top, "rank,mode,traits,rounds,model,top_elo,best_trait\n");
    }

    #[test]
    fn bundle_lists_reversal_when_replicated() {
        let names: Vec<String> = render_bundle(&demo().report).into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&REVERSAL_FILE.to_string()));
        assert!(names.contains(&"elo_single_k1_n1_scripted.csv".to_string()));
    }
}
