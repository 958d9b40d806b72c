//! `courtroom`: run debate experiments, train and evaluate the trait
//! orchestrator, rebuild reports from trial records and replay transcripts.

mod config;

use std::collections::hash_map::RandomState;
use std::fs;
use std::hash::{BuildHasher, Hasher};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use courtroom_core::case::load_corpus;
use courtroom_core::case::CaseCorpus;
use courtroom_core::debate::render_transcript;
use courtroom_core::elo::PoolKind;
use courtroom_core::orchestrator::{
    evaluate_policy, train, DebateEnv, FeatureSchema, OrchestratorError, PolicyCheckpoint, PolicyParams,
    TrainConfig,
};
use courtroom_core::report::{read_records, rankings_table, write_bundle, write_records, TRIALS_FILE};
use courtroom_core::taxonomy::{builtin_taxonomy, load_taxonomy, TraitSet};
use courtroom_core::tournament::{restrict_taxonomy, run_experiment, Report, ReportOptions};

use config::{load_config, RunFile, TrainFile, RUN_OVERRIDES, TRAIN_OVERRIDES};

#[derive(Debug, Parser)]
#[command(name = "courtroom", version, about = "Trait-conditioned courtroom debate experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolArg {
    Overall,
    Prosecution,
    Defense,
}

impl From<PoolArg> for PoolKind {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::Overall => PoolKind::Overall,
            PoolArg::Prosecution => PoolKind::ProsecutionRole,
            PoolArg::Defense => PoolKind::DefenseRole,
        }
    }
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Seed for all randomness; overrides the config. A seed is generated
    /// and printed when neither sets one.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if absent).
    #[arg(long, default_value = "out")]
    output: PathBuf,
    /// `key=value` config override; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment sweep and write records, Elo pools and reports.
    Run {
        #[command(flatten)]
        common: Common,
        /// Parallel trial width (0 = one per CPU).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train the defense-trait orchestrator over the configured learning rates.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Compare a trained policy against static defense trait sets.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Policy checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of matched evaluations (overrides the config).
        #[arg(long)]
        n_eval: Option<usize>,
    },
    /// Rebuild every report CSV from a trial-records file.
    Report {
        /// Trial records (JSON lines).
        #[arg(long)]
        records: PathBuf,
        /// Output directory; defaults to the records file's directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also print trait rankings of this pool.
        #[arg(long, value_enum)]
        pool: Option<PoolArg>,
        /// Skip judge parse failures in Elo instead of rating them as draws.
        #[arg(long)]
        exclude_parse_failures: bool,
    },
    /// Print one trial as a courtroom transcript.
    Replay {
        #[arg(long)]
        records: PathBuf,
        /// Trial index to render.
        #[arg(long)]
        trial: usize,
    },
    /// Check a case corpus (and optionally a taxonomy) against its invariants.
    CorpusValidate {
        /// Corpus file; the bundled corpus when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
}

fn generated_seed() -> u64 {
    let mut hasher = RandomState::new().build_hasher();
    hasher.write_u128(std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default().as_nanos());
    hasher.finish()
}

/// Flag wins over config; otherwise a fresh seed, announced so the run can
/// be repeated.
fn resolve_seed(flag: Option<u64>, configured: Option<u64>) -> u64 {
    flag.or(configured).unwrap_or_else(|| {
        let seed = generated_seed();
        println!("seed: {seed} (generated; pass --seed {seed} to repeat this run)");
        seed
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn cmd_run(common: &Common, workers: Option<usize>) -> Result<()> {
    let (mut file, base) = load_config::<RunFile>(&common.config, &common.overrides, RUN_OVERRIDES)?;
    file.experiment.seed = Some(resolve_seed(common.seed, file.experiment.seed));
    if let Some(w) = workers {
        file.experiment.workers = w;
    }
    let corpus = file.sources.corpus(&base)?;
    let taxonomy = file.sources.taxonomy(&base)?;
    let backends = file.sources.backends(&base)?;
    let result = run_experiment(&file.experiment, &corpus, &taxonomy, &backends)?;

    create_dir(&common.output)?;
    write_records(common.output.join(TRIALS_FILE), &result.records)?;
    let resolved = serde_json::to_string_pretty(&file).expect("config serializes");
    fs::write(common.output.join("config.resolved.json"), resolved + "\n")?;
    write_bundle(&result.report, &common.output)?;
    println!("{}", result.report.summary_line());
    let failed = result.report.n_failed();
    if failed > 0 {
        eprintln!(
            "warning: {failed} of {} trials aborted on backend errors; they are kept in {TRIALS_FILE} and skipped in Elo",
            result.records.len()
        );
    }
    Ok(())
}

fn train_inputs(file: &TrainFile, base: &Path) -> Result<(CaseCorpus, Vec<String>, Vec<String>)> {
    let corpus = file.sources.corpus(base)?;
    let cases = corpus.select(&file.cases)?;
    let taxonomy = restrict_taxonomy(&file.sources.taxonomy(base)?, &file.vocabulary)?;
    let vocabulary = taxonomy.into_iter().map(|t| t.name).collect();
    let prosecution = builtin_taxonomy().into_iter().map(|t| t.name).collect();
    Ok((CaseCorpus { cases, source_path: corpus.source_path }, vocabulary, prosecution))
}

fn env_for<'a>(file: &TrainFile, backends: &'a courtroom_core::agent::BackendRegistry) -> Result<DebateEnv<'a>> {
    backends.get(&file.backend_id)?;
    let mut env = DebateEnv::new(backends, file.backend_id.clone(), file.rounds);
    env.mode = file.mode;
    env.decoding = file.decoding;
    env.judge_sees_case = file.judge_sees_case;
    Ok(env)
}

fn baseline_sets(file: &TrainFile) -> Result<Vec<TraitSet>> {
    file.evaluation
        .baselines
        .iter()
        .map(|set| TraitSet::new(set.iter().cloned(), false).map_err(Into::into))
        .collect()
}

fn rate_label(rate: f64) -> String {
    format!("{rate:e}")
}

fn run_evaluation(
    file: &TrainFile,
    schema: &FeatureSchema,
    policy: &PolicyParams,
    env: &DebateEnv<'_>,
    corpus: &CaseCorpus,
    prosecution: &[String],
    n_eval: usize,
    seed: u64,
    output: &Path,
) -> Result<()> {
    let baselines = baseline_sets(file)?;
    let eval = evaluate_policy(policy, schema, &baselines, env, &corpus.cases, prosecution, n_eval, seed)?;
    fs::write(output.join("evaluation.csv"), eval.to_csv())?;
    for arm in &eval.arms {
        let better = arm.policy_better.map_or(String::new(), |b| format!(" policy_better={b:.3}"));
        println!("arm {}: win_rate={:.3} mean_reward={:.3}{better}", arm.label, arm.win_rate, arm.mean_reward);
    }
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let (file, base) = load_config::<TrainFile>(&common.config, &common.overrides, TRAIN_OVERRIDES)?;
    let seed = resolve_seed(common.seed, file.seed);
    let (corpus, vocabulary, prosecution) = train_inputs(&file, &base)?;
    let backends = file.sources.backends(&base)?;
    let env = env_for(&file, &backends)?;
    let schema = FeatureSchema::new(&corpus.cases, &prosecution);
    let init = PolicyParams::zeros(vocabulary, schema.dim())?;
    let config = TrainConfig {
        episodes: file.episodes,
        learning_rates: file.learning_rates.clone(),
        seed,
        baseline: file.baseline,
        selection_window: file.selection_window,
    };
    create_dir(&common.output)?;
    let outcome = match train(&env, &corpus.cases, &prosecution, &schema, &init, &config) {
        Ok(outcome) => outcome,
        Err(OrchestratorError::Environment { learning_rate, episode, message, stats }) => {
            let path = common.output.join(format!("training_stats_lr{}.partial.csv", rate_label(learning_rate)));
            fs::write(&path, stats.to_csv())?;
            bail!(
                "environment failed at episode {episode} (learning rate {learning_rate}): {message}; \
                 stats so far written to {}",
                path.display()
            );
        }
        Err(e) => return Err(e.into()),
    };

    let mut summary = String::from("learning_rate,final_mean_reward,final_win_rate,selected\n");
    for (i, run) in outcome.runs.iter().enumerate() {
        let label = rate_label(run.learning_rate);
        fs::write(common.output.join(format!("training_stats_lr{label}.csv")), run.stats.to_csv())?;
        fs::write(
            common.output.join(format!("policy_lr{label}.json")),
            PolicyCheckpoint::new(&schema, &run.policy).to_json() + "\n",
        )?;
        let window = &run.stats.episodes[run.stats.episodes.len().saturating_sub(file.selection_window)..];
        let wins = window.iter().filter(|e| e.reward > 0.0).count() as f64 / window.len().max(1) as f64;
        summary.push_str(&format!(
            "{},{:.4},{:.4},{}\n",
            run.learning_rate,
            run.stats.final_mean_reward(file.selection_window),
            wins,
            i == outcome.best
        ));
        println!(
            "lr={label}: final mean reward {:.3}, final cumulative win rate {:.3}",
            run.stats.final_mean_reward(file.selection_window),
            run.stats.episodes.last().map_or(0.0, |e| e.cum_win_rate)
        );
    }
    fs::write(common.output.join("training_summary.csv"), summary)?;
    let best = outcome.best_run();
    fs::write(common.output.join("policy.json"), PolicyCheckpoint::new(&schema, &best.policy).to_json() + "\n")?;
    println!("selected learning rate {} (checkpoint policy.json)", rate_label(best.learning_rate));

    if !file.evaluation.baselines.is_empty() && file.evaluation.n_eval > 0 {
        // evaluation draws use a seed stream disjoint from training's
        let eval_seed = courtroom_core::seed::derive_seed(seed, u64::MAX);
        run_evaluation(&file, &schema, &best.policy, &env, &corpus, &prosecution, file.evaluation.n_eval, eval_seed, &common.output)?;
    }
    Ok(())
}

fn cmd_evaluate(common: &Common, checkpoint: &Path, n_eval: Option<usize>) -> Result<()> {
    let (file, base) = load_config::<TrainFile>(&common.config, &common.overrides, TRAIN_OVERRIDES)?;
    let seed = resolve_seed(common.seed, file.seed);
    let text = fs::read_to_string(checkpoint).with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    let (schema, policy) = PolicyCheckpoint::from_json(&text)?;
    let corpus = file.sources.corpus(&base)?;
    let cases = schema
        .case_ids
        .iter()
        .map(|id| corpus.get(id).cloned().with_context(|| format!("checkpoint case {id:?} is not in the corpus")))
        .collect::<Result<Vec<_>>>()?;
    let corpus = CaseCorpus { cases, source_path: corpus.source_path };
    let backends = file.sources.backends(&base)?;
    let env = env_for(&file, &backends)?;
    create_dir(&common.output)?;
    let n = n_eval.unwrap_or(file.evaluation.n_eval);
    let prosecution = schema.prosecution_vocabulary.clone();
    run_evaluation(&file, &schema, &policy, &env, &corpus, &prosecution, n, seed, &common.output)
}

fn cmd_report(records: &Path, output: Option<&Path>, pool: Option<PoolArg>, exclude_parse_failures: bool) -> Result<()> {
    let trials = read_records(records)?;
    let options = ReportOptions { include_parse_failures: !exclude_parse_failures, ..ReportOptions::default() };
    let report = Report::from_records(&trials, &options)?;
    let dir = match output {
        Some(dir) => dir.to_path_buf(),
        None => records.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    create_dir(&dir)?;
    let written = write_bundle(&report, &dir)?;
    println!("{}", report.summary_line());
    println!("wrote {} report files to {}", written.len(), dir.display());
    if let Some(pool) = pool {
        print!("{}", rankings_table(&report, pool.into()));
    }
    Ok(())
}

fn cmd_replay(records: &Path, trial: usize) -> Result<()> {
    let trials = read_records(records)?;
    let Some(record) = trials.iter().find(|r| r.trial_index == trial) else {
        bail!("trial index {trial} out of range ({} records in {})", trials.len(), records.display());
    };
    print!("{}", render_transcript(record));
    Ok(())
}

fn cmd_corpus_validate(corpus: Option<&Path>, taxonomy: Option<&Path>) -> Result<()> {
    let loaded = match corpus {
        Some(path) => load_corpus(path)?,
        None => CaseCorpus::bundled(),
    };
    println!(
        "corpus ok: {} cases ({})",
        loaded.len(),
        loaded.source_path.as_deref().unwrap_or("<memory>")
    );
    if let Some(path) = taxonomy {
        let traits = load_taxonomy(path)?;
        println!("taxonomy ok: {} traits ({})", traits.len(), path.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, workers } => cmd_run(&common, workers),
        Command::Train { common } => cmd_train(&common),
        Command::Evaluate { common, checkpoint, n_eval } => cmd_evaluate(&common, &checkpoint, n_eval),
        Command::Report { records, output, pool, exclude_parse_failures } => {
            cmd_report(&records, output.as_deref(), pool, exclude_parse_failures)
        }
        Command::Replay { records, trial } => cmd_replay(&records, trial),
        Command::CorpusValidate { corpus, taxonomy } => cmd_corpus_validate(corpus.as_deref(), taxonomy.as_deref()),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
