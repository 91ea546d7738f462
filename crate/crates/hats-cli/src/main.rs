//! `hats` — synthesize, audit, and analyze hardness-annotated
//! instruction–trajectory corpora over simulated GUI environments.
//!
//! Exit codes: 0 success, 1 configuration error, 2 environment/input error,
//! 3 oracle/transport error.

mod manifest;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use hats_core::alignment::{sweep_hardness, HardnessConfig};
use hats_core::corpus::{
    compare_corpora, comparison_csv, compute_stats, random_baseline, read_samples,
    read_samples_checked, stats_csv, stats_table, sweep_csv, JsonlSink, VerifiedSample,
};
use hats_core::engine::{synthesize_corpus, RunReport};
use hats_core::env::{load_environment_file, EnvironmentGraph, Path as EnvPath};
use hats_core::oracle::{HttpOracle, Oracle, ScriptedOracle};
use hats_core::recall;
use hats_core::tree::ActionTree;
use hats_core::ReferenceSequence;

use manifest::{OracleKind, RunArgs, RunManifest};

#[derive(Parser)]
#[command(name = "hats", version, about = "Hardness-aware trajectory synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the search-driven synthesis loop and emit a verified corpus.
    Synthesize(RunArgs),
    /// Run the uniform-random-walk comparator under the same budget.
    Baseline(RunArgs),
    /// Distribution statistics of a corpus (CSV + table).
    Stats(StatsArgs),
    /// Compare two corpora tag by tag and category by category.
    Compare(CompareArgs),
    /// Re-derive ambiguity tags from the environment and report mismatches.
    Audit(AuditArgs),
    /// Hardness landscape over a parameter grid (CSV).
    Sweep(SweepArgs),
    /// Load and validate an environment file, printing findings.
    ValidateEnv(ValidateArgs),
    /// Re-execute one sample's instruction and report recall against its
    /// stored steps.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct StatsArgs {
    /// Corpus JSONL path.
    #[arg(long)]
    corpus: PathBuf,
    /// Sidecar run report; enables the hardness integrity check.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// First corpus (the "a" side, e.g. a synthesize run).
    #[arg(long)]
    a: PathBuf,
    /// Second corpus (the "b" side, e.g. a baseline run).
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    env: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated epsilon values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.10])]
    epsilons: Vec<f64>,
    /// Comma-separated alpha values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0])]
    alphas: Vec<f64>,
    /// Comma-separated alignment values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0])]
    r_values: Vec<f64>,
    #[arg(long, default_value_t = 100.0)]
    h_max: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    env: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    sample_id: String,
    #[arg(long)]
    env: PathBuf,
}

/// Command failure with its exit-code class.
enum CliError {
    Config(String),
    Environment(String),
    Oracle(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Environment(_) => 2,
            CliError::Oracle(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Environment(m) | CliError::Oracle(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synthesize(args) => cmd_run(args, false),
        Command::Baseline(args) => cmd_run(args, true),
        Command::Stats(args) => cmd_stats(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Audit(args) => cmd_audit(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::ValidateEnv(args) => cmd_validate_env(args),
        Command::Replay(args) => cmd_replay(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_env(path: &Path) -> Result<EnvironmentGraph, CliError> {
    load_environment_file(path)
        .map_err(|e| CliError::Environment(format!("{}: {e}", path.display())))
}

fn build_oracle(manifest: &RunManifest) -> Result<Box<dyn Oracle>, CliError> {
    match manifest.oracle_kind {
        OracleKind::Scripted => Ok(Box::new(ScriptedOracle::new(
            manifest.scripted_oracle.clone(),
        ))),
        OracleKind::Http => {
            let endpoint = manifest
                .oracle_endpoint
                .as_deref()
                .expect("validated: endpoint present for http oracle");
            let token = std::env::var("HATS_ORACLE_TOKEN").ok();
            HttpOracle::new(endpoint, token)
                .map(|o| Box::new(o) as Box<dyn Oracle>)
                .map_err(|e| CliError::Oracle(e.to_string()))
        }
    }
}

fn map_engine_error(e: hats_core::engine::EngineError) -> CliError {
    use hats_core::engine::EngineError as E;
    match e {
        E::Config(err) => CliError::Config(err.to_string()),
        E::Oracle(err) => CliError::Oracle(err.to_string()),
        other => CliError::Environment(other.to_string()),
    }
}

/// Shared driver for `synthesize` and `baseline`.
fn cmd_run(args: RunArgs, baseline: bool) -> Result<(), CliError> {
    let manifest = RunManifest::resolve(args)?;
    if baseline && manifest.dump_tree.is_some() {
        return Err(CliError::Config(
            "--dump-tree applies to synthesize only".into(),
        ));
    }
    manifest
        .config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;

    std::fs::create_dir_all(&manifest.output_dir)
        .map_err(|e| CliError::Environment(format!("create output dir: {e}")))?;
    let manifest_path = manifest.output_dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    let corpus_path = manifest.output_dir.join("corpus.jsonl");
    let corpus_file = File::create(&corpus_path)
        .map_err(|e| CliError::Environment(format!("{}: {e}", corpus_path.display())))?;
    let sink = Arc::new(Mutex::new(JsonlSink::new(corpus_file)));

    // One worker per environment, or per derived seed on a single
    // environment; workers share the line-atomic sink.
    let worker_envs: Vec<PathBuf> = if manifest.environment_paths.len() > 1 {
        manifest.environment_paths.clone()
    } else {
        vec![manifest.environment_paths[0].clone(); manifest.jobs.max(1)]
    };

    let mut reports: Vec<RunReport> = Vec::new();
    if worker_envs.len() == 1 {
        let env = load_env(&worker_envs[0])?;
        let oracle = build_oracle(&manifest)?;
        let mut sink = Arc::clone(&sink);
        let report = if baseline {
            random_baseline(&env, oracle.as_ref(), &manifest.config, &mut sink, "run0")
        } else {
            let mut tree = ActionTree::new();
            let report = synthesize_corpus(
                &mut tree,
                &env,
                oracle.as_ref(),
                &manifest.config,
                &mut sink,
                "run0",
            );
            if let Some(dump_path) = &manifest.dump_tree {
                write_json(dump_path, &tree.dump())?;
            }
            report
        }
        .map_err(map_engine_error)?;
        reports.push(report);
    } else {
        if manifest.dump_tree.is_some() {
            return Err(CliError::Config(
                "--dump-tree requires a single run (jobs = 1, one environment)".into(),
            ));
        }
        let results: Vec<Result<RunReport, CliError>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (i, env_path) in worker_envs.iter().enumerate() {
                let manifest = &manifest;
                let sink = Arc::clone(&sink);
                handles.push(scope.spawn(move || {
                    let env = load_env(env_path)?;
                    let oracle = build_oracle(manifest)?;
                    let cfg = HardnessConfig {
                        seed: manifest.config.seed.wrapping_add(i as u64),
                        ..manifest.config.clone()
                    };
                    let run_id = format!("run{i}");
                    let mut sink = sink;
                    let report = if baseline {
                        random_baseline(&env, oracle.as_ref(), &cfg, &mut sink, &run_id)
                    } else {
                        let mut tree = ActionTree::new();
                        synthesize_corpus(
                            &mut tree,
                            &env,
                            oracle.as_ref(),
                            &cfg,
                            &mut sink,
                            &run_id,
                        )
                    };
                    report.map_err(map_engine_error)
                }));
            }
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        for result in results {
            reports.push(result?);
        }
    }

    if reports.len() == 1 {
        write_json(&manifest.output_dir.join("report.json"), &reports[0])?;
    } else {
        for report in &reports {
            let name = format!("report-{}.json", report.run_id);
            write_json(&manifest.output_dir.join(name), report)?;
        }
    }

    let emitted: u64 = reports.iter().map(|r| r.emitted_count).sum();
    let iterations: u64 = reports.iter().map(|r| r.outcomes.len() as u64).sum();
    let failures: u64 = reports.iter().map(|r| r.errors.len() as u64).sum();
    println!(
        "{}: {} iteration(s), {} sample(s) emitted, {} errored -> {}",
        if baseline { "baseline" } else { "synthesize" },
        iterations,
        emitted,
        failures,
        manifest.output_dir.display()
    );
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let body =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Environment(e.to_string()))?;
    std::fs::write(path, body.as_bytes())
        .map_err(|e| CliError::Environment(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Vec<VerifiedSample>, CliError> {
    let file =
        File::open(path).map_err(|e| CliError::Environment(format!("{}: {e}", path.display())))?;
    read_samples(BufReader::new(file))
        .map_err(|e| CliError::Environment(format!("{}: {e}", path.display())))
}

fn emit_csv(csv: &str, out: &Option<PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, csv.as_bytes())
            .map_err(|e| CliError::Environment(format!("{}: {e}", path.display()))),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_stats(args: StatsArgs) -> Result<(), CliError> {
    let samples = match &args.report {
        Some(report_path) => {
            let report: RunReport = read_json(report_path)?;
            let file = File::open(&args.corpus)
                .map_err(|e| CliError::Environment(format!("{}: {e}", args.corpus.display())))?;
            read_samples_checked(BufReader::new(file), &report.config)
                .map_err(|e| CliError::Environment(format!("{}: {e}", args.corpus.display())))?
        }
        None => load_corpus(&args.corpus)?,
    };
    let stats = compute_stats(&samples).map_err(|e| CliError::Environment(e.to_string()))?;
    eprint!("{}", stats_table(&stats));
    emit_csv(&stats_csv(&stats), &args.out)
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let file =
        File::open(path).map_err(|e| CliError::Environment(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Environment(format!("{}: {e}", path.display())))
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let a = compute_stats(&load_corpus(&args.a)?)
        .map_err(|e| CliError::Environment(format!("{}: {e}", args.a.display())))?;
    let b = compute_stats(&load_corpus(&args.b)?)
        .map_err(|e| CliError::Environment(format!("{}: {e}", args.b.display())))?;
    let rows = compare_corpora(&a, &b);
    emit_csv(&comparison_csv(&rows), &args.out)
}

fn cmd_audit(args: AuditArgs) -> Result<(), CliError> {
    let env = load_env(&args.env)?;
    let samples = load_corpus(&args.corpus)?;
    let mut mismatches = 0usize;
    for sample in &samples {
        let steps: Vec<_> = sample
            .execution_steps
            .iter()
            .map(|s| s.executed_pair())
            .collect();
        match env.audit_ambiguity(&steps) {
            Ok(derived) => {
                let stored: BTreeSet<_> = sample.ambiguity_tags.iter().copied().collect();
                if derived != stored {
                    mismatches += 1;
                    println!(
                        "{}: stored {:?} derived {:?}",
                        sample.sample_id, stored, derived
                    );
                }
            }
            Err(e) => {
                mismatches += 1;
                println!("{}: audit failed: {e}", sample.sample_id);
            }
        }
    }
    println!("{} sample(s), {mismatches} mismatch(es)", samples.len());
    if mismatches == 0 {
        Ok(())
    } else {
        Err(CliError::Environment(format!(
            "{mismatches} ambiguity mismatch(es) against {}",
            args.env.display()
        )))
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    if args.epsilons.is_empty() || args.alphas.is_empty() || args.r_values.is_empty() {
        return Err(CliError::Config("sweep grid must be non-empty".into()));
    }
    let grid: Vec<(f64, f64)> = args
        .epsilons
        .iter()
        .flat_map(|&e| args.alphas.iter().map(move |&a| (e, a)))
        .collect();
    let cells = sweep_hardness(&grid, &args.r_values, args.h_max);
    emit_csv(&sweep_csv(&cells), &args.out)
}

fn cmd_validate_env(args: ValidateArgs) -> Result<(), CliError> {
    let env = load_env(&args.env)?;
    println!(
        "ok: {} states, {} transitions, {} intents",
        env.state_count(),
        env.transitions().len(),
        env.intents().len()
    );
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<(), CliError> {
    let env = load_env(&args.env)?;
    let samples = load_corpus(&args.corpus)?;
    let sample = samples
        .iter()
        .find(|s| s.sample_id == args.sample_id)
        .ok_or_else(|| CliError::Environment(format!("sample `{}` not found", args.sample_id)))?;

    // Rebuild the reference by walking the stored steps through the
    // environment, verifying each stored pre-state on the way.
    let start = sample.execution_steps[0].state.clone();
    let mut path = EnvPath::new(start.clone());
    let mut steps = Vec::new();
    for (i, step) in sample.execution_steps.iter().enumerate() {
        let cur = path.end_state().clone();
        if step.state != cur {
            return Err(CliError::Environment(format!(
                "sample `{}` step {i} claims state `{}` but replay reached `{cur}`",
                sample.sample_id, step.state
            )));
        }
        let action = step.action();
        let to = env.apply(&cur, &action, &path).map_err(|e| {
            CliError::Environment(format!("sample `{}` step {i}: {e}", sample.sample_id))
        })?;
        path.push(action.clone(), to.clone());
        steps.push((action, to));
    }
    let reference = ReferenceSequence {
        steps,
        start_state: start.clone(),
        source_intent: None,
    };

    let oracle = ScriptedOracle::lossless();
    let instruction = oracle
        .synthesize_instruction(&reference, &env)
        .map_err(|e| CliError::Oracle(e.to_string()))?;
    let execution = oracle
        .execute_instruction(&instruction, &start, &env)
        .map_err(|e| CliError::Oracle(e.to_string()))?;
    let report =
        recall(&env, &reference, &execution).map_err(|e| CliError::Environment(e.to_string()))?;
    println!(
        "{}: replay recall {} over {} stored step(s), completed={}",
        sample.sample_id,
        report.recall,
        reference.steps.len(),
        execution.completed
    );
    Ok(())
}
