//! Run manifest: resolves synthesize/baseline settings from flags and an
//! optional TOML config file. Flags override file values; everything else
//! falls back to defaults. The resolved manifest is echoed to
//! `manifest.json` in the output directory.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use hats_core::alignment::HardnessConfig;
use hats_core::oracle::ScriptedOracleConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Scripted,
    Http,
}

/// Flags shared by `synthesize` and `baseline`.
#[derive(Args)]
pub struct RunArgs {
    /// Environment file; repeat the flag to fan one run out per environment.
    #[arg(long = "env")]
    pub env: Vec<PathBuf>,
    /// Oracle implementation.
    #[arg(long, value_enum)]
    pub oracle: Option<OracleKind>,
    /// HTTP oracle base URL (required with --oracle http).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Search iterations per run.
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Master seed; worker i runs with seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rollout depth limit.
    #[arg(long = "t-max")]
    pub t_max: Option<usize>,
    /// UCB exploration constant.
    #[arg(long = "c-ucb")]
    pub c_ucb: Option<f64>,
    /// Hardness offset epsilon.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Hardness exponent alpha.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Hardness clip ceiling.
    #[arg(long = "h-max")]
    pub h_max: Option<f64>,
    /// Alignment acceptance threshold.
    #[arg(long = "r-min")]
    pub r_min: Option<f64>,
    /// Refinement budget per iteration.
    #[arg(long = "f-max")]
    pub f_max: Option<u32>,
    /// Detail slots masked at synthesis (scripted oracle).
    #[arg(long)]
    pub omissions: Option<usize>,
    /// Slots repaired per refinement round (scripted oracle).
    #[arg(long)]
    pub repairs: Option<usize>,
    /// Output directory for corpus, report, and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker fan-out across derived seeds (or environments when --env is
    /// repeated); workers share one corpus sink.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Write a JSON snapshot of the search tree here after the run.
    #[arg(long = "dump-tree")]
    pub dump_tree: Option<PathBuf>,
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Config-file counterpart of the flags, plus scripted-oracle extras that
/// have no flag form (per-intent omission overrides, a separate oracle
/// seed).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    env: Option<PathBuf>,
    oracle: Option<OracleKind>,
    endpoint: Option<String>,
    iterations: Option<u64>,
    seed: Option<u64>,
    t_max: Option<usize>,
    c_ucb: Option<f64>,
    epsilon: Option<f64>,
    alpha: Option<f64>,
    h_max: Option<f64>,
    r_min: Option<f64>,
    f_max: Option<u32>,
    omissions: Option<usize>,
    repairs: Option<usize>,
    oracle_seed: Option<u64>,
    omission_overrides: Option<BTreeMap<String, usize>>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    dump_tree: Option<PathBuf>,
}

/// Fully resolved run description.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub environment_paths: Vec<PathBuf>,
    pub oracle_kind: OracleKind,
    pub oracle_endpoint: Option<String>,
    pub config: HardnessConfig,
    pub scripted_oracle: ScriptedOracleConfig,
    pub output_dir: PathBuf,
    pub jobs: usize,
    pub dump_tree: Option<PathBuf>,
}

impl RunManifest {
    pub fn resolve(args: RunArgs) -> Result<Self, CliError> {
        let file: FileConfig = match &args.config {
            Some(path) => {
                let body = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
                toml::from_str(&body)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let environment_paths = if !args.env.is_empty() {
            args.env.clone()
        } else if let Some(env) = file.env.clone() {
            vec![env]
        } else {
            return Err(CliError::Config(
                "missing --env (or `env` in --config)".into(),
            ));
        };

        let oracle_kind = args.oracle.or(file.oracle).unwrap_or(OracleKind::Scripted);
        let oracle_endpoint = args.endpoint.clone().or(file.endpoint);
        if oracle_kind == OracleKind::Http && oracle_endpoint.is_none() {
            return Err(CliError::Config("--oracle http requires --endpoint".into()));
        }

        let defaults = HardnessConfig::default();
        let config = HardnessConfig {
            epsilon: args.epsilon.or(file.epsilon).unwrap_or(defaults.epsilon),
            alpha: args.alpha.or(file.alpha).unwrap_or(defaults.alpha),
            h_max: args.h_max.or(file.h_max).unwrap_or(defaults.h_max),
            r_min: args.r_min.or(file.r_min).unwrap_or(defaults.r_min),
            f_max: args.f_max.or(file.f_max).unwrap_or(defaults.f_max),
            c_ucb: args.c_ucb.or(file.c_ucb).unwrap_or(defaults.c_ucb),
            t_max: args.t_max.or(file.t_max).unwrap_or(defaults.t_max),
            iterations: args
                .iterations
                .or(file.iterations)
                .unwrap_or(defaults.iterations),
            seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        };

        let scripted_oracle = ScriptedOracleConfig {
            omission_count: args.omissions.or(file.omissions).unwrap_or(0),
            repair_per_round: args.repairs.or(file.repairs).unwrap_or(1),
            seed: file.oracle_seed.unwrap_or(config.seed),
            omission_overrides: file.omission_overrides.unwrap_or_default(),
        };
        if scripted_oracle.repair_per_round == 0 {
            return Err(CliError::Config("--repairs must be at least 1".into()));
        }

        let output_dir = args
            .out
            .or(file.out)
            .ok_or_else(|| CliError::Config("missing --out (or `out` in --config)".into()))?;
        let jobs = args.jobs.or(file.jobs).unwrap_or(1);
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }

        Ok(Self {
            environment_paths,
            oracle_kind,
            oracle_endpoint,
            config,
            scripted_oracle,
            output_dir,
            jobs,
            dump_tree: args.dump_tree.or(file.dump_tree),
        })
    }
}
