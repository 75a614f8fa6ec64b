mod commands;
mod error;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lti_twin::RunConfig;

use crate::commands::InferArgs;
use crate::error::{CliError, CliResult};

/// Offline assembly and real-time Bayesian inference for a seafloor-forced
/// acoustic-gravity wave model.
#[derive(Debug, Parser)]
#[command(name = "lti-twin", version)]
struct Cli {
    /// JSON run configuration; defaults to the desk preset.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in configuration: `desk` or `tiny`.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Artifact directory for assemble and factorize, output directory otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Artifact directory read by the later phases.
    #[arg(long, global = true)]
    artifacts: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override a config entry, e.g. `--set model.grid.nx=33`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the observation and QoI maps and their prior-weighted adjoints.
    Assemble,
    /// Factorize the data-space system and precompute the QoI predictor.
    Factorize,
    /// Generate synthetic observations from the configured source.
    Synth {
        /// Noise level for the generated data (defaults to the config's).
        #[arg(long)]
        noise_level: Option<f64>,
    },
    /// MAP parameters, QoI prediction and credible intervals.
    Infer {
        /// Observations as CSV or `.d2qm`.
        #[arg(long)]
        data: PathBuf,
        /// Directory written by `synth`, for error metrics.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Cross-check the MAP point against a dense solve.
        #[arg(long)]
        oracle: bool,
    },
    /// QoI prediction from the precomputed predictor alone.
    Predict {
        #[arg(long)]
        data: PathBuf,
    },
    /// Median timings of the offline and online kernels.
    Bench {
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Singular values of the observation map.
    Spectrum,
    /// Compare every structured operation with its dense counterpart.
    OracleCheck,
    /// Print the configuration as JSON, with the source made explicit.
    ShowConfig,
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => RunConfig::load(Some(path), &cli.overrides)?,
        (None, preset) => {
            let name = match (preset.as_deref(), &cli.command) {
                (Some(p), _) => p,
                (None, Command::OracleCheck) => "tiny",
                (None, _) => "desk",
            };
            let text = RunConfig::preset(name)?.to_pretty_json();
            RunConfig::from_json_with_overrides(&text, &cli.overrides)?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.artifacts {
        cfg.paths.artifact_dir = dir.clone();
    }
    if matches!(cli.command, Command::Assemble | Command::Factorize) {
        if let Some(dir) = &cli.out {
            cfg.paths.artifact_dir = dir.clone();
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure the thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    let out = commands::output_dir(&cfg, cli.out.clone());
    match &cli.command {
        Command::Assemble => commands::assemble(&cfg),
        Command::Factorize => commands::factorize(&cfg),
        Command::Synth { noise_level } => commands::synth(&cfg, *noise_level, &out),
        Command::Infer {
            data,
            truth,
            oracle,
        } => commands::infer(
            &cfg,
            InferArgs {
                data,
                truth: truth.as_deref(),
                oracle: *oracle,
                out: &out,
            },
        ),
        Command::Predict { data } => commands::predict(&cfg, data, &out),
        Command::Bench { repeats } => commands::bench(&cfg, *repeats, &out),
        Command::Spectrum => commands::spectrum(&cfg, &out),
        Command::OracleCheck => commands::oracle_check(&cfg, &out),
        Command::ShowConfig => {
            let resolved = RunConfig {
                source: Some(cfg.resolved_source()),
                ..cfg
            };
            println!("{}", resolved.to_pretty_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn out_redirects_artifacts_only_for_offline_phases() {
        let cli = Cli::parse_from(["lti-twin", "--preset", "tiny", "--out", "a", "assemble"]);
        assert_eq!(
            load_config(&cli).unwrap().paths.artifact_dir,
            PathBuf::from("a")
        );
        let cli = Cli::parse_from(["lti-twin", "--preset", "tiny", "--out", "o", "spectrum"]);
        let cfg = load_config(&cli).unwrap();
        assert_eq!(cfg.paths.artifact_dir, PathBuf::from("artifacts"));
        assert_eq!(
            commands::output_dir(&cfg, cli.out.clone()),
            PathBuf::from("o")
        );
    }

    #[test]
    fn oracle_check_defaults_to_the_tiny_preset() {
        let cli = Cli::parse_from(["lti-twin", "--seed", "7", "oracle-check"]);
        let cfg = load_config(&cli).unwrap();
        assert_eq!(cfg.model, RunConfig::tiny().model);
        assert_eq!(cfg.seed, 7);
    }
}
