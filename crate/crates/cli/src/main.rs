use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use mmd_sense::config::KvMap;
use mmd_sense_cli::commands::{cmd_analyze, cmd_score, cmd_synth};
use mmd_sense_cli::run_config::{read_config_file, RunConfig};
use mmd_sense_cli::synth::SynthSpec;
use mmd_sense_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "mmd-sense", version, about = "Kernel two-sample detection of word sense change across time periods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` config file, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Select variables and test every period pair, then score all words.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Overrides `input_dir`.
        #[arg(long)]
        input_dir: Option<PathBuf>,
    },
    /// Write one word's score series from a finished `analyze` run.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        word: String,
        #[arg(long)]
        input_dir: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with known shifted dimensions.
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

fn config_map(common: &Common, input_dir: Option<&PathBuf>) -> CliResult<KvMap> {
    let mut map = match &common.config {
        Some(path) => read_config_file(path)?,
        None => KvMap::new(),
    };
    if let Some(seed) = common.seed {
        map.insert("seed".into(), seed.to_string());
    }
    if let Some(dir) = &common.output_dir {
        map.insert("output_dir".into(), dir.display().to_string());
    }
    if let Some(dir) = input_dir {
        map.insert("input_dir".into(), dir.display().to_string());
    }
    Ok(map)
}

fn run(cli: Cli) -> CliResult<()> {
    let common = match &cli.command {
        Command::Analyze { common, .. } | Command::Score { common, .. } | Command::Synth { common } => common,
    };
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(CliError::User("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match &cli.command {
        Command::Analyze { common, input_dir } => {
            let cfg = RunConfig::from_kv(&config_map(common, input_dir.as_ref())?)?;
            cmd_analyze(&cfg).map(|_| ())
        }
        Command::Score { common, word, input_dir } => {
            let cfg = RunConfig::from_kv(&config_map(common, input_dir.as_ref())?)?;
            cmd_score(&cfg, word).map(|_| ())
        }
        Command::Synth { common } => {
            let map = config_map(common, None)?;
            let out = map
                .get("output_dir")
                .map(PathBuf::from)
                .ok_or_else(|| CliError::User("synth needs --output-dir or `output_dir`".into()))?;
            cmd_synth(&SynthSpec::from_kv(&map)?, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(2),
    }
}
