use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sp2_cli::{
    cmd_ablate_clusters, cmd_prepare_data, cmd_privacy_sweep, cmd_run, preflight, CliError, ExperimentConfig,
    Overrides, Scope,
};

#[derive(Parser, Debug)]
#[command(name = "sp2", version, about = "Selective privacy-preserving recommendation experiments")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML configuration file; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Clamp predictions to the rating scale before scoring.
    #[arg(long, global = true)]
    clamp_predictions: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Every configured method at every (hypothesis, beta) point.
    Run,
    /// Cluster and joint methods across cluster counts.
    AblateClusters {
        /// Cluster counts, comma separated; overrides `ablation.clusters`.
        #[arg(long = "k", value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// Methods across target mean privacy ratios.
    PrivacySweep {
        /// Ratios in [0, 1], comma separated; overrides `sweep.ratios`.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Writes the normalised ratings, fold splits and privacy partitions.
    PrepareData,
    /// Prints the resolved configuration as TOML.
    PrintConfig {
        /// Lists one instance of every method kind.
        #[arg(long)]
        example: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(CliError::Invalid(vec!["--threads must be at least 1".to_owned()]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let base = match &g.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| CliError::Invalid(vec![e]))?,
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides {
        seed: g.seed,
        out: g.out.clone(),
        clamp_predictions: g.clamp_predictions,
    };
    let mut config = overrides.apply(base);

    let dir = match cli.command {
        Command::PrintConfig { example } => {
            let shown = if example {
                overrides.apply(ExperimentConfig::example())
            } else {
                config
            };
            print!("{}", shown.to_toml());
            return Ok(());
        }
        Command::Run => cmd_run(&preflight(config, Scope::Run)?)?,
        Command::AblateClusters { k } => {
            if let Some(k) = k {
                config.ablation.clusters = k;
            }
            cmd_ablate_clusters(&preflight(config, Scope::Ablation)?)?
        }
        Command::PrivacySweep { ratios } => {
            if let Some(r) = ratios {
                config.sweep.ratios = r;
            }
            cmd_privacy_sweep(&preflight(config, Scope::Sweep)?)?
        }
        Command::PrepareData => cmd_prepare_data(&preflight(config, Scope::Prepare)?)?,
    };
    println!("wrote {}", dir.display());
    Ok(())
}
