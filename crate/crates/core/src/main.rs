use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use optswitch::config::ExperimentConfig;
use optswitch::runner::{
    cmd_concentration, cmd_evaluate, cmd_report, cmd_simulate, cmd_train, ensemble_sources, TRAJECTORY_FILE,
};
use optswitch::Error;

/// Regression Monte Carlo for optimal switching problems.
#[derive(Parser)]
#[command(name = "optswitch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Preset name (cl, aclp, bsp, hcl10, hcl50, concentration) or path to a TOML file.
    #[arg(long)]
    config: String,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training trajectories.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Trajectory file to write (default <out>/trajectories.bin).
        #[arg(long)]
        paths: Option<PathBuf>,
    },
    /// Fit one value-function ensemble per model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Trajectory file to train on (default <out>/trajectories.bin).
        #[arg(long)]
        paths: Option<PathBuf>,
        /// Comma-separated model labels or names; defaults to the configured models.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
    /// Evaluate trained ensembles against the greedy and a-posteriori strategies.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated model labels or ensemble files; defaults to the configured models.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
    /// Run the k-NN tail experiment.
    Concentration {
        #[command(flatten)]
        common: Common,
    },
    /// Merge metrics files into a summary table.
    Report {
        /// Metrics CSV files written by `evaluate`.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Directory for summary.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { common, paths } => {
            let cfg = load(&common)?;
            let path = cmd_simulate(&cfg, paths.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::Train { common, paths, models } => {
            let cfg = load(&common)?;
            let paths = paths.unwrap_or_else(|| cfg.output_dir.join(TRAJECTORY_FILE));
            for t in cmd_train(&cfg, &paths, models.as_deref())? {
                println!("{}: wrote {} and {}", t.label, t.ensemble.display(), t.losses.display());
            }
        }
        Command::Evaluate { common, models } => {
            let cfg = load(&common)?;
            let sources = ensemble_sources(&cfg, models.as_deref())?;
            let eval = cmd_evaluate(&cfg, &sources)?;
            println!("{:<16} {:>8} {:>8} {:>8}", "strategy", "kappa", "Q", "C");
            for r in &eval.reports {
                println!(
                    "{:<16} {:>8.4} {:>8.4} {:>8.4}",
                    r.strategy, r.value_capture, r.decision_quality, r.internal_consistency
                );
            }
            println!("wrote {}", eval.metrics.display());
            if !eval.lattices.is_empty() {
                println!("wrote {} boundary lattices", eval.lattices.len());
            }
        }
        Command::Concentration { common } => {
            let cfg = load(&common)?;
            let (path, estimates) = cmd_concentration(&cfg)?;
            for e in &estimates {
                let tails: Vec<String> = e.tail_prob.iter().map(|p| format!("{p:.3}")).collect();
                println!("k={:<4} m={:<6} m_y={:<3} tails=[{}]", e.k, e.m, e.m_y, tails.join(", "));
            }
            println!("wrote {}", path.display());
        }
        Command::Report { metrics, out } => {
            let report = cmd_report(&metrics, &out)?;
            print!("{}", report.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
