use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use unlearn_forge::attacks::AttackKind;
use unlearn_forge::unlearn::UnlearnMethod;
use unlearn_forge::{Error, Result};
use unlearn_forge_cli::pipeline::{cmd_attack, cmd_landscape, cmd_train, cmd_unlearn};
use unlearn_forge_cli::report::{cmd_report, summary_text};
use unlearn_forge_cli::store::RunManifest;
use unlearn_forge_cli::ExperimentConfig;

/// Privacy-leakage experiments for approximate machine unlearning.
#[derive(Parser, Debug)]
#[command(name = "unlearn-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Restrict to one trial index.
    #[arg(long, value_name = "T")]
    trial: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the original model of every trial.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured unlearning methods on the trained models.
    Unlearn {
        #[command(flatten)]
        common: Common,
        /// Only this method (retrain, ft, ga, rl, l1_sparse, our).
        #[arg(long, value_name = "NAME")]
        method: Option<UnlearnMethod>,
    },
    /// Attack the unlearned models.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Only this attack (rea_class, rea_sample, mia_lira, mia_up).
        #[arg(long, value_name = "NAME")]
        attack: Option<AttackKind>,
        #[arg(long, value_name = "NAME")]
        method: Option<UnlearnMethod>,
    },
    /// Summarize a run directory.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Loss surface around one trial's model.
    Landscape {
        #[command(flatten)]
        common: Common,
        /// Model to centre on; the original model when omitted.
        #[arg(long, value_name = "NAME")]
        method: Option<UnlearnMethod>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let path = common.config.as_ref().ok_or_else(|| Error::Config {
        field: "--config".into(),
        msg: "this command needs a config file".into(),
    })?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn announce(manifest: &RunManifest, command: &str) {
    let n = manifest.artifacts.iter().filter(|a| a.command == command).count();
    println!("{command}: {n} artifact(s) recorded in manifest.json");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            announce(&cmd_train(&cfg, common.trial)?, "train");
        }
        Command::Unlearn { common, method } => {
            let cfg = load_config(&common)?;
            announce(&cmd_unlearn(&cfg, method, common.trial)?, "unlearn");
        }
        Command::Attack { common, attack, method } => {
            let cfg = load_config(&common)?;
            announce(&cmd_attack(&cfg, attack, method, common.trial)?, "attack");
        }
        Command::Landscape { common, method } => {
            let cfg = load_config(&common)?;
            announce(&cmd_landscape(&cfg, method, common.trial)?, "landscape");
        }
        Command::Report { common } => {
            let root = match (&common.out, &common.config) {
                (Some(o), _) => o.clone(),
                (None, Some(_)) => load_config(&common)?.output_dir,
                (None, None) => {
                    return Err(Error::Config {
                        field: "--out".into(),
                        msg: "give the run directory or its config".into(),
                    })
                }
            };
            let (outcome, _) = cmd_report(&root)?;
            print!("{}", summary_text(None, &outcome));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
