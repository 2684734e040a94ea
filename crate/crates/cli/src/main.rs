use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hashattack::config::ExperimentConfig;
use hashattack::experiment::{run_experiment, Baseline, Experiment, Stage};

/// Targeted attacks on a toy deep-hashing retrieval system.
#[derive(Parser)]
#[command(name = "hashattack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file; omitted keys keep their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    P2p,
    Dhta,
    Noise,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train, query and database splits.
    GenData(Common),
    /// Train the target hashing model and encode the training set.
    TrainHash(Common),
    /// Encode the database with the target model.
    EncodeDb(Common),
    /// Train PrototypeNet, generator and discriminator.
    TrainAttack(Common),
    /// Generate adversarial queries with the trained generator.
    Attack(Common),
    /// Run one comparison attack.
    Baseline {
        #[arg(value_enum)]
        method: BaselineArg,
        #[command(flatten)]
        common: Common,
    },
    /// Write report.json and the curve CSVs.
    Eval(Common),
    /// Evaluate stored attacks on a second model.
    TransferEval {
        #[command(flatten)]
        common: Common,
        /// Model the attacks were crafted against [default: <out>/hash_model.ckpt].
        #[arg(long, value_name = "PATH")]
        attacked: Option<PathBuf>,
        /// Model to evaluate on [default: train <out>/transfer_model.ckpt].
        #[arg(long, value_name = "PATH")]
        evaluated: Option<PathBuf>,
    },
    /// Every stage in order.
    Run(Common),
}

fn experiment(common: &Common) -> Result<Experiment, String> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    Ok(Experiment::new(cfg, out))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (common, stage) = match &cli.command {
        Command::GenData(c) => (c, Some(Stage::GenData)),
        Command::TrainHash(c) => (c, Some(Stage::TrainHash)),
        Command::EncodeDb(c) => (c, Some(Stage::EncodeDb)),
        Command::TrainAttack(c) => (c, Some(Stage::TrainAttack)),
        Command::Attack(c) => (c, Some(Stage::Attack)),
        Command::Baseline { method, common } => {
            let b = match method {
                BaselineArg::P2p => Baseline::P2p,
                BaselineArg::Dhta => Baseline::Dhta,
                BaselineArg::Noise => Baseline::Noise,
            };
            (common, Some(Stage::Baseline(b)))
        }
        Command::Eval(c) => (c, Some(Stage::Eval)),
        Command::TransferEval { common, .. } => (common, None),
        Command::Run(c) => (c, None),
    };
    let exp = match experiment(common) {
        Ok(exp) => exp,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let outcome = match (&cli.command, stage) {
        (_, Some(stage)) => exp.run_stage(stage),
        (Command::TransferEval { attacked, evaluated, .. }, None) => {
            let attacked = attacked.clone().unwrap_or_else(|| exp.path(hashattack::experiment::HASH_MODEL));
            exp.run_transfer(&attacked, evaluated.as_deref())
        }
        _ => run_experiment(&exp),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
