use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use specens_harness::{ExperimentConfig, HarnessError, Pipeline, Stage, StageStatus};

#[derive(Parser)]
#[command(name = "specens", version, about = "Specialist-ensemble adversarial detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Overrides the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppresses progress messages.
    #[arg(short, long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the naive model, the substitute and the pure ensemble.
    Train(Common),
    /// FGS fooling matrix of the naive model.
    FoolingMatrix(Common),
    /// Expertise domains from the fooling matrix.
    DeriveDomains(Common),
    /// Train the specialist ensemble.
    BuildEnsemble(Common),
    /// Black-box adversaries from the substitute.
    Attack(Common),
    /// Risk curves, thresholds and the detection table.
    Sweep(Common),
    /// White-box success rates.
    Evaluate(Common),
    /// Run stages in order, skipping those already up to date.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of stages.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
        /// Re-run stages even when their outputs are current.
        #[arg(long)]
        force: bool,
    },
}

fn pipeline(common: &Common) -> Result<Pipeline, HarnessError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(o) = &common.output {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(Pipeline::new(cfg)?.verbose(!common.quiet))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (common, stages, force) = match &cli.command {
        Command::Train(c) => (c, vec![Stage::Train], true),
        Command::FoolingMatrix(c) => (c, vec![Stage::FoolingMatrix], true),
        Command::DeriveDomains(c) => (c, vec![Stage::DeriveDomains], true),
        Command::BuildEnsemble(c) => (c, vec![Stage::BuildEnsemble], true),
        Command::Attack(c) => (c, vec![Stage::Attack], true),
        Command::Sweep(c) => (c, vec![Stage::Sweep], true),
        Command::Evaluate(c) => (c, vec![Stage::Evaluate], true),
        Command::Pipeline { common, stages, force } => {
            let stages = match stages {
                None => Stage::ALL.to_vec(),
                Some(names) => names
                    .iter()
                    .map(|n| Stage::parse(n).ok_or_else(|| HarnessError::Config(format!("unknown stage {n:?}"))))
                    .collect::<Result<_, _>>()?,
            };
            (common, stages, *force)
        }
    };
    let p = pipeline(common)?;
    for (stage, status) in p.run(&stages, force)? {
        if !common.quiet {
            let what = match status {
                StageStatus::Ran => "done",
                StageStatus::Skipped => "skipped (up to date)",
            };
            eprintln!("{}: {what}", stage.name());
        }
    }
    if !common.quiet {
        eprintln!("artifacts in {}", p.output_dir().display());
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
