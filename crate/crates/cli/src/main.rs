use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netdyn::pipeline::{emit_report, run_bifurcation, run_pipeline, PipelineConfig, Stage};
use netdyn::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "netdyn",
    version,
    about = "Discover governing equations of networked dynamical systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse artifacts already present in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the topology and trajectories.
    Simulate(RunArgs),
    /// Select the interval and build derivative targets.
    Preprocess(RunArgs),
    /// Train the decoupler networks (first round).
    Train(RunArgs),
    /// Regress closed-form expressions (first round).
    Regress(RunArgs),
    /// Evaluate the discovered model (first round).
    Evaluate(RunArgs),
    /// Poincaré-section bifurcation scan.
    Bifurcate(RunArgs),
    /// Every stage with the termination rounds.
    Pipeline(RunArgs),
    /// Summarise a run directory.
    Report {
        /// Run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config whose output directory is reported.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(args: &RunArgs) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run_stage(args: &RunArgs, stop: Stage) -> Result<String, Error> {
    let cfg = load(args)?;
    let summary = run_pipeline(&cfg, args.resume, stop)?;
    Ok(serde_json::to_string_pretty(&summary)?)
}

fn run(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Command::Simulate(a) => run_stage(&a, Stage::Simulate),
        Command::Preprocess(a) => run_stage(&a, Stage::Preprocess),
        Command::Train(a) => run_stage(&a, Stage::Train),
        Command::Regress(a) => run_stage(&a, Stage::Regress),
        Command::Evaluate(a) => run_stage(&a, Stage::Evaluate),
        Command::Pipeline(a) => run_stage(&a, Stage::Full),
        Command::Bifurcate(a) => {
            let cfg = load(&a)?;
            let counts = run_bifurcation(&cfg, a.resume)?;
            Ok(serde_json::to_string_pretty(&counts)?)
        }
        Command::Report { out, config } => {
            let dir = match (out, config) {
                (Some(o), _) => o,
                (None, Some(c)) => PipelineConfig::load(c)?.out_dir,
                (None, None) => return Err(Error::Config("report needs --out or --config".into())),
            };
            Ok(emit_report(dir)?.to_markdown())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::from(EXIT_STAGE),
            }
        }
    }
}
