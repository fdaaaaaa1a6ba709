//! Command-line front end for the pipeline.
//!
//! Every stage command runs the pipeline from the beginning through that
//! stage; stages whose recorded inputs and outputs are untouched are
//! skipped, so repeating a command is cheap.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phenovlp::pipeline::{
    run_ablations, run_pipeline_until, write_demo_workspace, AblationAxes, CliOverrides,
    RunConfig, STAGE_NAMES,
};

#[derive(Parser)]
#[command(name = "phenovlp", version, about = "Phenotype knowledge-graph guided vision-language pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PipelineArgs {
    /// Run configuration (TOML); relative paths inside it resolve against
    /// its directory
    #[arg(long)]
    config: PathBuf,
    /// Directory for artifacts and the stage manifest
    #[arg(long)]
    out: PathBuf,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Force the deterministic built-in model stand-ins
    #[arg(long)]
    mock_models: bool,
    /// Keep compound figures whole instead of splitting them
    #[arg(long)]
    no_split: bool,
    /// Drop subfigures whose refined captions lose every parent keyword
    #[arg(long)]
    strict_keywords: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a self-contained demo workspace (toy ontology, rendered
    /// corpus, config) and print how to run it
    Demo {
        /// Directory to create
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse the ontology into the knowledge graph
    BuildKg(PipelineArgs),
    /// Curate image-caption pairs from the figure corpus
    Curate(PipelineArgs),
    /// Split curated pairs into training and benchmark sets
    SplitBench(PipelineArgs),
    /// Train the knowledge encoder on graph attributes
    TrainKnowledge(PipelineArgs),
    /// Train the knowledge-distilled dual encoder
    TrainVlp(PipelineArgs),
    /// Evaluate the trained model on the benchmark split
    Evaluate(PipelineArgs),
    /// Run every stage end to end
    Run(PipelineArgs),
    /// Retrain with ingredients removed and tabulate every variant
    Ablate {
        #[command(flatten)]
        args: PipelineArgs,
        /// Comma-separated axes to vary: init, kd, curation, kg, or all
        #[arg(long, default_value = "kd")]
        axes: String,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> phenovlp::Result<()> {
    match cli.command {
        Command::Demo { out } => {
            let cfg_path = write_demo_workspace(&out)?;
            println!("demo workspace at {}", out.display());
            println!(
                "try: phenovlp run --config {} --out {}",
                cfg_path.display(),
                out.join("run").display()
            );
            Ok(())
        }
        Command::BuildKg(a) => run_stages(&a, "build-kg"),
        Command::Curate(a) => run_stages(&a, "curate"),
        Command::SplitBench(a) => run_stages(&a, "split-bench"),
        Command::TrainKnowledge(a) => run_stages(&a, "train-knowledge"),
        Command::TrainVlp(a) => run_stages(&a, "train-vlp"),
        Command::Evaluate(a) => run_stages(&a, "evaluate"),
        Command::Run(a) => run_stages(&a, STAGE_NAMES[STAGE_NAMES.len() - 1]),
        Command::Ablate { args, axes } => {
            let cfg = load_config(&args)?;
            let axes = AblationAxes::parse(&axes)?;
            let runs = run_ablations(&cfg, &args.out, &axes)?;
            for run in &runs {
                println!("variant {}: evaluated", run.name);
            }
            println!("table: {}", args.out.join("ablations/summary.csv").display());
            Ok(())
        }
    }
}

fn load_config(a: &PipelineArgs) -> phenovlp::Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    cfg.apply(&CliOverrides {
        seed: a.seed,
        mock_models: a.mock_models,
        no_split: a.no_split,
        strict_keywords: a.strict_keywords,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run_stages(a: &PipelineArgs, last: &str) -> phenovlp::Result<()> {
    let cfg = load_config(a)?;
    let outcome = run_pipeline_until(&cfg, &a.out, last)?;
    for (name, status) in &outcome.statuses {
        println!("stage {name}: {status}");
    }
    Ok(())
}
