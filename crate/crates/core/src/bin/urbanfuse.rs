use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use urbanfuse::pipeline::{self, PipelineConfig, Run};
use urbanfuse::Error;

/// Multimodal citizen-report classification pipeline.
#[derive(Parser, Debug)]
#[command(name = "urbanfuse", version, about)]
struct Cli {
    /// TOML pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; overrides the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted per-modality signal.
    Synth {
        #[arg(long)]
        num_reports: Option<usize>,
    },
    /// Split the reports and write every enabled feature block.
    Featurize,
    /// Build the multimodal report graph.
    Graph,
    /// Learn node2vec embeddings and write the graph feature block.
    Embed,
    /// Train the configured fusion classifier.
    Train,
    /// Train and score every fusion combination of the search blocks.
    FuseSearch {
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Score the trained model on the test split.
    Evaluate,
    /// Route test reports by classifier confidence.
    Route {
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Print the effective config as TOML.
    ShowConfig,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::MissingStage { .. } => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<String, Error> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if cli.out_dir.is_some() {
        config.out_dir = cli.out_dir.clone();
    }
    match &cli.command {
        Command::Synth { num_reports: Some(n) } => config.synth.num_reports = *n,
        Command::FuseSearch { budget: Some(b) } => config.fusion.search_budget = *b,
        Command::Route { threshold: Some(t) } => config.route.threshold = Some(*t),
        _ => {}
    }
    if let Command::ShowConfig = cli.command {
        return config.to_toml();
    }
    let run = Run::new(config)?;
    match cli.command {
        Command::Synth { .. } => pipeline::stage_synth(&run),
        Command::Featurize => pipeline::stage_featurize(&run),
        Command::Graph => pipeline::stage_graph(&run),
        Command::Embed => pipeline::stage_embed(&run),
        Command::Train => pipeline::stage_train(&run),
        Command::FuseSearch { .. } => pipeline::stage_fuse_search(&run),
        Command::Evaluate => pipeline::stage_evaluate(&run),
        Command::Route { .. } => pipeline::stage_route(&run),
        Command::ShowConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
