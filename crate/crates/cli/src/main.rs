//! `supercd`: generate the synthetic world, train the retriever and concept
//! extractor, run selection experiments and host annotation sessions.

mod commands;
mod config;
mod error;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use supercd::fsner::Strategy;
use supercd::session::AnnotatorKind;

use commands::{ExperimentOverrides, Experiment};
use config::Config;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "supercd", version, about)]
struct Cli {
    /// TOML config; unspecified keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory holding every artifact.
    #[arg(long, global = true, default_value = "data")]
    data: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Annotator {
    Oracle,
    Human,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the concept ontology.
    GenOntology,
    /// Sample the corpus and record concept frequencies in the ontology.
    GenCorpus,
    /// Build contrastive training pairs for the retriever.
    BuildSirData,
    /// Train the dense retriever on the built pairs.
    TrainSir,
    /// Train the learned concept extractor on the corpus.
    TrainCe,
    /// Run the selection benchmark, or open human annotation sessions.
    RunExperiment {
        #[arg(long, value_enum)]
        annotator: Option<Annotator>,
        /// Annotated sentences per type.
        #[arg(long)]
        budget: Option<usize>,
        /// Illustrative instances per type.
        #[arg(long)]
        shots: Option<usize>,
        /// Number of benchmark seeds.
        #[arg(long)]
        seeds: Option<usize>,
        /// Comma-separated: vanilla, random, supercd, kmeans, entropy.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Print the summary of a saved benchmark report.
    Report {
        /// Report JSON; defaults to the one in the data directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Serve the annotation API over the data directory's sessions.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = Config::load_or_default(cli.config.as_deref())?;
    let data = cli.data.as_path();
    match cli.command {
        Command::GenOntology => commands::gen_ontology_cmd(&cfg, data),
        Command::GenCorpus => commands::gen_corpus_cmd(&cfg, data),
        Command::BuildSirData => commands::build_sir_data_cmd(&cfg, data),
        Command::TrainSir => commands::train_sir_cmd(&cfg, data),
        Command::TrainCe => commands::train_ce_cmd(&cfg, data),
        Command::RunExperiment { annotator, budget, shots, seeds, strategies } => {
            let strategies = strategies
                .map(|names| names.iter().map(|n| n.trim().parse::<Strategy>()).collect::<Result<Vec<_>, _>>())
                .transpose()?;
            let overrides = ExperimentOverrides {
                annotator: annotator.map(|a| match a {
                    Annotator::Oracle => AnnotatorKind::Oracle,
                    Annotator::Human => AnnotatorKind::Human,
                }),
                budget,
                shots,
                seeds,
                strategies,
            };
            match commands::run_experiment_cmd(&cfg, data, &overrides)? {
                Experiment::Benchmark(report) => print!("{}", commands::render_report(&report)),
                Experiment::Sessions(replies) => {
                    for r in replies {
                        println!("{}\t{}\t{} pending", r.session_id, r.status, r.pending.len());
                    }
                }
            }
            Ok(())
        }
        Command::Report { input } => {
            let path = input.unwrap_or_else(|| commands::default_report_path(data));
            print!("{}", commands::report_cmd(&path)?);
            Ok(())
        }
        Command::Serve { port, host } => commands::serve_cmd(data, host, port),
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
