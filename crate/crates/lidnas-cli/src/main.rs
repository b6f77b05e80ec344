//! Command-line front end: configuration loading with preset and flag
//! overrides, then dispatch into the library runner. Progress goes to
//! standard error; machine-readable results go to standard output.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lidnas::config::{parse_config, Preset, RunConfig};
use lidnas::runner;

#[derive(Parser)]
#[command(
    name = "lidnas",
    version,
    about = "Compactness-aware architecture search with assisted tabu search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full search and write artifacts into the run directory.
    Search(CommonArgs),
    /// Print the training-free score of a genome file.
    Score {
        /// Genome file in the canonical JSON format.
        genome: PathBuf,
        #[command(flatten)]
        args: CommonArgs,
    },
    /// Train a genome file on the synthetic task and print its grade.
    Eval {
        /// Genome file in the canonical JSON format.
        genome: PathBuf,
        #[command(flatten)]
        args: CommonArgs,
    },
    /// Train and grade every genome of a toy-scale space (oracle data).
    Enumerate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = available parallelism), overriding the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Shorthand for --preset toy: the enumerable 243-genome space.
    #[arg(long)]
    toy: bool,
    /// Named preset applied over the config: lidnas-n, lidnas-k, lidnas-s,
    /// or toy.
    #[arg(long)]
    preset: Option<String>,
}

impl CommonArgs {
    fn resolve(&self) -> lidnas::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        if let Some(name) = &self.preset {
            Preset::from_name(name)?.apply(&mut config);
        }
        if self.toy {
            Preset::Toy.apply(&mut config);
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_dir = Some(out.clone());
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        config.check()?;
        Ok(config)
    }
}

fn run(cli: Cli) -> lidnas::Result<String> {
    match cli.command {
        Command::Search(args) => {
            let config = args.resolve()?;
            let summary = runner::cmd_search(&config)?;
            Ok(serde_json::to_string_pretty(&summary).expect("summary serializes"))
        }
        Command::Score { genome, args } => {
            let config = args.resolve()?;
            let report = runner::cmd_score(&genome, &config)?;
            Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
        }
        Command::Eval { genome, args } => {
            let config = args.resolve()?;
            let report = runner::cmd_eval(&genome, &config)?;
            Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
        }
        Command::Enumerate(args) => {
            let config = args.resolve()?;
            let rows = runner::cmd_enumerate(&config)?;
            let best = rows
                .iter()
                .max_by(|a, b| a.grade.total_cmp(&b.grade))
                .expect("non-empty space");
            let summary = serde_json::json!({
                "genomes": rows.len(),
                "best_hash": best.hash,
                "best_grade": best.grade,
                "written": config.output_dir.as_ref().map(|d| d.join("enumeration.csv")),
            });
            Ok(serde_json::to_string_pretty(&summary).expect("summary serializes"))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(output) => {
            println!("{output}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let record = serde_json::json!({
                "error": error_kind(&err),
                "message": err.to_string(),
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn error_kind(err: &lidnas::Error) -> &'static str {
    use lidnas::Error::*;
    match err {
        InvalidConfig(_) => "invalid_config",
        InvalidGenome(_) => "invalid_genome",
        Shape(_) => "shape",
        Numeric { .. } => "numeric",
        Mutation(_) => "mutation",
        Unsatisfiable(_) => "unsatisfiable",
        Training { .. } => "training",
        Parse(_) => "parse",
        Io(_) => "io",
    }
}
