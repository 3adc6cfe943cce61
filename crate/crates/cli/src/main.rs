use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gradecast::pipeline::{self, Overrides, PipelineConfig, Protocol};
use gradecast::{par, Error};

/// Damage-grade classification pipeline.
#[derive(Debug, Parser)]
#[command(name = "gradecast", version)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    protocol: Option<ProtocolArg>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    LeakageSafe,
    Paper,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Numeric summaries, frequency tables and the correlation matrix.
    Describe,
    /// Fit the model roster and write artifacts plus a manifest.
    Train,
    /// Score artifacts on the held-out rows and write per-class tables.
    Evaluate {
        /// Artifact files; defaults to every artifact in the manifest.
        artifacts: Vec<PathBuf>,
    },
    /// Cross-validated hyperparameter search.
    Tune,
    /// Predict grades for a CSV with a saved artifact.
    Predict {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to `<out>/predictions.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare the last evaluation against the reference tables.
    Report,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut config = PipelineConfig::load(path)?;
    config.apply(&Overrides {
        seed: cli.seed,
        output_dir: cli.out.clone(),
        protocol: cli.protocol.map(|p| match p {
            ProtocolArg::LeakageSafe => Protocol::LeakageSafe,
            ProtocolArg::Paper => Protocol::PaperProtocol,
        }),
    });
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        par::set_threads(n).map_err(Error::Config)?;
    }
    match &cli.command {
        Command::Describe => {
            for p in pipeline::cmd_describe(&load_config(cli)?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train => {
            let config = load_config(cli)?;
            let out = pipeline::cmd_train(&config)?;
            for a in &out.manifest.artifacts {
                println!("{} -> {}", a.name, config.output_dir.join(&a.file).display());
            }
        }
        Command::Evaluate { artifacts } => {
            let r = pipeline::cmd_evaluate(&load_config(cli)?, artifacts)?;
            print!("{}", r.text);
        }
        Command::Tune => {
            let r = pipeline::cmd_tune(&load_config(cli)?)?;
            let best = r.best_candidate();
            println!(
                "best {} mean loss {}",
                params_text(&best.params),
                best.mean_loss.map_or("n/a".to_string(), |l| l.to_string())
            );
        }
        Command::Predict { artifact, input, output } => {
            let output = match output {
                Some(o) => o.clone(),
                None => cli.out.clone().unwrap_or_else(|| PathBuf::from("out")).join("predictions.csv"),
            };
            let n = pipeline::cmd_predict(artifact, input, &output)?;
            println!("{n} predictions -> {}", output.display());
        }
        Command::Report => {
            print!("{}", pipeline::cmd_report(&load_config(cli)?)?);
        }
    }
    Ok(())
}

fn params_text(params: &gradecast::tune::CandidateParams) -> String {
    params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
