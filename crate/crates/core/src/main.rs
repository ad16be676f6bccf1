use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hybridcast::error::{Error, Result};
use hybridcast::experiments::{preset, run_scenario, write_csv, write_json, Design, ScenarioConfig, PRESETS};
use hybridcast::rf::RfChannelMode;

#[derive(Parser, Debug)]
#[command(name = "hybridcast", version, about = "Max-min fair hybrid precoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte-Carlo scenario and write its result table
    Run(RunArgs),
    /// List the built-in scenarios
    Presets,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Built-in scenario name (see `presets`)
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,

    /// JSON scenario file
    #[arg(long)]
    config: Option<PathBuf>,

    /// Monte-Carlo trials per SNR point
    #[arg(long)]
    trials: Option<usize>,

    /// Base seed; trial i uses seed + i
    #[arg(long)]
    seed: Option<u64>,

    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Comma-separated subset of hybrid,digital
    #[arg(long, value_delimiter = ',')]
    designs: Option<Vec<String>>,

    #[arg(long, value_enum)]
    rf_channel: Option<RfChannel>,

    /// Comma-separated SNR points in dB, replacing the scenario grid
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,

    /// Add the relaxation-bound columns to CSV output
    #[arg(long)]
    with_bound: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RfChannel {
    Full,
    Dominant,
}

fn scenario(args: &RunArgs) -> Result<ScenarioConfig> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), _) => preset(name)?,
        (None, Some(path)) => serde_json::from_reader(io::BufReader::new(File::open(path)?))?,
        (None, None) => return Err(Error::Config("either --preset or --config is required".into())),
    };
    if let Some(trials) = args.trials {
        cfg.num_trials = trials;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(designs) = &args.designs {
        cfg.designs = designs.iter().map(|d| d.parse()).collect::<Result<Vec<Design>>>()?;
    }
    if let Some(mode) = args.rf_channel {
        cfg.rf_channel_mode = match mode {
            RfChannel::Full => RfChannelMode::Full,
            RfChannel::Dominant => RfChannelMode::DominantPath,
        };
    }
    if let Some(snr) = &args.snr {
        cfg.snr_grid_db = snr.clone();
    }
    Ok(cfg)
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = scenario(args)?;
    let result = run_scenario(&cfg)?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    match args.format {
        Format::Csv => write_csv(&result, args.with_bound, &mut out)?,
        Format::Json => write_json(&result, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Presets => {
            for (name, description) in PRESETS {
                println!("{name}\t{description}");
            }
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
