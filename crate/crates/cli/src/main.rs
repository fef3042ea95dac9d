use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use poi_xaudit::{commands, CliError, RunConfig};

/// Explainable next-POI recommender with perturbation audits.
#[derive(Parser)]
#[command(name = "poi-xaudit", version)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Check-in file (tab-separated, optionally gzipped).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Directory holding every artifact of a run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epochs=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse check-ins and build the trajectory dataset.
    Ingest,
    /// Train the recommender.
    Train,
    /// Train the user-behavior compressor.
    Compress,
    /// Explain one user's recommendation.
    Explain {
        #[arg(long)]
        user: u32,
        #[arg(long)]
        k_steps: Option<usize>,
        #[arg(long)]
        k_users: Option<usize>,
    },
    /// Run experiment 1, 2, 3 or 4.
    Audit {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=4))]
        exp: u8,
    },
    /// Build the clone dataset used by experiment 4.
    SynthClone,
    /// Collect experiment reports into report.md.
    Report,
    /// Generate a synthetic check-in file.
    SynthData,
    /// Ingest, train, compress, audit and report in one go.
    Run,
}

fn config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut c = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("expected KEY=VALUE, got {kv:?}")))?;
        c.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    if let Some(data) = &cli.data {
        c.data = Some(data.clone());
    }
    if let Some(out) = &cli.out {
        c.out = out.clone();
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = config(&cli)?;
    match cli.command {
        Command::Ingest => {
            let s = commands::ingest(&c)?;
            println!("{} users, {} POIs, {} visits ({} malformed lines)", s.users, s.pois, s.visits, s.malformed);
        }
        Command::Train => {
            let r = commands::train(&c)?;
            println!("held-out top-1 {:.4} (chance {:.4})", r.held_out_top1, r.chance);
        }
        Command::Compress => {
            let r = commands::compress(&c)?;
            println!("self-classification accuracy {:.4} (chance {:.4})", r.accuracy, r.chance);
        }
        Command::Explain { user, k_steps, k_users } => {
            let e = commands::explain_user(
                &c,
                user,
                k_steps.unwrap_or(c.params.k_steps),
                k_users.unwrap_or(c.params.k_users),
            )?;
            println!("{}", serde_json::to_string_pretty(&e).map_err(poi_xaudit_core::Error::from)?);
        }
        Command::Audit { exp } => {
            let path = commands::audit(&c, exp)?;
            println!("wrote {}", path.display());
        }
        Command::SynthClone => {
            let m = commands::synth_clone(&c)?;
            println!("wrote {} clones", m.clones.len());
        }
        Command::Report => {
            let path = commands::report(&c)?;
            println!("wrote {}", path.display());
        }
        Command::SynthData => {
            let path = commands::synth_data(&c)?;
            println!("wrote {}", path.display());
        }
        Command::Run => {
            for line in commands::pipeline(&c)? {
                println!("{line}");
            }
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
            ExitCode::from(e.exit_code())
        }
    }
}
