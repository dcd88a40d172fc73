use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ddm_qkd::config::{Experiment, ExperimentConfig};
use ddm_qkd::experiments::{self, Table};
use ddm_qkd::Error;

#[derive(Parser)]
#[command(name = "ddm-qkd", version, about = "Multi-protocol QKD transmitter and receiver simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output CSV path; standard output when omitted
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Independent trials per point (overrides the configuration)
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Rates, QBER and visibility against mean photon number
    MuSweep,
    /// Phase QBER of chirped and push-pull encodings under eye spreading
    ChirpStudy,
    /// Interference visibility against modulator clock frequency
    FreqSweep,
    /// Long run with bias and wavelength drift
    Stability,
    /// Arrival-time QBER against extinction ratio
    Extinction,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::MuSweep => Experiment::MuSweep,
            Command::ChirpStudy => Experiment::ChirpStudy,
            Command::FreqSweep => Experiment::FreqSweep,
            Command::Stability => Experiment::Stability,
            Command::Extinction => Experiment::Extinction,
        }
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = Some(cli.command.into());
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    cfg.validate()?;
    let table: Table = match cli.command {
        Command::MuSweep => experiments::mu_table(&experiments::run_mu_sweep(&cfg)?),
        Command::ChirpStudy => experiments::chirp_table(&experiments::run_chirp_study(&cfg)?),
        Command::FreqSweep => experiments::freq_table(&experiments::run_freq_sweep(&cfg)?),
        Command::Stability => experiments::stability_table(&experiments::run_stability_trials(&cfg)?),
        Command::Extinction => experiments::extinction_table(&experiments::run_extinction(&cfg)?),
    };
    let hash = cfg.hash();
    match &cli.out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            table.write_csv(&hash, &mut w)?;
            w.flush()?;
        }
        None => table.write_csv(&hash, io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed downstream pipe (e.g. `| head`) is not an error.
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {}", e.kind(), msg);
            ExitCode::FAILURE
        }
    }
}
