//! `bnstress`: validate networks, train bundles, simulate, stress-test and
//! render reports.
//!
//! Exit codes: 0 success, 1 domain error (bad network, data, scenario or
//! bundle), 2 I/O or usage error.

mod bundle;
mod commands;
mod error;
mod report;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::report::Format;

#[derive(Parser)]
#[command(name = "bnstress", version, about = "Bayesian-network stress testing for classifier hierarchies")]
struct Cli {
    /// Worker threads for simulation; defaults to one per core. Results do
    /// not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a network file and list every broken rule.
    Validate {
        #[arg(long)]
        network: PathBuf,
    },
    /// Fit feature distributions and train every model bottom-up.
    Train {
        #[arg(long)]
        network: PathBuf,
        /// Labelled table, or a raw BankSim transaction file.
        #[arg(long)]
        data: PathBuf,
        /// Bundle directory to create.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Training config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replicated ancestral sampling of the output distribution.
    Simulate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = commands::DEFAULT_REPS)]
        reps: usize,
        #[arg(long, default_value_t = commands::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = bnstress_core::simulate::DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the bundle's network against a scenario.
    Stress {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Labelled evaluation table; defaults to the bundle's held-out rows.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Must agree with the scenario's seed when it has one.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
        /// Laplace pseudo-count per histogram bin before the KL.
        #[arg(long)]
        kl_smoothing: Option<f64>,
    },
    /// Render a simulation or stress report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Validate { network } => commands::validate(&network),
        Command::Train { network, data, out, seed, config } => commands::train(&network, &data, &out, seed, config.as_deref()),
        Command::Simulate { bundle, reps, samples, bins, seed, out } => commands::simulate(&bundle, reps, samples, bins, seed, &out),
        Command::Stress { bundle, scenario, eval, out, seed, reps, samples, bins, kl_smoothing } => commands::stress(commands::StressArgs {
            bundle: &bundle,
            scenario: &scenario,
            eval: eval.as_deref(),
            out: &out,
            seed,
            reps,
            samples,
            bins,
            kl_smoothing,
        }),
        Command::Report { input, format } => commands::report(&input, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
