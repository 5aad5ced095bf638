use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use riskclimb::gp::GripGrid;
use riskclimb_cli::run::{self, Exit};

#[derive(Parser)]
#[command(
    name = "riskclimb",
    version,
    about = "Risk-bounded climbing plans between two walls"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one scenario at its configured risk bound.
    Plan { config: PathBuf },
    /// Plan one scenario at several risk bounds.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
    },
    /// Write a synthetic pull-test dataset.
    GenDataset {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Pull tests per grid point.
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alpha_deg: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        beta_deg: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        gamma_deg: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
    },
    /// Monte-Carlo certification of a saved plan.
    Certify {
        plan: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                Exit::InputError as u8
            } else {
                0
            });
        }
    };
    let result = match cli.command {
        Command::Plan { config } => run::run_plan(&config),
        Command::Sweep { config, deltas } => run::run_sweep(&config, deltas),
        Command::GenDataset {
            seed,
            out,
            reps,
            alpha_deg,
            beta_deg,
            gamma_deg,
            lambda,
        } => {
            let d = GripGrid::default();
            let grid = GripGrid {
                alpha_deg: alpha_deg.unwrap_or(d.alpha_deg),
                beta_deg: beta_deg.unwrap_or(d.beta_deg),
                gamma_deg: gamma_deg.unwrap_or(d.gamma_deg),
                lambda: lambda.unwrap_or(d.lambda),
            };
            run::gen_dataset(seed, reps, &grid, &out)
        }
        Command::Certify {
            plan,
            samples,
            seed,
            out,
        } => run::run_certify(&plan, samples, seed, out),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Exit::InputError as u8)
        }
    }
}
