use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fedx::harness::{oracle_at_init, parse_config, run, summary_line, sweep, RunConfig, SweepAxis};
use fedx::parallel::Executor;
use fedx::trace::fmt_real;
use fedx::Error;

mod selftest;

#[derive(Parser)]
#[command(name = "fedx", version, about = "Federated compositional pairwise risk optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    K,
    N,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides both the data and the algorithm seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Trace CSV path (overrides `output_path`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configuration once per value of K or N.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, ignore_case = true)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print the exact objective and gradient at the initial model.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

fn load(path: &PathBuf) -> Result<RunConfig, Error> {
    parse_config(&std::fs::read_to_string(path)?)
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Config { .. } | Error::Parse { .. } => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn execute(cmd: Command) -> Result<(), Error> {
    let ex = Executor::from_env()?;
    match cmd {
        Command::Run { config, seed, out } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.data.seed = s;
                cfg.hyper.seed = s;
            }
            if let Some(out) = out {
                cfg.output_path = Some(out.to_string_lossy().into_owned());
            }
            let trace = run(&cfg, &ex)?;
            println!("{}", summary_line(&trace));
        }
        Command::Sweep {
            config,
            axis,
            values,
            out_dir,
        } => {
            let cfg = load(&config)?;
            let axis = match axis {
                Axis::K => SweepAxis::K,
                Axis::N => SweepAxis::N,
            };
            let rows = sweep(&cfg, axis, &values, &out_dir, &ex)?;
            println!("{} runs, summary in {}", rows.len(), out_dir.join("summary.csv").display());
        }
        Command::Oracle { config } => {
            let cfg = load(&config)?;
            let rep = oracle_at_init(&cfg, &ex)?;
            println!("objective {}", fmt_real(rep.objective));
            let norm_sq: f64 = rep.grad.iter().map(|g| g * g).sum();
            println!("grad_norm_sq {}", fmt_real(norm_sq));
            for (j, g) in rep.grad.iter().enumerate() {
                println!("grad[{j}] {}", fmt_real(*g));
            }
        }
        Command::Selftest => unreachable!("handled in main"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Selftest = cli.command {
        return if selftest::run_all() { ExitCode::SUCCESS } else { ExitCode::from(4) };
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
