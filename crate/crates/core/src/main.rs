use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ocp_fbde::cli::{cmd_bench, cmd_grad_check, cmd_mpc, cmd_solve, CliError, CommandOutcome, RunOptions, Scenario};

#[derive(Parser)]
#[command(name = "ocp-fbde", version, about = "Constrained optimal control and MPC with exact costate derivatives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the analytic gradient and Hessian with finite differences.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        samples: usize,
    },
    /// Solve one full-horizon constrained problem.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Run the receding-horizon loop.
    Mpc {
        #[command(flatten)]
        common: Common,
        /// Repeat the run and report the mean total solve time.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        /// Write per-step solve times into the trajectory CSV.
        #[arg(long)]
        inline_timings: bool,
    },
    /// Time derivatives, solves and MPC runs at several horizons.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        repeat: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Hessian rows run on this many threads when above 1.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
}

type Runner = fn(&Scenario, &RunOptions) -> Result<CommandOutcome, CliError>;

fn main() -> ExitCode {
    // Usage errors are invalid input; clap's own code 2 means "not converged" here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let (common, runner, opts): (Common, Runner, RunOptions) = match cli.command {
        Command::GradCheck { common, samples } => (common, cmd_grad_check, RunOptions { samples, ..Default::default() }),
        Command::Solve { common } => (common, cmd_solve, RunOptions::default()),
        Command::Mpc {
            common,
            repeat,
            inline_timings,
        } => (
            common,
            cmd_mpc,
            RunOptions {
                repeat,
                inline_timings,
                ..Default::default()
            },
        ),
        Command::Bench { common, repeat } => (common, cmd_bench, RunOptions { repeat, ..Default::default() }),
    };
    let opts = RunOptions {
        out: common.out,
        seed: common.seed,
        threads: common.threads as usize,
        ..opts
    };
    let scenario = match Scenario::load(&common.scenario) {
        Ok(s) => s,
        Err(e) => return fail(&e.into()),
    };
    let result = if opts.threads > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(opts.threads).build() {
            Ok(pool) => pool.install(|| runner(&scenario, &opts)),
            Err(e) => {
                eprintln!("error: cannot start thread pool: {e}");
                return ExitCode::from(1);
            }
        }
    } else {
        runner(&scenario, &opts)
    };
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.status.code() as u8)
        }
        Err(e) => fail(&e),
    }
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("error: {err}");
    let mut source = std::error::Error::source(err);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
    ExitCode::from(err.status().code() as u8)
}
