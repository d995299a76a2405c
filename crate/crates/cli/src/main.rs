//! Experiment driver for the continual-learning toolkit.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rehearsal_core::harness::{
    buffer_sim, cmd_run, cmd_sweep, crs_victim_sim, run_gradcheck, RunConfig,
};
use rehearsal_core::{Error, StoragePolicy};

#[derive(Parser)]
#[command(name = "rehearsal", version, about = "Task-free online continual learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a (strategy x seed) grid from a JSON config.
    Run {
        /// Flat JSON config file.
        #[arg(long)]
        config: PathBuf,
        /// Cap on concurrently running cells.
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override the config's seed list (comma-separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Finite-difference validation of both analytic gradient paths.
    Gradcheck {
        /// Relative-error tolerance for backpropagation (the alignment
        /// gradient is checked 10x tighter).
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Monte-Carlo retention / admission statistics for a buffer policy.
    BufferSim {
        #[arg(long, default_value_t = 50_000)]
        trials: usize,
        #[arg(long, default_value_t = 10_000)]
        stream_len: usize,
        #[arg(long, default_value_t = 100)]
        mem_sz: usize,
        #[arg(long, value_enum, default_value_t = PolicyArg::Reservoir)]
        policy: PolicyArg,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Repeat a grid across several total memory sizes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Total memory sizes, comma-separated.
        #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 500, 250, 100])]
        mem_sizes: Vec<usize>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Reservoir,
    CrsS1,
    CrsS2,
}

impl From<PolicyArg> for StoragePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Reservoir => StoragePolicy::Reservoir,
            PolicyArg::CrsS1 => StoragePolicy::CrsS1,
            PolicyArg::CrsS2 => StoragePolicy::CrsS2,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::InvalidConfig(_) | Error::InvalidInput(_) => ExitCode::from(2),
                Error::DataFormat(_) | Error::Io(_) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run {
            config,
            jobs,
            output_dir,
            seeds,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            cfg.validate()?;
            let results = cmd_run(&cfg, jobs)?;
            println!("lambda = {}", results.lambda);
            for s in &results.aggregates {
                println!(
                    "{} {} mem {}: acc {:.1} ± {:.1}, forgetting {:.1} ± {:.1} ({} seeds)",
                    s.dataset,
                    s.strategy,
                    s.mem_sz,
                    s.avg_acc_mean,
                    s.avg_acc_std,
                    s.forgetting_mean,
                    s.forgetting_std,
                    s.seeds
                );
            }
            println!("aggregate written to {}", cfg.output_dir.join("aggregate.csv").display());
            Ok(true)
        }
        Command::Gradcheck { tol, seed } => {
            let report = run_gradcheck(tol, tol / 10.0, seed)?;
            println!("{report}");
            Ok(report.passed)
        }
        Command::BufferSim {
            trials,
            stream_len,
            mem_sz,
            policy,
            seed,
        } => {
            let policy: StoragePolicy = policy.into();
            let report = buffer_sim(policy, trials, stream_len, mem_sz, 50, seed)?;
            println!("{report}");
            let mut ok = report.passed;
            if matches!(policy, StoragePolicy::CrsS1 | StoragePolicy::CrsS2) {
                let draws = if policy == StoragePolicy::CrsS1 { 1_000 } else { 100_000 };
                let victims = crs_victim_sim(policy, &[1.0, 1.0, 2.0], draws, 0.02, seed)?;
                println!("{victims}");
                ok &= victims.passed;
            }
            Ok(ok)
        }
        Command::Sweep {
            config,
            mem_sizes,
            jobs,
        } => {
            let cfg = RunConfig::from_file(&config)?;
            let stats = cmd_sweep(&cfg, &mem_sizes, jobs)?;
            for s in &stats {
                println!(
                    "{} {} mem {}: acc {:.1} ± {:.1}, forgetting {:.1} ± {:.1}",
                    s.dataset, s.strategy, s.mem_sz, s.avg_acc_mean, s.avg_acc_std,
                    s.forgetting_mean, s.forgetting_std
                );
            }
            println!("sweep written to {}", cfg.output_dir.join("sweep.csv").display());
            Ok(true)
        }
    }
}
