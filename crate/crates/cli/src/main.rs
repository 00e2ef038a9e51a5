use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use codecl_core::harness::{algebra_suite, report, resolve_data_dir, run_experiment, ExperimentConfig};
use codecl_core::Error;

#[derive(Parser)]
#[command(name = "codecl", version, about = "Conceptor-based continual learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a task sequence and write the run artifacts
    Run {
        #[arg(long)]
        config: PathBuf,
        /// MNIST IDX directory (overrides CODECL_DATA_DIR and the config file)
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the conceptor algebra invariants on random matrices
    AlgebraCheck {
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, default_value_t = 20)]
        max_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute ACC and BWT from a run directory
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            data_dir,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.set_seed(seed);
            }
            if let Some(out) = out {
                cfg.out_dir = Some(out);
            }
            let out_dir = cfg
                .out_dir
                .clone()
                .ok_or_else(|| Error::param("out_dir", "set it in the config or pass --out"))?;
            let data = resolve_data_dir(data_dir.as_deref(), &cfg);
            let summary = run_experiment(&cfg, &data, &out_dir)?;
            println!(
                "ACC {:.4}  BWT {:+.4}  ({} tasks, {:.1} s) -> {}",
                summary.metrics.acc,
                summary.metrics.bwt,
                summary.metrics.tasks,
                summary.timings.total_seconds,
                summary.out_dir.display()
            );
            Ok(())
        }
        Command::AlgebraCheck { pairs, max_dim, seed } => {
            let r = algebra_suite(pairs, max_dim, seed)?;
            for c in &r.checks {
                println!(
                    "{} {:<32} worst {:.3e}  tol {:.1e}  cases {}",
                    if c.passed() { "PASS" } else { "FAIL" },
                    c.name,
                    c.worst,
                    c.tolerance,
                    c.cases
                );
            }
            println!(
                "{} pairs, n <= {}, seed {}, {:.2} s: {}",
                r.pairs,
                r.max_dim,
                r.seed,
                r.elapsed_secs,
                if r.passed() { "all passed" } else { "FAILED" }
            );
            if !r.passed() {
                return Err(Error::Invariant("algebra property suite failed".into()));
            }
            Ok(())
        }
        Command::Report { out } => {
            let (m, acc, bwt) = report(&out)?;
            let summary = serde_json::json!({ "tasks": m.tasks(), "acc": acc, "bwt": bwt });
            println!("{summary}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
