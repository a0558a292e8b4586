use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use hpilg::bench::{self, ExperimentConfig, WorkKey};
use hpilg::linear_solve::SolverPath;

#[derive(Parser)]
#[command(name = "hpilg", version, about = "hp-FEM Picard solver and convergence benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence experiment and write record files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to `output` from the config, then `.`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Zero wall times in the records so repeated runs are identical.
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        solver: Option<SolverPath>,
    },
    /// Fit `error ~ C exp(-b work^(1/root))` to a record file.
    Fit {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "dofs")]
        work: WorkKey,
        /// Defaults to 3 for dofs, 7 for flops and seconds.
        #[arg(long)]
        root: Option<u32>,
        /// Only use levels with p >= this.
        #[arg(long, default_value_t = 1)]
        p_min: usize,
    },
    /// Run the built-in self-checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(config: PathBuf, out: Option<PathBuf>, deterministic: bool, solver: Option<SolverPath>) -> Result<()> {
    let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    cfg.deterministic |= deterministic;
    if let Some(s) = solver {
        cfg.solver = s;
    }
    let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("."));
    let result = bench::run_experiment_with_progress(&cfg, &mut |msg| eprintln!("{msg}"))?;
    bench::write_outputs(&dir, &cfg, &result)?;
    println!("wrote {} records to {}", result.records.len(), dir.join("records.csv").display());
    Ok(())
}

fn fit(records: PathBuf, work: WorkKey, root: Option<u32>, p_min: usize) -> Result<()> {
    let recs: Vec<_> = bench::parse_records(&records)?
        .into_iter()
        .filter(|r| r.p >= p_min)
        .collect();
    let root = root.unwrap_or(work.default_root());
    let f = bench::fit_exponential(&recs, work, root)?;
    println!("C = {:.6e}", f.c);
    println!("b = {:.6e}", f.b);
    println!("R^2 = {:.6}", f.r_squared);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            deterministic,
            solver,
        } => run(config, out, deterministic, solver),
        Command::Fit {
            records,
            work,
            root,
            p_min,
        } => fit(records, work, root, p_min),
        Command::Verify { seed } => {
            let checks = hpilg::verify::run_all(seed);
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                Err(anyhow::anyhow!("some checks failed"))
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
