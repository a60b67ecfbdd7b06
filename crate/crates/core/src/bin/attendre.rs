use std::path::PathBuf;
use std::process::ExitCode;

use attendre::bench::{self, BenchError, SweepConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "attendre",
    version,
    about = "Streaming wait-to-attend retention benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a policy x (M, N) sweep and write CSV plus a JSON summary.
    Sweep(Overrides),
    /// Print the memory event log of one trial.
    Trace(Overrides),
}

#[derive(Args, Debug)]
struct Overrides {
    /// Flat `key = value` config file; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma separated policies, e.g. `fifo,sink:4,lra_sum,lfa:0.001`.
    #[arg(long)]
    policy: Option<String>,
    /// Comma separated K/V memory sizes.
    #[arg(long)]
    m: Option<String>,
    /// Q memory sizes: `half`, one value, or one per M.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// `needle` or `question_first`.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    length: Option<usize>,
    /// CSV path; the JSON summary goes next to it. Prints CSV to stdout if unset.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    dump_config: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<SweepConfig, BenchError> {
        let mut cfg = match &self.config {
            Some(path) => SweepConfig::load(path)?,
            None => SweepConfig::default(),
        };
        let flags = [
            ("policies", self.policy.clone()),
            ("m", self.m.clone()),
            ("n", self.n.clone()),
            ("k", self.k.map(|v| v.to_string())),
            ("chunk", self.chunk.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("trials", self.trials.map(|v| v.to_string())),
            ("task", self.task.clone()),
            ("length", self.length.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                cfg.set(key, &value)?;
            }
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), BenchError> {
    let (overrides, trace) = match &cli.command {
        Command::Sweep(o) => (o, false),
        Command::Trace(o) => (o, true),
    };
    let cfg = overrides.resolve()?;
    if overrides.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    cfg.validate()?;
    if trace {
        for line in bench::run_trace(&cfg)? {
            println!("{line}");
        }
        return Ok(());
    }
    let report = bench::run_sweep(&cfg)?;
    match &cfg.out {
        Some(path) => {
            let json = report.write_files(path)?;
            eprintln!("wrote {} and {}", path.display(), json.display());
        }
        None => print!("{}", report.to_csv_string()?),
    }
    if !report.all_within_bounds() {
        eprintln!("warning: a cell exceeded its complexity bound");
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
