use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use bicx::harness::{self, audit_bic_file, counterexample_scenarios, verify_lemmas, AuditOptions, Suite};
use bicx::priors::{estimate_constants, load_empirical, PriorSpec};

#[derive(Parser)]
#[command(name = "bicx", version, about = "Incentive-compatible spectral exploration for linear bandits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the exploration loop from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-estimate every played recommendation in a trace.
    Audit {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        particles: usize,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Include per-recommendation entries in the output.
        #[arg(long)]
        entries: bool,
    },
    /// Monte-Carlo and exhaustive checks of the supporting lemmas.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate the prior's assumption constants.
    Estimate {
        /// Inline JSON prior, a JSON file, or a whitespace-separated point file.
        #[arg(long)]
        prior: String,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 64)]
        dirs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a scripted counterexample.
    Scenario {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_prior(spec: &str) -> anyhow::Result<PriorSpec> {
    if let Ok(p) = serde_json::from_str::<PriorSpec>(spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).with_context(|| format!("`{spec}` is neither a prior nor a readable file"))?;
    match serde_json::from_str::<PriorSpec>(&text) {
        Ok(p) => Ok(p),
        Err(_) => Ok(load_empirical(path, None)?),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    harness::init_thread_pool();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<i32> {
    match cmd {
        Command::Run { config, seed, out } => Ok(harness::cmd_run(&config, seed, out.as_deref())),
        Command::Audit {
            trace,
            particles,
            replicates,
            seed,
            entries,
        } => {
            let mut opts = AuditOptions {
                particles,
                replicates,
                ..Default::default()
            };
            if let Some(s) = seed {
                opts.seed = s;
            }
            let mut report = audit_bic_file(&trace, &opts)?;
            if !entries {
                report.entries.clear();
            }
            print_json(&report)?;
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Verify { suite, seed } => {
            let report = verify_lemmas(suite, seed);
            print_json(&report)?;
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Estimate {
            prior,
            samples,
            dirs,
            seed,
        } => {
            let p = parse_prior(&prior)?;
            p.validate()?;
            print_json(&estimate_constants(&p, dirs, samples, seed)?)?;
            Ok(0)
        }
        Command::Scenario { name, seed } => {
            let reports = counterexample_scenarios(&name, seed)?;
            print_json(&reports)?;
            Ok(if reports.iter().all(|r| r.passed) { 0 } else { 1 })
        }
    }
}
