//! `bicx run`: configuration in, metrics CSV, JSONL trace and report out.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::RunConfig;
use super::trace::{metrics_csv, rows, trace_events, write_trace, CloudParams, SetupPayload};
use crate::bandit_env::Environment;
use crate::bic_explore::{run_bic_exploration, ConstantsRegistry, FailureKind, TranscriptReport};
use crate::priors::{canonicalize, estimate_constants};
use crate::rng::{self, stream};
use crate::stats::median;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

/// Result of one replicate.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub setup: SetupPayload,
    pub transcript: TranscriptReport,
    pub exit_code: i32,
    pub dir: PathBuf,
}

fn exit_code(t: &TranscriptReport) -> i32 {
    match &t.failure {
        _ if t.success => EXIT_OK,
        Some(f) if f.kind == FailureKind::Budget => EXIT_BUDGET,
        _ => EXIT_FAILED,
    }
}

/// Sets up and runs one replicate without writing anything. Errors here are
/// configuration problems (the prior, its constants or the registry).
pub fn run_single(cfg: &RunConfig, seed: u64) -> Result<(SetupPayload, TranscriptReport)> {
    let prior = cfg.resolve_prior()?;
    let (canonical, q) = canonicalize(&prior)?;
    let assumption = match cfg.assumption {
        Some(a) => a,
        None => estimate_constants(
            &canonical,
            cfg.estimate.n_dirs,
            cfg.estimate.n_samples,
            rng::derive(seed, &[stream::PRIOR_SAMPLE]),
        )?,
    };
    let registry = ConstantsRegistry::build(assumption, cfg.d, cfg.mode, &cfg.overrides, cfg.use_default_constants)?;
    let mut env = Environment::spawn(&canonical, seed)?.with_noise_sd(cfg.noise_sd)?;
    let transcript = run_bic_exploration(&canonical, &mut env, cfg.lambda_bar, &registry, &cfg.run, seed)?;
    let setup = SetupPayload {
        config: cfg.clone(),
        dim: cfg.d,
        seed,
        lambda_bar: cfg.lambda_bar,
        canonical_prior: canonical,
        rotation: rows(&q),
        assumption,
        registry,
        cloud: CloudParams {
            n_particles: cfg.run.n_particles,
            sampling: cfg.run.cloud_sampling,
            seed: rng::derive(seed, &[stream::CLOUD]),
        },
    };
    Ok((setup, transcript))
}

fn report_json(setup: &SetupPayload, t: &TranscriptReport, code: i32) -> Value {
    let ratios: Vec<f64> = t
        .growth
        .iter()
        .filter(|g| g.perp_before > 0.0)
        .map(|g| g.perp_after / g.perp_before)
        .collect();
    json!({
        "success": t.success,
        "exit_code": code,
        "dim": setup.dim,
        "seed": setup.seed,
        "lambda_bar": t.lambda_bar,
        "achieved_lambda": t.achieved_lambda,
        "total_pulls": t.total_pulls,
        "repeats": t.repeats,
        "failure": t.failure,
        "assumption": setup.assumption,
        "registry": setup.registry,
        "counts": {
            "actions": t.actions.len(),
            "recommendations": t.recommendations.len(),
            "fell_back": t.recommendations.iter().filter(|r| r.fell_back).count(),
            "tilts": t.tilts.len(),
            "growth_calls": t.growth.len(),
        },
        "median_growth_ratio": (!ratios.is_empty()).then(|| median(&ratios)),
    })
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn run_into(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<RunOutcome> {
    let (setup, transcript) = run_single(cfg, seed)?;
    let code = exit_code(&transcript);
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(&cfg.output.metrics), metrics_csv(&transcript)?)?;
    write_trace(&dir.join(&cfg.output.trace), &trace_events(&setup, &transcript)?)?;
    write_json(&dir.join(&cfg.output.report), &report_json(&setup, &transcript, code))?;
    Ok(RunOutcome {
        setup,
        transcript,
        exit_code: code,
        dir: dir.to_path_buf(),
    })
}

/// Runs every replicate of a validated config. A single replicate writes
/// straight into the output directory; several write to `rep{r}/` with a
/// summary report on top.
pub fn run_config(cfg: &RunConfig) -> Result<Vec<RunOutcome>> {
    let base = cfg.output.dir.clone();
    if cfg.replicates == 1 {
        return Ok(vec![run_into(cfg, cfg.replicate_seed(0), &base)?]);
    }
    let outs: Vec<RunOutcome> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_into(cfg, cfg.replicate_seed(r), &base.join(format!("rep{r}"))))
        .collect::<Result<_>>()?;
    let summary = json!({
        "replicates": cfg.replicates,
        "succeeded": outs.iter().filter(|o| o.transcript.success).count(),
        "exit_code": combined_code(&outs),
        "runs": outs.iter().map(|o| json!({
            "dir": o.dir, "seed": o.setup.seed, "exit_code": o.exit_code,
            "total_pulls": o.transcript.total_pulls, "achieved_lambda": o.transcript.achieved_lambda,
        })).collect::<Vec<_>>(),
    });
    write_json(&base.join(&cfg.output.report), &summary)?;
    Ok(outs)
}

fn combined_code(outs: &[RunOutcome]) -> i32 {
    if outs.iter().all(|o| o.exit_code == EXIT_OK) {
        EXIT_OK
    } else if outs.iter().any(|o| o.exit_code == EXIT_FAILED) {
        EXIT_FAILED
    } else {
        EXIT_BUDGET
    }
}

/// `bicx run`. Returns the process exit code: 0 when every replicate
/// certified, 2 for configuration errors, 3 when a budget ran out and 1 for
/// any other failure.
pub fn cmd_run(config: &Path, seed: Option<u64>, out: Option<&Path>) -> i32 {
    let mut cfg = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output.dir = o.to_path_buf();
    }
    match run_config(&cfg) {
        Ok(outs) => {
            for o in &outs {
                log::info!(
                    "{}: success={} pulls={} achieved λ={:.4}",
                    o.dir.display(),
                    o.transcript.success,
                    o.transcript.total_pulls,
                    o.transcript.achieved_lambda
                );
                if let Some(f) = &o.transcript.failure {
                    eprintln!("{}: {}", o.dir.display(), f.message);
                }
            }
            combined_code(&outs)
        }
        Err(e @ Error::Io(_)) => {
            eprintln!("error: {e}");
            EXIT_FAILED
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
