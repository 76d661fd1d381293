//! Independent re-estimation of every played recommendation.
//!
//! On the unit ball the posterior-optimal action is the normalised posterior
//! mean, so a recommendation is incentive compatible exactly when it points
//! along `E[ℓ* | chain]`. The auditor rebuilds that mean from a fresh,
//! larger particle cloud and reports the cosine to the played action.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trace::{read_trace, Trace};
use crate::bic_explore::{Phase, Recommendation, SignalScope};
use crate::posterior::{
    posterior_mean, reweight_all, CloudSampling, ParticleCloud, SignalRecord, TiltContext, TiltRegistry,
};
use crate::rng::{self, stream};
use crate::stats::median;
use crate::Result;

/// Median cosine below which a phase is flagged.
pub const COSINE_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AuditOptions {
    pub particles: usize,
    /// Independent audit clouds; statistics pool over all of them.
    pub replicates: usize,
    pub seed: u64,
    /// Floor on noise draws per particle when re-evaluating tilt events.
    pub inner_n: usize,
    /// A re-estimated mean with norm at most this many credible radii is
    /// treated as zero.
    pub indeterminate_sigma: f64,
    pub zero_tol: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            particles: 100_000,
            replicates: 1,
            seed: 0xA0D1,
            inner_n: 8,
            indeterminate_sigma: 3.0,
            zero_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Scored,
    /// The run itself used the fallback; any action is optimal there.
    FellBack,
    /// The re-estimated mean is indistinguishable from zero.
    Indeterminate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditEntry {
    pub rec: usize,
    pub replicate: usize,
    pub phases: Vec<Phase>,
    pub status: AuditStatus,
    pub cosine: Option<f64>,
    /// Norm and credible radius of the re-estimated mean, when computed.
    pub est_norm: Option<f64>,
    pub credible_radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phase: Phase,
    pub scored: usize,
    pub fell_back: usize,
    pub indeterminate: usize,
    pub min: Option<f64>,
    pub median: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub phases: Vec<PhaseStats>,
    pub replicates: usize,
    pub particles: usize,
    pub signal_scope: SignalScope,
    /// Empty when every phase passes.
    pub violations: Vec<String>,
    pub notes: Vec<String>,
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn phase(&self, p: Phase) -> Option<&PhaseStats> {
        self.phases.iter().find(|s| s.phase == p)
    }
}

fn audit_one(
    r: usize,
    audit_seed: u64,
    cloud: &ParticleCloud,
    rec: &Recommendation,
    tilts: &TiltRegistry,
    opts: &AuditOptions,
) -> Result<AuditEntry> {
    let mut entry = AuditEntry {
        rec: rec.id,
        replicate: r,
        phases: rec.played_in.clone(),
        status: AuditStatus::FellBack,
        cosine: None,
        est_norm: None,
        credible_radius: None,
    };
    if rec.fell_back {
        return Ok(entry);
    }
    let chain: Vec<SignalRecord> = rec
        .chain
        .iter()
        .map(|s| match s {
            SignalRecord::TiltEvent {
                tilt_id,
                inner_noise_vars,
                basis,
                outcome,
                inner_n,
                ..
            } => SignalRecord::TiltEvent {
                tilt_id: *tilt_id,
                inner_noise_vars: inner_noise_vars.clone(),
                basis: basis.clone(),
                outcome: *outcome,
                inner_n: (*inner_n).max(opts.inner_n),
                seed: rng::derive(audit_seed, &[stream::TILT_INNER, *tilt_id as u64]),
            },
            other => other.clone(),
        })
        .collect();
    let m = posterior_mean(&reweight_all(cloud, &chain, tilts)?)?;
    entry.est_norm = Some(m.norm);
    entry.credible_radius = Some(m.credible_radius);
    if m.norm <= opts.zero_tol.max(opts.indeterminate_sigma * m.credible_radius) {
        entry.status = AuditStatus::Indeterminate;
    } else {
        let c: f64 = rec.action.iter().zip(&m.mean).map(|(a, b)| a * b).sum::<f64>() / m.norm;
        entry.status = AuditStatus::Scored;
        entry.cosine = Some(c.clamp(-1.0, 1.0));
    }
    Ok(entry)
}

pub fn audit_bic_file(trace_path: &Path, opts: &AuditOptions) -> Result<AuditReport> {
    audit_bic(&read_trace(trace_path)?, opts)
}

/// Re-derives every played recommendation of `trace` from its signal chain.
pub fn audit_bic(trace: &Trace, opts: &AuditOptions) -> Result<AuditReport> {
    let setup = &trace.setup;
    let prior = &setup.canonical_prior;
    // Tilt events are defined through the run's own cloud, so rebuild it.
    let reference = ParticleCloud::from_prior(prior, setup.cloud.n_particles, setup.cloud.seed, setup.cloud.sampling)?;
    let mut tilts = TiltRegistry::default();
    for t in &trace.tilts {
        tilts.insert_with_id(
            t.tilt_id,
            TiltContext {
                tilt: t.tilt.clone(),
                reference: reference.clone(),
            },
        );
    }
    let scope = setup.config.run.signal_scope;
    let mut notes = vec![];
    if scope == SignalScope::Single {
        notes.push("run conditioned on single signals; audited against those signals only".to_string());
    }

    let clouds: Vec<(usize, u64, ParticleCloud)> = (0..opts.replicates.max(1))
        .map(|r| {
            let audit_seed = rng::derive(opts.seed, &[stream::AUDIT, r as u64]);
            ParticleCloud::from_prior(prior, opts.particles, audit_seed, CloudSampling::Antithetic).map(|c| (r, audit_seed, c))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(&(usize, u64, ParticleCloud), &Recommendation)> = clouds
        .iter()
        .flat_map(|c| trace.recommendations.iter().filter(|r| !r.played_in.is_empty()).map(move |r| (c, r)))
        .collect();
    let entries: Vec<AuditEntry> = jobs
        .into_par_iter()
        .map(|((r, audit_seed, cloud), rec)| audit_one(*r, *audit_seed, cloud, rec, &tilts, opts))
        .collect::<Result<_>>()?;

    let mut by_phase: BTreeMap<Phase, (Vec<f64>, usize, usize)> = BTreeMap::new();
    for e in &entries {
        for p in &e.phases {
            let slot = by_phase.entry(*p).or_default();
            match e.status {
                AuditStatus::Scored => slot.0.push(e.cosine.expect("scored entries carry a cosine")),
                AuditStatus::FellBack => slot.1 += 1,
                AuditStatus::Indeterminate => slot.2 += 1,
            }
        }
    }
    let mut violations = vec![];
    let phases: Vec<PhaseStats> = by_phase
        .into_iter()
        .map(|(phase, (cos, fell_back, indeterminate))| {
            let (min, med) = if cos.is_empty() {
                (None, None)
            } else {
                (Some(cos.iter().copied().fold(f64::INFINITY, f64::min)), Some(median(&cos)))
            };
            if let Some(m) = med {
                if m < COSINE_THRESHOLD {
                    violations.push(format!(
                        "phase {}: median cosine {m:.4} < {COSINE_THRESHOLD}",
                        phase.as_str()
                    ));
                }
            }
            PhaseStats {
                phase,
                scored: cos.len(),
                fell_back,
                indeterminate,
                min,
                median: med,
            }
        })
        .collect();
    Ok(AuditReport {
        phases,
        replicates: opts.replicates.max(1),
        particles: opts.particles,
        signal_scope: scope,
        violations,
        notes,
        entries,
    })
}
