//! The exploration algorithm: a BIC recommendation loop that grows the
//! minimum eigenvalue of the action Gram matrix until every direction has
//! been explored.
//!
//! One run plays the prior-mean direction for `κ` steps, then repeatedly
//! (1) splits ℝᵈ into the explored subspace `S` and its complement,
//! (2) obtains an action with a small but positive `S⊥` component through a
//! tilted, randomly withheld reward signal, (3) doubles that component by
//! conditioning on the sign of debiased reward sums, and (4) plays the
//! result for `κ` steps as a new direction.

mod constants;
mod explorer;
mod ledger;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use constants::{
    compute_lambda, theoretical_kappa, ConstantOverrides, ConstantsRegistry, Mode, DEFAULT_C_L4, DEFAULT_C_L6,
    DEFAULT_DELTA_L5,
};
pub use explorer::{y_hat_estimate, EgOutcome, Explorer, IeOutcome};
pub use ledger::ExplorationLedger;

use crate::bandit_env::RewardSource;
use crate::geometry::{sym_eigen_desc, UnitVector};
use crate::posterior::{CloudSampling, ParticleCloud, SignalRecord, ZeroRule};
use crate::priors::PriorSpec;
use crate::rng;
use crate::tilt::{TiltFunction, DEFAULT_FEAS_TOL};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// The prior-mean block that opens every run.
    Initial,
    /// The single Ψ-dependent step.
    Tilt,
    Growth,
    /// The `κ`-step block that confirms a new direction.
    Sustain,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Initial, Phase::Tilt, Phase::Growth, Phase::Sustain];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Initial => "initial",
            Phase::Tilt => "tilt",
            Phase::Growth => "growth",
            Phase::Sustain => "sustain",
        }
    }
}

/// Which signals an Exploit call conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignalScope {
    /// Only the most recent signal.
    Single,
    /// Every signal of the current outer iteration.
    #[default]
    Chain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub n_particles: usize,
    /// Minimum noise draws per particle in tilt sampling and likelihoods.
    pub inner_n: usize,
    /// Target number of tilt sample points.
    pub tilt_samples: usize,
    pub signal_scope: SignalScope,
    /// Defaults to `1e−8·√d`.
    pub zero_rule: Option<ZeroRule>,
    pub max_steps: u64,
    pub max_growth_calls: usize,
    pub max_outer_iters: Option<usize>,
    pub cloud_sampling: CloudSampling,
    /// Systematic resampling of conditioned clouds below ESS < n/10.
    pub resample: bool,
    pub feas_tol: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            n_particles: 2000,
            inner_n: 4,
            tilt_samples: 4000,
            signal_scope: SignalScope::Chain,
            zero_rule: None,
            max_steps: 5_000_000,
            max_growth_calls: 40,
            max_outer_iters: None,
            cloud_sampling: CloudSampling::Antithetic,
            resample: false,
            feas_tol: DEFAULT_FEAS_TOL,
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 || self.inner_n == 0 || self.tilt_samples == 0 {
            return Err(Error::Config("particle and sample counts must be at least 1".into()));
        }
        if self.max_steps == 0 || self.max_growth_calls == 0 {
            return Err(Error::Config("step and growth budgets must be at least 1".into()));
        }
        Ok(())
    }

    pub fn zero_rule_for(&self, d: usize) -> ZeroRule {
        self.zero_rule.unwrap_or_else(|| ZeroRule::default_for(d))
    }
}

/// One environment step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionRecord {
    pub t: u64,
    pub phase: Phase,
    pub action: Vec<f64>,
    pub reward: f64,
    pub repeat: usize,
    pub j: usize,
    pub ell_lambda: usize,
    /// `‖𝒫_{S⊥}(a)‖` for the current explored subspace.
    pub perp_norm: f64,
    /// Index into [`TranscriptReport::recommendations`].
    pub rec: usize,
}

/// An Exploit output that was played, with everything needed to recompute it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Recommendation {
    pub id: usize,
    pub repeat: usize,
    pub outer: usize,
    pub action: Vec<f64>,
    pub fallback: Vec<f64>,
    /// Signals the action was conditioned on.
    pub chain: Vec<SignalRecord>,
    pub fell_back: bool,
    pub mean_norm: f64,
    pub credible_radius: f64,
    /// Phases in which the action was played, in order.
    pub played_in: Vec<Phase>,
    pub first_t: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TiltLog {
    /// Step at which the Ψ-dependent action is played.
    pub t: u64,
    pub tilt_id: usize,
    pub repeat: usize,
    pub outer: usize,
    pub tilt: TiltFunction,
    pub basis: Vec<Vec<f64>>,
    pub noise_vars: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub z: Vec<f64>,
    pub f_z: f64,
    pub psi: bool,
    pub inner_n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthRecord {
    /// Last step of the growth block.
    pub t: u64,
    pub repeat: usize,
    pub outer: usize,
    pub call: usize,
    pub len: usize,
    pub sum_c_sq: f64,
    pub perp_before: f64,
    pub perp_after: f64,
    pub wrapped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Budget,
    Error,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TranscriptReport {
    pub actions: Vec<ActionRecord>,
    pub recommendations: Vec<Recommendation>,
    /// Every signal in emission order.
    pub signals: Vec<SignalRecord>,
    pub tilts: Vec<TiltLog>,
    pub growth: Vec<GrowthRecord>,
    /// `(t, λ_min(Σ a⊗a))` at the end of every block.
    pub min_eig_trajectory: Vec<(u64, f64)>,
    pub total_pulls: u64,
    pub achieved_lambda: f64,
    pub lambda_bar: f64,
    pub repeats: usize,
    pub success: bool,
    pub failure: Option<Failure>,
}

impl TranscriptReport {
    pub fn action_vectors(&self) -> Vec<&[f64]> {
        self.actions.iter().map(|a| a.action.as_slice()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralCheck {
    pub holds: bool,
    pub min_eig: f64,
}

/// `λ_min(Σ a⊗a)` over pulled actions, compared with `lambda_bar`.
pub fn check_spectral<'a>(actions: impl IntoIterator<Item = &'a [f64]>, lambda_bar: f64) -> Result<SpectralCheck> {
    let mut g: Option<DMatrix<f64>> = None;
    for a in actions {
        let d = a.len();
        let m = g.get_or_insert_with(|| DMatrix::zeros(d, d));
        crate::geometry::check_dim(m.nrows(), d)?;
        for i in 0..d {
            for k in 0..d {
                m[(i, k)] += a[i] * a[k];
            }
        }
    }
    let m = g.ok_or_else(|| Error::Precondition("empty transcript".into()))?;
    let (vals, _) = sym_eigen_desc(&m)?;
    let min_eig = vals.last().copied().unwrap_or(0.0);
    Ok(SpectralCheck {
        holds: min_eig >= lambda_bar,
        min_eig,
    })
}

pub fn check_transcript(t: &TranscriptReport, lambda_bar: f64) -> Result<SpectralCheck> {
    check_spectral(t.actions.iter().map(|a| a.action.as_slice()), lambda_bar)
}

/// Requires `E[ℓ*ᵢ] = 0` for `i > 1` and `E[ℓ*₁] ≥ 0`.
pub fn check_canonical(prior: &PriorSpec) -> Result<f64> {
    let m = prior.mean();
    let tol = 1e-9 * (1.0 + m.norm());
    if m.iter().skip(1).any(|x| x.abs() > tol) || m[0] < -tol {
        return Err(Error::Precondition(format!(
            "prior is not canonical: mean {:?}; rotate it first",
            m.as_slice()
        )));
    }
    Ok(m[0].max(0.0))
}

/// Runs the exploration loop up to `⌈λ̄/λ⌉` times, stopping as soon as the
/// accumulated actions certify `Σ a⊗a ⪰ λ̄·I`.
///
/// Errors raised inside the loop end the run early and are reported through
/// [`TranscriptReport::failure`]; only invalid inputs return `Err`.
pub fn run_bic_exploration(
    prior: &PriorSpec,
    env: &mut dyn RewardSource,
    lambda_bar: f64,
    registry: &ConstantsRegistry,
    opts: &RunOptions,
    seed: u64,
) -> Result<TranscriptReport> {
    if !(lambda_bar > 0.0) {
        return Err(Error::Config(format!("lambda_bar = {lambda_bar} must be positive")));
    }
    registry.validate()?;
    opts.validate()?;
    let mean_e1 = check_canonical(prior)?;
    let cloud = ParticleCloud::from_prior(prior, opts.n_particles, rng::derive(seed, &[rng::stream::CLOUD]), opts.cloud_sampling)?;
    let repeats = (lambda_bar / registry.lambda).ceil().max(1.0) as usize;

    let mut ex = Explorer::new(cloud, registry.clone(), opts.clone(), mean_e1, seed, env);
    ex.transcript.lambda_bar = lambda_bar;
    for rep in 0..repeats {
        ex.transcript.repeats = rep + 1;
        if let Err(e) = ex.run_once(rep) {
            let kind = match e.root() {
                Error::BudgetExceeded { .. } => FailureKind::Budget,
                _ => FailureKind::Error,
            };
            log::warn!("run ended early: {e}");
            ex.transcript.failure = Some(Failure {
                kind,
                message: e.to_string(),
            });
            break;
        }
        if !ex.transcript.actions.is_empty() && check_transcript(&ex.transcript, lambda_bar)?.holds {
            break;
        }
    }
    let mut t = ex.finish();
    if !t.actions.is_empty() {
        let c = check_transcript(&t, lambda_bar)?;
        t.achieved_lambda = c.min_eig;
        t.success = t.failure.is_none() && c.holds;
    }
    Ok(t)
}

/// Recomputes a recorded recommendation from its stored chain.
pub fn replay_recommendation(
    cloud: &ParticleCloud,
    rec: &Recommendation,
    tilts: &crate::posterior::TiltRegistry,
    rule: ZeroRule,
) -> Result<UnitVector> {
    let fallback = UnitVector::from_slice(&rec.fallback)?;
    Ok(crate::posterior::exploit_with(cloud, &rec.chain, &fallback, rule, tilts)?.action)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_examples() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        let c = check_spectral([&e1[..], &e2[..]], 1.0).unwrap();
        assert!(c.holds);
        assert!((c.min_eig - 1.0).abs() < 1e-12);
        let c = check_spectral([&e1[..]], 1e-9).unwrap();
        assert!(!c.holds);
        assert!(c.min_eig.abs() < 1e-12);
        assert!(check_spectral(std::iter::empty::<&[f64]>(), 1.0).is_err());
    }

    #[test]
    fn spectral_mixed_example() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let d = [s, s];
        let e1 = [1.0, 0.0];
        let c = check_spectral([&d[..], &d[..], &d[..], &e1[..]], 0.3).unwrap();
        // M = [[2.5, 1.5], [1.5, 1.5]]: λ_min = 2 − √(0.25 + 2.25)
        let expected = 2.0 - 2.5f64.sqrt();
        assert!((c.min_eig - expected).abs() < 1e-12);
        assert!(c.holds);
    }
}
