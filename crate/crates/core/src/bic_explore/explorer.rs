use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{
    check_spectral, ActionRecord, ConstantsRegistry, ExplorationLedger, GrowthRecord, Mode, Phase, Recommendation,
    RunOptions, SignalScope, TiltLog, TranscriptReport,
};
use crate::bandit_env::RewardSource;
use crate::geometry::{combo_coefficients, UnitVector};
use crate::posterior::{
    action_from_mean, exploit_with, inner_noisy_coords, posterior_mean, tilt_log_likelihood, ExploitOutcome,
    ParticleCloud, PosteriorMean, ProjectedCloud, SignalRecord, TiltContext, TiltRegistry,
};
use crate::rng::{self, stream};
use crate::tilt::{build_tilt_paired, eval_tilt, TiltOptions};
use crate::{Error, Result};

/// Model noise of a single reward.
const MODEL_NOISE_SD: f64 = 1.0;

/// `ŷ` and its per-coordinate noise variance from the first `n` entries of
/// every reward log:
/// `ŷ_ℓ = (1/n)·Σ_{t<n} Σ_k ⟨v_k,w_ℓ⟩/λ_ℓ · q_k[t]`, `Var = 1/(n·λ_ℓ)`.
pub fn y_hat_estimate(ledger: &ExplorationLedger, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if ledger.gram.dirty || ledger.ell_lambda == 0 {
        return Err(Error::Precondition("ledger has no explored subspace".into()));
    }
    if n == 0 || n > ledger.kappa() {
        return Err(Error::Precondition(format!("y_hat length {n} outside [1, κ]")));
    }
    let sums: Vec<f64> = ledger.reward_logs.iter().map(|q| q[..n].iter().sum()).collect();
    let mut y = Vec::with_capacity(ledger.ell_lambda);
    let mut vars = Vec::with_capacity(ledger.ell_lambda);
    for (l, w) in ledger.s_basis.iter().enumerate() {
        let lam = ledger.gram.eigvals[l];
        let acc: f64 = ledger
            .dirs
            .iter()
            .zip(&sums)
            .map(|(v, s)| v.as_vector().dot(w) / lam * s)
            .sum();
        y.push(acc / n as f64);
        vars.push(MODEL_NOISE_SD * MODEL_NOISE_SD / (n as f64 * lam));
    }
    Ok((y, vars))
}

/// Result of the initial-exploration step.
#[derive(Debug, Clone)]
pub struct IeOutcome {
    pub a: UnitVector,
    pub chain: Vec<SignalRecord>,
    pub psi: bool,
    pub y_hat: Vec<f64>,
    pub z: Vec<f64>,
    pub f_z: f64,
    pub tilt_id: usize,
    /// `E[ℓ*|Ψ=1]` under the algorithm's cloud.
    pub psi_mean: PosteriorMean,
    /// Effective self-normalised weights of the Ψ=1 posterior.
    pub psi_weights: Vec<f64>,
    pub rec: usize,
}

#[derive(Debug, Clone)]
pub struct EgOutcome {
    pub b: UnitVector,
    pub chain: Vec<SignalRecord>,
    pub len: usize,
    pub perp_before: f64,
    pub perp_after: f64,
    pub r_sum: f64,
    pub rec: usize,
}

/// Mutable state of a run: the pristine cloud, constants, the environment
/// handle and the transcript under construction.
pub struct Explorer<'e> {
    pub cloud: ParticleCloud,
    pub registry: ConstantsRegistry,
    pub opts: RunOptions,
    pub mean_e1: f64,
    pub seed: u64,
    pub tilts: TiltRegistry,
    pub transcript: TranscriptReport,
    env: &'e mut dyn RewardSource,
    dim: usize,
    repeat: usize,
    outer: usize,
}

impl<'e> Explorer<'e> {
    pub fn new(
        cloud: ParticleCloud,
        registry: ConstantsRegistry,
        opts: RunOptions,
        mean_e1: f64,
        seed: u64,
        env: &'e mut dyn RewardSource,
    ) -> Self {
        let dim = cloud.dim();
        Explorer {
            cloud,
            registry,
            opts,
            mean_e1,
            seed,
            tilts: TiltRegistry::default(),
            transcript: TranscriptReport::default(),
            env,
            dim,
            repeat: 0,
            outer: 0,
        }
    }

    pub fn finish(mut self) -> TranscriptReport {
        self.transcript.total_pulls = self.env.steps();
        self.transcript
    }

    fn stream(&self, tag: u64) -> u64 {
        rng::derive(self.seed, &[tag, self.repeat as u64, self.outer as u64])
    }

    fn rule(&self) -> crate::posterior::ZeroRule {
        self.opts.zero_rule_for(self.dim)
    }

    fn conditioned(&self, signals: &[SignalRecord], fallback: &UnitVector) -> Result<ExploitOutcome> {
        if !self.opts.resample {
            return exploit_with(&self.cloud, signals, fallback, self.rule(), &self.tilts);
        }
        let mut c = self.cloud.clone();
        for (i, s) in signals.iter().enumerate() {
            c = crate::posterior::reweight_with(&c, s, &self.tilts)?;
            c = c.resample_if_degenerate(0.1, rng::derive(self.stream(stream::CLOUD), &[i as u64]))?;
        }
        Ok(action_from_mean(posterior_mean(&c)?, fallback, self.rule()))
    }

    fn scoped<'s>(&self, chain: &'s [SignalRecord]) -> &'s [SignalRecord] {
        match self.opts.signal_scope {
            SignalScope::Chain => chain,
            SignalScope::Single => &chain[chain.len().saturating_sub(1)..],
        }
    }

    fn record(&mut self, out: &ExploitOutcome, fallback: &UnitVector, chain: &[SignalRecord]) -> usize {
        let id = self.transcript.recommendations.len();
        self.transcript.recommendations.push(Recommendation {
            id,
            repeat: self.repeat,
            outer: self.outer,
            action: out.action.as_slice().to_vec(),
            fallback: fallback.as_slice().to_vec(),
            chain: chain.to_vec(),
            fell_back: out.fell_back,
            mean_norm: out.mean.norm,
            credible_radius: out.mean.credible_radius,
            played_in: vec![],
            first_t: None,
        });
        id
    }

    fn pull(&mut self, a: &UnitVector, phase: Phase, rec: usize, ledger: &ExplorationLedger) -> Result<f64> {
        let max_steps = self.opts.max_steps;
        if self.env.steps() >= max_steps {
            return Err(Error::BudgetExceeded { max_steps });
        }
        let r = self.env.pull(a)?;
        let t = self.env.steps();
        let perp_norm = ledger.project_perp(a.as_vector())?.norm();
        let entry = &mut self.transcript.recommendations[rec];
        if entry.played_in.last() != Some(&phase) {
            entry.played_in.push(phase);
        }
        entry.first_t.get_or_insert(t);
        self.transcript.actions.push(ActionRecord {
            t,
            phase,
            action: a.as_slice().to_vec(),
            reward: r,
            repeat: self.repeat,
            j: ledger.j(),
            ell_lambda: ledger.ell_lambda,
            perp_norm,
            rec,
        });
        Ok(r)
    }

    fn mark_block(&mut self) -> Result<()> {
        if let Some(last) = self.transcript.actions.last() {
            let t = last.t;
            let c = check_spectral(self.transcript.actions.iter().map(|a| a.action.as_slice()), 0.0)?;
            self.transcript.min_eig_trajectory.push((t, c.min_eig));
        }
        Ok(())
    }

    /// Plays `a` for `κ` steps and records it as the next direction.
    fn sustain(&mut self, ledger: &mut ExplorationLedger, a: &UnitVector, rec: usize, phase: Phase) -> Result<()> {
        let mut log = Vec::with_capacity(self.registry.kappa);
        for _ in 0..self.registry.kappa {
            log.push(self.pull(a, phase, rec, ledger)?);
        }
        ledger.push(a.clone(), log)?;
        ledger.t = self.env.steps();
        ledger.refresh(self.registry.lambda)?;
        self.mark_block()
    }

    /// The opening block: Exploit with no signal (fallback `e₁`), `κ` steps.
    pub fn initial_phase(&mut self, ledger: &mut ExplorationLedger) -> Result<()> {
        let e1 = UnitVector::basis(self.dim, 0);
        let out = self.conditioned(&[], &e1)?;
        let rec = self.record(&out, &e1, &[]);
        self.sustain(ledger, &out.action, rec, Phase::Initial)
            .map_err(|e| e.in_phase("initial"))
    }

    /// Tilted-signal step: returns an action with a positive but typically
    /// small component outside the explored subspace.
    pub fn initial_exploration(&mut self, ledger: &mut ExplorationLedger) -> Result<IeOutcome> {
        self.initial_exploration_inner(ledger)
            .map_err(|e| e.in_phase("initial_exploration"))
    }

    fn initial_exploration_inner(&mut self, ledger: &mut ExplorationLedger) -> Result<IeOutcome> {
        let reg = self.registry.clone();
        let ell = ledger.ell_lambda;
        if ell == 0 || ledger.gram.eigvals[ell - 1] < reg.lambda - crate::geometry::EIG_THRESHOLD_SLACK {
            return Err(Error::Precondition("explored subspace is empty".into()));
        }
        let fallback = ledger.fallback()?;
        let basis = ledger.s_basis.clone();
        let (y_hat, noise_vars) = y_hat_estimate(ledger, reg.y_hat_len())?;
        let proj = ProjectedCloud::new(&self.cloud, &basis)?;
        let z = proj.conditional_mean(&y_hat, &noise_vars)?;

        // Tilt sample: z(x_i + noise) for every particle and inner draw.
        let n = self.cloud.len();
        let inner = self.opts.inner_n.max(self.opts.tilt_samples.div_ceil(n));
        let tilt_seed = self.stream(stream::TILT_INNER);
        let sds: Vec<f64> = noise_vars.iter().map(|v| v.sqrt()).collect();
        let weights = self.cloud.normalized_weights()?;
        let per_particle: Vec<Vec<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                inner_noisy_coords(proj.coords(i), &sds, inner, tilt_seed, i)
                    .iter()
                    .map(|y| proj.conditional_mean(y, &noise_vars))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        // Each simulated z is paired with the S-coordinates of the particle
        // that produced it, so the Ψ=1 posterior mean has no S component on
        // this cloud. The realised z is not part of the sample: the tilt is
        // fixed before z is looked at.
        let mut zs = Vec::with_capacity(n * inner);
        let mut xs = Vec::with_capacity(n * inner);
        let mut zw = Vec::with_capacity(n * inner);
        for (i, pts) in per_particle.iter().enumerate() {
            for p in pts {
                zs.push(p.clone());
                xs.push(proj.coords(i).to_vec());
                zw.push(weights[i] / inner as f64);
            }
        }
        let total: f64 = zw.iter().sum();
        zw.iter_mut().for_each(|w| *w /= total);
        let tilt = build_tilt_paired(
            &zs,
            &xs,
            &zw,
            reg.tilt_epsilon,
            reg.mean_norm_cap,
            TiltOptions {
                feas_tol: self.opts.feas_tol,
                seed: tilt_seed,
                ..Default::default()
            },
        )?;
        let f_z = eval_tilt(&tilt, &z)?;
        if reg.p_select / f_z > 1.0 + 1e-12 {
            return Err(Error::Precondition(format!(
                "selection probability p/f = {} exceeds 1",
                reg.p_select / f_z
            )));
        }

        // Per-particle P(Ψ=1 | ℓ), with the same arithmetic as the tilt-event
        // likelihood so that replays match bit for bit.
        let t_lik: Vec<f64> = per_particle
            .par_iter()
            .map(|pts| {
                let mut acc = 0.0;
                for p in pts {
                    acc += eval_tilt(&tilt, p)?;
                }
                Ok(acc / inner as f64)
            })
            .collect::<Result<_>>()?;

        let tilt_id = self.tilts.insert(TiltContext {
            tilt: tilt.clone(),
            reference: self.cloud.clone(),
        });
        let basis_rows: Vec<Vec<f64>> = basis.iter().map(|b| b.as_slice().to_vec()).collect();
        let event = |outcome: bool| SignalRecord::TiltEvent {
            tilt_id,
            inner_noise_vars: noise_vars.clone(),
            basis: basis_rows.clone(),
            outcome,
            inner_n: inner,
            seed: tilt_seed,
        };
        let cloud1 = self.cloud.add_log_likelihood(tilt_log_likelihood(&t_lik, true), "tilt_event")?;
        let cloud0 = self.cloud.add_log_likelihood(tilt_log_likelihood(&t_lik, false), "tilt_event")?;
        let psi_mean = posterior_mean(&cloud1)?;
        let psi_weights = cloud1.normalized_weights()?;
        let out1 = action_from_mean(psi_mean.clone(), &fallback, self.rule());
        let out0 = action_from_mean(posterior_mean(&cloud0)?, &fallback, self.rule());

        let psi = rng::rng(self.stream(stream::PSI_DRAW), &[]).random::<f64>() < f_z;
        let (played, ev) = if psi { (&out1, event(true)) } else { (&out0, event(false)) };
        let rec_tilt = self.record(played, &fallback, std::slice::from_ref(&ev));
        self.transcript.signals.push(ev);
        self.transcript.tilts.push(TiltLog {
            t: self.env.steps() + 1,
            tilt_id,
            repeat: self.repeat,
            outer: self.outer,
            tilt,
            basis: basis_rows,
            noise_vars: noise_vars.clone(),
            y_hat: y_hat.clone(),
            z: z.clone(),
            f_z,
            psi,
            inner_n: inner,
            seed: tilt_seed,
        });
        let action = played.action.clone();
        let r = self.pull(&action, Phase::Tilt, rec_tilt, ledger)?;

        let selected = psi && rng::rng(self.stream(stream::SELECT_DRAW), &[]).random::<f64>() < reg.p_select / f_z;
        let big_r = if selected {
            r
        } else {
            rng::rng(self.stream(stream::FRESH_NORMAL), &[]).sample::<f64, _>(StandardNormal)
        };
        let mix = SignalRecord::MixtureSign {
            action: out1.action.clone(),
            select_prob: reg.p_select,
            sign: if big_r > 0.0 { 1 } else { -1 },
        };
        self.transcript.signals.push(mix.clone());
        let chain = vec![mix];
        let out = self.conditioned(self.scoped(&chain), &fallback)?;
        let rec = self.record(&out, &fallback, self.scoped(&chain));
        Ok(IeOutcome {
            a: out.action,
            chain,
            psi,
            y_hat,
            z,
            f_z,
            tilt_id,
            psi_mean,
            psi_weights,
            rec,
        })
    }

    /// Growth step: plays `a` for `L` steps and conditions on the sign of
    /// the debiased reward sum.
    pub fn exponential_growth(
        &mut self,
        ledger: &mut ExplorationLedger,
        a: &UnitVector,
        rec: usize,
        chain: Vec<SignalRecord>,
        call: usize,
    ) -> Result<EgOutcome> {
        self.exponential_growth_inner(ledger, a, rec, chain, call)
            .map_err(|e| e.in_phase("exponential_growth"))
    }

    fn exponential_growth_inner(
        &mut self,
        ledger: &mut ExplorationLedger,
        a: &UnitVector,
        rec: usize,
        mut chain: Vec<SignalRecord>,
        call: usize,
    ) -> Result<EgOutcome> {
        let reg = self.registry.clone();
        let av = a.as_vector();
        let perp = ledger.project_perp(av)?;
        let perp_before = perp.norm();
        if !(perp_before > 0.0) || perp_before > reg.lambda.sqrt() * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!(
                "complement norm {perp_before:e} outside (0, √λ]"
            )));
        }
        let fallback = ledger.fallback()?;
        let ps = ledger.project_s(av)?;
        let c = combo_coefficients(&ps, &ledger.dirs, &ledger.gram, ledger.ell_lambda, reg.lambda)?;
        let sum_c_sq: f64 = c.iter().map(|x| x * x).sum();
        let len = reg.growth_len(self.dim, self.mean_e1, sum_c_sq);
        let kappa = reg.kappa;
        let wrapped = len > kappa;
        if wrapped {
            if reg.mode == Mode::Theoretical {
                return Err(Error::LogExhausted { needed: len, kappa });
            }
            log::warn!("growth length {len} exceeds κ = {kappa}; reusing log entries");
        }

        let mut r_sum = 0.0;
        for i in 0..len {
            let r = self.pull(a, Phase::Growth, rec, ledger)?;
            let debias: f64 = c
                .iter()
                .zip(&ledger.reward_logs)
                .map(|(ck, q)| ck * q[i % kappa])
                .sum();
            r_sum += r - debias;
        }
        // Each log entry s is reused n_s times.
        let full = (len / kappa) as f64;
        let rem = (len % kappa) as f64;
        let reuse_sq = rem * (full + 1.0).powi(2) + (kappa as f64 - rem) * full * full;
        let noise_sd = MODEL_NOISE_SD * (len as f64 + sum_c_sq * reuse_sq).sqrt();
        let sig = SignalRecord::SignThreshold {
            coef: (perp * len as f64).as_slice().to_vec(),
            noise_sd,
            sign: if r_sum > 0.0 { 1 } else { -1 },
        };
        self.transcript.signals.push(sig.clone());
        chain.push(sig);
        let out = self.conditioned(self.scoped(&chain), &fallback)?;
        let new_rec = self.record(&out, &fallback, self.scoped(&chain));
        let perp_after = ledger.project_perp(out.action.as_vector())?.norm();
        self.transcript.growth.push(GrowthRecord {
            t: self.env.steps(),
            repeat: self.repeat,
            outer: self.outer,
            call,
            len,
            sum_c_sq,
            perp_before,
            perp_after,
            wrapped,
        });
        Ok(EgOutcome {
            b: out.action,
            chain,
            len,
            perp_before,
            perp_after,
            r_sum,
            rec: new_rec,
        })
    }

    /// One outer iteration after the opening block: initial exploration,
    /// growth until the complement norm exceeds √λ, then a sustain block.
    pub fn outer_iteration(&mut self, ledger: &mut ExplorationLedger) -> Result<()> {
        let ie = self.initial_exploration(ledger)?;
        let mut a = ie.a;
        let mut rec = ie.rec;
        let mut chain = ie.chain;
        let sqrt_lambda = self.registry.lambda.sqrt();
        let mut calls = 0;
        loop {
            let perp = ledger.project_perp(a.as_vector())?.norm();
            if perp > sqrt_lambda {
                break;
            }
            if calls >= self.opts.max_growth_calls {
                return Err(Error::GrowthStalled { calls, perp_norm: perp });
            }
            let eg = self.exponential_growth(ledger, &a, rec, chain, calls)?;
            calls += 1;
            a = eg.b;
            rec = eg.rec;
            chain = eg.chain;
        }
        self.sustain(ledger, &a, rec, Phase::Sustain)
            .map_err(|e| e.in_phase("sustain"))
    }

    /// One complete pass until `λ_min(Σ v⊗v) ≥ λ`.
    pub fn run_once(&mut self, repeat: usize) -> Result<()> {
        self.repeat = repeat;
        self.outer = 0;
        let mut ledger = ExplorationLedger::new(self.dim, self.registry.kappa);
        self.initial_phase(&mut ledger)?;
        let max_outer = self.opts.max_outer_iters.unwrap_or(10 * self.dim + 10);
        while ledger.gram.min_eig() < self.registry.lambda - crate::geometry::EIG_THRESHOLD_SLACK {
            self.outer += 1;
            if self.outer > max_outer {
                return Err(Error::Precondition(format!("no certificate after {max_outer} outer iterations")));
            }
            self.outer_iteration(&mut ledger)?;
        }
        Ok(())
    }

    /// Like [`run_once`](Self::run_once) but stops after the first outer
    /// iteration's growth loop; exposes the intermediate outcomes.
    pub fn probe_first_iteration(&mut self) -> Result<(IeOutcome, Vec<EgOutcome>, ExplorationLedger)> {
        let mut ledger = ExplorationLedger::new(self.dim, self.registry.kappa);
        self.initial_phase(&mut ledger)?;
        if ledger.gram.min_eig() >= self.registry.lambda {
            return Err(Error::Precondition("nothing left to explore".into()));
        }
        self.outer = 1;
        let ie = self.initial_exploration(&mut ledger)?;
        let mut growth = Vec::new();
        let (mut a, mut rec, mut chain) = (ie.a.clone(), ie.rec, ie.chain.clone());
        while ledger.project_perp(a.as_vector())?.norm() <= self.registry.lambda.sqrt() {
            if growth.len() >= self.opts.max_growth_calls {
                break;
            }
            let eg = self.exponential_growth(&mut ledger, &a, rec, chain, growth.len())?;
            a = eg.b.clone();
            rec = eg.rec;
            chain = eg.chain.clone();
            growth.push(eg);
        }
        Ok((ie, growth, ledger))
    }
}
