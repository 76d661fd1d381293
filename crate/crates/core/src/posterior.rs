//! Weighted particle clouds over ℓ*, signal likelihoods, conditional means
//! and the Exploit map.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{check_dim, UnitVector};
use crate::priors::{PriorSpec, Sampler};
use crate::rng::{self, stream};
use crate::stats::log_norm_cdf;
use crate::tilt::TiltFunction;
use crate::{Error, Result};

/// Finite stand-in for ln 0 so that log weights stay finite.
const LOG_ZERO: f64 = -1e300;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    dim: usize,
    /// Row-major `n × dim`.
    points: Vec<f64>,
    log_weights: Vec<f64>,
    pub seed_lineage: Vec<u64>,
}

/// How [`ParticleCloud::from_prior`] draws particles from a continuous prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CloudSampling {
    Iid,
    /// Pairs `x, 2μ − x`; the cloud mean equals the prior mean exactly.
    #[default]
    Antithetic,
}

impl ParticleCloud {
    /// Equal-weight cloud.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::with_weights(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn with_weights(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Precondition("particle cloud needs at least one point".into()));
        }
        if weights.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        let dim = points[0].len();
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in &points {
            check_dim(dim, p.len())?;
            flat.extend_from_slice(p);
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Precondition("weights must be finite and non-negative".into()));
        }
        let log_weights = weights.iter().map(|&w| if w > 0.0 { w.ln() } else { LOG_ZERO }).collect();
        let cloud = ParticleCloud {
            dim,
            points: flat,
            log_weights,
            seed_lineage: vec![],
        };
        cloud.normalized_weights()?;
        Ok(cloud)
    }

    /// Draws a cloud from a prior. Empirical priors become their exact
    /// weighted atom set and ignore `n`.
    pub fn from_prior(prior: &PriorSpec, n: usize, seed: u64, sampling: CloudSampling) -> Result<Self> {
        if let PriorSpec::Empirical { points, weights } = prior {
            prior.validate()?;
            let mut c = Self::with_weights(points.clone(), weights.clone())?;
            c.seed_lineage.push(seed);
            return Ok(c);
        }
        if n == 0 {
            return Err(Error::Precondition("particle count must be at least 1".into()));
        }
        let sampler = Sampler::new(prior)?;
        let mut rng = rng::rng(seed, &[stream::CLOUD]);
        let pts: Vec<Vec<f64>> = match sampling {
            CloudSampling::Iid => (0..n).map(|_| sampler.draw(&mut rng)).collect(),
            CloudSampling::Antithetic if prior.is_centrally_symmetric() => {
                let mu = prior.mean();
                let mut pts = Vec::with_capacity(n);
                for _ in 0..n / 2 {
                    let x = sampler.draw(&mut rng);
                    let mirror = x.iter().zip(mu.iter()).map(|(xi, m)| 2.0 * m - xi).collect();
                    pts.push(x);
                    pts.push(mirror);
                }
                if n % 2 == 1 {
                    pts.push(mu.as_slice().to_vec());
                }
                pts
            }
            CloudSampling::Antithetic => (0..n).map(|_| sampler.draw(&mut rng)).collect(),
        };
        let mut c = Self::new(pts)?;
        c.seed_lineage.push(seed);
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Normalised weights, computed stably in log space.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > LOG_ZERO) || !max.is_finite() {
            return Err(Error::DegeneratePosterior {
                context: "no particle carries weight".into(),
            });
        }
        let mut w: Vec<f64> = self.log_weights.iter().map(|&l| (l - max).exp()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        Ok(w)
    }

    /// Adds a per-particle log-likelihood.
    pub(crate) fn add_log_likelihood(&self, ll: Vec<f64>, context: &str) -> Result<ParticleCloud> {
        if ll.iter().all(|l| !(*l > f64::NEG_INFINITY)) {
            return Err(Error::DegeneratePosterior {
                context: context.to_string(),
            });
        }
        let log_weights: Vec<f64> = self
            .log_weights
            .iter()
            .zip(&ll)
            .map(|(lw, l)| if l.is_finite() { (lw + l).max(LOG_ZERO) } else { LOG_ZERO })
            .collect();
        let out = ParticleCloud {
            dim: self.dim,
            points: self.points.clone(),
            log_weights,
            seed_lineage: self.seed_lineage.clone(),
        };
        out.normalized_weights().map_err(|_| Error::DegeneratePosterior {
            context: context.to_string(),
        })?;
        Ok(out)
    }

    /// Systematic resampling to equal weights.
    pub fn resample_systematic(&self, seed: u64) -> Result<ParticleCloud> {
        let w = self.normalized_weights()?;
        let n = self.len();
        let u0: f64 = rng::rng(seed, &[stream::CLOUD, 0x7265]).random::<f64>() / n as f64;
        let mut points = Vec::with_capacity(self.points.len());
        let mut cum = w[0];
        let mut i = 0;
        for k in 0..n {
            let u = u0 + k as f64 / n as f64;
            while u > cum && i + 1 < n {
                i += 1;
                cum += w[i];
            }
            points.extend_from_slice(self.point(i));
        }
        let mut lineage = self.seed_lineage.clone();
        lineage.push(seed);
        Ok(ParticleCloud {
            dim: self.dim,
            points,
            log_weights: vec![-(n as f64).ln(); n],
            seed_lineage: lineage,
        })
    }

    /// Resamples only when the effective sample size drops below `frac·n`.
    pub fn resample_if_degenerate(&self, frac: f64, seed: u64) -> Result<ParticleCloud> {
        if effective_sample_size(self)? < frac * self.len() as f64 {
            self.resample_systematic(seed)
        } else {
            Ok(self.clone())
        }
    }
}

/// One conditioning event with a closed-form (or simulated) likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalRecord {
    /// `exp(−(value − ⟨direction,ℓ⟩)²/(2·noise_var))`.
    GaussianObs {
        direction: Vec<f64>,
        noise_var: f64,
        value: f64,
    },
    /// `Φ(sign·⟨coef,ℓ⟩/noise_sd)`.
    SignThreshold { coef: Vec<f64>, noise_sd: f64, sign: i8 },
    /// `p·Φ(sign·⟨action,ℓ⟩) + (1−p)/2`.
    MixtureSign {
        action: UnitVector,
        select_prob: f64,
        sign: i8,
    },
    /// Bernoulli outcome with success probability `E_noise[f(z(x* + noise))]`.
    TiltEvent {
        tilt_id: usize,
        inner_noise_vars: Vec<f64>,
        basis: Vec<Vec<f64>>,
        outcome: bool,
        inner_n: usize,
        seed: u64,
    },
}

impl SignalRecord {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Precondition(format!("signal: {m}")));
        match self {
            SignalRecord::GaussianObs { direction, noise_var, value } => {
                check_dim(dim, direction.len())?;
                if !(*noise_var > 0.0) || !value.is_finite() {
                    return bad("noise_var must be positive and value finite");
                }
            }
            SignalRecord::SignThreshold { coef, noise_sd, sign } => {
                check_dim(dim, coef.len())?;
                if !(*noise_sd > 0.0) {
                    return bad("noise_sd must be positive");
                }
                if sign.abs() != 1 {
                    return bad("sign must be ±1");
                }
            }
            SignalRecord::MixtureSign { action, select_prob, sign } => {
                check_dim(dim, action.dim())?;
                if !(*select_prob > 0.0 && *select_prob < 1.0) {
                    return bad("select_prob must lie in (0,1)");
                }
                if sign.abs() != 1 {
                    return bad("sign must be ±1");
                }
            }
            SignalRecord::TiltEvent {
                inner_noise_vars,
                basis,
                inner_n,
                ..
            } => {
                if basis.len() != inner_noise_vars.len() || basis.is_empty() {
                    return bad("tilt basis and noise variances disagree");
                }
                for w in basis {
                    check_dim(dim, w.len())?;
                }
                if inner_noise_vars.iter().any(|v| !(*v > 0.0)) || *inner_n == 0 {
                    return bad("tilt noise variances must be positive and inner_n ≥ 1");
                }
            }
        }
        Ok(())
    }

    fn kind(&self) -> &'static str {
        match self {
            SignalRecord::GaussianObs { .. } => "gaussian_obs",
            SignalRecord::SignThreshold { .. } => "sign_threshold",
            SignalRecord::MixtureSign { .. } => "mixture_sign",
            SignalRecord::TiltEvent { .. } => "tilt_event",
        }
    }
}

/// A tilt function together with the cloud that defines its `z` map.
#[derive(Debug, Clone)]
pub struct TiltContext {
    pub tilt: TiltFunction,
    pub reference: ParticleCloud,
}

/// Tilt functions referenced by `tilt_event` signals.
#[derive(Debug, Clone, Default)]
pub struct TiltRegistry {
    entries: BTreeMap<usize, TiltContext>,
}

impl TiltRegistry {
    pub fn insert(&mut self, ctx: TiltContext) -> usize {
        let id = self.entries.keys().next_back().map_or(0, |k| k + 1);
        self.entries.insert(id, ctx);
        id
    }

    pub fn insert_with_id(&mut self, id: usize, ctx: TiltContext) {
        self.entries.insert(id, ctx);
    }

    pub fn get(&self, id: usize) -> Result<&TiltContext> {
        self.entries.get(&id).ok_or(Error::UnknownTilt(id))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bayes update by one signal. Tilt events need [`reweight_with`].
pub fn reweight(cloud: &ParticleCloud, s: &SignalRecord) -> Result<ParticleCloud> {
    reweight_with(cloud, s, &TiltRegistry::default())
}

pub fn reweight_with(cloud: &ParticleCloud, s: &SignalRecord, tilts: &TiltRegistry) -> Result<ParticleCloud> {
    s.validate(cloud.dim())?;
    let n = cloud.len();
    let ll: Vec<f64> = match s {
        SignalRecord::GaussianObs { direction, noise_var, value } => (0..n)
            .into_par_iter()
            .map(|i| -(value - dot(direction, cloud.point(i))).powi(2) / (2.0 * noise_var))
            .collect(),
        SignalRecord::SignThreshold { coef, noise_sd, sign } => {
            let s = f64::from(*sign);
            (0..n)
                .into_par_iter()
                .map(|i| log_norm_cdf(s * dot(coef, cloud.point(i)) / noise_sd))
                .collect()
        }
        SignalRecord::MixtureSign { action, select_prob, sign } => {
            let s = f64::from(*sign);
            let p = *select_prob;
            (0..n)
                .into_par_iter()
                .map(|i| (p * log_norm_cdf(s * action.dot(cloud.point(i))).exp() + 0.5 * (1.0 - p)).ln())
                .collect()
        }
        SignalRecord::TiltEvent {
            tilt_id,
            inner_noise_vars,
            basis,
            outcome,
            inner_n,
            seed,
        } => {
            let ctx = tilts.get(*tilt_id)?;
            let basis: Vec<DVector<f64>> = basis.iter().map(|b| DVector::from_column_slice(b)).collect();
            let t = tilt_likelihood_with_reference(
                cloud,
                &ctx.reference,
                &ctx.tilt,
                &basis,
                inner_noise_vars,
                *inner_n,
                *seed,
            )?;
            tilt_log_likelihood(&t, *outcome)
        }
    };
    cloud.add_log_likelihood(ll, s.kind())
}

/// Log-likelihood of a tilt outcome from per-particle success probabilities.
pub(crate) fn tilt_log_likelihood(t: &[f64], outcome: bool) -> Vec<f64> {
    t.iter().map(|p| if outcome { p.ln() } else { (1.0 - p).ln() }).collect()
}

/// Applies every signal in order.
pub fn reweight_all(cloud: &ParticleCloud, signals: &[SignalRecord], tilts: &TiltRegistry) -> Result<ParticleCloud> {
    let mut c = cloud.clone();
    for s in signals {
        c = reweight_with(&c, s, tilts)?;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMean {
    pub mean: Vec<f64>,
    pub norm: f64,
    /// Monte-Carlo standard error of `mean`, aggregated in ℓ₂.
    pub credible_radius: f64,
}

pub fn posterior_mean(cloud: &ParticleCloud) -> Result<PosteriorMean> {
    let w = cloud.normalized_weights()?;
    let d = cloud.dim();
    let mut mean = vec![0.0; d];
    for (wi, p) in w.iter().zip(cloud.points()) {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += wi * x;
        }
    }
    let mut var = 0.0;
    for (wi, p) in w.iter().zip(cloud.points()) {
        let sq: f64 = p.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum();
        var += wi * wi * sq;
    }
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(PosteriorMean {
        mean,
        norm,
        credible_radius: var.sqrt(),
    })
}

pub fn effective_sample_size(cloud: &ParticleCloud) -> Result<f64> {
    let w = cloud.normalized_weights()?;
    Ok(1.0 / w.iter().map(|x| x * x).sum::<f64>())
}

/// When a posterior mean counts as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroRule {
    pub zero_tol: f64,
    /// Extra multiple of the credible radius below which the mean is zero.
    #[serde(default)]
    pub zero_sigma: f64,
}

impl ZeroRule {
    pub fn default_for(dim: usize) -> Self {
        ZeroRule {
            zero_tol: 1e-8 * (dim as f64).sqrt(),
            zero_sigma: 0.0,
        }
    }

    pub fn threshold(&self, m: &PosteriorMean) -> f64 {
        self.zero_tol.max(self.zero_sigma * m.credible_radius)
    }
}

#[derive(Debug, Clone)]
pub struct ExploitOutcome {
    pub action: UnitVector,
    pub mean: PosteriorMean,
    pub fell_back: bool,
}

/// Normalised conditional mean given `signals`, or `fallback` when the mean
/// is zero.
pub fn exploit(
    cloud: &ParticleCloud,
    signals: &[SignalRecord],
    fallback: &UnitVector,
    zero_tol: f64,
) -> Result<UnitVector> {
    let rule = ZeroRule {
        zero_tol,
        zero_sigma: 0.0,
    };
    Ok(exploit_with(cloud, signals, fallback, rule, &TiltRegistry::default())?.action)
}

pub fn exploit_with(
    cloud: &ParticleCloud,
    signals: &[SignalRecord],
    fallback: &UnitVector,
    rule: ZeroRule,
    tilts: &TiltRegistry,
) -> Result<ExploitOutcome> {
    check_dim(cloud.dim(), fallback.dim())?;
    let post = reweight_all(cloud, signals, tilts)?;
    let mean = posterior_mean(&post)?;
    Ok(action_from_mean(mean, fallback, rule))
}

pub fn action_from_mean(mean: PosteriorMean, fallback: &UnitVector, rule: ZeroRule) -> ExploitOutcome {
    if mean.norm > rule.threshold(&mean) {
        if let Some(a) = UnitVector::normalize(&DVector::from_column_slice(&mean.mean)) {
            return ExploitOutcome {
                action: a,
                mean,
                fell_back: false,
            };
        }
    }
    ExploitOutcome {
        action: fallback.clone(),
        mean,
        fell_back: true,
    }
}

/// A cloud projected onto an orthonormal basis, ready for repeated
/// conditional-mean queries.
#[derive(Debug, Clone)]
pub struct ProjectedCloud {
    ell: usize,
    coords: Vec<f64>,
    log_weights: Vec<f64>,
}

impl ProjectedCloud {
    pub fn new(cloud: &ParticleCloud, basis: &[DVector<f64>]) -> Result<Self> {
        let ell = basis.len();
        for w in basis {
            check_dim(cloud.dim(), w.len())?;
        }
        let mut coords = Vec::with_capacity(cloud.len() * ell);
        for p in cloud.points() {
            coords.extend(basis.iter().map(|w| dot(w.as_slice(), p)));
        }
        Ok(ProjectedCloud {
            ell,
            coords,
            log_weights: cloud.log_weights().to_vec(),
        })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn coords(&self, i: usize) -> &[f64] {
        &self.coords[i * self.ell..(i + 1) * self.ell]
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    /// `E[x | ŷ = y]` where `ŷ_ℓ = x_ℓ + N(0, noise_vars_ℓ)` independently.
    pub fn conditional_mean(&self, y: &[f64], noise_vars: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.ell, y.len())?;
        check_dim(self.ell, noise_vars.len())?;
        let ll: Vec<f64> = (0..self.len())
            .map(|i| {
                let x = self.coords(i);
                self.log_weights[i]
                    - x.iter()
                        .zip(y)
                        .zip(noise_vars)
                        .map(|((xi, yi), v)| (yi - xi).powi(2) / (2.0 * v))
                        .sum::<f64>()
            })
            .collect();
        let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || max <= LOG_ZERO {
            return Err(Error::DegeneratePosterior {
                context: "z map".into(),
            });
        }
        let mut z = vec![0.0; self.ell];
        let mut total = 0.0;
        for (i, l) in ll.iter().enumerate() {
            let w = (l - max).exp();
            total += w;
            for (zk, xk) in z.iter_mut().zip(self.coords(i)) {
                *zk += w * xk;
            }
        }
        z.iter_mut().for_each(|v| *v /= total);
        Ok(z)
    }
}

/// `E[(⟨ℓ,w₁⟩,…,⟨ℓ,w_k⟩) | ŷ = y_hat]` under `cloud`.
pub fn z_map(y_hat: &[f64], cloud: &ParticleCloud, basis: &[DVector<f64>], noise_vars: &[f64]) -> Result<Vec<f64>> {
    if noise_vars.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Precondition("noise variances must be positive".into()));
    }
    ProjectedCloud::new(cloud, basis)?.conditional_mean(y_hat, noise_vars)
}

/// Simulated `ŷ` values `x_i + noise` for particle `i`, one per inner draw.
/// Shared by tilt construction and tilt likelihoods so both see identical
/// noise.
pub fn inner_noisy_coords(x: &[f64], noise_sds: &[f64], inner_n: usize, seed: u64, i: usize) -> Vec<Vec<f64>> {
    let mut rng = rng::rng(seed, &[stream::TILT_INNER, i as u64]);
    (0..inner_n)
        .map(|_| {
            x.iter()
                .zip(noise_sds)
                .map(|(xi, s)| xi + s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Per-particle probability of Ψ = 1, with the `z` map taken from `cloud`.
pub fn tilt_likelihood(
    cloud: &ParticleCloud,
    tilt: &TiltFunction,
    basis: &[DVector<f64>],
    noise_vars: &[f64],
    inner_n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    tilt_likelihood_with_reference(cloud, cloud, tilt, basis, noise_vars, inner_n, seed)
}

/// As [`tilt_likelihood`], with the `z` map taken from `reference`.
pub fn tilt_likelihood_with_reference(
    cloud: &ParticleCloud,
    reference: &ParticleCloud,
    tilt: &TiltFunction,
    basis: &[DVector<f64>],
    noise_vars: &[f64],
    inner_n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if inner_n == 0 {
        return Err(Error::Precondition("inner_n must be at least 1".into()));
    }
    if noise_vars.len() != basis.len() || noise_vars.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Precondition("noise variances must be positive, one per basis vector".into()));
    }
    let own = ProjectedCloud::new(cloud, basis)?;
    let refp = ProjectedCloud::new(reference, basis)?;
    let sds: Vec<f64> = noise_vars.iter().map(|v| v.sqrt()).collect();
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let ys = inner_noisy_coords(own.coords(i), &sds, inner_n, seed, i);
            let mut acc = 0.0;
            for y in &ys {
                let z = refp.conditional_mean(y, noise_vars)?;
                acc += crate::tilt::eval_tilt(tilt, &z)?;
            }
            Ok(acc / inner_n as f64)
        })
        .collect()
}
