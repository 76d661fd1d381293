//! Prior distributions over the hidden parameter, their samplers, the
//! canonical rotation (mean along +e₁), and Monte-Carlo estimates of the
//! non-degeneracy constants `(c_d, ε_d, σ_var, K)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::sym_eigen_desc;
use crate::rng::{self, stream, SimRng};
use crate::stats::{wilson_lower, Z95};
use crate::{Error, Result};

/// Empirical priors with fewer atoms than this are refused by
/// [`estimate_constants`].
pub const MIN_EMPIRICAL_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    UniformBall {
        radius: f64,
        center: Vec<f64>,
    },
    /// Uniform on a convex body `K` with `B_r(0) ⊆ K ⊆ B_1(0)`.
    RRegularBody { r: f64, body: Body },
    Empirical {
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Body {
    Ball { radius: f64, center: Vec<f64> },
    /// Axis-aligned box `[lo, hi]`, optionally followed by an orthogonal map
    /// (rows) applied to every sample.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation: Option<Vec<Vec<f64>>>,
    },
}

/// Constants of the non-degeneracy assumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionConstants {
    /// Threshold in `min_v P(⟨v,ℓ*⟩ ≥ c_d) ≥ ε_d`.
    pub c_d: f64,
    pub eps_d: f64,
    /// Minimum directional variance.
    pub sigma_var: f64,
    /// Sub-gaussian parameter.
    pub k_subg: f64,
}

impl AssumptionConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c_d > 0.0
            && self.eps_d > 0.0
            && self.eps_d <= 1.0
            && self.sigma_var > 0.0
            && self.k_subg > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidPrior(format!("assumption constants out of range: {self:?}")))
        }
    }
}

impl PriorSpec {
    pub fn gaussian(mean: Vec<f64>, covariance: DMatrix<f64>) -> Self {
        PriorSpec::Gaussian {
            mean,
            covariance: rows(&covariance),
        }
    }

    pub fn isotropic_gaussian(mean: Vec<f64>, var: f64) -> Self {
        let d = mean.len();
        Self::gaussian(mean, DMatrix::identity(d, d) * var)
    }

    pub fn uniform_ball(dim: usize, radius: f64) -> Self {
        PriorSpec::UniformBall {
            radius,
            center: vec![0.0; dim],
        }
    }

    /// Equal-weight empirical prior.
    pub fn empirical(points: Vec<Vec<f64>>) -> Self {
        let n = points.len();
        PriorSpec::Empirical {
            points,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::Gaussian { mean, .. } => mean.len(),
            PriorSpec::UniformBall { center, .. } => center.len(),
            PriorSpec::RRegularBody { body, .. } => match body {
                Body::Ball { center, .. } => center.len(),
                Body::Box { lo, .. } => lo.len(),
            },
            PriorSpec::Empirical { points, .. } => points.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidPrior("zero dimension".into()));
        }
        match self {
            PriorSpec::Gaussian { covariance, .. } => {
                let c = matrix(covariance, d)?;
                let (vals, _) = sym_eigen_desc(&c)?;
                if vals[d - 1] <= 1e-10 {
                    return Err(Error::InvalidPrior(format!(
                        "covariance not positive definite (min eigenvalue {})",
                        vals[d - 1]
                    )));
                }
            }
            PriorSpec::UniformBall { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidPrior("radius must be positive".into()));
                }
            }
            PriorSpec::RRegularBody { r, body } => {
                if !(*r > 0.0 && *r < 1.0) {
                    return Err(Error::InvalidPrior(format!("r = {r} not in (0,1)")));
                }
                validate_body(*r, body, d)?;
            }
            PriorSpec::Empirical { points, weights } => {
                if points.len() != weights.len() {
                    return Err(Error::InvalidPrior("points/weights length mismatch".into()));
                }
                if points.iter().any(|p| p.len() != d) {
                    return Err(Error::InvalidPrior("ragged empirical points".into()));
                }
                if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                    return Err(Error::InvalidPrior("negative or non-finite weight".into()));
                }
                let s: f64 = weights.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidPrior(format!("weights sum to {s}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// Exact mean of the distribution.
    pub fn mean(&self) -> DVector<f64> {
        let d = self.dim();
        match self {
            PriorSpec::Gaussian { mean, .. } => DVector::from_column_slice(mean),
            PriorSpec::UniformBall { center, .. } => DVector::from_column_slice(center),
            PriorSpec::RRegularBody { body, .. } => match body {
                Body::Ball { center, .. } => DVector::from_column_slice(center),
                Body::Box { lo, hi, rotation } => {
                    let mid = DVector::from_iterator(d, lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)));
                    match rotation {
                        Some(r) => matrix(r, d).expect("validated rotation") * mid,
                        None => mid,
                    }
                }
            },
            PriorSpec::Empirical { points, weights } => {
                let mut m = DVector::zeros(d);
                for (p, &w) in points.iter().zip(weights) {
                    for (mi, pi) in m.iter_mut().zip(p) {
                        *mi += w * pi;
                    }
                }
                m
            }
        }
    }

    /// Point-symmetric about its mean (admits antithetic sampling).
    pub fn is_centrally_symmetric(&self) -> bool {
        !matches!(self, PriorSpec::Empirical { .. })
    }

    /// Applies an orthogonal map `q` to the distribution.
    pub fn rotate(&self, q: &DMatrix<f64>) -> Result<PriorSpec> {
        let d = self.dim();
        let rot = |v: &[f64]| -> Vec<f64> { (q * DVector::from_column_slice(v)).as_slice().to_vec() };
        Ok(match self {
            PriorSpec::Gaussian { mean, covariance } => {
                let c = matrix(covariance, d)?;
                let c2 = q * c * q.transpose();
                PriorSpec::Gaussian {
                    mean: rot(mean),
                    covariance: rows(&((&c2 + c2.transpose()) * 0.5)),
                }
            }
            PriorSpec::UniformBall { radius, center } => PriorSpec::UniformBall {
                radius: *radius,
                center: rot(center),
            },
            PriorSpec::RRegularBody { r, body } => PriorSpec::RRegularBody {
                r: *r,
                body: match body {
                    Body::Ball { radius, center } => Body::Ball {
                        radius: *radius,
                        center: rot(center),
                    },
                    Body::Box { lo, hi, rotation } => {
                        let base = match rotation {
                            Some(m) => matrix(m, d)?,
                            None => DMatrix::identity(d, d),
                        };
                        Body::Box {
                            lo: lo.clone(),
                            hi: hi.clone(),
                            rotation: Some(rows(&(q * base))),
                        }
                    }
                },
            },
            PriorSpec::Empirical { points, weights } => PriorSpec::Empirical {
                points: points.iter().map(|p| rot(p)).collect(),
                weights: weights.clone(),
            },
        })
    }
}

fn validate_body(r: f64, body: &Body, d: usize) -> Result<()> {
    match body {
        Body::Ball { radius, center } => {
            if center.len() != d {
                return Err(Error::InvalidPrior("ball centre dimension".into()));
            }
            let cn = center.iter().map(|x| x * x).sum::<f64>().sqrt();
            if cn + r > radius + 1e-12 || cn + radius > 1.0 + 1e-12 {
                return Err(Error::InvalidPrior("ball body violates B_r ⊆ K ⊆ B_1".into()));
            }
        }
        Body::Box { lo, hi, rotation } => {
            if lo.len() != d || hi.len() != d {
                return Err(Error::InvalidPrior("box dimension".into()));
            }
            if lo.iter().zip(hi).any(|(a, b)| !(a < b) || *a > -r || *b < r) {
                return Err(Error::InvalidPrior("box must contain B_r(0)".into()));
            }
            let corner: f64 = lo.iter().zip(hi).map(|(a, b)| a.abs().max(b.abs()).powi(2)).sum();
            if corner.sqrt() > 1.0 + 1e-12 {
                return Err(Error::InvalidPrior("box not inside the unit ball".into()));
            }
            if let Some(m) = rotation {
                let q = matrix(m, d)?;
                if (q.transpose() * &q - DMatrix::<f64>::identity(d, d)).amax() > 1e-9 {
                    return Err(Error::InvalidPrior("box rotation not orthogonal".into()));
                }
            }
        }
    }
    Ok(())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn matrix(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidPrior(format!("expected a {d}x{d} matrix")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

/// Stateful sampler; construct once per prior to amortise factorizations.
pub struct Sampler {
    kind: SamplerKind,
    dim: usize,
}

enum SamplerKind {
    Gaussian { mean: DVector<f64>, chol: DMatrix<f64> },
    Ball { radius: f64, center: DVector<f64> },
    Box { lo: Vec<f64>, hi: Vec<f64>, rotation: Option<DMatrix<f64>> },
    Atoms { points: Vec<Vec<f64>>, index: WeightedIndex<f64> },
}

impl Sampler {
    pub fn new(prior: &PriorSpec) -> Result<Self> {
        prior.validate()?;
        let d = prior.dim();
        let kind = match prior {
            PriorSpec::Gaussian { mean, covariance } => {
                let c = matrix(covariance, d)?;
                let chol = c
                    .cholesky()
                    .ok_or_else(|| Error::InvalidPrior("covariance not SPD".into()))?
                    .l();
                SamplerKind::Gaussian {
                    mean: DVector::from_column_slice(mean),
                    chol,
                }
            }
            PriorSpec::UniformBall { radius, center } => SamplerKind::Ball {
                radius: *radius,
                center: DVector::from_column_slice(center),
            },
            PriorSpec::RRegularBody { body, .. } => match body {
                Body::Ball { radius, center } => SamplerKind::Ball {
                    radius: *radius,
                    center: DVector::from_column_slice(center),
                },
                Body::Box { lo, hi, rotation } => SamplerKind::Box {
                    lo: lo.clone(),
                    hi: hi.clone(),
                    rotation: rotation.as_ref().map(|m| matrix(m, d)).transpose()?,
                },
            },
            PriorSpec::Empirical { points, weights } => SamplerKind::Atoms {
                points: points.clone(),
                index: WeightedIndex::new(weights)
                    .map_err(|e| Error::InvalidPrior(format!("weights: {e}")))?,
            },
        };
        Ok(Sampler { kind, dim: d })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draw(&self, rng: &mut SimRng) -> Vec<f64> {
        let d = self.dim;
        match &self.kind {
            SamplerKind::Gaussian { mean, chol } => {
                let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
                (mean + chol * z).as_slice().to_vec()
            }
            SamplerKind::Ball { radius, center } => {
                let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                let u: f64 = rng.random();
                let rad = radius * u.powf(1.0 / d as f64);
                g.iter().zip(center.iter()).map(|(x, c)| c + rad * x / n).collect()
            }
            SamplerKind::Box { lo, hi, rotation } => {
                let x = DVector::from_iterator(d, lo.iter().zip(hi).map(|(a, b)| rng.random_range(*a..*b)));
                match rotation {
                    Some(q) => (q * x).as_slice().to_vec(),
                    None => x.as_slice().to_vec(),
                }
            }
            SamplerKind::Atoms { points, index } => points[index.sample(rng)].clone(),
        }
    }
}

/// Draws `n` iid samples; deterministic in `seed`.
pub fn sample(prior: &PriorSpec, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Precondition("sample count must be at least 1".into()));
    }
    let sampler = Sampler::new(prior)?;
    let mut rng = rng::rng(seed, &[stream::PRIOR_SAMPLE]);
    Ok((0..n).map(|_| sampler.draw(&mut rng)).collect())
}

/// Proper rotation `Q` (det +1 when d ≥ 2) with `Q·m = ‖m‖e₁`.
pub fn canonical_rotation(m: &DVector<f64>) -> DMatrix<f64> {
    let d = m.len();
    let norm = m.norm();
    let mut target = DVector::zeros(d);
    if d > 0 {
        target[0] = norm;
    }
    let v = m - &target;
    if norm == 0.0 || v.norm() <= 1e-14 * norm.max(1.0) {
        return DMatrix::identity(d, d);
    }
    let mut q = DMatrix::identity(d, d) - (&v * v.transpose()) * (2.0 / v.norm_squared());
    if d >= 2 {
        q.row_mut(d - 1).neg_mut();
    }
    q
}

/// Rotates the prior so that its mean lies on the non-negative e₁ axis.
/// Returns the rotated prior and the rotation applied.
pub fn canonicalize(prior: &PriorSpec) -> Result<(PriorSpec, DMatrix<f64>)> {
    prior.validate()?;
    let q = canonical_rotation(&prior.mean());
    if q == DMatrix::identity(q.nrows(), q.ncols()) {
        return Ok((prior.clone(), q));
    }
    Ok((prior.rotate(&q)?, q))
}

/// Rejection-sampled truncated Gaussian, returned as an equal-weight
/// empirical prior.
pub fn truncated_gaussian(
    mean: &[f64],
    covariance: &DMatrix<f64>,
    accept: impl Fn(&[f64]) -> bool,
    n: usize,
    seed: u64,
    max_tries: usize,
) -> Result<PriorSpec> {
    let sampler = Sampler::new(&PriorSpec::gaussian(mean.to_vec(), covariance.clone()))?;
    let mut rng = rng::rng(seed, &[stream::PRIOR_SAMPLE, 0x7472]);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n {
        if tries >= max_tries {
            return Err(Error::InvalidPrior("rejection sampler acceptance too low".into()));
        }
        tries += 1;
        let x = sampler.draw(&mut rng);
        if accept(&x) {
            out.push(x);
        }
    }
    Ok(PriorSpec::empirical(out))
}

/// Loads an empirical prior from whitespace-separated rows. Lines starting
/// with `#` are comments; a `#dim N` comment fixes the dimension so that a
/// row with `N + 1` columns carries a trailing weight. Without it, `dim`
/// decides; with neither, every column is a coordinate.
pub fn load_empirical(path: &Path, dim: Option<usize>) -> Result<PriorSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_empirical(&text, dim)
}

pub fn parse_empirical(text: &str, dim: Option<usize>) -> Result<PriorSpec> {
    let mut dim = dim;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(n) = rest.trim().strip_prefix("dim") {
                dim = Some(n.trim().parse().map_err(|_| {
                    Error::InvalidPrior(format!("line {}: bad #dim header", lineno + 1))
                })?);
            }
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidPrior(format!("line {}: {e}", lineno + 1)))?;
        rows.push(row);
    }
    let Some(first) = rows.first() else {
        return Err(Error::InvalidPrior("no points".into()));
    };
    let cols = first.len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidPrior("inconsistent column count".into()));
    }
    let d = dim.unwrap_or(cols);
    let weighted = match cols.checked_sub(d) {
        Some(0) => false,
        Some(1) => true,
        _ => return Err(Error::InvalidPrior(format!("{cols} columns for dimension {d}"))),
    };
    let (points, raw): (Vec<Vec<f64>>, Vec<f64>) = rows
        .into_iter()
        .map(|mut r| {
            let w = if weighted { r.pop().unwrap() } else { 1.0 };
            (r, w)
        })
        .unzip();
    if raw.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidPrior("negative weight".into()));
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidPrior("weights sum to zero".into()));
    }
    let prior = PriorSpec::Empirical {
        points,
        weights: raw.iter().map(|w| w / total).collect(),
    };
    prior.validate()?;
    Ok(prior)
}

/// Monte-Carlo estimate of the assumption constants.
///
/// Directions are `n_dirs` uniform random unit vectors plus the ± eigenvectors
/// of the sample covariance. `ε(c)` is the Wilson 95% lower bound of the
/// worst-direction tail mass `P(⟨v,ℓ*⟩ ≥ c)`; the reported `(c_d, ε_d)` maximises
/// `c·ε(c)` over a grid of `c`. `K` is the smallest value for which the
/// empirical tails satisfy `P̂(|⟨v,ℓ*⟩| ≥ t) ≤ 2exp(−t²/K²)` at every sample
/// point of every direction.
pub fn estimate_constants(
    prior: &PriorSpec,
    n_dirs: usize,
    n_samples: usize,
    seed: u64,
) -> Result<AssumptionConstants> {
    if n_dirs == 0 || n_samples < 2 {
        return Err(Error::Precondition("need n_dirs ≥ 1 and n_samples ≥ 2".into()));
    }
    if let PriorSpec::Empirical { points, .. } = prior {
        if points.len() < MIN_EMPIRICAL_POINTS {
            return Err(Error::TooFewPoints {
                got: points.len(),
                min: MIN_EMPIRICAL_POINTS,
            });
        }
    }
    let d = prior.dim();
    let xs = sample(prior, n_samples, seed)?;
    let n = xs.len() as f64;

    let mut mean = DVector::zeros(d);
    for x in &xs {
        for (m, xi) in mean.iter_mut().zip(x) {
            *m += xi / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for x in &xs {
        let c = DVector::from_column_slice(x) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    let (vals, vecs) = sym_eigen_desc(&cov)?;
    let sigma_var = vals[d - 1].max(0.0);

    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(n_dirs + 2 * d);
    let mut rng = rng::rng(seed, &[stream::DIRECTIONS]);
    while dirs.len() < n_dirs {
        let g = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        if let Some(u) = (g.norm() > 0.0).then(|| &g / g.norm()) {
            dirs.push(u);
        }
    }
    for i in 0..d {
        let w = vecs.column(i).into_owned();
        dirs.push(-&w);
        dirs.push(w);
    }

    let projections: Vec<Vec<f64>> = dirs
        .iter()
        .map(|v| {
            let mut p: Vec<f64> = xs.iter().map(|x| v.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
            p.sort_by(|a, b| b.total_cmp(a));
            p
        })
        .collect();

    let scale = vals[0].max(1e-12).sqrt() + mean.norm();
    let grid: Vec<f64> = (1..=240).map(|k| k as f64 * 3.0 * scale / 240.0).collect();
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for &c in &grid {
        let eps = projections
            .iter()
            .map(|p| wilson_lower(p.partition_point(|&x| x >= c), p.len(), Z95))
            .fold(f64::INFINITY, f64::min);
        if eps > 0.0 && c * eps > best.2 {
            best = (c, eps, c * eps);
        }
    }
    if !(best.2 > 0.0) {
        return Err(Error::InvalidPrior(
            "prior confined to a half-space: no positive tail mass in some direction".into(),
        ));
    }

    let two_n = 2.0 * n;
    let k_subg = projections
        .iter()
        .flat_map(|p| {
            let mut a: Vec<f64> = p.iter().map(|x| x.abs()).collect();
            a.sort_by(|x, y| y.total_cmp(x));
            a.into_iter()
                .enumerate()
                .map(move |(r, t)| t / (two_n / (r + 1) as f64).ln().sqrt())
        })
        .fold(0.0_f64, f64::max);

    let ac = AssumptionConstants {
        c_d: best.0,
        eps_d: best.1.min(1.0),
        sigma_var,
        k_subg,
    };
    ac.validate()?;
    Ok(ac)
}
