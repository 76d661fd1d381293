//! Vectors on the unit sphere, the Gram-matrix spectral cache, subspace
//! projections, and the two rank-one facts the exploration loop leans on:
//! bounded-coefficient reconstruction from the explored directions, and the
//! tail-eigenvalue gain of a rank-one update.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on ‖a‖ = 1.
pub const UNIT_TOL: f64 = 1e-9;
/// Absolute slack when comparing eigenvalues against a threshold.
pub const EIG_THRESHOLD_SLACK: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-9;

/// A point on the unit sphere of ℝᵈ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(DVector<f64>);

impl UnitVector {
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        let norm = coords.norm();
        if (norm - 1.0).abs() > UNIT_TOL || !norm.is_finite() {
            return Err(Error::NotUnit { norm });
        }
        Ok(UnitVector(coords))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    /// Normalises `v`; `None` for the zero vector.
    pub fn normalize(v: &DVector<f64>) -> Option<Self> {
        let n = v.norm();
        (n > 0.0 && n.is_finite()).then(|| UnitVector(v / n))
    }

    /// Standard basis vector e_{i+1} (zero-based `i`).
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        UnitVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::new(DVector::from_vec(v))
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(u: UnitVector) -> Vec<f64> {
        u.0.as_slice().to_vec()
    }
}

/// Running Gram matrix `M = Σ a⊗a` with a cached eigendecomposition.
///
/// `eigvals` are sorted descending and `eigvecs` holds the matching
/// orthonormal eigenvectors as columns. The cache is only meaningful while
/// `dirty` is false.
#[derive(Debug, Clone)]
pub struct GramState {
    pub m: DMatrix<f64>,
    pub eigvals: Vec<f64>,
    pub eigvecs: DMatrix<f64>,
    pub dirty: bool,
}

impl GramState {
    pub fn zeros(dim: usize) -> Self {
        GramState {
            m: DMatrix::zeros(dim, dim),
            eigvals: vec![0.0; dim],
            eigvecs: DMatrix::identity(dim, dim),
            dirty: false,
        }
    }

    /// Builds `Σ vᵢ⊗vᵢ` and decomposes it.
    pub fn from_directions(dim: usize, dirs: &[UnitVector]) -> Result<Self> {
        let mut g = GramState::zeros(dim);
        for v in dirs {
            g.update_in_place(v)?;
        }
        g.eigendecompose()
    }

    /// `Σ n_k v_k⊗v_k`, the Gram matrix of a list in which `v_k` repeats
    /// `n_k` times.
    pub fn from_repeated_directions(dim: usize, dirs: &[UnitVector], counts: &[u64]) -> Result<Self> {
        if dirs.len() != counts.len() {
            return Err(Error::Precondition("one count per direction required".into()));
        }
        let mut g = GramState::zeros(dim);
        for (v, &n) in dirs.iter().zip(counts) {
            check_dim(dim, v.dim())?;
            let a = v.as_vector();
            g.m += (a * a.transpose()) * n as f64;
        }
        g.dirty = true;
        g.eigendecompose()
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// `M ← M + a⊗a`, marking the spectral cache dirty.
    pub fn update_in_place(&mut self, a: &UnitVector) -> Result<()> {
        check_dim(self.dim(), a.dim())?;
        let v = a.as_vector();
        self.m += v * v.transpose();
        self.dirty = true;
        Ok(())
    }

    /// Recomputes eigenpairs densely. Eigenvectors are normalised so that
    /// their first non-negligible coordinate is positive.
    pub fn eigendecompose(mut self) -> Result<Self> {
        let (vals, vecs) = sym_eigen_desc(&self.m)?;
        self.eigvals = vals;
        self.eigvecs = vecs;
        self.dirty = false;
        Ok(self)
    }

    /// Number of eigenvalues at or above `lambda` (with a 1e−12 slack).
    pub fn ell(&self, lambda: f64) -> usize {
        self.eigvals
            .iter()
            .take_while(|&&l| l >= lambda - EIG_THRESHOLD_SLACK)
            .count()
    }

    pub fn eigvec(&self, i: usize) -> DVector<f64> {
        self.eigvecs.column(i).into_owned()
    }

    /// The leading `k` eigenvectors.
    pub fn top_basis(&self, k: usize) -> Vec<DVector<f64>> {
        (0..k).map(|i| self.eigvec(i)).collect()
    }

    pub fn min_eig(&self) -> f64 {
        self.eigvals.last().copied().unwrap_or(0.0)
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }
}

/// Returns `g` with `a⊗a` added; the result is dirty.
pub fn gram_update(g: &GramState, a: &UnitVector) -> Result<GramState> {
    let mut out = g.clone();
    out.update_in_place(a)?;
    Ok(out)
}

pub fn eigendecompose(g: &GramState) -> Result<GramState> {
    g.clone().eigendecompose()
}

/// Symmetric eigendecomposition with descending eigenvalues and the sign
/// convention "first coordinate above 1e−12 in magnitude is positive".
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
        });
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if n == 0 {
        return Ok((vec![], DMatrix::zeros(0, 0)));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: ties keep solver index order.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        vecs.set_column(col, &v);
    }
    Ok((vals, vecs))
}

/// `u − Σ⟨u,wᵢ⟩wᵢ` for an orthonormal `basis`.
pub fn project_complement(u: &DVector<f64>, basis: &[DVector<f64>]) -> Result<DVector<f64>> {
    let mut out = u.clone();
    for w in basis {
        check_dim(u.len(), w.len())?;
        let c = u.dot(w);
        out.axpy(-c, w, 1.0);
    }
    Ok(out)
}

/// `Σ⟨u,wᵢ⟩wᵢ`, the projection onto the span of an orthonormal `basis`.
pub fn project_onto(u: &DVector<f64>, basis: &[DVector<f64>]) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(u.len());
    for w in basis {
        check_dim(u.len(), w.len())?;
        out.axpy(u.dot(w), w, 1.0);
    }
    Ok(out)
}

/// Coefficients `c` with `u = Σ cᵢvᵢ` for `u` in the span of the top `ell`
/// eigenvectors of `g.m = Σ vᵢ⊗vᵢ`:
///
/// `cᵢ = Σ_{k≤ell} ⟨u,w_k⟩⟨vᵢ,w_k⟩ / λ_k`, and `Σcᵢ² ≤ 1/ε` whenever
/// `λ_ell ≥ ε` and `‖u‖ ≤ 1`.
pub fn combo_coefficients(
    u: &DVector<f64>,
    v: &[UnitVector],
    g: &GramState,
    ell: usize,
    epsilon: f64,
) -> Result<Vec<f64>> {
    if g.dirty {
        return Err(Error::Precondition("gram state not decomposed".into()));
    }
    check_dim(g.dim(), u.len())?;
    if ell == 0 || ell > g.dim() {
        return Err(Error::Precondition(format!("ell = {ell} out of range")));
    }
    if !(epsilon > 0.0) || g.eigvals[ell - 1] < epsilon - EIG_THRESHOLD_SLACK {
        return Err(Error::Precondition(format!(
            "lambda_ell = {} below epsilon = {epsilon}",
            g.eigvals[ell - 1]
        )));
    }
    if u.norm() > 1.0 + UNIT_TOL {
        return Err(Error::Precondition(format!("|u| = {} > 1", u.norm())));
    }
    let basis = g.top_basis(ell);
    let resid = project_complement(u, &basis)?.norm();
    if resid > 1e-6 {
        return Err(Error::Precondition(format!(
            "u not in span of top {ell} eigenvectors (residual {resid:e})"
        )));
    }
    let proj: Vec<f64> = basis
        .iter()
        .zip(&g.eigvals)
        .map(|(w, &l)| u.dot(w) / l)
        .collect();
    v.iter()
        .map(|vi| {
            check_dim(g.dim(), vi.dim())?;
            Ok(basis
                .iter()
                .zip(&proj)
                .map(|(w, p)| p * vi.as_vector().dot(w))
                .sum())
        })
        .collect()
}

/// Which eigenvalue index splits "large" from "tail" in the rank-one gain check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailCut {
    /// Largest index with `λ ≥ 200d³/ε²`.
    Literal,
    /// Largest index with `λ ≥ threshold`. Exploratory only.
    Threshold(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct TailGainReport {
    pub holds: bool,
    /// `Σ_{i>ℓ} λ′ᵢ`.
    pub lhs: f64,
    /// `ε/2 + Σ_{i>ℓ} λᵢ`.
    pub rhs: f64,
    pub ell: usize,
    pub complement_sq: f64,
}

/// Checks that adding `u⊗u` to `M = Σ vᵢ⊗vᵢ` raises the sum of the tail
/// eigenvalues by at least ε/2, provided `u` has squared mass at least ε
/// outside the span of the eigenvectors with eigenvalue ≥ ε.
pub fn rank_one_tail_gain_check(
    v: &[UnitVector],
    u: &DVector<f64>,
    epsilon: f64,
) -> Result<TailGainReport> {
    rank_one_tail_gain_check_with(v, u, epsilon, TailCut::Literal)
}

pub fn rank_one_tail_gain_check_with(
    v: &[UnitVector],
    u: &DVector<f64>,
    epsilon: f64,
    cut: TailCut,
) -> Result<TailGainReport> {
    tail_gain(&GramState::from_directions(u.len(), v)?, u, epsilon, cut)
}

/// As [`rank_one_tail_gain_check`] for a direction list in which `v[k]`
/// appears `counts[k]` times.
pub fn rank_one_tail_gain_check_repeated(
    v: &[UnitVector],
    counts: &[u64],
    u: &DVector<f64>,
    epsilon: f64,
) -> Result<TailGainReport> {
    tail_gain(&GramState::from_repeated_directions(u.len(), v, counts)?, u, epsilon, TailCut::Literal)
}

fn tail_gain(g: &GramState, u: &DVector<f64>, epsilon: f64, cut: TailCut) -> Result<TailGainReport> {
    let d = u.len();
    check_dim(g.dim(), d)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Precondition(format!("epsilon = {epsilon} not in (0,1)")));
    }
    if u.norm() > 1.0 + UNIT_TOL {
        return Err(Error::Precondition(format!("|u| = {} > 1", u.norm())));
    }
    let s = g.top_basis(g.ell(epsilon));
    let complement_sq = project_complement(u, &s)?.norm_squared();
    if complement_sq < epsilon {
        return Err(Error::SmallComplement {
            proj_sq: complement_sq,
            epsilon,
        });
    }
    let threshold = match cut {
        TailCut::Literal => 200.0 * (d as f64).powi(3) / (epsilon * epsilon),
        TailCut::Threshold(t) => t,
    };
    let ell = g.ell(threshold);
    let mut updated = g.m.clone();
    updated += u * u.transpose();
    let (after, _) = sym_eigen_desc(&updated)?;
    let lhs: f64 = after[ell..].iter().sum();
    let rhs: f64 = epsilon / 2.0 + g.eigvals[ell..].iter().sum::<f64>();
    // Dense eigenvalues carry absolute error of order ε_mach·‖M′‖.
    let tol = 64.0 * f64::EPSILON * d as f64 * (1.0 + updated.norm());
    let holds = lhs >= rhs - tol;
    Ok(TailGainReport {
        holds,
        lhs,
        rhs,
        ell,
        complement_sq,
    })
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
