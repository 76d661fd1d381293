use nalgebra::DVector;

use crate::geometry::{GramState, UnitVector};
use crate::{Error, Result};

/// Persistent state of one exploration run: the confirmed directions, their
/// reward logs, and the spectral split of `M = Σ v⊗v` at threshold λ.
#[derive(Debug, Clone)]
pub struct ExplorationLedger {
    pub dirs: Vec<UnitVector>,
    pub reward_logs: Vec<Vec<f64>>,
    pub gram: GramState,
    pub ell_lambda: usize,
    pub s_basis: Vec<DVector<f64>>,
    pub t: u64,
    kappa: usize,
}

impl ExplorationLedger {
    pub fn new(dim: usize, kappa: usize) -> Self {
        ExplorationLedger {
            dirs: vec![],
            reward_logs: vec![],
            gram: GramState::zeros(dim),
            ell_lambda: 0,
            s_basis: vec![],
            t: 0,
            kappa,
        }
    }

    pub fn dim(&self) -> usize {
        self.gram.dim()
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// Number of confirmed directions `j`.
    pub fn j(&self) -> usize {
        self.dirs.len()
    }

    /// Records `v_{j+1}` with its `κ` logged rewards.
    pub fn push(&mut self, v: UnitVector, log: Vec<f64>) -> Result<()> {
        if log.len() != self.kappa {
            return Err(Error::Precondition(format!(
                "reward log has {} entries, expected {}",
                log.len(),
                self.kappa
            )));
        }
        self.gram.update_in_place(&v)?;
        self.dirs.push(v);
        self.reward_logs.push(log);
        Ok(())
    }

    /// Re-decomposes `M` and recomputes `ℓ_λ` and the explored basis.
    pub fn refresh(&mut self, lambda: f64) -> Result<()> {
        self.gram = self.gram.clone().eigendecompose()?;
        self.ell_lambda = self.gram.ell(lambda);
        self.s_basis = self.gram.top_basis(self.ell_lambda);
        Ok(())
    }

    /// `w_{ℓ_λ+1}`, the leading unexplored eigenvector.
    pub fn fallback(&self) -> Result<UnitVector> {
        if self.gram.dirty {
            return Err(Error::Precondition("ledger not refreshed".into()));
        }
        if self.ell_lambda >= self.dim() {
            return Err(Error::Precondition("no unexplored direction left".into()));
        }
        UnitVector::new(self.gram.eigvec(self.ell_lambda))
    }

    pub fn project_perp(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        crate::geometry::project_complement(a, &self.s_basis)
    }

    pub fn project_s(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        crate::geometry::project_onto(a, &self.s_basis)
    }

    /// `‖M − Σ v⊗v‖_max`, for invariant checks.
    pub fn gram_drift(&self) -> f64 {
        let mut m = self.gram.m.clone();
        for v in &self.dirs {
            m -= v.as_vector() * v.as_vector().transpose();
        }
        m.amax()
    }
}
