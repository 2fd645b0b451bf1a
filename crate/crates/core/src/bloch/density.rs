use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::atom::{LevelLabel, ZeemanState};
use crate::error::{Error, Result};

/// Density matrix over an ordered list of Zeeman sublevels.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    basis: Vec<ZeemanState>,
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn new(basis: Vec<ZeemanState>, entries: DMatrix<Complex64>) -> Result<Self> {
        let n = basis.len();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::param("density_matrix", "dimension does not match basis"));
        }
        Ok(DensityMatrix { basis, entries })
    }

    /// Pure sublevel `state`.
    pub fn pure(basis: Vec<ZeemanState>, state: ZeemanState) -> Result<Self> {
        let i = basis
            .iter()
            .position(|s| *s == state)
            .ok_or_else(|| Error::InvalidState(format!("{state} not in basis")))?;
        let n = basis.len();
        let mut m = DMatrix::zeros(n, n);
        m[(i, i)] = Complex64::new(1.0, 0.0);
        Ok(DensityMatrix { basis, entries: m })
    }

    /// Diagonal state with level populations spread evenly over sublevels.
    pub fn from_level_populations(basis: Vec<ZeemanState>, pops: &[(LevelLabel, f64)]) -> Result<Self> {
        let n = basis.len();
        let mut m = DMatrix::zeros(n, n);
        let total: f64 = pops.iter().map(|p| p.1).sum();
        if !(total > 0.0) {
            return Err(Error::param("populations", "must sum to a positive value"));
        }
        for &(level, p) in pops {
            if p < 0.0 {
                return Err(Error::param("populations", "must be >= 0"));
            }
            let idx: Vec<usize> = (0..n).filter(|&i| basis[i].level == level).collect();
            if idx.is_empty() && p > 0.0 {
                return Err(Error::InvalidState(format!("{level} not in basis")));
            }
            for &i in &idx {
                m[(i, i)] += Complex64::new(p / total / idx.len() as f64, 0.0);
            }
        }
        Ok(DensityMatrix { basis, entries: m })
    }

    pub fn basis(&self) -> &[ZeemanState] {
        &self.basis
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    pub fn population(&self, state: ZeemanState) -> f64 {
        self.basis.iter().position(|s| *s == state).map_or(0.0, |i| self.entries[(i, i)].re)
    }

    pub fn level_population(&self, level: LevelLabel) -> f64 {
        self.basis.iter().enumerate().filter(|(_, s)| s.level == level).map(|(i, _)| self.entries[(i, i)].re).sum()
    }

    /// Largest `|rho - rho^dagger|` entry.
    pub fn hermiticity_error(&self) -> f64 {
        let d = &self.entries - self.entries.adjoint();
        d.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.entries + self.entries.adjoint()).scale(0.5);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Checks hermiticity, unit trace and positivity at the given tolerances.
    pub fn check(&self, herm_tol: f64, trace_tol: f64, pos_tol: f64) -> Result<()> {
        let h = self.hermiticity_error();
        if h > herm_tol {
            return Err(Error::Numeric(format!("density matrix not Hermitian (error {h:e})")));
        }
        let t = (self.trace() - 1.0).abs();
        if t > trace_tol {
            return Err(Error::Numeric(format!("trace deviates from 1 by {t:e}")));
        }
        let e = self.min_eigenvalue();
        if e < -pos_tol {
            return Err(Error::Numeric(format!("negative eigenvalue {e:e}")));
        }
        Ok(())
    }

    /// Validates against the default invariants (1e-10, 1e-9, 1e-8).
    pub fn validate(&self) -> Result<()> {
        self.check(1e-10, 1e-9, 1e-8)
    }
}
