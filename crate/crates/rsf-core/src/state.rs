//! The reduced state of a bosonic field: the pair (ρ, α) of single-particle
//! density matrix and averaged amplitude, with its entropy and the quasi-free
//! correspondence.
//!
//! ρ_{kk'} = ⟨a†_{k'} a_k⟩ is normalized to the mean particle number,
//! tr ρ = N, not to 1. The correlation matrix ρ^α = ρ − |α⟩⟨α| collects the
//! fluctuations around the averaged field and must be positive semidefinite;
//! that positivity is what makes the entropy below well defined.

use num_complex::Complex64 as C64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::operator::{
    self, eig_hermitian, hermiticity_defect, max_abs, outer, CMat, CVec, OperatorError,
    DEFAULT_TOL,
};

#[derive(Debug, Error)]
pub enum StateError {
    #[error("invalid reduced state: {reason}")]
    InvalidState { reason: String },
    #[error("divergent occupation: spectral value {value:.6e} is not above tol {tol:.1e}")]
    DivergentOccupation { value: f64, tol: f64 },
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Reduced state of the field: single-particle density matrix `rho` and
/// averaged amplitude `alpha`.
///
/// Checked constructors enforce Hermiticity of ρ and positivity of
/// ρ - |α⟩⟨α|; [`ReducedState::new_unchecked`] skips both for integrator
/// internals that revalidate at snapshot times.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    rho: CMat,
    alpha: CVec,
}

impl ReducedState {
    pub fn new(rho: CMat, alpha: CVec, tol: f64) -> Result<Self, StateError> {
        let s = Self::new_unchecked(rho, alpha);
        s.validate(tol)?;
        Ok(s)
    }

    pub fn new_unchecked(rho: CMat, alpha: CVec) -> Self {
        assert_eq!(rho.nrows(), rho.ncols(), "rho must be square");
        assert_eq!(rho.nrows(), alpha.len(), "alpha length must match rho");
        Self { rho, alpha }
    }

    /// Vacuum state of `dim` modes: ρ = 0, α = 0.
    pub fn vacuum(dim: usize) -> Self {
        Self::new_unchecked(CMat::zeros(dim, dim), CVec::zeros(dim))
    }

    /// Pure coherent state: ρ = |α⟩⟨α|.
    pub fn coherent(alpha: CVec) -> Self {
        Self::new_unchecked(outer(&alpha, &alpha), alpha)
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn rho(&self) -> &CMat {
        &self.rho
    }

    pub fn alpha(&self) -> &CVec {
        &self.alpha
    }

    /// Checks Hermiticity of ρ, finiteness, and positivity of ρ - |α⟩⟨α|.
    pub fn validate(&self, tol: f64) -> Result<(), StateError> {
        operator::ensure_finite(&self.rho)?;
        for z in self.alpha.iter() {
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(StateError::InvalidState {
                    reason: "non-finite alpha entry".into(),
                });
            }
        }
        let defect = hermiticity_defect(&self.rho);
        if defect > tol {
            return Err(StateError::InvalidState {
                reason: format!("rho Hermiticity defect {defect:.3e} exceeds tol {tol:.1e}"),
            });
        }
        let min = self.correlation_min_eigenvalue(tol)?;
        if min < -tol {
            return Err(StateError::InvalidState {
                reason: format!(
                    "correlation matrix has eigenvalue {min:.3e} below -tol ({tol:.1e})"
                ),
            });
        }
        Ok(())
    }

    /// ρ - |α⟩⟨α| without the positivity check.
    pub fn correlation_matrix_unchecked(&self) -> CMat {
        &self.rho - outer(&self.alpha, &self.alpha)
    }

    /// ρ - |α⟩⟨α|, verified positive semidefinite within `tol`.
    pub fn correlation_matrix(&self, tol: f64) -> Result<CMat, StateError> {
        let corr = self.correlation_matrix_unchecked();
        let min = eig_hermitian(&corr, 10.0 * tol.max(f64::EPSILON))?.min_eigenvalue();
        if min < -tol {
            return Err(StateError::InvalidState {
                reason: format!(
                    "correlation matrix has eigenvalue {min:.3e} below -tol ({tol:.1e})"
                ),
            });
        }
        Ok(corr)
    }

    /// Smallest eigenvalue of the correlation matrix.
    pub fn correlation_min_eigenvalue(&self, tol: f64) -> Result<f64, StateError> {
        let corr = self.correlation_matrix_unchecked();
        Ok(eig_hermitian(&corr, 10.0 * tol.max(f64::EPSILON))?.min_eigenvalue())
    }

    /// tr ρ, the mean total particle number.
    pub fn particle_number(&self) -> f64 {
        self.rho.diagonal().iter().map(|z| z.re).sum()
    }

    /// Max-norm distance of ρ from the rank-one projector |α⟩⟨α|.
    pub fn purity_defect(&self) -> f64 {
        max_abs(&self.correlation_matrix_unchecked())
    }

    /// True iff ρ = |α⟩⟨α| within `tol` (max-norm).
    pub fn is_pure(&self, tol: f64) -> bool {
        self.purity_defect() <= tol
    }

    /// Entropy of the reduced state in units of k_B:
    /// Σ_i [(λ_i+1) ln(λ_i+1) - λ_i ln λ_i] over the spectrum of ρ - |α⟩⟨α|.
    ///
    /// Eigenvalues in [-tol, 0) with tol = 1e-9 are clamped to 0 so that
    /// integrator roundoff cannot produce NaN; anything more negative is an
    /// invalid state. Vanishes exactly on pure states.
    pub fn rsf_entropy(&self) -> Result<f64, StateError> {
        let corr = self.correlation_matrix_unchecked();
        let spec = eig_hermitian(&corr, 100.0 * DEFAULT_TOL)?;
        let mut s = 0.0;
        for &l in &spec.eigenvalues {
            if l < -DEFAULT_TOL {
                return Err(StateError::InvalidState {
                    reason: format!("correlation eigenvalue {l:.3e} below -{DEFAULT_TOL:.0e}"),
                });
            }
            s += bose_entropy(l.max(0.0));
        }
        Ok(s)
    }
}

/// Entropy contribution of one correlation eigenvalue:
/// (λ+1) ln(λ+1) - λ ln λ, with the continuous extension 0·ln 0 = 0.
pub fn bose_entropy(lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    let plus = (lambda + 1.0) * (lambda + 1.0).ln();
    if lambda == 0.0 {
        plus
    } else {
        plus - lambda * lambda.ln()
    }
}

/// Single-particle density matrix of the quasi-free (generalized Gibbs)
/// state with exponent r: ρ' = (e^r - 1)^{-1}, computed spectrally.
///
/// Every eigenvalue of r must exceed `tol`; a spectral value at or below it
/// means the corresponding mode occupation diverges.
pub fn quasi_free_spdm(r: &CMat, tol: f64) -> Result<CMat, StateError> {
    let spec = eig_hermitian(r, DEFAULT_TOL)?;
    if spec.min_eigenvalue() <= tol {
        return Err(StateError::DivergentOccupation {
            value: spec.min_eigenvalue(),
            tol,
        });
    }
    Ok(spec.map(|l| C64::new(1.0 / (l.exp() - 1.0), 0.0)))
}

#[derive(Serialize, Deserialize)]
struct ReducedStateRepr {
    dim: usize,
    rho: Vec<Vec<[f64; 2]>>,
    alpha: Vec<[f64; 2]>,
}

impl Serialize for ReducedState {
    fn serialize<S>(&self, ser: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
    {
        let d = self.dim();
        let rho = (0..d)
            .map(|i| (0..d).map(|j| [self.rho[(i, j)].re, self.rho[(i, j)].im]).collect())
            .collect();
        let alpha = (0..d).map(|k| [self.alpha[k].re, self.alpha[k].im]).collect();
        ReducedStateRepr { dim: d, rho, alpha }.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for ReducedState {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let repr = ReducedStateRepr::deserialize(de)?;
        let d = repr.dim;
        if repr.rho.len() != d || repr.rho.iter().any(|row| row.len() != d) {
            return Err(D::Error::custom(format!("rho is not {d}x{d}")));
        }
        if repr.alpha.len() != d {
            return Err(D::Error::custom(format!("alpha length != dim {d}")));
        }
        let rho = CMat::from_fn(d, d, |i, j| C64::new(repr.rho[i][j][0], repr.rho[i][j][1]));
        let alpha = CVec::from_fn(d, |k, _| C64::new(repr.alpha[k][0], repr.alpha[k][1]));
        Ok(ReducedState::new_unchecked(rho, alpha))
    }
}
