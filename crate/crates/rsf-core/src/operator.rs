//! Dense complex-matrix layer shared by every other module: Hermitian
//! eigendecomposition, positivity/unitarity checks, Hermitian/anti-Hermitian
//! splitting, and spectral functions of Hermitian operators.
//!
//! Everything here is a pure function of its inputs. Matrices are small
//! (single-particle dimension, Fock blocks of a few hundred at most), so all
//! routines are dense and exact to double precision; no attempt is made to
//! exploit sparsity at this layer.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use thiserror::Error;

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Default max-norm tolerance for Hermiticity, unitarity, and positivity
/// checks. Double precision with dimensions up to a few hundred keeps
/// roundoff well below this.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("matrix is not Hermitian: defect {defect:.3e} exceeds tol {tol:.3e}")]
    NotHermitian { defect: f64, tol: f64 },
    #[error("Hermitian eigensolver did not converge")]
    ConvergenceFailure,
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite matrix entry at ({row},{col})")]
    NonFinite { row: usize, col: usize },
}

/// Eigendecomposition of a Hermitian matrix: `a = U diag(λ) U†` with real
/// eigenvalues in ascending order and orthonormal columns in `eigenvectors`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMat,
}

impl Spectrum {
    /// Rebuilds `U f(λ) U†` for a scalar function applied to the spectrum.
    pub fn map(&self, f: impl Fn(f64) -> C64) -> CMat {
        let mut scaled = self.eigenvectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[j]);
        }
        &scaled * self.eigenvectors.adjoint()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

pub fn ensure_square(a: &CMat) -> Result<(), OperatorError> {
    if a.nrows() != a.ncols() {
        return Err(OperatorError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

pub fn ensure_finite(a: &CMat) -> Result<(), OperatorError> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let z = a[(i, j)];
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(OperatorError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Largest entry magnitude (max-norm).
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

/// Max-norm of the difference `a - b`.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).norm()))
}

pub fn max_abs_diff_vec(a: &CVec, b: &CVec) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch in max_abs_diff_vec");
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).norm()))
}

/// Max-norm of `a - a†`.
pub fn hermiticity_defect(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in i..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `|v⟩⟨w|` as a dense matrix.
pub fn outer(v: &CVec, w: &CVec) -> CMat {
    let mut m = CMat::zeros(v.len(), w.len());
    for i in 0..v.len() {
        for j in 0..w.len() {
            m[(i, j)] = v[i] * w[j].conj();
        }
    }
    m
}

/// `ab - ba`.
pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// `ab + ba`.
pub fn anticommutator(a: &CMat, b: &CMat) -> CMat {
    a * b + b * a
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
///
/// The input must be Hermitian to within `tol` in max-norm; the decomposition
/// is computed on the Hermitian average (a + a†)/2 so roundoff-level
/// asymmetry cannot leak into the spectrum.
pub fn eig_hermitian(a: &CMat, tol: f64) -> Result<Spectrum, OperatorError> {
    ensure_square(a)?;
    ensure_finite(a)?;
    let defect = hermiticity_defect(a);
    if defect > tol {
        return Err(OperatorError::NotHermitian { defect, tol });
    }
    let h = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let se = h
        .try_symmetric_eigen(f64::EPSILON, 100_000)
        .ok_or(OperatorError::ConvergenceFailure)?;

    let d = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut eigenvectors = CMat::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.column_mut(dst).copy_from(&se.eigenvectors.column(src));
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// True iff `a` is Hermitian within `tol` and its smallest eigenvalue is
/// ≥ -tol. Non-Hermitian input yields `false`, not an error.
pub fn check_psd(a: &CMat, tol: f64) -> bool {
    match eig_hermitian(a, tol) {
        Ok(s) => s.min_eigenvalue() >= -tol,
        Err(_) => false,
    }
}

/// True iff `‖u†u - 1‖_max ≤ tol`.
pub fn check_unitary(u: &CMat, tol: f64) -> bool {
    if u.nrows() != u.ncols() {
        return false;
    }
    let gram = u.adjoint() * u;
    let id = CMat::identity(u.nrows(), u.ncols());
    max_abs_diff(&gram, &id) <= tol
}

/// Splits `a = h + i k` into Hermitian `h = (a + a†)/2` and
/// `k = (a - a†)/(2i)`, both Hermitian.
pub fn herm_split(a: &CMat) -> (CMat, CMat) {
    let adj = a.adjoint();
    let h = (a + &adj) * C64::new(0.5, 0.0);
    let k = (a - &adj) * C64::new(0.0, -0.5);
    (h, k)
}

/// `U f(λ) U†` for Hermitian `a`; the scalar function may produce complex
/// values (e.g. `exp(iλt)`).
pub fn spectral_map(a: &CMat, tol: f64, f: impl Fn(f64) -> C64) -> Result<CMat, OperatorError> {
    Ok(eig_hermitian(a, tol)?.map(f))
}

/// `exp(i s a)` for Hermitian `a`; unitary by construction.
pub fn expi_hermitian(a: &CMat, s: f64, tol: f64) -> Result<CMat, OperatorError> {
    spectral_map(a, tol, |l| C64::from_polar(1.0, s * l))
}
