//! Seeded random matrix generators shared by unit tests.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::operator::{expi_hermitian, CMat, CVec, DEFAULT_TOL};

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Uniform complex entry in the square [-s, s]².
pub fn random_c64(scale: f64, rng: &mut ChaCha12Rng) -> C64 {
    C64::new(
        scale * (2.0 * rng.random::<f64>() - 1.0),
        scale * (2.0 * rng.random::<f64>() - 1.0),
    )
}

pub fn random_cmat(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha12Rng) -> CMat {
    DMatrix::from_fn(rows, cols, |_, _| random_c64(scale, rng))
}

pub fn random_cvec(dim: usize, scale: f64, rng: &mut ChaCha12Rng) -> CVec {
    CVec::from_fn(dim, |_, _| random_c64(scale, rng))
}

pub fn random_hermitian(dim: usize, scale: f64, rng: &mut ChaCha12Rng) -> CMat {
    let a = random_cmat(dim, dim, scale, rng);
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// PSD matrix `g g† / dim`, scaled so entries stay O(scale).
pub fn random_psd(dim: usize, scale: f64, rng: &mut ChaCha12Rng) -> CMat {
    let g = random_cmat(dim, dim, scale.sqrt(), rng);
    (&g * g.adjoint()) / C64::new(dim as f64, 0.0)
}

/// Haar-ish unitary `exp(i H)` for random Hermitian H.
pub fn random_unitary(dim: usize, rng: &mut ChaCha12Rng) -> CMat {
    let h = random_hermitian(dim, 1.5, rng);
    expi_hermitian(&h, 1.0, DEFAULT_TOL).expect("random Hermitian generator")
}
