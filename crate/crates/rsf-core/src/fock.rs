//! Brute-force ground truth on a truncated multimode Fock space: dense
//! density matrices, the full many-body master equation, state constructors
//! (vacuum, number, coherent, quasi-free, displaced), multiplicative lifts of
//! single-particle unitaries, the reduction map back to [`ReducedState`], and
//! von Neumann entropy. Everything here trades scale for trustworthiness; the
//! kinetic equations in [`crate::rke`] are validated against this module, not
//! the other way around.
//!
//! Conventions that the rest of the crate relies on:
//!
//! - Basis states are occupation tuples ordered by total occupation, then
//!   lexicographically, so every fixed-total sector is a contiguous index
//!   range and number-conserving operators are block diagonal.
//! - The damping matrix enters through collapse operators built from its
//!   eigenpairs, `L_β = √g_β Σ_j conj(v_β)_j a_j`, and the pumping matrix
//!   through `M_β = √g_β Σ_k (v_β)_k a†_k`. This choice of which side gets
//!   conjugated is pinned by the reduction: it makes the single-particle
//!   density matrix pick up exactly `−½{γ↓,ρ}` and `+½{γ↑,ρ} + γ↑`, which
//!   the commuting-diagram tests check against [`crate::rke::rke_rhs`].
//! - The displacement unitary is `exp(Σ_k α_k a†_k − ᾱ_k a_k)`; the sign is
//!   pinned by requiring that displacing the vacuum by `α` yields the
//!   coherent state of amplitude `+α`.
//! - Truncation health is the total population on basis states with any mode
//!   at the cutoff; evolution aborts once it exceeds
//!   [`BOUNDARY_POPULATION_LIMIT`]. State constructors additionally flag
//!   (`> n_max/4`) or reject (`> n_max/2`) mean-occupation budgets that sail
//!   too close to the cutoff.

use std::ops::Range;

use nalgebra::Cholesky;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::integrate::{integrate_fixed, IntegrateError, IntegratorOptions};
use crate::operator::{
    check_unitary, eig_hermitian, ensure_finite, ensure_square, herm_split, hermiticity_defect,
    max_abs, max_abs_diff, OperatorError, DEFAULT_TOL,
};
use crate::rke::GeneratorSpec;
use crate::state::ReducedState;
use crate::{CMat, CVec};

/// Hard cap on the truncated-space dimension unless a caller raises it
/// explicitly. The oracle is for correctness, not scale.
pub const DEFAULT_DIMENSION_LIMIT: usize = 4096;

/// Evolution aborts once this much population sits on basis states with a
/// maximally occupied mode; beyond that the truncated dynamics can no longer
/// be trusted as ground truth.
pub const BOUNDARY_POPULATION_LIMIT: f64 = 1e-6;

/// Per-snapshot trace and positivity tolerance during evolution.
const SNAPSHOT_TOL: f64 = 1e-8;

/// A unitary eigenvalue this close to −1 makes the logarithm branch choice
/// arbitrary; the principal branch is still used but the result is flagged.
const BRANCH_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FockError {
    #[error("Fock dimension {dim} exceeds the configured limit {limit}")]
    DimensionLimitExceeded { dim: usize, limit: usize },
    #[error("truncated basis cannot represent the state reliably: {reason}")]
    TruncationUnreliable { reason: String },
    #[error("not a valid density matrix: {reason}")]
    InvalidState { reason: String },
    #[error("state invariant violated at t = {time:.6e}: {reason}")]
    InvariantViolation { time: f64, reason: String },
    #[error("invalid input: {reason}")]
    InvalidInput { reason: String },
    #[error(
        "fixed-step refinement stalled: defect {defect:.3e} above target {target:.3e} at step {step:.3e}"
    )]
    StepNotConverged { step: f64, defect: f64, target: f64 },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

/// Truncated bosonic Fock space over `modes` modes with per-mode occupations
/// `0..=n_max`, dimension `(n_max+1)^modes`. Carries precomputed index tables
/// so ladder-operator applications are table lookups rather than searches.
#[derive(Debug, Clone)]
pub struct FockSpace {
    modes: usize,
    n_max: usize,
    dim: usize,
    /// Flat `dim × modes` occupation table in basis order.
    occs: Vec<u16>,
    /// Mixed-radix code (mode 0 least significant) → basis index.
    raw_to_idx: Vec<u32>,
    /// Contiguous index ranges of fixed total occupation, ascending.
    sectors: Vec<Range<usize>>,
    /// `lower[k*dim + i]`: index after removing one quantum from mode k of
    /// state i, with amplitude √n_k; `None` on the vacuum of that mode.
    lower: Vec<Option<(u32, f64)>>,
    /// `raise[k*dim + i]`: index after adding one quantum to mode k, with
    /// amplitude √(n_k+1); `None` at the cutoff.
    raise: Vec<Option<(u32, f64)>>,
    /// Basis indices with at least one mode at the cutoff.
    boundary: Vec<u32>,
}

impl FockSpace {
    pub fn new(modes: usize, n_max: usize) -> Result<Self, FockError> {
        Self::with_dimension_limit(modes, n_max, DEFAULT_DIMENSION_LIMIT)
    }

    pub fn with_dimension_limit(
        modes: usize,
        n_max: usize,
        limit: usize,
    ) -> Result<Self, FockError> {
        if modes == 0 || n_max == 0 {
            return Err(FockError::InvalidInput {
                reason: "need at least one mode and a cutoff of at least one quantum".into(),
            });
        }
        let base = n_max + 1;
        let mut dim_wide = 1u128;
        for _ in 0..modes {
            dim_wide *= base as u128;
        }
        if dim_wide > limit as u128 {
            return Err(FockError::DimensionLimitExceeded {
                dim: dim_wide.min(usize::MAX as u128) as usize,
                limit,
            });
        }
        let dim = dim_wide as usize;

        let mut order: Vec<(usize, Vec<u16>)> = (0..dim)
            .map(|raw| {
                let mut occ = vec![0u16; modes];
                let mut r = raw;
                for slot in occ.iter_mut() {
                    *slot = (r % base) as u16;
                    r /= base;
                }
                (raw, occ)
            })
            .collect();
        order.sort_by(|a, b| {
            let sa: usize = a.1.iter().map(|&x| x as usize).sum();
            let sb: usize = b.1.iter().map(|&x| x as usize).sum();
            (sa, &a.1).cmp(&(sb, &b.1))
        });

        let mut occs = Vec::with_capacity(dim * modes);
        let mut raws = Vec::with_capacity(dim);
        let mut raw_to_idx = vec![0u32; dim];
        for (idx, (raw, occ)) in order.iter().enumerate() {
            raw_to_idx[*raw] = idx as u32;
            raws.push(*raw);
            occs.extend_from_slice(occ);
        }

        let mut sectors = Vec::with_capacity(modes * n_max + 1);
        let mut start = 0usize;
        let mut current = 0usize;
        for i in 0..dim {
            let total: usize = occs[i * modes..(i + 1) * modes]
                .iter()
                .map(|&x| x as usize)
                .sum();
            if total != current {
                sectors.push(start..i);
                start = i;
                current = total;
            }
        }
        sectors.push(start..dim);

        let powers: Vec<usize> = (0..modes)
            .scan(1usize, |p, _| {
                let out = *p;
                *p *= base;
                Some(out)
            })
            .collect();
        let mut lower = vec![None; modes * dim];
        let mut raise = vec![None; modes * dim];
        let mut boundary = Vec::new();
        for i in 0..dim {
            let occ = &occs[i * modes..(i + 1) * modes];
            if occ.iter().any(|&n| n as usize == n_max) {
                boundary.push(i as u32);
            }
            for k in 0..modes {
                let n = occ[k] as usize;
                if n > 0 {
                    let j = raw_to_idx[raws[i] - powers[k]];
                    lower[k * dim + i] = Some((j, (n as f64).sqrt()));
                }
                if n < n_max {
                    let j = raw_to_idx[raws[i] + powers[k]];
                    raise[k * dim + i] = Some((j, ((n + 1) as f64).sqrt()));
                }
            }
        }

        Ok(Self {
            modes,
            n_max,
            dim,
            occs,
            raw_to_idx,
            sectors,
            lower,
            raise,
            boundary,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Occupation tuple of basis state `index`.
    pub fn occupations(&self, index: usize) -> &[u16] {
        &self.occs[index * self.modes..(index + 1) * self.modes]
    }

    /// Basis index of an occupation tuple, if it fits the truncated space.
    pub fn index_of(&self, occ: &[u16]) -> Option<usize> {
        if occ.len() != self.modes || occ.iter().any(|&n| n as usize > self.n_max) {
            return None;
        }
        let base = self.n_max + 1;
        let mut raw = 0usize;
        for &n in occ.iter().rev() {
            raw = raw * base + n as usize;
        }
        Some(self.raw_to_idx[raw] as usize)
    }

    /// Index ranges of fixed total occupation, ascending from the vacuum.
    pub fn sector_ranges(&self) -> &[Range<usize>] {
        &self.sectors
    }

    pub fn total_occupation(&self, index: usize) -> usize {
        self.occupations(index).iter().map(|&n| n as usize).sum()
    }

    fn lower_entry(&self, mode: usize, i: usize) -> Option<(usize, f64)> {
        self.lower[mode * self.dim + i].map(|(j, a)| (j as usize, a))
    }

    fn raise_entry(&self, mode: usize, i: usize) -> Option<(usize, f64)> {
        self.raise[mode * self.dim + i].map(|(j, a)| (j as usize, a))
    }
}

/// Dense ladder operators on the truncated space, one pair per mode.
#[derive(Debug, Clone)]
pub struct ModeOperators {
    pub a: Vec<CMat>,
    pub a_dag: Vec<CMat>,
}

/// Builds `a_k` (√n lowering on mode k, identity elsewhere) and its adjoint
/// for every mode. The commutator `[a_k, a†_k]` equals 1 except on states
/// with mode k at the cutoff, where truncation leaves a `−n_max` defect.
pub fn build_mode_operators(space: &FockSpace) -> ModeOperators {
    let dim = space.dim;
    let mut a = Vec::with_capacity(space.modes);
    let mut a_dag = Vec::with_capacity(space.modes);
    for k in 0..space.modes {
        let mut m = CMat::zeros(dim, dim);
        for i in 0..dim {
            if let Some((j, amp)) = space.lower_entry(k, i) {
                m[(j, i)] = C64::new(amp, 0.0);
            }
        }
        a_dag.push(m.adjoint());
        a.push(m);
    }
    ModeOperators { a, a_dag }
}

/// Density matrix on a truncated Fock space: Hermitian, PSD, and unit trace
/// within tolerance. `truncation_marginal` travels with the state and records
/// that some constructor found the mean-occupation budget tight (above a
/// quarter of the cutoff); the state is still usable, just less trustworthy.
#[derive(Debug, Clone)]
pub struct FockDensityMatrix {
    space: FockSpace,
    matrix: CMat,
    truncation_marginal: bool,
}

impl FockDensityMatrix {
    pub fn new(space: FockSpace, matrix: CMat, tol: f64) -> Result<Self, FockError> {
        if matrix.nrows() != space.dim || matrix.ncols() != space.dim {
            return Err(FockError::InvalidInput {
                reason: format!(
                    "matrix is {}x{}, space dimension is {}",
                    matrix.nrows(),
                    matrix.ncols(),
                    space.dim
                ),
            });
        }
        let state = Self {
            space,
            matrix,
            truncation_marginal: false,
        };
        state.validate(tol)?;
        Ok(state)
    }

    fn from_parts(space: FockSpace, matrix: CMat, truncation_marginal: bool) -> Self {
        Self {
            space,
            matrix,
            truncation_marginal,
        }
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn truncation_marginal(&self) -> bool {
        self.truncation_marginal
    }

    pub fn trace(&self) -> C64 {
        (0..self.space.dim).map(|i| self.matrix[(i, i)]).sum()
    }

    /// `Tr(ρ op)`.
    pub fn expectation(&self, op: &CMat) -> C64 {
        let n = self.space.dim;
        let mut acc = C64::new(0.0, 0.0);
        for p in 0..n {
            for q in 0..n {
                acc += self.matrix[(p, q)] * op[(q, p)];
            }
        }
        acc
    }

    /// Mean total occupation `Σ_i ρ_ii N_i`.
    pub fn total_occupation(&self) -> f64 {
        (0..self.space.dim)
            .map(|i| self.matrix[(i, i)].re * self.space.total_occupation(i) as f64)
            .sum()
    }

    /// Population sitting on basis states with some mode at the cutoff; the
    /// truncation-health metric.
    pub fn boundary_population(&self) -> f64 {
        self.space
            .boundary
            .iter()
            .map(|&i| self.matrix[(i as usize, i as usize)].re)
            .sum()
    }

    pub fn validate(&self, tol: f64) -> Result<(), FockError> {
        ensure_finite(&self.matrix)?;
        let defect = hermiticity_defect(&self.matrix);
        if defect > tol {
            return Err(FockError::InvalidState {
                reason: format!("hermiticity defect {defect:.3e} exceeds {tol:.3e}"),
            });
        }
        let tr = self.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > tol {
            return Err(FockError::InvalidState {
                reason: format!("trace is {tr}, expected 1 within {tol:.3e}"),
            });
        }
        check_psd_within(&self.matrix, tol)
    }
}

/// Cheap PSD certificate: Cholesky of `sym(m) + tol·I`, with an
/// eigendecomposition fallback for a precise verdict on the boundary.
fn check_psd_within(m: &CMat, tol: f64) -> Result<(), FockError> {
    let n = m.nrows();
    let mut shifted = (m + m.adjoint()) * C64::new(0.5, 0.0);
    for i in 0..n {
        shifted[(i, i)] += C64::new(tol, 0.0);
    }
    if Cholesky::new(shifted).is_some() {
        return Ok(());
    }
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let spec = eig_hermitian(&sym, 100.0 * DEFAULT_TOL)?;
    let min = spec.min_eigenvalue();
    if min < -tol {
        return Err(FockError::InvalidState {
            reason: format!("matrix not PSD: min eigenvalue {min:.3e} below -{tol:.3e}"),
        });
    }
    Ok(())
}

/// `|0⟩⟨0|`.
pub fn vacuum_state(space: &FockSpace) -> FockDensityMatrix {
    let mut m = CMat::zeros(space.dim, space.dim);
    m[(0, 0)] = C64::new(1.0, 0.0);
    FockDensityMatrix::from_parts(space.clone(), m, false)
}

/// `|n⟩⟨n|` for an occupation tuple `n`.
pub fn number_state(space: &FockSpace, occ: &[u16]) -> Result<FockDensityMatrix, FockError> {
    let i = space.index_of(occ).ok_or_else(|| FockError::InvalidInput {
        reason: format!("occupations {occ:?} do not fit the truncated basis"),
    })?;
    let mut m = CMat::zeros(space.dim, space.dim);
    m[(i, i)] = C64::new(1.0, 0.0);
    Ok(FockDensityMatrix::from_parts(space.clone(), m, false))
}

/// Flags a tight mean-occupation budget (`> n_max/4`) or rejects a hopeless
/// one (`> n_max/2`).
fn occupation_budget(space: &FockSpace, total: f64, what: &str) -> Result<bool, FockError> {
    let half = space.n_max as f64 / 2.0;
    if total > half {
        return Err(FockError::TruncationUnreliable {
            reason: format!(
                "{what}: mean occupation {total:.3} exceeds half the cutoff ({half:.3})"
            ),
        });
    }
    Ok(total > space.n_max as f64 / 4.0)
}

fn ensure_mode_vector(space: &FockSpace, v: &CVec, what: &str) -> Result<(), FockError> {
    if v.len() != space.modes {
        return Err(FockError::InvalidInput {
            reason: format!("{what} has {} entries, expected {}", v.len(), space.modes),
        });
    }
    if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(FockError::InvalidInput {
            reason: format!("{what} has non-finite entries"),
        });
    }
    Ok(())
}

/// Coherent state of amplitude `alpha`: the normalized truncated series for
/// one mode, the displaced vacuum for several (the two constructions agree
/// within truncation error and are cross-checked in the tests).
pub fn coherent_state(space: &FockSpace, alpha: &CVec) -> Result<FockDensityMatrix, FockError> {
    ensure_mode_vector(space, alpha, "coherent amplitude")?;
    let budget: f64 = alpha.iter().map(|z| z.norm_sqr()).sum();
    let marginal = occupation_budget(space, budget, "coherent state")?;
    if space.modes > 1 {
        return displace(&vacuum_state(space), alpha);
    }
    let mut psi = CVec::zeros(space.dim);
    let mut amp = C64::new(1.0, 0.0);
    psi[0] = amp;
    for n in 1..=space.n_max {
        amp *= alpha[0] / C64::new((n as f64).sqrt(), 0.0);
        psi[n] = amp;
    }
    let norm = psi.norm();
    for z in psi.iter_mut() {
        *z /= norm;
    }
    let m = &psi * psi.adjoint();
    Ok(FockDensityMatrix::from_parts(space.clone(), m, marginal))
}

/// Gaussian state `exp(−Σ r_kk' a†_k a_k') / Z` for a positive-definite
/// Hermitian `r`. Its single-particle density matrix is `(e^r − 1)^{-1}`
/// within truncation error and its field amplitude vanishes.
pub fn quasi_free_state(space: &FockSpace, r: &CMat) -> Result<FockDensityMatrix, FockError> {
    ensure_square(r)?;
    ensure_finite(r)?;
    if r.nrows() != space.modes {
        return Err(FockError::InvalidInput {
            reason: format!("r is {}x{}, expected {} modes", r.nrows(), r.ncols(), space.modes),
        });
    }
    let spec = eig_hermitian(r, 100.0 * DEFAULT_TOL)?;
    if spec.min_eigenvalue() <= DEFAULT_TOL {
        return Err(FockError::InvalidInput {
            reason: format!(
                "r must be positive definite (min eigenvalue {:.3e}); occupations would diverge",
                spec.min_eigenvalue()
            ),
        });
    }
    let total: f64 = spec
        .eigenvalues
        .iter()
        .map(|&l| 1.0 / (l.exp() - 1.0))
        .sum();
    let marginal = occupation_budget(space, total, "quasi-free state")?;

    let rh = (r + r.adjoint()) * C64::new(0.5, 0.0);
    let blocks = sector_spectral_blocks(space, &rh, |l| C64::new((-l).exp(), 0.0))?;
    let mut m = assemble_block_diagonal(space, &blocks);
    let tr: f64 = (0..space.dim).map(|i| m[(i, i)].re).sum();
    for z in m.iter_mut() {
        *z /= tr;
    }
    Ok(FockDensityMatrix::from_parts(space.clone(), m, marginal))
}

/// Conjugates a state by the displacement unitary
/// `W[α] = exp(Σ_k α_k a†_k − ᾱ_k a_k)`, which shifts every mode amplitude
/// by `+α_k` and leaves the correlation part of the reduction unchanged.
pub fn displace(state: &FockDensityMatrix, alpha: &CVec) -> Result<FockDensityMatrix, FockError> {
    let space = &state.space;
    ensure_mode_vector(space, alpha, "displacement")?;

    // Mean occupation after the shift: N + 2 Re Σ ᾱ_k⟨a_k⟩ + Σ|α_k|².
    let mut cross = 0.0;
    for k in 0..space.modes {
        let mut ak = C64::new(0.0, 0.0);
        for i in 0..space.dim {
            if let Some((j, amp)) = space.lower_entry(k, i) {
                ak += state.matrix[(i, j)] * amp;
            }
        }
        cross += 2.0 * (alpha[k].conj() * ak).re;
    }
    let budget: f64 = alpha.iter().map(|z| z.norm_sqr()).sum();
    let estimate = (state.total_occupation() + cross + budget).max(0.0);
    let marginal = occupation_budget(space, estimate, "displaced state")?;

    // W = exp(i·G) for the Hermitian G = −i Σ (α_k a†_k − ᾱ_k a_k).
    let dim = space.dim;
    let mut gen = CMat::zeros(dim, dim);
    for k in 0..space.modes {
        let up = alpha[k] * C64::new(0.0, -1.0);
        let down = alpha[k].conj() * C64::new(0.0, 1.0);
        for i in 0..dim {
            if let Some((j, amp)) = space.raise_entry(k, i) {
                gen[(j, i)] += up * amp;
            }
            if let Some((j, amp)) = space.lower_entry(k, i) {
                gen[(j, i)] += down * amp;
            }
        }
    }
    let w = crate::operator::expi_hermitian(&gen, 1.0, 100.0 * DEFAULT_TOL)?;
    let moved = cmul(&cmul(&w, &state.matrix), &w.adjoint());
    Ok(FockDensityMatrix::from_parts(
        space.clone(),
        moved,
        state.truncation_marginal || marginal,
    ))
}

/// Dense second quantization `Σ_{k'k} m_{k'k} a†_{k'} a_k` (number conserving,
/// so block diagonal over the total-occupation sectors).
fn lift_quadratic_dense(space: &FockSpace, m: &CMat) -> CMat {
    let dim = space.dim;
    let d = space.modes;
    let mut out = CMat::zeros(dim, dim);
    for i in 0..dim {
        for k in 0..d {
            if let Some((j1, amp1)) = space.lower_entry(k, i) {
                for kp in 0..d {
                    let coeff = m[(kp, k)];
                    if coeff == C64::new(0.0, 0.0) {
                        continue;
                    }
                    if let Some((i2, amp2)) = space.raise_entry(kp, j1) {
                        out[(i2, i)] += coeff * (amp1 * amp2);
                    }
                }
            }
        }
    }
    out
}

/// One total-occupation block of [`lift_quadratic_dense`], in sector-local
/// indices.
fn sector_block(space: &FockSpace, m: &CMat, range: &Range<usize>) -> CMat {
    let d = space.modes;
    let s = range.len();
    let mut out = CMat::zeros(s, s);
    for (col, i) in range.clone().enumerate() {
        for k in 0..d {
            if let Some((j1, amp1)) = space.lower_entry(k, i) {
                for kp in 0..d {
                    let coeff = m[(kp, k)];
                    if coeff == C64::new(0.0, 0.0) {
                        continue;
                    }
                    if let Some((i2, amp2)) = space.raise_entry(kp, j1) {
                        out[(i2 - range.start, col)] += coeff * (amp1 * amp2);
                    }
                }
            }
        }
    }
    out
}

/// Spectral function of a lifted Hermitian single-particle operator, one
/// dense block per total-occupation sector: `f(dΓ(m))` block by block.
fn sector_spectral_blocks(
    space: &FockSpace,
    m: &CMat,
    f: impl Fn(f64) -> C64,
) -> Result<Vec<(Range<usize>, CMat)>, FockError> {
    let mut blocks = Vec::with_capacity(space.sectors.len());
    for range in &space.sectors {
        let b = sector_block(space, m, range);
        let gate = 1e-7 * (1.0 + max_abs(&b));
        let spec = eig_hermitian(&b, gate)?;
        blocks.push((range.clone(), spec.map(&f)));
    }
    Ok(blocks)
}

fn assemble_block_diagonal(space: &FockSpace, blocks: &[(Range<usize>, CMat)]) -> CMat {
    let mut out = CMat::zeros(space.dim, space.dim);
    for (range, b) in blocks {
        out.view_mut((range.start, range.start), (range.len(), range.len()))
            .copy_from(b);
    }
    out
}

/// Hermitian logarithm `b` of a unitary `u = e^{ib}` on the principal branch
/// `θ ∈ (−π, π]`, plus a flag marking eigenvalues too close to −1 for the
/// branch choice to be stable. Commuting Hermitian and anti-Hermitian parts
/// are diagonalized jointly: eigenvectors of the Hermitian part, refined
/// inside its degenerate clusters by the anti-Hermitian part.
fn unitary_log(u: &CMat) -> Result<(CMat, bool), FockError> {
    ensure_square(u)?;
    if !check_unitary(u, 1e-7) {
        return Err(FockError::InvalidInput {
            reason: "matrix is not unitary within 1e-7".into(),
        });
    }
    let n = u.nrows();
    let (h, k) = herm_split(u);
    let spec = eig_hermitian(&h, 100.0 * DEFAULT_TOL)?;
    let mut v = spec.eigenvectors.clone();
    let mut start = 0usize;
    while start < n {
        let mut end = start + 1;
        while end < n && spec.eigenvalues[end] - spec.eigenvalues[end - 1] < 1e-7 {
            end += 1;
        }
        let len = end - start;
        if len > 1 {
            let vc = v.columns(start, len).into_owned();
            let kc = &vc.adjoint() * &(&k * &vc);
            let kc = (&kc + kc.adjoint()) * C64::new(0.5, 0.0);
            let sub = eig_hermitian(&kc, 100.0 * DEFAULT_TOL)?;
            let rotated = &vc * &sub.eigenvectors;
            v.columns_mut(start, len).copy_from(&rotated);
        }
        start = end;
    }

    let mut ambiguous = false;
    let mut thetas = vec![0.0f64; n];
    for j in 0..n {
        let col = v.column(j).into_owned();
        let ucol = u * &col;
        let mut lam = col.dotc(&ucol);
        lam /= lam.norm();
        if (lam + C64::new(1.0, 0.0)).norm() < BRANCH_TOL {
            ambiguous = true;
        }
        thetas[j] = lam.arg();
    }

    let rebuild = |vals: &dyn Fn(f64) -> C64| -> CMat {
        let mut scaled = v.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= vals(thetas[j]);
        }
        &scaled * v.adjoint()
    };
    let check = rebuild(&|t| C64::from_polar(1.0, t));
    if max_abs_diff(&check, u) > 1e-7 {
        return Err(FockError::Operator(OperatorError::ConvergenceFailure));
    }
    let b = rebuild(&|t| C64::new(t, 0.0));
    Ok(((&b + b.adjoint()) * C64::new(0.5, 0.0), ambiguous))
}

/// A lifted single-particle unitary. `branch_ambiguous` marks a logarithm
/// taken at an eigenvalue within [`BRANCH_TOL`] of −1, where the principal
/// branch is an arbitrary but consistent choice.
#[derive(Debug, Clone)]
pub struct LiftedUnitary {
    pub matrix: CMat,
    pub branch_ambiguous: bool,
}

/// Multiplicative lift `exp(i Σ b_kk' a†_k a_k')` of a single-particle
/// unitary `u = e^{ib}`; maps the coherent state of amplitude α to the one of
/// amplitude `uα` within truncation error.
pub fn lift_unitary(space: &FockSpace, u: &CMat) -> Result<LiftedUnitary, FockError> {
    if u.nrows() != space.modes || u.ncols() != space.modes {
        return Err(FockError::InvalidInput {
            reason: format!(
                "unitary is {}x{}, expected {} modes",
                u.nrows(),
                u.ncols(),
                space.modes
            ),
        });
    }
    let (b, branch_ambiguous) = unitary_log(u)?;
    let blocks = sector_spectral_blocks(space, &b, |t| C64::from_polar(1.0, t))?;
    Ok(LiftedUnitary {
        matrix: assemble_block_diagonal(space, &blocks),
        branch_ambiguous,
    })
}

/// Reduction map: `ρ_kk' = Tr(ρ_F a†_k' a_k)`, `α_k = Tr(ρ_F a_k)`. The
/// output satisfies the reduced-state invariants up to truncation error; it
/// is not revalidated here.
pub fn reduce(state: &FockDensityMatrix) -> ReducedState {
    let space = &state.space;
    let m = &state.matrix;
    let d = space.modes;
    let mut rho = CMat::zeros(d, d);
    let mut alpha = CVec::zeros(d);
    for k in 0..d {
        for i in 0..space.dim {
            if let Some((j1, amp1)) = space.lower_entry(k, i) {
                alpha[k] += m[(i, j1)] * amp1;
                for kp in 0..d {
                    if let Some((i2, amp2)) = space.raise_entry(kp, j1) {
                        rho[(k, kp)] += m[(i, i2)] * (amp1 * amp2);
                    }
                }
            }
        }
    }
    let rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    ReducedState::new_unchecked(rho, alpha)
}

/// `−Σ p ln p` over the spectrum, with `0 ln 0 = 0` and small negative
/// eigenvalues clamped away.
pub fn von_neumann_entropy(state: &FockDensityMatrix) -> Result<f64, FockError> {
    let sym = (&state.matrix + state.matrix.adjoint()) * C64::new(0.5, 0.0);
    let spec = eig_hermitian(&sym, 100.0 * DEFAULT_TOL)?;
    let s: f64 = spec
        .eigenvalues
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    Ok(s.max(0.0))
}

// ---------------------------------------------------------------------------
// Master-equation machinery. The right-hand side is organized as
//   rhs(ρ) = Aρ + (Aρ)† + Σ sandwiches(ρ)
// where the drift A collects the commutator parts and every anticommutator
// half, and the sandwiches are the completely positive pieces L ρ L†,
// w 𝐔 ρ 𝐔†, and 2v Q̂ ρ Q̂. Products exploit sparsity: the drift and ladder
// channels are CSR matrices, lifted unitaries are dense blocks per sector.
// ---------------------------------------------------------------------------

const C_ONE: C64 = C64::new(1.0, 0.0);
const C_ZERO: C64 = C64::new(0.0, 0.0);

struct Csr {
    n_rows: usize,
    row_ptr: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<C64>,
}

impl Csr {
    fn from_dense(a: &CMat) -> Self {
        let (n_rows, n_cols) = a.shape();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0u32);
        for r in 0..n_rows {
            for c in 0..n_cols {
                let v = a[(r, c)];
                if v != C_ZERO {
                    cols.push(c as u32);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len() as u32);
        }
        Self {
            n_rows,
            row_ptr,
            cols,
            vals,
        }
    }

    /// `out += scale · self · x` (x and out column-major, same shape).
    fn mul_acc(&self, x: &CMat, scale: C64, out: &mut CMat) {
        let n = self.n_rows;
        let ncols = x.ncols();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for col in 0..ncols {
            let xcol = &xs[col * n..(col + 1) * n];
            let ocol = &mut os[col * n..(col + 1) * n];
            for r in 0..n {
                let lo = self.row_ptr[r] as usize;
                let hi = self.row_ptr[r + 1] as usize;
                if lo == hi {
                    continue;
                }
                let mut acc = C_ZERO;
                for t in lo..hi {
                    acc += self.vals[t] * xcol[self.cols[t] as usize];
                }
                ocol[r] += scale * acc;
            }
        }
    }

    /// `out += scale · x · self`.
    fn mul_left_acc(&self, x: &CMat, scale: C64, out: &mut CMat) {
        let m = x.nrows();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for r in 0..self.n_rows {
            let lo = self.row_ptr[r] as usize;
            let hi = self.row_ptr[r + 1] as usize;
            let xcol = &xs[r * m..(r + 1) * m];
            for t in lo..hi {
                let c = self.cols[t] as usize;
                let v = scale * self.vals[t];
                let ocol = &mut os[c * m..(c + 1) * m];
                for i in 0..m {
                    ocol[i] += v * xcol[i];
                }
            }
        }
    }
}

/// Dense product through `matrixmultiply` on split real/imaginary planes;
/// falls back to the naive product for small operands.
fn cmul(a: &CMat, b: &CMat) -> CMat {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions must agree");
    if m * k + k * n < 4096 {
        return a * b;
    }
    let split = |mat: &CMat| {
        let s = mat.as_slice();
        let mut re = Vec::with_capacity(s.len());
        let mut im = Vec::with_capacity(s.len());
        for z in s {
            re.push(z.re);
            im.push(z.im);
        }
        (re, im)
    };
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let mut cr = vec![0.0f64; m * n];
    let mut ci = vec![0.0f64; m * n];
    unsafe {
        use matrixmultiply::dgemm;
        let (rs, cs) = (1isize, m as isize);
        let csb = k as isize;
        dgemm(
            m, k, n, 1.0, ar.as_ptr(), rs, cs, br.as_ptr(), rs, csb, 0.0, cr.as_mut_ptr(), rs, cs,
        );
        dgemm(
            m, k, n, -1.0, ai.as_ptr(), rs, cs, bi.as_ptr(), rs, csb, 1.0, cr.as_mut_ptr(), rs, cs,
        );
        dgemm(
            m, k, n, 1.0, ar.as_ptr(), rs, cs, bi.as_ptr(), rs, csb, 0.0, ci.as_mut_ptr(), rs, cs,
        );
        dgemm(
            m, k, n, 1.0, ai.as_ptr(), rs, cs, br.as_ptr(), rs, csb, 1.0, ci.as_mut_ptr(), rs, cs,
        );
    }
    CMat::from_fn(m, n, |i, j| C64::new(cr[j * m + i], ci[j * m + i]))
}

/// Block-diagonal unitary stored sector by sector with precomputed adjoints.
struct BlockDiag {
    dim: usize,
    blocks: Vec<(Range<usize>, CMat, CMat)>,
}

impl BlockDiag {
    fn new(dim: usize, blocks: Vec<(Range<usize>, CMat)>) -> Self {
        let blocks = blocks
            .into_iter()
            .map(|(r, b)| {
                let adj = b.adjoint();
                (r, b, adj)
            })
            .collect();
        Self { dim, blocks }
    }

    /// `out += scale · U x U†`.
    fn sandwich_acc(&self, x: &CMat, scale: f64, out: &mut CMat) {
        let dim = self.dim;
        let mut t = CMat::zeros(dim, dim);
        for (range, u, _) in &self.blocks {
            let s = range.len();
            let rows = x.view((range.start, 0), (s, dim)).into_owned();
            let prod = cmul(u, &rows);
            t.view_mut((range.start, 0), (s, dim)).copy_from(&prod);
        }
        let sc = C64::new(scale, 0.0);
        let os = out.as_mut_slice();
        for (range, _, udag) in &self.blocks {
            let s = range.len();
            let cols = t.view((0, range.start), (dim, s)).into_owned();
            let prod = cmul(&cols, udag);
            let ps = prod.as_slice();
            for (jj, col) in range.clone().enumerate() {
                let ocol = &mut os[col * dim..(col + 1) * dim];
                let pcol = &ps[jj * dim..(jj + 1) * dim];
                for i in 0..dim {
                    ocol[i] += sc * pcol[i];
                }
            }
        }
    }
}

enum Sandwich {
    /// `+ L ρ L†` for a ladder combination L.
    Ladder { op: Csr, op_dag: Csr },
    /// `+ w 𝐔 ρ 𝐔†` for a lifted unitary.
    Scatter { weight: f64, lift: BlockDiag },
    /// `+ 2v Q̂ ρ Q̂` for a lifted Hermitian Q̂ (diffusion cross term).
    Diffuse { weight2: f64, q: Csr },
}

/// `Σ_k c_k a_k` (or `Σ_k c_k a†_k`) as a dense matrix.
fn ladder_combination(space: &FockSpace, coeff: &CVec, raising: bool) -> CMat {
    let dim = space.dim;
    let mut m = CMat::zeros(dim, dim);
    for k in 0..space.modes {
        let c = coeff[k];
        if c == C_ZERO {
            continue;
        }
        for i in 0..dim {
            let entry = if raising {
                space.raise_entry(k, i)
            } else {
                space.lower_entry(k, i)
            };
            if let Some((j, amp)) = entry {
                m[(j, i)] += c * amp;
            }
        }
    }
    m
}

/// The many-body master-equation generator, precomputed once per
/// [`GeneratorSpec`] so repeated right-hand-side evaluations stay cheap.
pub struct GmmeOperator {
    space: FockSpace,
    drift: Csr,
    sandwiches: Vec<Sandwich>,
    branch_ambiguous: bool,
}

impl GmmeOperator {
    pub fn new(space: &FockSpace, g: &GeneratorSpec, hbar: f64) -> Result<Self, FockError> {
        g.validate(DEFAULT_TOL)
            .map_err(|e| FockError::InvalidInput {
                reason: e.to_string(),
            })?;
        if g.dim() != space.modes {
            return Err(FockError::InvalidInput {
                reason: format!(
                    "generator acts on {} modes, space has {}",
                    g.dim(),
                    space.modes
                ),
            });
        }
        if !hbar.is_finite() || hbar <= 0.0 {
            return Err(FockError::InvalidInput {
                reason: format!("hbar must be positive and finite, got {hbar}"),
            });
        }
        let d = space.modes;
        let dim = space.dim;

        // Drift kernel: only the Hamiltonian commutator is lifted from the
        // single-particle level. The dissipative halves −½ op†op are built
        // below from the truncated channel matrices themselves, not from the
        // closed-form dΓ(γ) + const they equal in infinite dimension: the
        // product picks up cutoff defects that must match the sandwich term
        // exactly, or the generator stops being trace-preserving.
        let kernel = g.h.clone() * C64::new(0.0, -1.0 / hbar);
        let mut const_diag: f64 = 0.0;

        let mut sandwiches = Vec::new();
        let mut ladder_dense = Vec::new();
        for (gamma, raising) in [(&g.gamma_down, false), (&g.gamma_up, true)] {
            if max_abs(gamma) == 0.0 {
                continue;
            }
            let spec = eig_hermitian(gamma, 100.0 * DEFAULT_TOL)?;
            let lmax = spec.max_eigenvalue().max(0.0);
            for (j, &lam) in spec.eigenvalues.iter().enumerate() {
                if lam <= 0.0 || lam <= lmax * 1e-14 {
                    continue;
                }
                let mut coeff = spec.eigenvectors.column(j).into_owned();
                if !raising {
                    coeff = coeff.conjugate();
                }
                coeff *= C64::new(lam.sqrt(), 0.0);
                ladder_dense.push(ladder_combination(space, &coeff, raising));
            }
        }

        let mut branch_ambiguous = false;
        for (w, u) in &g.scattering {
            let (b, amb) = unitary_log(u)?;
            branch_ambiguous |= amb;
            let blocks = sector_spectral_blocks(space, &b, |t| C64::from_polar(1.0, t))?;
            sandwiches.push(Sandwich::Scatter {
                weight: *w,
                lift: BlockDiag::new(dim, blocks),
            });
            const_diag -= 0.5 * w;
        }

        let mut drift = lift_quadratic_dense(space, &kernel);
        for dense in &ladder_dense {
            let dag = dense.adjoint();
            drift -= cmul(&dag, dense) * C64::new(0.5, 0.0);
        }
        for dense in ladder_dense {
            sandwiches.push(Sandwich::Ladder {
                op_dag: Csr::from_dense(&dense.adjoint()),
                op: Csr::from_dense(&dense),
            });
        }
        for k in 0..d {
            let xi = g.xi[k];
            if xi == C_ZERO {
                continue;
            }
            for i in 0..dim {
                if let Some((j, amp)) = space.raise_entry(k, i) {
                    drift[(j, i)] += xi * amp;
                }
                if let Some((j, amp)) = space.lower_entry(k, i) {
                    drift[(j, i)] -= xi.conj() * amp;
                }
            }
        }
        for (v, q) in &g.diffusion {
            let qh = (q + q.adjoint()) * C64::new(0.5, 0.0);
            let qhat = lift_quadratic_dense(space, &qh);
            drift -= cmul(&qhat, &qhat) * C64::new(*v, 0.0);
            sandwiches.push(Sandwich::Diffuse {
                weight2: 2.0 * v,
                q: Csr::from_dense(&qhat),
            });
        }
        for i in 0..dim {
            drift[(i, i)] += C64::new(const_diag, 0.0);
        }

        Ok(Self {
            space: space.clone(),
            drift: Csr::from_dense(&drift),
            sandwiches,
            branch_ambiguous,
        })
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    /// True when some scattering unitary sat on the logarithm branch cut.
    pub fn branch_ambiguous(&self) -> bool {
        self.branch_ambiguous
    }

    /// The master-equation right-hand side applied to a raw matrix. The
    /// argument is replaced by its Hermitian part first: the equation is
    /// defined on Hermitian matrices, and feeding roundoff skew into the
    /// completely positive sandwich terms (whose damping counterweight lives
    /// in the always-Hermitian drift contribution) would let it grow
    /// exponentially over a long integration.
    pub fn rhs_matrix(&self, rho: &CMat) -> CMat {
        let dim = self.space.dim;
        let rho_h = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
        let mut out = CMat::zeros(dim, dim);
        self.drift.mul_acc(&rho_h, C_ONE, &mut out);
        let adj = out.adjoint();
        out += adj;
        let mut tmp = CMat::zeros(dim, dim);
        for s in &self.sandwiches {
            match s {
                Sandwich::Ladder { op, op_dag } => {
                    tmp.fill(C_ZERO);
                    op.mul_acc(&rho_h, C_ONE, &mut tmp);
                    op_dag.mul_left_acc(&tmp, C_ONE, &mut out);
                }
                Sandwich::Scatter { weight, lift } => {
                    lift.sandwich_acc(&rho_h, *weight, &mut out);
                }
                Sandwich::Diffuse { weight2, q } => {
                    tmp.fill(C_ZERO);
                    q.mul_acc(&rho_h, C_ONE, &mut tmp);
                    q.mul_left_acc(&tmp, C64::new(*weight2, 0.0), &mut out);
                }
            }
        }
        out
    }
}

/// One-shot right-hand side of the many-body master equation. Every term of
/// the generator participates: Hamiltonian and source commutators, damping
/// and pumping dissipators, scattering sandwiches, and the double-commutator
/// diffusion entries (which lift to `−v[Q̂,[Q̂,ρ]]` with `Q̂ = dΓ(q)`).
/// Repeated evaluation should go through [`GmmeOperator`] instead.
pub fn gmme_rhs(
    g: &GeneratorSpec,
    rho_f: &FockDensityMatrix,
    hbar: f64,
) -> Result<CMat, FockError> {
    Ok(GmmeOperator::new(rho_f.space(), g, hbar)?.rhs_matrix(rho_f.matrix()))
}

fn run_pass(
    op: &GmmeOperator,
    m0: &CMat,
    t_grid: &[f64],
    h: f64,
    max_steps: usize,
) -> Result<Vec<CMat>, FockError> {
    let rhs = |_t: f64, m: &CMat| op.rhs_matrix(m);
    let mut out = vec![m0.clone()];
    let mut total = 0usize;
    for w in t_grid.windows(2) {
        let span = w[1] - w[0];
        let n = ((span / h).ceil() as usize).max(1);
        total += n;
        if total > max_steps {
            return Err(IntegrateError::MaxStepsExceeded { time: w[1] }.into());
        }
        let next = integrate_fixed(out.last().expect("nonempty"), w[0], w[1], n, &rhs);
        out.push(next);
    }
    Ok(out)
}

/// Integrates the master equation over `t_grid` with fixed-step RK4, halving
/// the step until two consecutive refinements agree within
/// `opts.local_error` at every grid point (the accepted pass is the finer
/// one, so its own error is roughly the reported defect over fifteen). Each
/// accepted snapshot is revalidated: trace and positivity within 1e-8, and
/// the truncation-health population within [`BOUNDARY_POPULATION_LIMIT`].
pub fn evolve_fock(
    g: &GeneratorSpec,
    rho0: &FockDensityMatrix,
    t_grid: &[f64],
    hbar: f64,
    opts: IntegratorOptions,
) -> Result<Vec<FockDensityMatrix>, FockError> {
    crate::rke::validate_grid(t_grid).map_err(|e| FockError::InvalidInput {
        reason: e.to_string(),
    })?;
    rho0.validate(SNAPSHOT_TOL)?;
    let health = rho0.boundary_population();
    if health > BOUNDARY_POPULATION_LIMIT {
        return Err(FockError::TruncationUnreliable {
            reason: format!(
                "initial boundary population {health:.3e} exceeds {BOUNDARY_POPULATION_LIMIT:.1e}"
            ),
        });
    }
    let op = GmmeOperator::new(rho0.space(), g, hbar)?;
    if t_grid.len() == 1 {
        return finalize(rho0, t_grid, vec![rho0.matrix.clone()]);
    }

    // Step heuristic: fastest dissipative or coherent single-particle scale,
    // amplified by the largest total occupation the space can hold.
    let d = g.dim() as f64;
    let scale = (g.max_rate() + 2.0 * max_abs(&g.h) * d / hbar)
        * (space_capacity(rho0.space()) as f64);
    let mut h = if scale > 0.0 {
        opts.initial_step.min(1.0 / scale)
    } else {
        opts.initial_step
    }
    .max(opts.min_step);

    let mut prev = run_pass(&op, &rho0.matrix, t_grid, h, opts.max_steps)?;
    let mut defect = f64::INFINITY;
    for _ in 0..24 {
        let h2 = h / 2.0;
        if h2 < opts.min_step {
            return Err(IntegrateError::StepSizeUnderflow {
                time: *t_grid.last().expect("nonempty"),
            }
            .into());
        }
        let cur = run_pass(&op, &rho0.matrix, t_grid, h2, opts.max_steps)?;
        defect = prev
            .iter()
            .zip(&cur)
            .map(|(a, b)| max_abs_diff(a, b))
            .fold(0.0f64, f64::max);
        if defect <= opts.local_error {
            return finalize(rho0, t_grid, cur);
        }
        prev = cur;
        h = h2;
    }
    Err(FockError::StepNotConverged {
        step: h,
        defect,
        target: opts.local_error,
    })
}

fn space_capacity(space: &FockSpace) -> usize {
    space.modes * space.n_max
}

fn finalize(
    rho0: &FockDensityMatrix,
    t_grid: &[f64],
    mats: Vec<CMat>,
) -> Result<Vec<FockDensityMatrix>, FockError> {
    let space = rho0.space();
    let mut out = Vec::with_capacity(mats.len());
    for (&t, m) in t_grid.iter().zip(mats) {
        let sym = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        let state = FockDensityMatrix::from_parts(
            space.clone(),
            sym,
            rho0.truncation_marginal,
        );
        let tr = state.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > SNAPSHOT_TOL {
            return Err(FockError::InvariantViolation {
                time: t,
                reason: format!("trace drifted to {tr}"),
            });
        }
        match check_psd_within(&state.matrix, SNAPSHOT_TOL) {
            Ok(()) => {}
            Err(FockError::InvalidState { reason }) => {
                return Err(FockError::InvariantViolation { time: t, reason });
            }
            Err(e) => return Err(e),
        }
        let health = state.boundary_population();
        if health > BOUNDARY_POPULATION_LIMIT {
            return Err(FockError::TruncationUnreliable {
                reason: format!(
                    "boundary population {health:.3e} exceeds {BOUNDARY_POPULATION_LIMIT:.1e} at t = {t:.6e}"
                ),
            });
        }
        out.push(state);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{commutator, max_abs_diff_vec};
    use crate::rke::{classical_field_rhs, evolve};
    use crate::testkit;

    fn scalar_mat(z: C64) -> CMat {
        CMat::from_element(1, 1, z)
    }

    fn single_mode_generator(gamma_down: f64, gamma_up: f64) -> GeneratorSpec {
        GeneratorSpec::new(
            CMat::zeros(1, 1),
            scalar_mat(C64::new(gamma_down, 0.0)),
            scalar_mat(C64::new(gamma_up, 0.0)),
            CVec::zeros(1),
            Vec::new(),
            Vec::new(),
            DEFAULT_TOL,
        )
        .expect("valid generator")
    }

    #[test]
    fn basis_is_ordered_by_total_occupation_then_lexicographically() {
        let space = FockSpace::new(2, 2).unwrap();
        assert_eq!(space.dim(), 9);
        let sizes: Vec<usize> = space.sector_ranges().iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![1, 2, 3, 2, 1]);
        assert_eq!(space.occupations(0), &[0, 0]);
        assert_eq!(space.occupations(1), &[0, 1]);
        assert_eq!(space.occupations(2), &[1, 0]);
        assert_eq!(space.occupations(3), &[0, 2]);
        assert_eq!(space.occupations(4), &[1, 1]);
        assert_eq!(space.occupations(5), &[2, 0]);
        for i in 0..space.dim() {
            assert_eq!(space.index_of(space.occupations(i)), Some(i));
            let total: usize = space.occupations(i).iter().map(|&n| n as usize).sum();
            assert_eq!(space.total_occupation(i), total);
        }
        assert_eq!(space.index_of(&[3, 0]), None);
        assert_eq!(space.index_of(&[0]), None);
    }

    #[test]
    fn dimension_limit_is_enforced() {
        match FockSpace::new(4, 8) {
            Err(FockError::DimensionLimitExceeded { dim, limit }) => {
                assert_eq!(dim, 6561);
                assert_eq!(limit, DEFAULT_DIMENSION_LIMIT);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
        let space = FockSpace::with_dimension_limit(4, 8, 7000).unwrap();
        assert_eq!(space.dim(), 6561);
        assert!(matches!(
            FockSpace::new(0, 3),
            Err(FockError::InvalidInput { .. })
        ));
        assert!(matches!(
            FockSpace::new(2, 0),
            Err(FockError::InvalidInput { .. })
        ));
    }

    #[test]
    fn single_mode_ladder_matrices_have_square_root_entries() {
        let space = FockSpace::new(1, 2).unwrap();
        let ops = build_mode_operators(&space);
        let a = &ops.a[0];
        let mut expected = CMat::zeros(3, 3);
        expected[(0, 1)] = C64::new(1.0, 0.0);
        expected[(1, 2)] = C64::new(2.0f64.sqrt(), 0.0);
        assert!(max_abs_diff(a, &expected) < 1e-15);

        let number = &ops.a_dag[0] * a;
        for n in 0..3 {
            assert!((number[(n, n)] - C64::new(n as f64, 0.0)).norm() < 1e-15);
        }

        let comm = commutator(a, &ops.a_dag[0]);
        let mut defect = CMat::zeros(3, 3);
        defect[(0, 0)] = C64::new(1.0, 0.0);
        defect[(1, 1)] = C64::new(1.0, 0.0);
        defect[(2, 2)] = C64::new(-2.0, 0.0);
        assert!(max_abs_diff(&comm, &defect) < 1e-15);
    }

    #[test]
    fn ladder_operators_on_distinct_modes_commute() {
        let space = FockSpace::new(2, 2).unwrap();
        let ops = build_mode_operators(&space);
        assert!(max_abs(&commutator(&ops.a[0], &ops.a[1])) < 1e-15);
        assert!(max_abs(&commutator(&ops.a[0], &ops.a_dag[1])) < 1e-15);
    }

    #[test]
    fn vacuum_and_number_states_reduce_to_diagonal_occupations() {
        let space = FockSpace::new(2, 3).unwrap();
        let vac = vacuum_state(&space);
        assert!((vac.trace() - C64::new(1.0, 0.0)).norm() < 1e-15);
        let red = reduce(&vac);
        assert!(max_abs(red.rho()) < 1e-15);
        assert!(red.alpha().norm() < 1e-15);

        let num = number_state(&space, &[1, 2]).unwrap();
        let red = reduce(&num);
        assert!((red.rho()[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((red.rho()[(1, 1)] - C64::new(2.0, 0.0)).norm() < 1e-14);
        assert!(red.rho()[(0, 1)].norm() < 1e-15);
        assert!(red.alpha().norm() < 1e-15);

        assert!(matches!(
            number_state(&space, &[1, 4]),
            Err(FockError::InvalidInput { .. })
        ));
    }

    #[test]
    fn single_mode_coherent_state_has_expected_amplitude() {
        let space = FockSpace::new(1, 8).unwrap();
        let alpha = C64::new(0.5, 0.0);
        let state = coherent_state(&space, &CVec::from_element(1, alpha)).unwrap();
        assert!(!state.truncation_marginal());
        let ops = build_mode_operators(&space);
        let a_mean = state.expectation(&ops.a[0]);
        assert!((a_mean - alpha).norm() < 1e-6);

        // near-eigenvector of the lowering operator up to the cutoff defect
        let shifted = &ops.a[0] - CMat::identity(9, 9) * alpha;
        let residual = (&shifted * state.matrix() * shifted.adjoint()).trace();
        assert!(residual.re.abs() < 1e-8);
        assert!(residual.im.abs() < 1e-12);
    }

    #[test]
    fn coherent_state_with_zero_amplitude_is_the_vacuum() {
        let space = FockSpace::new(2, 3).unwrap();
        let state = coherent_state(&space, &CVec::zeros(2)).unwrap();
        assert!(max_abs_diff(state.matrix(), vacuum_state(&space).matrix()) < 1e-12);
    }

    #[test]
    fn coherent_state_flags_and_rejects_tight_occupation_budgets() {
        let space = FockSpace::new(1, 4).unwrap();
        let comfortable =
            coherent_state(&space, &CVec::from_element(1, C64::new(0.9, 0.0))).unwrap();
        assert!(!comfortable.truncation_marginal());

        let tight =
            coherent_state(&space, &CVec::from_element(1, C64::new(1.5f64.sqrt(), 0.0))).unwrap();
        assert!(tight.truncation_marginal());

        assert!(matches!(
            coherent_state(&space, &CVec::from_element(1, C64::new(2.5f64.sqrt(), 0.0))),
            Err(FockError::TruncationUnreliable { .. })
        ));
    }

    #[test]
    fn multimode_coherent_state_matches_tensor_product_of_series() {
        let space = FockSpace::new(2, 8).unwrap();
        let alpha = CVec::from_vec(vec![C64::new(0.3, 0.0), C64::new(0.0, 0.2)]);
        let state = coherent_state(&space, &alpha).unwrap();

        let mut psi = CVec::zeros(space.dim());
        for i in 0..space.dim() {
            let mut amp = C64::new(1.0, 0.0);
            for (k, &n) in space.occupations(i).iter().enumerate() {
                let mut q = C64::new(1.0, 0.0);
                for m in 1..=n as usize {
                    q *= alpha[k] / C64::new((m as f64).sqrt(), 0.0);
                }
                amp *= q;
            }
            psi[i] = amp;
        }
        let norm = psi.norm();
        for z in psi.iter_mut() {
            *z /= norm;
        }
        let manual = &psi * psi.adjoint();
        assert!(max_abs_diff(state.matrix(), &manual) < 1e-6);
    }

    #[test]
    fn single_mode_quasi_free_state_is_geometric_with_matching_entropy() {
        let space = FockSpace::new(1, 12).unwrap();
        let r = scalar_mat(C64::new(2.0f64.ln(), 0.0));
        let state = quasi_free_state(&space, &r).unwrap();

        let m = state.matrix();
        for n in 1..=12 {
            let ratio = m[(n, n)].re / m[(n - 1, n - 1)].re;
            assert!((ratio - 0.5).abs() < 1e-12, "ratio at level {n} was {ratio}");
        }
        for i in 0..13 {
            for j in 0..13 {
                if i != j {
                    assert!(m[(i, j)].norm() < 1e-14);
                }
            }
        }

        let red = reduce(&state);
        assert!(red.alpha().norm() < 1e-14);
        assert!((red.rho()[(0, 0)].re - 1.0).abs() < 2e-3);

        let s = von_neumann_entropy(&state).unwrap();
        assert!((s - 2.0 * 2.0f64.ln()).abs() < 2e-3);
        // quasi-free states saturate the entropy allowed by their reduction
        let ceiling = red.rsf_entropy().unwrap();
        assert!((s - ceiling).abs() < 5e-4);
    }

    #[test]
    fn quasi_free_reduction_matches_the_closed_form_occupation_map() {
        let space = FockSpace::new(2, 8).unwrap();
        let mut r = CMat::zeros(2, 2);
        r[(0, 0)] = C64::new(2.2, 0.0);
        r[(1, 1)] = C64::new(2.6, 0.0);
        r[(0, 1)] = C64::new(0.3, -0.1);
        r[(1, 0)] = C64::new(0.3, 0.1);
        let state = quasi_free_state(&space, &r).unwrap();
        let red = reduce(&state);
        let expected = crate::state::quasi_free_spdm(&r, DEFAULT_TOL).unwrap();
        assert!(max_abs_diff(red.rho(), &expected) < 1e-6);
        assert!(red.alpha().norm() < 1e-12);
    }

    #[test]
    fn quasi_free_state_requires_positive_definite_exponent() {
        let space = FockSpace::new(2, 4).unwrap();
        let mut r = CMat::zeros(2, 2);
        r[(0, 0)] = C64::new(0.5, 0.0);
        r[(1, 1)] = C64::new(0.5, 0.0);
        r[(0, 1)] = C64::new(0.6, 0.0);
        r[(1, 0)] = C64::new(0.6, 0.0);
        assert!(matches!(
            quasi_free_state(&space, &r),
            Err(FockError::InvalidInput { .. })
        ));
    }

    #[test]
    fn deeply_gapped_quasi_free_state_approaches_the_vacuum() {
        let space = FockSpace::new(1, 6).unwrap();
        let state = quasi_free_state(&space, &scalar_mat(C64::new(30.0, 0.0))).unwrap();
        assert!(max_abs_diff(state.matrix(), vacuum_state(&space).matrix()) < 1e-12);
    }

    #[test]
    fn displacing_the_vacuum_builds_the_coherent_state() {
        let space = FockSpace::new(1, 10).unwrap();
        let alpha = CVec::from_element(1, C64::new(0.4, 0.0));
        let displaced = displace(&vacuum_state(&space), &alpha).unwrap();
        let series = coherent_state(&space, &alpha).unwrap();
        assert!(max_abs_diff(displaced.matrix(), series.matrix()) < 1e-7);
    }

    #[test]
    fn displacement_followed_by_its_inverse_is_the_identity() {
        let space = FockSpace::new(2, 5).unwrap();
        let alpha = CVec::from_vec(vec![C64::new(0.3, -0.2), C64::new(0.1, 0.25)]);
        let start =
            quasi_free_state(&space, &(CMat::identity(2, 2) * C64::new(2.5, 0.0))).unwrap();
        let there = displace(&start, &alpha).unwrap();
        let back = displace(&there, &alpha.map(|z| -z)).unwrap();
        assert!(max_abs_diff(back.matrix(), start.matrix()) < 1e-12);
    }

    #[test]
    fn displacement_shifts_the_reduced_amplitude_and_keeps_correlations() {
        let space = FockSpace::new(1, 12).unwrap();
        let n_bar = 0.2f64;
        let thermal =
            quasi_free_state(&space, &scalar_mat(C64::new((1.0 / n_bar + 1.0).ln(), 0.0)))
                .unwrap();
        let alpha = CVec::from_element(1, C64::new(0.5, 0.0));
        let shifted = displace(&thermal, &alpha).unwrap();
        let red = reduce(&shifted);
        assert!((red.alpha()[0] - C64::new(0.5, 0.0)).norm() < 1e-6);
        assert!((red.rho()[(0, 0)].re - 0.45).abs() < 1e-5);
        let corr = red.correlation_matrix(1e-6).unwrap();
        assert!((corr[(0, 0)].re - n_bar).abs() < 1e-5);
    }

    #[test]
    fn displacement_rejects_budgets_beyond_half_the_cutoff() {
        let space = FockSpace::new(1, 4).unwrap();
        let thermal =
            quasi_free_state(&space, &scalar_mat(C64::new((1.0f64 / 0.8 + 1.0).ln(), 0.0)))
                .unwrap();
        assert!(matches!(
            displace(&thermal, &CVec::from_element(1, C64::new(1.2, 0.0))),
            Err(FockError::TruncationUnreliable { .. })
        ));
    }

    #[test]
    fn lifting_the_identity_and_a_global_phase_gives_diagonal_unitaries() {
        let space = FockSpace::new(2, 3).unwrap();
        let lift = lift_unitary(&space, &CMat::identity(2, 2)).unwrap();
        assert!(!lift.branch_ambiguous);
        let id = CMat::identity(space.dim(), space.dim());
        assert!(max_abs_diff(&lift.matrix, &id) < 1e-12);

        let space1 = FockSpace::new(1, 5).unwrap();
        let theta = 0.7f64;
        let lift = lift_unitary(&space1, &scalar_mat(C64::from_polar(1.0, theta))).unwrap();
        assert!(!lift.branch_ambiguous);
        for n in 0..=5usize {
            let expected = C64::from_polar(1.0, theta * n as f64);
            assert!((lift.matrix[(n, n)] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn lifted_unitary_rotates_coherent_amplitudes() {
        let mut rng = testkit::rng(71);
        let space = FockSpace::new(2, 8).unwrap();
        let u = testkit::random_unitary(2, &mut rng);
        let alpha = CVec::from_vec(vec![C64::new(0.25, 0.0), C64::new(0.1, -0.2)]);
        let lifted = lift_unitary(&space, &u).unwrap();
        let before = coherent_state(&space, &alpha).unwrap();
        let rotated = &lifted.matrix * before.matrix() * lifted.matrix.adjoint();
        let expected = coherent_state(&space, &(&u * &alpha)).unwrap();
        assert!(max_abs_diff(&rotated, expected.matrix()) < 1e-6);
    }

    #[test]
    fn logarithm_branch_is_flagged_at_eigenvalue_minus_one() {
        let space = FockSpace::new(1, 5).unwrap();
        let lifted = lift_unitary(&space, &scalar_mat(C64::new(-1.0, 0.0))).unwrap();
        assert!(lifted.branch_ambiguous);
        for n in 0..=5usize {
            let expected = C64::new(if n % 2 == 0 { 1.0 } else { -1.0 }, 0.0);
            assert!((lifted.matrix[(n, n)] - expected).norm() < 1e-9);
        }
        let square = &lifted.matrix * &lifted.matrix;
        assert!(max_abs_diff(&square, &CMat::identity(6, 6)) < 1e-9);
    }

    #[test]
    fn reduction_intertwines_lifted_and_single_particle_conjugation() {
        let mut rng = testkit::rng(72);
        let space = FockSpace::new(2, 7).unwrap();
        let mut r = CMat::zeros(2, 2);
        r[(0, 0)] = C64::new(2.8, 0.0);
        r[(1, 1)] = C64::new(3.2, 0.0);
        r[(0, 1)] = C64::new(0.2, -0.1);
        r[(1, 0)] = C64::new(0.2, 0.1);
        let alpha = CVec::from_vec(vec![C64::new(0.2, 0.0), C64::new(0.0, 0.1)]);
        let state = displace(&quasi_free_state(&space, &r).unwrap(), &alpha).unwrap();

        let u = testkit::random_unitary(2, &mut rng);
        let lifted = lift_unitary(&space, &u).unwrap();
        let conjugated = FockDensityMatrix::from_parts(
            space.clone(),
            &lifted.matrix * state.matrix() * lifted.matrix.adjoint(),
            false,
        );

        let red_after = reduce(&conjugated);
        let red_before = reduce(&state);
        // errors are weighted by the tiny population adjacent to the cutoff
        let expected_rho = &u * red_before.rho() * u.adjoint();
        let expected_alpha = &u * red_before.alpha();
        assert!(max_abs_diff(red_after.rho(), &expected_rho) < 5e-6);
        assert!(max_abs_diff_vec(red_after.alpha(), &expected_alpha) < 5e-6);
    }

    #[test]
    fn additive_observables_agree_between_representations() {
        let mut rng = testkit::rng(73);
        let space = FockSpace::new(2, 5).unwrap();
        let alpha = CVec::from_vec(vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.2)]);
        let base = quasi_free_state(&space, &(CMat::identity(2, 2) * C64::new(2.0, 0.0))).unwrap();
        let state = displace(&base, &alpha).unwrap();
        let b = testkit::random_hermitian(2, 0.9, &mut rng);
        let lifted_b = lift_quadratic_dense(&space, &b);
        let lhs = state.expectation(&lifted_b);
        let red = reduce(&state);
        let rhs = (&b * red.rho()).trace();
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn zero_generator_produces_a_vanishing_master_equation_side() {
        let space = FockSpace::new(2, 4).unwrap();
        let state = coherent_state(
            &space,
            &CVec::from_vec(vec![C64::new(0.3, 0.0), C64::new(0.0, -0.2)]),
        )
        .unwrap();
        let rhs = gmme_rhs(&GeneratorSpec::zero(2), &state, 1.0).unwrap();
        assert!(max_abs(&rhs) < 1e-14);
    }

    #[test]
    fn master_equation_side_is_traceless_for_a_full_generator() {
        let mut rng = testkit::rng(74);
        let g = GeneratorSpec::new(
            testkit::random_hermitian(2, 0.8, &mut rng),
            testkit::random_psd(2, 0.7, &mut rng),
            testkit::random_psd(2, 0.3, &mut rng),
            testkit::random_cvec(2, 0.2, &mut rng),
            vec![(0.4, testkit::random_unitary(2, &mut rng))],
            vec![(0.25, testkit::random_hermitian(2, 0.9, &mut rng))],
            DEFAULT_TOL,
        )
        .unwrap();
        let space = FockSpace::new(2, 4).unwrap();
        let base = quasi_free_state(&space, &(CMat::identity(2, 2) * C64::new(2.4, 0.0))).unwrap();
        let state = displace(
            &base,
            &CVec::from_vec(vec![C64::new(0.3, -0.1), C64::new(0.1, 0.2)]),
        )
        .unwrap();
        let rhs = gmme_rhs(&g, &state, 1.0).unwrap();
        assert!(rhs.trace().norm() < 1e-10);
        // the derivative of a Hermitian trajectory stays Hermitian
        assert!(hermiticity_defect(&rhs) < 1e-12);
    }

    #[test]
    fn pure_damping_drains_the_number_expectation_at_rate_gamma() {
        let space = FockSpace::new(1, 6).unwrap();
        let gamma = 0.8;
        let g = single_mode_generator(gamma, 0.0);
        let one = number_state(&space, &[1]).unwrap();
        let rhs = gmme_rhs(&g, &one, 1.0).unwrap();
        let ops = build_mode_operators(&space);
        let number = &ops.a_dag[0] * &ops.a[0];
        let mut dn = C64::new(0.0, 0.0);
        for i in 0..space.dim() {
            for j in 0..space.dim() {
                dn += rhs[(i, j)] * number[(j, i)];
            }
        }
        assert!((dn - C64::new(-gamma, 0.0)).norm() < 1e-12);
        // the lost quantum lands on the vacuum
        assert!((rhs[(0, 0)] - C64::new(gamma, 0.0)).norm() < 1e-12);
        assert!((rhs[(1, 1)] + C64::new(gamma, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn master_equation_construction_validates_inputs() {
        let space = FockSpace::new(1, 3).unwrap();
        let state = vacuum_state(&space);
        assert!(matches!(
            gmme_rhs(&GeneratorSpec::zero(2), &state, 1.0),
            Err(FockError::InvalidInput { .. })
        ));
        assert!(matches!(
            gmme_rhs(&GeneratorSpec::zero(1), &state, 0.0),
            Err(FockError::InvalidInput { .. })
        ));
        let mut bad = GeneratorSpec::zero(1);
        bad.gamma_down[(0, 0)] = C64::new(-1.0, 0.0);
        assert!(matches!(
            gmme_rhs(&bad, &state, 1.0),
            Err(FockError::InvalidInput { .. })
        ));
    }

    #[test]
    fn evolution_under_the_zero_generator_is_constant() {
        let space = FockSpace::new(1, 6).unwrap();
        let state = coherent_state(&space, &CVec::from_element(1, C64::new(0.4, 0.2))).unwrap();
        let snaps = evolve_fock(
            &GeneratorSpec::zero(1),
            &state,
            &[0.0, 0.3, 1.0],
            1.0,
            IntegratorOptions::default(),
        )
        .unwrap();
        assert_eq!(snaps.len(), 3);
        for s in &snaps {
            assert!(max_abs_diff(s.matrix(), state.matrix()) < 1e-12);
        }
    }

    #[test]
    fn damped_evolution_tracks_the_classical_field_flow() {
        let space = FockSpace::new(1, 8).unwrap();
        let gamma = 0.8;
        let g = single_mode_generator(gamma, 0.0);
        let alpha0 = C64::new(0.5, 0.0);
        let state = coherent_state(&space, &CVec::from_element(1, alpha0)).unwrap();
        let grid = [0.0, 0.5, 1.0];
        let snaps = evolve_fock(&g, &state, &grid, 1.0, IntegratorOptions::default()).unwrap();
        for (&t, snap) in grid.iter().zip(&snaps) {
            let alpha_t = reduce(snap).alpha()[0];
            let expected = alpha0 * (-0.5 * gamma * t).exp();
            assert!((alpha_t - expected).norm() < 1e-7, "mismatch at t = {t}");
        }
        let rate = classical_field_rhs(&g, &CVec::from_element(1, alpha0), 1.0).unwrap()[0] / alpha0;
        assert!((rate - C64::new(-0.5 * gamma, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pumped_damped_evolution_relaxes_to_the_geometric_state() {
        let space = FockSpace::new(1, 12).unwrap();
        let g = single_mode_generator(1.0, 0.25);
        let snaps = evolve_fock(
            &g,
            &vacuum_state(&space),
            &[0.0, 8.0, 16.0],
            1.0,
            IntegratorOptions::default(),
        )
        .unwrap();
        let last = snaps.last().unwrap();
        let p0 = last.matrix()[(0, 0)].re;
        let p1 = last.matrix()[(1, 1)].re;
        assert!((p1 / p0 - 0.25).abs() < 1e-4);
        let n_mean = reduce(last).rho()[(0, 0)].re;
        assert!((n_mean - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn strong_pumping_aborts_when_population_reaches_the_cutoff() {
        let space = FockSpace::new(1, 6).unwrap();
        let g = single_mode_generator(2.5, 2.0);
        let result = evolve_fock(
            &g,
            &vacuum_state(&space),
            &[0.0, 4.0, 8.0],
            1.0,
            IntegratorOptions::default(),
        );
        assert!(matches!(result, Err(FockError::TruncationUnreliable { .. })));
    }

    #[test]
    fn evolution_respects_the_step_budget() {
        let space = FockSpace::new(1, 5).unwrap();
        let g = single_mode_generator(0.5, 0.0);
        let state = coherent_state(&space, &CVec::from_element(1, C64::new(0.3, 0.0))).unwrap();
        let mut opts = IntegratorOptions::default();
        opts.max_steps = 10;
        let err = evolve_fock(&g, &state, &[0.0, 1.0], 1.0, opts).unwrap_err();
        assert!(matches!(
            err,
            FockError::Integrate(IntegrateError::MaxStepsExceeded { .. })
        ));
    }

    #[test]
    fn evolution_rejects_a_bad_time_grid_and_boundary_heavy_starts() {
        let space = FockSpace::new(1, 3).unwrap();
        let state = vacuum_state(&space);
        let opts = IntegratorOptions::default();
        assert!(matches!(
            evolve_fock(&GeneratorSpec::zero(1), &state, &[0.0, -1.0], 1.0, opts),
            Err(FockError::InvalidInput { .. })
        ));
        assert!(matches!(
            evolve_fock(&GeneratorSpec::zero(1), &state, &[], 1.0, opts),
            Err(FockError::InvalidInput { .. })
        ));
        let top = number_state(&space, &[3]).unwrap();
        assert!(matches!(
            evolve_fock(&GeneratorSpec::zero(1), &top, &[0.0, 1.0], 1.0, opts),
            Err(FockError::TruncationUnreliable { .. })
        ));
    }

    #[test]
    fn single_mode_dynamics_commutes_with_reduction() {
        let space = FockSpace::new(1, 12).unwrap();
        let g = GeneratorSpec::new(
            scalar_mat(C64::new(0.7, 0.0)),
            scalar_mat(C64::new(1.0, 0.0)),
            scalar_mat(C64::new(0.2, 0.0)),
            CVec::from_element(1, C64::new(0.2, -0.1)),
            vec![(0.2, scalar_mat(C64::from_polar(1.0, 0.4)))],
            vec![(0.15, scalar_mat(C64::new(1.3, 0.0)))],
            DEFAULT_TOL,
        )
        .unwrap();
        let thermal = quasi_free_state(&space, &scalar_mat(C64::new(2.0, 0.0))).unwrap();
        let rho0 = displace(&thermal, &CVec::from_element(1, C64::new(0.35, 0.2))).unwrap();

        let grid = [0.0, 0.4, 1.0];
        let mut opts = IntegratorOptions::default();
        opts.local_error = 1e-8;
        let snaps = evolve_fock(&g, &rho0, &grid, 1.0, opts).unwrap();

        let s0 = reduce(&rho0);
        let traj = evolve(&g, &s0, &grid, 1.0, IntegratorOptions::default()).unwrap();

        for i in 0..grid.len() {
            let red = reduce(&snaps[i]);
            assert!(
                max_abs_diff(red.rho(), traj.states[i].rho()) < 1e-5,
                "occupations diverge at grid point {i}"
            );
            assert!(
                max_abs_diff_vec(red.alpha(), traj.states[i].alpha()) < 1e-5,
                "amplitudes diverge at grid point {i}"
            );
        }
    }

    #[test]
    fn two_mode_dynamics_with_scattering_and_diffusion_commutes_with_reduction() {
        let mut rng = testkit::rng(75);
        let space = FockSpace::new(2, 8).unwrap();
        let g = GeneratorSpec::new(
            testkit::random_hermitian(2, 0.8, &mut rng),
            testkit::random_psd(2, 0.6, &mut rng),
            testkit::random_psd(2, 0.12, &mut rng),
            testkit::random_cvec(2, 0.05, &mut rng),
            vec![(0.25, testkit::random_unitary(2, &mut rng))],
            vec![(0.1, testkit::random_hermitian(2, 0.8, &mut rng))],
            DEFAULT_TOL,
        )
        .unwrap();
        let mut r = CMat::zeros(2, 2);
        r[(0, 0)] = C64::new(2.4, 0.0);
        r[(1, 1)] = C64::new(2.8, 0.0);
        r[(0, 1)] = C64::new(0.3, 0.1);
        r[(1, 0)] = C64::new(0.3, -0.1);
        let alpha0 = CVec::from_vec(vec![C64::new(0.25, 0.0), C64::new(0.0, -0.15)]);
        let rho0 = displace(&quasi_free_state(&space, &r).unwrap(), &alpha0).unwrap();

        let grid = [0.0, 0.3, 0.8];
        let mut opts = IntegratorOptions::default();
        opts.local_error = 1e-7;
        let snaps = evolve_fock(&g, &rho0, &grid, 1.0, opts).unwrap();

        let s0 = reduce(&rho0);
        let traj = evolve(&g, &s0, &grid, 1.0, IntegratorOptions::default()).unwrap();
        for i in 0..grid.len() {
            let red = reduce(&snaps[i]);
            assert!(
                max_abs_diff(red.rho(), traj.states[i].rho()) < 1e-5,
                "occupations diverge at grid point {i}"
            );
            assert!(
                max_abs_diff_vec(red.alpha(), traj.states[i].alpha()) < 1e-5,
                "amplitudes diverge at grid point {i}"
            );
        }
    }

    #[test]
    fn hamiltonian_phase_rotates_inversely_with_hbar() {
        let space = FockSpace::new(1, 8).unwrap();
        let omega = 1.4;
        let gamma = 0.6;
        let hbar = 2.0;
        let g = GeneratorSpec::new(
            scalar_mat(C64::new(omega, 0.0)),
            scalar_mat(C64::new(gamma, 0.0)),
            CMat::zeros(1, 1),
            CVec::zeros(1),
            Vec::new(),
            Vec::new(),
            DEFAULT_TOL,
        )
        .unwrap();
        let alpha0 = C64::new(0.45, 0.0);
        let state = coherent_state(&space, &CVec::from_element(1, alpha0)).unwrap();
        let t_end = 0.5;
        let snaps =
            evolve_fock(&g, &state, &[0.0, t_end], hbar, IntegratorOptions::default()).unwrap();
        let alpha_t = reduce(&snaps[1]).alpha()[0];
        let expected = alpha0
            * C64::from_polar(1.0, -omega * t_end / hbar)
            * (-0.5 * gamma * t_end).exp();
        assert!((alpha_t - expected).norm() < 1e-7);
    }

    #[test]
    fn coherent_mixtures_stay_below_the_quasi_free_entropy_ceiling() {
        let space = FockSpace::new(1, 14).unwrap();
        let plus = coherent_state(&space, &CVec::from_element(1, C64::new(0.9, 0.0))).unwrap();
        let minus = coherent_state(&space, &CVec::from_element(1, C64::new(-0.3, 0.0))).unwrap();
        let mix = FockDensityMatrix::new(
            space.clone(),
            (plus.matrix() + minus.matrix()) * C64::new(0.5, 0.0),
            1e-9,
        )
        .unwrap();

        let red = reduce(&mix);
        assert!((red.alpha()[0] - C64::new(0.3, 0.0)).norm() < 1e-9);
        let corr = red.correlation_matrix(1e-6).unwrap()[(0, 0)].re;
        assert!((corr - 0.36).abs() < 1e-3);

        // a mixture of two pure states carries at most ln 2 of entropy, well
        // below the quasi-free ceiling set by its reduction
        let s_mix = von_neumann_entropy(&mix).unwrap();
        let ceiling = red.rsf_entropy().unwrap();
        assert!(s_mix < 2.0f64.ln() + 1e-9);
        assert!(ceiling > s_mix + 0.05);

        // the displaced quasi-free state with the same reduction attains it
        let qf = displace(
            &quasi_free_state(&space, &scalar_mat(C64::new((1.0 / corr + 1.0).ln(), 0.0)))
                .unwrap(),
            &CVec::from_element(1, red.alpha()[0]),
        )
        .unwrap();
        let s_qf = von_neumann_entropy(&qf).unwrap();
        assert!((s_qf - ceiling).abs() < 1e-4);
    }

    #[test]
    fn entropy_vanishes_for_pure_states_and_peaks_for_the_uniform_mixture() {
        let space = FockSpace::new(2, 2).unwrap();
        let pure = coherent_state(
            &space,
            &CVec::from_vec(vec![C64::new(0.2, 0.0), C64::new(0.0, 0.1)]),
        )
        .unwrap();
        assert!(von_neumann_entropy(&pure).unwrap() < 1e-9);

        let dim = space.dim();
        let uniform = FockDensityMatrix::new(
            space.clone(),
            CMat::identity(dim, dim) * C64::new(1.0 / dim as f64, 0.0),
            1e-12,
        )
        .unwrap();
        let s = von_neumann_entropy(&uniform).unwrap();
        assert!((s - (dim as f64).ln()).abs() < 1e-10);
    }

    #[test]
    fn sparse_kernels_and_split_products_match_dense_arithmetic() {
        let mut rng = testkit::rng(76);
        let small_a = testkit::random_cmat(20, 20, 1.0, &mut rng);
        let small_b = testkit::random_cmat(20, 20, 1.0, &mut rng);
        assert!(max_abs_diff(&cmul(&small_a, &small_b), &(&small_a * &small_b)) < 1e-12);

        let a = testkit::random_cmat(50, 50, 1.0, &mut rng);
        let b = testkit::random_cmat(50, 50, 1.0, &mut rng);
        assert!(max_abs_diff(&cmul(&a, &b), &(&a * &b)) < 1e-10);

        let mut sparse_src = a.clone();
        for (i, z) in sparse_src.iter_mut().enumerate() {
            if i % 3 == 0 {
                *z = C64::new(0.0, 0.0);
            }
        }
        let csr = Csr::from_dense(&sparse_src);
        let mut out = testkit::random_cmat(50, 50, 0.5, &mut rng);
        let mut expected = out.clone();
        csr.mul_acc(&b, C64::new(0.7, -0.2), &mut out);
        expected += (&sparse_src * &b) * C64::new(0.7, -0.2);
        assert!(max_abs_diff(&out, &expected) < 1e-10);

        let mut out = testkit::random_cmat(50, 50, 0.5, &mut rng);
        let mut expected = out.clone();
        csr.mul_left_acc(&b, C64::new(-0.3, 0.4), &mut out);
        expected += (&b * &sparse_src) * C64::new(-0.3, 0.4);
        assert!(max_abs_diff(&out, &expected) < 1e-10);

        let u1 = testkit::random_unitary(20, &mut rng);
        let u2 = testkit::random_unitary(30, &mut rng);
        let mut u_full = CMat::zeros(50, 50);
        u_full.view_mut((0, 0), (20, 20)).copy_from(&u1);
        u_full.view_mut((20, 20), (30, 30)).copy_from(&u2);
        let bd = BlockDiag::new(50, vec![(0..20, u1), (20..50, u2)]);
        let mut out = testkit::random_cmat(50, 50, 0.5, &mut rng);
        let mut expected = out.clone();
        bd.sandwich_acc(&b, 0.6, &mut out);
        expected += (&u_full * &b * u_full.adjoint()) * C64::new(0.6, 0.0);
        assert!(max_abs_diff(&out, &expected) < 1e-9);
    }
}

