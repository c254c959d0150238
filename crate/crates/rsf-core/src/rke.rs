//! Reduced kinetic equations for the pair (ρ, α): the generator of the
//! dynamics, right-hand-side evaluation, trajectory integration, and the
//! classical (pure-field) limit.
//!
//! Units: `h` carries ħ·angular frequency, so the coherent part enters as
//! −(i/ħ)[h,ρ]; damping and pumping matrices γ↓, γ↑ and scattering weights
//! carry 1/time directly. The equations read
//!
//!   dρ/dt = −(i/ħ)[h, ρ] + (|ξ⟩⟨α| + |α⟩⟨ξ|) + ½{γ↑ − γ↓, ρ} + γ↑
//!           + Σ_j w_j (u_j ρ u_j† − ρ) − Σ_j v_j [q_j, [q_j, ρ]]
//!   dα/dt = −(i/ħ) h α + ½(γ↑ − γ↓) α + ξ
//!           + Σ_j w_j (u_j − 1) α − Σ_j v_j q_j² α
//!
//! with unitary u_j and Hermitian q_j. The diffusion (double-commutator)
//! entries are the weak-scattering limit u = e^{±iεq}, w = v/ε² of the
//! unitary term; both forms are kept so either presentation can be driven
//! directly.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{AdaptiveStepper, IntegrateError, OdeState};
pub use crate::integrate::IntegratorOptions;
use crate::jsonrep;
use crate::operator::{
    anticommutator, check_psd, check_unitary, commutator, eig_hermitian, ensure_finite,
    hermiticity_defect, max_abs, outer, CMat, CVec, OperatorError, DEFAULT_TOL,
};
use crate::state::{bose_entropy, ReducedState, StateError};

#[derive(Debug, Error)]
pub enum RkeError {
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("invalid generator: {reason}")]
    InvalidGenerator { reason: String },
    #[error("classical field limit requires gamma_up = 0, no scattering, no diffusion")]
    NotClassicalLimit,
    #[error("bad time grid: {reason}")]
    BadTimeGrid { reason: String },
    #[error(
        "state invariant violated at t = {time:.6e}: correlation eigenvalue {min_eigenvalue:.3e} \
         below floor {floor:.1e}"
    )]
    InvariantViolation {
        time: f64,
        min_eigenvalue: f64,
        floor: f64,
    },
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Generator of the reduced dynamics: Hamiltonian `h`, damping `gamma_down`,
/// pumping `gamma_up`, coherent source `xi`, weighted unitary scattering
/// events, and weighted double-commutator diffusion terms.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub h: CMat,
    pub gamma_down: CMat,
    pub gamma_up: CMat,
    pub xi: CVec,
    /// (weight in 1/time, unitary u)
    pub scattering: Vec<(f64, CMat)>,
    /// (weight in 1/time, Hermitian q); contributes −w[q,[q,ρ]] and −w q²α
    pub diffusion: Vec<(f64, CMat)>,
}

impl GeneratorSpec {
    pub fn new(
        h: CMat,
        gamma_down: CMat,
        gamma_up: CMat,
        xi: CVec,
        scattering: Vec<(f64, CMat)>,
        diffusion: Vec<(f64, CMat)>,
        tol: f64,
    ) -> Result<Self, RkeError> {
        let g = Self {
            h,
            gamma_down,
            gamma_up,
            xi,
            scattering,
            diffusion,
        };
        g.validate(tol)?;
        Ok(g)
    }

    /// Purely Hamiltonian generator.
    pub fn free(h: CMat) -> Self {
        let d = h.nrows();
        Self {
            h,
            gamma_down: CMat::zeros(d, d),
            gamma_up: CMat::zeros(d, d),
            xi: CVec::zeros(d),
            scattering: Vec::new(),
            diffusion: Vec::new(),
        }
    }

    /// Generator with every term zero.
    pub fn zero(dim: usize) -> Self {
        Self::free(CMat::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn validate(&self, tol: f64) -> Result<(), RkeError> {
        let d = self.h.nrows();
        if d == 0 {
            return Err(RkeError::InvalidGenerator {
                reason: "zero-dimensional generator".into(),
            });
        }
        let square = |name: &str, m: &CMat| -> Result<(), RkeError> {
            if m.nrows() != d || m.ncols() != d {
                return Err(RkeError::DimensionMismatch {
                    context: format!("{name} is {}x{}, expected {d}x{d}", m.nrows(), m.ncols()),
                });
            }
            ensure_finite(m).map_err(RkeError::from)
        };
        square("h", &self.h)?;
        square("gamma_down", &self.gamma_down)?;
        square("gamma_up", &self.gamma_up)?;
        if self.xi.len() != d {
            return Err(RkeError::DimensionMismatch {
                context: format!("xi has length {}, expected {d}", self.xi.len()),
            });
        }
        if hermiticity_defect(&self.h) > tol {
            return Err(RkeError::InvalidGenerator {
                reason: "h is not Hermitian".into(),
            });
        }
        if !check_psd(&self.gamma_down, tol) {
            return Err(RkeError::InvalidGenerator {
                reason: "gamma_down is not PSD".into(),
            });
        }
        if !check_psd(&self.gamma_up, tol) {
            return Err(RkeError::InvalidGenerator {
                reason: "gamma_up is not PSD".into(),
            });
        }
        for (idx, (w, u)) in self.scattering.iter().enumerate() {
            square(&format!("scattering[{idx}].unitary"), u)?;
            if !(*w > 0.0) {
                return Err(RkeError::InvalidGenerator {
                    reason: format!("scattering[{idx}] weight {w} is not > 0"),
                });
            }
            if !check_unitary(u, tol) {
                return Err(RkeError::InvalidGenerator {
                    reason: format!("scattering[{idx}] matrix is not unitary"),
                });
            }
        }
        for (idx, (w, q)) in self.diffusion.iter().enumerate() {
            square(&format!("diffusion[{idx}].q"), q)?;
            if !(*w > 0.0) {
                return Err(RkeError::InvalidGenerator {
                    reason: format!("diffusion[{idx}] weight {w} is not > 0"),
                });
            }
            if hermiticity_defect(q) > tol {
                return Err(RkeError::InvalidGenerator {
                    reason: format!("diffusion[{idx}].q is not Hermitian"),
                });
            }
        }
        Ok(())
    }

    /// Coarse bound on the largest dissipative rate in the generator; used to
    /// pick integration horizons (units 1/time). Zero for purely Hamiltonian
    /// generators.
    pub fn max_rate(&self) -> f64 {
        let spectral_max = |m: &CMat| -> f64 {
            eig_hermitian(m, 1e-6)
                .map(|s| s.max_eigenvalue().max(0.0))
                .unwrap_or_else(|_| max_abs(m) * m.nrows() as f64)
        };
        let mut r: f64 = 0.0;
        if max_abs(&self.gamma_down) > 0.0 {
            r = r.max(spectral_max(&self.gamma_down));
        }
        if max_abs(&self.gamma_up) > 0.0 {
            r = r.max(spectral_max(&self.gamma_up));
        }
        for (w, _) in &self.scattering {
            r = r.max(2.0 * w);
        }
        for (w, q) in &self.diffusion {
            let top = spectral_max(&(q * q));
            r = r.max(2.0 * w * top);
        }
        r
    }
}

#[derive(Serialize, Deserialize)]
struct ScatteringRepr {
    weight: f64,
    unitary: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct DiffusionRepr {
    weight: f64,
    q: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct GeneratorSpecRepr {
    h: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    gamma_down: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    gamma_up: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    xi: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    scattering: Vec<ScatteringRepr>,
    #[serde(default)]
    diffusion: Vec<DiffusionRepr>,
}

impl Serialize for GeneratorSpec {
    fn serialize<S>(&self, ser: S) -> Result<S::Ok, S::Error>
    where
        S: serde::Serializer,
    {
        GeneratorSpecRepr {
            h: jsonrep::mat_to_rows(&self.h),
            gamma_down: Some(jsonrep::mat_to_rows(&self.gamma_down)),
            gamma_up: Some(jsonrep::mat_to_rows(&self.gamma_up)),
            xi: Some(jsonrep::vec_to_pairs(&self.xi)),
            scattering: self
                .scattering
                .iter()
                .map(|(w, u)| ScatteringRepr {
                    weight: *w,
                    unitary: jsonrep::mat_to_rows(u),
                })
                .collect(),
            diffusion: self
                .diffusion
                .iter()
                .map(|(w, q)| DiffusionRepr {
                    weight: *w,
                    q: jsonrep::mat_to_rows(q),
                })
                .collect(),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for GeneratorSpec {
    fn deserialize<D>(de: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        use serde::de::Error as _;
        let repr = GeneratorSpecRepr::deserialize(de)?;
        let h = jsonrep::square_from_rows(&repr.h).map_err(D::Error::custom)?;
        let d = h.nrows();
        let opt_mat = |rows: &Option<Vec<Vec<[f64; 2]>>>| -> Result<CMat, D::Error> {
            match rows {
                Some(rows) => jsonrep::square_from_rows(rows).map_err(D::Error::custom),
                None => Ok(CMat::zeros(d, d)),
            }
        };
        Ok(GeneratorSpec {
            gamma_down: opt_mat(&repr.gamma_down)?,
            gamma_up: opt_mat(&repr.gamma_up)?,
            xi: repr
                .xi
                .as_ref()
                .map(|p| jsonrep::pairs_to_vec(p))
                .unwrap_or_else(|| CVec::zeros(d)),
            scattering: repr
                .scattering
                .iter()
                .map(|s| {
                    jsonrep::square_from_rows(&s.unitary)
                        .map(|u| (s.weight, u))
                        .map_err(D::Error::custom)
                })
                .collect::<Result<_, _>>()?,
            diffusion: repr
                .diffusion
                .iter()
                .map(|e| {
                    jsonrep::square_from_rows(&e.q)
                        .map(|q| (e.weight, q))
                        .map_err(D::Error::custom)
                })
                .collect::<Result<_, _>>()?,
            h,
        })
    }
}

fn check_dims(g: &GeneratorSpec, s: &ReducedState) -> Result<(), RkeError> {
    if g.dim() != s.dim() {
        return Err(RkeError::DimensionMismatch {
            context: format!("generator dim {} vs state dim {}", g.dim(), s.dim()),
        });
    }
    Ok(())
}

/// Right-hand side of the kinetic equations at state `s`. `drho` comes back
/// exactly Hermitian (symmetrized once at the end, so integrator arithmetic
/// cannot accumulate asymmetry).
pub fn rke_rhs(
    g: &GeneratorSpec,
    s: &ReducedState,
    hbar: f64,
) -> Result<(CMat, CVec), RkeError> {
    check_dims(g, s)?;
    Ok(rhs_unchecked(g, s.rho(), s.alpha(), hbar))
}

fn rhs_unchecked(g: &GeneratorSpec, rho: &CMat, alpha: &CVec, hbar: f64) -> (CMat, CVec) {
    let minus_i_over_hbar = C64::new(0.0, -1.0 / hbar);
    let half = C64::new(0.5, 0.0);

    let net = &g.gamma_up - &g.gamma_down; // γ↑ − γ↓

    let mut drho = commutator(&g.h, rho) * minus_i_over_hbar;
    drho += outer(&g.xi, alpha);
    drho += outer(alpha, &g.xi);
    drho += anticommutator(&net, rho) * half;
    drho += &g.gamma_up;
    for (w, u) in &g.scattering {
        let wc = C64::new(*w, 0.0);
        drho += (u * rho * u.adjoint() - rho) * wc;
    }
    for (w, q) in &g.diffusion {
        let wc = C64::new(*w, 0.0);
        drho -= commutator(q, &commutator(q, rho)) * wc;
    }
    // enforce exact Hermiticity against floating-point asymmetry
    drho = (&drho + drho.adjoint()) * half;

    let mut dalpha = (&g.h * alpha) * minus_i_over_hbar;
    dalpha += (&net * alpha) * half;
    dalpha += &g.xi;
    for (w, u) in &g.scattering {
        let wc = C64::new(*w, 0.0);
        dalpha += (u * alpha - alpha) * wc;
    }
    for (w, q) in &g.diffusion {
        let wc = C64::new(*w, 0.0);
        dalpha -= q * (q * alpha) * wc;
    }

    (drho, dalpha)
}

/// Classical field equation dα/dt = −((i/ħ)h + ½γ↓)α + ξ, valid only when
/// pumping, scattering, and diffusion are absent.
pub fn classical_field_rhs(g: &GeneratorSpec, alpha: &CVec, hbar: f64) -> Result<CVec, RkeError> {
    if max_abs(&g.gamma_up) > 0.0 || !g.scattering.is_empty() || !g.diffusion.is_empty() {
        return Err(RkeError::NotClassicalLimit);
    }
    if g.dim() != alpha.len() {
        return Err(RkeError::DimensionMismatch {
            context: format!("generator dim {} vs alpha length {}", g.dim(), alpha.len()),
        });
    }
    let mut d = (&g.h * alpha) * C64::new(0.0, -1.0 / hbar);
    d -= (&g.gamma_down * alpha) * C64::new(0.5, 0.0);
    d += &g.xi;
    Ok(d)
}

/// Per-snapshot derived scalars stored alongside the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub entropy: f64,
    pub particle_number: f64,
    pub purity_defect: f64,
    pub min_eig_corr: f64,
}

/// Time grid, states, and per-time diagnostics of one integration run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ReducedState>,
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    /// Max over the grid of ‖ρ(t) − |α(t)⟩⟨α(t)|‖_max.
    pub fn purity_defect(&self) -> f64 {
        self.diagnostics
            .iter()
            .fold(0.0f64, |m, d| m.max(d.purity_defect))
    }

    pub fn final_state(&self) -> &ReducedState {
        self.states.last().expect("trajectory is never empty")
    }

    /// CSV export: `t, N, S, purity_defect, min_eig_corr`, then interleaved
    /// re/im of α_k, then re/im of the row-major upper triangle of ρ.
    pub fn to_csv(&self) -> String {
        let d = self.states.first().map_or(0, |s| s.dim());
        let mut out = String::new();
        out.push_str("t,N,S,purity_defect,min_eig_corr");
        for k in 0..d {
            out.push_str(&format!(",re_alpha_{k},im_alpha_{k}"));
        }
        for i in 0..d {
            for j in i..d {
                out.push_str(&format!(",re_rho_{i}_{j},im_rho_{i}_{j}"));
            }
        }
        out.push('\n');
        for (idx, t) in self.times.iter().enumerate() {
            let s = &self.states[idx];
            let diag = &self.diagnostics[idx];
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e}",
                t, diag.particle_number, diag.entropy, diag.purity_defect, diag.min_eig_corr
            ));
            for k in 0..d {
                out.push_str(&format!(",{:e},{:e}", s.alpha()[k].re, s.alpha()[k].im));
            }
            for i in 0..d {
                for j in i..d {
                    let z = s.rho()[(i, j)];
                    out.push_str(&format!(",{:e},{:e}", z.re, z.im));
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone)]
struct RkePoint {
    rho: CMat,
    alpha: CVec,
}

impl OdeState for RkePoint {
    fn add_scaled(&mut self, c: f64, other: &Self) {
        self.rho
            .iter_mut()
            .zip(other.rho.iter())
            .for_each(|(a, b)| *a += c * b);
        self.alpha
            .iter_mut()
            .zip(other.alpha.iter())
            .for_each(|(a, b)| *a += c * b);
    }
    fn max_abs(&self) -> f64 {
        let m = self.rho.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        self.alpha.iter().fold(m, |m, z| m.max(z.norm()))
    }
}

pub(crate) fn validate_grid(t_grid: &[f64]) -> Result<(), RkeError> {
    if t_grid.is_empty() {
        return Err(RkeError::BadTimeGrid {
            reason: "empty time grid".into(),
        });
    }
    if t_grid[0] != 0.0 {
        return Err(RkeError::BadTimeGrid {
            reason: format!("grid must start at 0, found {}", t_grid[0]),
        });
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RkeError::BadTimeGrid {
            reason: "grid times must be strictly increasing".into(),
        });
    }
    if t_grid.iter().any(|t| !t.is_finite()) {
        return Err(RkeError::BadTimeGrid {
            reason: "non-finite grid time".into(),
        });
    }
    Ok(())
}

fn snapshot(
    rho: &CMat,
    alpha: &CVec,
    time: f64,
    floor: f64,
) -> Result<(ReducedState, Diagnostics), RkeError> {
    let half = C64::new(0.5, 0.0);
    let rho = (rho + rho.adjoint()) * half;
    let state = ReducedState::new_unchecked(rho, alpha.clone());
    let corr = state.correlation_matrix_unchecked();
    let spec = eig_hermitian(&corr, 1e-6)?;
    let min_eig = spec.min_eigenvalue();
    if min_eig < -floor {
        return Err(RkeError::InvariantViolation {
            time,
            min_eigenvalue: min_eig,
            floor,
        });
    }
    let entropy = spec
        .eigenvalues
        .iter()
        .map(|&l| bose_entropy(l.max(0.0)))
        .sum();
    let diag = Diagnostics {
        entropy,
        particle_number: state.particle_number(),
        purity_defect: max_abs(&corr),
        min_eig_corr: min_eig,
    };
    Ok((state, diag))
}

fn evolve_impl(
    rhs: &dyn Fn(f64, &RkePoint) -> RkePoint,
    s0: &ReducedState,
    t_grid: &[f64],
    opts: IntegratorOptions,
) -> Result<Trajectory, RkeError> {
    validate_grid(t_grid)?;
    // PSD floor for trajectory invariant checks, per the contract 10³·tol
    let floor = 1e3 * opts.local_error;
    s0.validate(floor.max(DEFAULT_TOL))?;

    let n = t_grid.len();
    let mut times = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    let mut diagnostics = Vec::with_capacity(n);

    let mut stepper = AdaptiveStepper::new(opts);
    let mut y = RkePoint {
        rho: s0.rho().clone(),
        alpha: s0.alpha().clone(),
    };

    let (st, dg) = snapshot(&y.rho, &y.alpha, 0.0, floor)?;
    times.push(0.0);
    states.push(st);
    diagnostics.push(dg);

    for w in t_grid.windows(2) {
        y = stepper.advance(y, w[0], w[1], rhs)?;
        let (st, dg) = snapshot(&y.rho, &y.alpha, w[1], floor)?;
        // resume integration from the symmetrized snapshot
        y.rho = st.rho().clone();
        times.push(w[1]);
        states.push(st);
        diagnostics.push(dg);
    }

    Ok(Trajectory {
        times,
        states,
        diagnostics,
    })
}

/// Integrates the kinetic equations for a constant generator over an
/// ascending time grid that starts at 0. Deterministic for fixed inputs.
pub fn evolve(
    g: &GeneratorSpec,
    s0: &ReducedState,
    t_grid: &[f64],
    hbar: f64,
    opts: IntegratorOptions,
) -> Result<Trajectory, RkeError> {
    g.validate(DEFAULT_TOL)?;
    check_dims(g, s0)?;
    let rhs = move |t: f64, y: &RkePoint| {
        let _ = t;
        let (drho, dalpha) = rhs_unchecked(g, &y.rho, &y.alpha, hbar);
        RkePoint {
            rho: drho,
            alpha: dalpha,
        }
    };
    evolve_impl(&rhs, s0, t_grid, opts)
}

/// Same as [`evolve`] for a time-dependent generator `g(t)`. The generator
/// function is validated at t = 0 and trusted elsewhere; dimensions must not
/// change over time.
pub fn evolve_time_dependent(
    g_of_t: &dyn Fn(f64) -> GeneratorSpec,
    s0: &ReducedState,
    t_grid: &[f64],
    hbar: f64,
    opts: IntegratorOptions,
) -> Result<Trajectory, RkeError> {
    let g0 = g_of_t(0.0);
    g0.validate(DEFAULT_TOL)?;
    check_dims(&g0, s0)?;
    let dim = g0.dim();
    let rhs = move |t: f64, y: &RkePoint| {
        let g = g_of_t(t);
        assert_eq!(g.dim(), dim, "generator dimension changed at t = {t}");
        let (drho, dalpha) = rhs_unchecked(&g, &y.rho, &y.alpha, hbar);
        RkePoint {
            rho: drho,
            alpha: dalpha,
        }
    };
    evolve_impl(&rhs, s0, t_grid, opts)
}
