//! Thermal and rotating baths for mode-diagonal dynamics.
//!
//! A bath at temperature `T`, co-rotating at angular velocity `Omega`, couples
//! to each mode `k` through a decay rate `gamma_down[k]` and an angular-momentum
//! quantum number `m[k]`. Detailed balance then fixes the pumping rate
//!
//! ```text
//! gamma_up[k] = exp(-hbar * (omega_k - m_k * Omega) / (k_B * T)) * gamma_down[k]
//! ```
//!
//! so a mode with `omega_k < m_k * Omega` is pumped faster than it decays and
//! its occupation grows without bound. Everything here is diagonal in the mode
//! basis, which makes the kinetic equations scalar per mode: occupations and
//! field amplitudes evolve by closed-form exponentials, provided in
//! [`occupation_solution`] and [`amplitude_solution`]. The same baths can be
//! handed to the general integrator through [`to_generator`], which packages
//! them as a diagonal [`GeneratorSpec`]; the closed forms double as oracles
//! for that path.
//!
//! Scattering that is diagonal in the mode basis does not move population but
//! dephases the averaged field. [`decoherence_rate`] extracts the per-mode
//! decay rate and frequency shift, and [`classify_modes`] sorts modes into
//! damped, population-superradiant, and amplitude-amplified classes.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::operator::DEFAULT_TOL;
use crate::rke::{GeneratorSpec, RkeError};
use crate::{CMat, CVec};

/// One bath-coupled mode: frequency, decay rate, and angular-momentum number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathMode {
    /// Mode frequency `omega_k` (angular, same units as `Omega`).
    pub omega: f64,
    /// Decay rate `gamma_down[k] >= 0`; its frequency dependence is the
    /// caller's model and is taken as given.
    pub gamma_down: f64,
    /// Angular-momentum quantum number `m_k` of the mode about the rotation
    /// axis.
    pub m: i64,
}

/// A thermal bath at temperature `T > 0`, rigidly rotating at `Omega >= 0`,
/// coupled to a list of modes.
///
/// Serializes as `{"T": .., "Omega": .., "modes": [{"omega": .., "gamma_down": .., "m": ..}, ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalBathSpec {
    /// Bath temperature, strictly positive.
    #[serde(rename = "T")]
    pub temperature: f64,
    /// Rotation angular velocity, non-negative. Zero means a static bath.
    #[serde(rename = "Omega")]
    pub rotation: f64,
    /// Bath-coupled modes, one entry per dynamical mode, in mode-basis order.
    pub modes: Vec<BathMode>,
}

/// Stability class of a single mode under a rotating bath plus dephasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeClass {
    /// Occupation relaxes to a finite value and the field amplitude decays.
    Damped,
    /// Occupation grows without bound (`gamma_up > gamma_down`) but dephasing
    /// still wins over the net gain, so the averaged field decays.
    PopulationSuperradiant,
    /// The averaged field itself is exponentially amplified. This implies
    /// superradiant population growth.
    AmplitudeAmplified,
}

#[derive(Debug, Error)]
pub enum ThermalError {
    /// The bath description is unphysical or malformed.
    #[error("invalid bath: {reason}")]
    InvalidBath { reason: String },
    /// A scattering unitary is not diagonal in the mode basis, so per-mode
    /// decoherence rates are not defined for it.
    #[error(
        "scattering element {index} is not diagonal in the mode basis \
         (off-diagonal magnitude {defect:.3e})"
    )]
    DiagonalityViolation { index: usize, defect: f64 },
    /// Forwarded from generator assembly or evolution.
    #[error(transparent)]
    Rke(#[from] RkeError),
}

impl ThermalBathSpec {
    /// Number of modes the bath couples to.
    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    /// Checks physicality: `T > 0`, `Omega >= 0`, every `gamma_down >= 0`,
    /// and all entries finite.
    pub fn validate(&self) -> Result<(), ThermalError> {
        let fail = |reason: String| Err(ThermalError::InvalidBath { reason });
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return fail(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            ));
        }
        if !(self.rotation >= 0.0) || !self.rotation.is_finite() {
            return fail(format!(
                "rotation rate must be non-negative and finite, got {}",
                self.rotation
            ));
        }
        if self.modes.is_empty() {
            return fail("bath couples to no modes".into());
        }
        for (k, mode) in self.modes.iter().enumerate() {
            if !mode.omega.is_finite() {
                return fail(format!("mode {k}: frequency must be finite, got {}", mode.omega));
            }
            if !(mode.gamma_down >= 0.0) || !mode.gamma_down.is_finite() {
                return fail(format!(
                    "mode {k}: decay rate must be non-negative and finite, got {}",
                    mode.gamma_down
                ));
            }
        }
        Ok(())
    }
}

/// Detailed-balance rates `(gamma_up[k], gamma_down[k])` for each mode.
///
/// The pumping rate is `gamma_up = exp(-hbar * (omega - m * Omega) / (k_B * T))
/// * gamma_down`. In the co-rotating frame the bath looks thermal at the
/// shifted frequency `omega - m * Omega`; a mode below the rotation threshold
/// (`omega < m * Omega`) sees a negative effective frequency and comes out
/// pumped harder than it decays.
pub fn kms_rates(
    spec: &ThermalBathSpec,
    hbar: f64,
    k_b: f64,
) -> Result<Vec<(f64, f64)>, ThermalError> {
    spec.validate()?;
    if !(hbar > 0.0) || !hbar.is_finite() || !(k_b > 0.0) || !k_b.is_finite() {
        return Err(ThermalError::InvalidBath {
            reason: format!("hbar and k_B must be positive and finite, got {hbar} and {k_b}"),
        });
    }
    Ok(spec
        .modes
        .iter()
        .map(|mode| {
            let effective = mode.omega - mode.m as f64 * spec.rotation;
            let boltzmann = (-hbar * effective / (k_b * spec.temperature)).exp();
            (boltzmann * mode.gamma_down, mode.gamma_down)
        })
        .collect())
}

/// Occupation of a single mode under constant pump and decay rates,
/// `n(0) = n0`:
///
/// ```text
/// n(t) = n_bar + (n0 - n_bar) * exp(-(gamma_down - gamma_up) * t),
/// n_bar = gamma_up / (gamma_down - gamma_up),
/// ```
///
/// extended continuously through the threshold `gamma_up = gamma_down`, where
/// it degenerates to linear heating `n0 + gamma_up * t`. Above threshold the
/// exponent is positive and the occupation grows without bound.
pub fn occupation_solution(n0: f64, gamma_up: f64, gamma_down: f64, t: f64) -> f64 {
    let net = gamma_down - gamma_up;
    // exp_m1 keeps the threshold crossing smooth: (1 - e^{-net t}) / net -> t
    // as net -> 0 without cancellation.
    let pumped = if net == 0.0 { t } else { -(-net * t).exp_m1() / net };
    n0 * (-net * t).exp() + gamma_up * pumped
}

/// Averaged field amplitude of a single mode with renormalized frequency
/// `omega_prime`, constant rates, and dephasing rate `gamma_dec >= 0`:
///
/// ```text
/// alpha(t) = alpha0 * exp(-i omega_prime t - (0.5 (gamma_down - gamma_up) + gamma_dec) t).
/// ```
///
/// The amplitude is amplified exactly when the net rate in the exponent is
/// negative, which requires pumping to beat decay by more than twice the
/// dephasing rate.
pub fn amplitude_solution(
    alpha0: C64,
    omega_prime: f64,
    gamma_up: f64,
    gamma_down: f64,
    gamma_dec: f64,
    t: f64,
) -> C64 {
    let decay = 0.5 * (gamma_down - gamma_up) + gamma_dec;
    alpha0 * C64::new(-decay * t, -omega_prime * t).exp()
}

/// Per-mode dephasing from scattering that is diagonal in the mode basis.
///
/// For scattering channels `(w_j, u_j)` with every `u_j` unitary and diagonal,
/// mode `k`'s field amplitude picks up the factor
/// `exp(sum_j w_j (<k|u_j|k> - 1) t)`, whose real part decays at
///
/// ```text
/// rate = sum_j w_j * (1 - Re <k|u_j|k>)  >= 0
/// ```
///
/// and whose imaginary part `shift = sum_j w_j * Im <k|u_j|k>` advances the
/// phase. Returns `(rate, shift)`; the closed-form field then uses the
/// renormalized frequency `omega_prime = omega - shift` (the scattering phase
/// runs counter to the Hamiltonian one). A channel with off-diagonal weight
/// fails with [`ThermalError::DiagonalityViolation`] because it mixes modes
/// and has no per-mode rate.
pub fn decoherence_rate(
    scattering: &[(f64, CMat)],
    k: usize,
) -> Result<(f64, f64), ThermalError> {
    let mut rate = 0.0;
    let mut shift = 0.0;
    for (index, (weight, u)) in scattering.iter().enumerate() {
        if !(*weight >= 0.0) || !weight.is_finite() {
            return Err(ThermalError::InvalidBath {
                reason: format!("scattering element {index}: weight must be non-negative, got {weight}"),
            });
        }
        if !u.is_square() || k >= u.nrows() {
            return Err(ThermalError::InvalidBath {
                reason: format!(
                    "scattering element {index}: expected a square matrix covering mode {k}, got {}x{}",
                    u.nrows(),
                    u.ncols()
                ),
            });
        }
        let scale = 1.0 + crate::operator::max_abs(u);
        let mut defect = 0.0f64;
        for i in 0..u.nrows() {
            for j in 0..u.ncols() {
                if i != j {
                    defect = defect.max(u[(i, j)].norm());
                }
            }
        }
        if defect > DEFAULT_TOL * scale {
            return Err(ThermalError::DiagonalityViolation { index, defect });
        }
        let diag = u[(k, k)];
        if (diag.norm() - 1.0).abs() > 1e-7 * scale {
            return Err(ThermalError::InvalidBath {
                reason: format!(
                    "scattering element {index}: diagonal entry {k} has modulus {:.6}, not a unitary",
                    diag.norm()
                ),
            });
        }
        rate += weight * (1.0 - diag.re);
        shift += weight * diag.im;
    }
    // Unit-modulus diagonals make every term non-negative; clip roundoff.
    Ok((rate.max(0.0), shift))
}

/// Sorts each mode into [`ModeClass`] by the signs of its net rates.
///
/// With `net_k = gamma_down[k] - gamma_up[k]` (rates at `hbar = k_B = 1`) and
/// `gamma_dec[k]` from [`decoherence_rate`]:
///
/// * `0.5 * net_k + gamma_dec[k] < 0` makes the field amplitude grow:
///   [`ModeClass::AmplitudeAmplified`];
/// * otherwise `net_k < 0` makes the occupation grow while the field still
///   decays: [`ModeClass::PopulationSuperradiant`];
/// * otherwise the mode is [`ModeClass::Damped`].
///
/// Amplitude amplification requires `net_k < -2 gamma_dec[k] <= 0`, so it
/// always implies population superradiance.
pub fn classify_modes(
    spec: &ThermalBathSpec,
    scattering: &[(f64, CMat)],
) -> Result<Vec<ModeClass>, ThermalError> {
    classify_modes_with(spec, scattering, 1.0, 1.0)
}

/// [`classify_modes`] with explicit physical constants; the class depends on
/// them through the detailed-balance exponent.
pub fn classify_modes_with(
    spec: &ThermalBathSpec,
    scattering: &[(f64, CMat)],
    hbar: f64,
    k_b: f64,
) -> Result<Vec<ModeClass>, ThermalError> {
    let rates = kms_rates(spec, hbar, k_b)?;
    rates
        .iter()
        .enumerate()
        .map(|(k, (gamma_up, gamma_down))| {
            let (gamma_dec, _shift) = decoherence_rate(scattering, k)?;
            let net = gamma_down - gamma_up;
            Ok(if 0.5 * net + gamma_dec < 0.0 {
                ModeClass::AmplitudeAmplified
            } else if net < 0.0 {
                ModeClass::PopulationSuperradiant
            } else {
                ModeClass::Damped
            })
        })
        .collect()
}

/// Packages a bath (plus optional mode-diagonal scattering) as a
/// [`GeneratorSpec`] with `h = diag(hbar * omega_k)` and diagonal rate
/// matrices, so thermal evolutions run through the same integrator as every
/// other generator. The closed forms in this module are the per-mode solutions
/// of the resulting kinetic equations.
pub fn to_generator(
    spec: &ThermalBathSpec,
    scattering: Vec<(f64, CMat)>,
    hbar: f64,
    k_b: f64,
) -> Result<GeneratorSpec, ThermalError> {
    let rates = kms_rates(spec, hbar, k_b)?;
    let d = spec.dim();
    for k in 0..d {
        // Validates diagonality and unit modulus; rates are recomputed by the
        // integrator from the channels themselves.
        decoherence_rate(&scattering, k)?;
    }
    for (index, (_, u)) in scattering.iter().enumerate() {
        if u.nrows() != d {
            return Err(ThermalError::InvalidBath {
                reason: format!(
                    "scattering element {index}: dimension {} does not match {d} bath modes",
                    u.nrows()
                ),
            });
        }
    }
    let h = CMat::from_diagonal(&CVec::from_iterator(
        d,
        spec.modes.iter().map(|mode| C64::new(hbar * mode.omega, 0.0)),
    ));
    let gamma_up = DMatrix::from_diagonal(&CVec::from_iterator(
        d,
        rates.iter().map(|&(up, _)| C64::new(up, 0.0)),
    ));
    let gamma_down = DMatrix::from_diagonal(&CVec::from_iterator(
        d,
        rates.iter().map(|&(_, down)| C64::new(down, 0.0)),
    ));
    let xi = CVec::zeros(d);
    Ok(GeneratorSpec::new(
        h,
        gamma_down,
        gamma_up,
        xi,
        scattering,
        Vec::new(),
        DEFAULT_TOL,
    )?)
}
