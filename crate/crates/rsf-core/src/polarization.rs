//! Mueller/Jones calculus for the two polarization modes of a light beam.
//!
//! A beam is reduced to a [`StokesState`]: the 2x2 coherency matrix `S` of
//! second moments together with the averaged Jones amplitude `alpha`, with
//! `S - |alpha><alpha|` positive semidefinite. Expanding `S` in the Pauli
//! basis gives the Stokes vector `(s0, s1, s2, s3)`; positivity of `S` is
//! exactly the cone inequality `s0 >= 0`, `s0^2 >= s1^2 + s2^2 + s3^2`.
//!
//! A passive optical element acts on the pair through a [`MuellerJonesMap`]:
//! a completely positive map `Phi` (at most four Kraus operators) carrying
//! `S`, plus a single Jones matrix `V` carrying `alpha`. Physicality is three
//! separate conditions, each with its own check: `Phi` doubly contracting
//! ([`check_doubly_contracting`]), `V` contracting, and the pair compatible in
//! the sense that `Phi - V . V^dag` is a positive map ([`check_compatibility`]),
//! which keeps `S' - |alpha'><alpha'|` positive through the device. Maps
//! convert to and from 4x4 real Mueller matrices ([`mueller_from_cp`],
//! [`cp_from_mueller`]) via the Choi matrix
//! `C(Phi) = sum_ij |i><j| (x) Phi(|i><j|)`, compose by operator products
//! ([`MuellerJonesMap::compose`]), and arise from continuous media by
//! integrating rotation/absorption/depolarization generators
//! ([`device_map`]). [`polarization_entropy`] is the two-mode specialization
//! of the field entropy.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::integrate::{AdaptiveStepper, IntegrateError, IntegratorOptions};
use crate::operator::{
    anticommutator, check_psd, check_unitary, commutator, eig_hermitian, ensure_finite,
    herm_split, hermiticity_defect, max_abs, OperatorError, DEFAULT_TOL,
};
use crate::state::{ReducedState, StateError};
use crate::{CMat, CVec};

/// Real matrix type used for Mueller matrices (4x4 here).
pub type RMat = nalgebra::DMatrix<f64>;

/// Default number of Bloch-sphere sample points for [`check_compatibility`].
pub const DEFAULT_COMPAT_SAMPLES: usize = 20_000;
/// Default eigenvalue floor for positivity verdicts in this module.
pub const DEFAULT_COMPAT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PolarizationError {
    /// Malformed input: wrong dimensions, non-finite entries, bad parameters.
    #[error("invalid polarization input: {reason}")]
    InvalidInput { reason: String },
    /// A matrix that must be Hermitian is not, beyond tolerance.
    #[error("matrix is not Hermitian: defect {defect:.3e} exceeds {tol:.3e}")]
    NotHermitian { defect: f64, tol: f64 },
    /// The Choi matrix of a claimed map has a genuinely negative eigenvalue,
    /// so no Kraus representation exists: the Mueller matrix is unphysical.
    #[error("map is not completely positive: Choi eigenvalue {eigenvalue:.6e} < -{tol:.1e}")]
    NotCompletelyPositive { eigenvalue: f64, tol: f64 },
    /// A state or device violates a positivity or contraction bound.
    #[error("unphysical polarization object: {reason}")]
    NotPhysical { reason: String },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

/// Pauli matrix `sigma_mu` in the order that fixes the Stokes components:
/// `sigma_0 = 1` (intensity), `sigma_1 = diag(1, -1)` (x/y balance),
/// `sigma_2 = [[0,1],[1,0]]` (diagonal balance), `sigma_3 = [[0,-i],[i,0]]`
/// (circular balance). `Tr(sigma_mu sigma_nu) = 2 delta_mu_nu`.
pub fn pauli(mu: usize) -> CMat {
    let o = C64::new(0.0, 0.0);
    let l = C64::new(1.0, 0.0);
    let entries = match mu {
        0 => [l, o, o, l],
        1 => [l, o, o, -l],
        2 => [o, l, l, o],
        3 => [o, C64::new(0.0, -1.0), C64::new(0.0, 1.0), o],
        _ => panic!("Pauli index {mu} out of range 0..4"),
    };
    CMat::from_row_slice(2, 2, &entries)
}

fn ensure_two_by_two(m: &CMat, what: &str) -> Result<(), PolarizationError> {
    if m.nrows() != 2 || m.ncols() != 2 {
        return Err(PolarizationError::InvalidInput {
            reason: format!("{what} must be 2x2, got {}x{}", m.nrows(), m.ncols()),
        });
    }
    ensure_finite(m).map_err(|_| PolarizationError::InvalidInput {
        reason: format!("{what} has non-finite entries"),
    })
}

fn ensure_hermitian(m: &CMat, what: &str) -> Result<(), PolarizationError> {
    let tol = DEFAULT_TOL * (1.0 + max_abs(m));
    let defect = hermiticity_defect(m);
    if defect > tol {
        let _ = what;
        return Err(PolarizationError::NotHermitian { defect, tol });
    }
    Ok(())
}

/// Stokes components `s_mu = Tr(S sigma_mu)` of a Hermitian coherency matrix,
/// so that `S = (1/2) sum_mu s_mu sigma_mu`.
pub fn stokes_vector(s: &CMat) -> Result<[f64; 4], PolarizationError> {
    ensure_two_by_two(s, "coherency matrix")?;
    ensure_hermitian(s, "coherency matrix")?;
    Ok(stokes_vector_unchecked(s))
}

fn stokes_vector_unchecked(s: &CMat) -> [f64; 4] {
    [
        s[(0, 0)].re + s[(1, 1)].re,
        s[(0, 0)].re - s[(1, 1)].re,
        2.0 * s[(0, 1)].re,
        -2.0 * s[(0, 1)].im,
    ]
}

/// Coherency matrix `(1/2) sum_mu s_mu sigma_mu` with the given Stokes
/// components; exact inverse of [`stokes_vector`].
pub fn stokes_matrix(s: &[f64; 4]) -> CMat {
    CMat::from_row_slice(
        2,
        2,
        &[
            C64::new(0.5 * (s[0] + s[1]), 0.0),
            C64::new(0.5 * s[2], -0.5 * s[3]),
            C64::new(0.5 * s[2], 0.5 * s[3]),
            C64::new(0.5 * (s[0] - s[1]), 0.0),
        ],
    )
}

/// `sum_beta V_beta X V_beta^dag`.
fn apply_kraus(kraus: &[CMat], x: &CMat) -> CMat {
    let mut out = CMat::zeros(x.nrows(), x.ncols());
    for v in kraus {
        out += v * x * v.adjoint();
    }
    out
}

fn validate_kraus(kraus: &[CMat]) -> Result<(), PolarizationError> {
    if kraus.is_empty() {
        return Err(PolarizationError::InvalidInput {
            reason: "Kraus list is empty".into(),
        });
    }
    for (i, v) in kraus.iter().enumerate() {
        ensure_two_by_two(v, &format!("Kraus operator {i}"))?;
    }
    Ok(())
}

/// Mueller matrix `M_mu_nu = (1/2) Tr(sigma_mu Phi(sigma_nu))` of the
/// completely positive map with the given Kraus operators; `M` carries Stokes
/// vectors the same way `Phi` carries coherency matrices.
pub fn mueller_from_cp(kraus: &[CMat]) -> Result<RMat, PolarizationError> {
    validate_kraus(kraus)?;
    let sigma: Vec<CMat> = (0..4).map(pauli).collect();
    let mut m = RMat::zeros(4, 4);
    for nu in 0..4 {
        let image = apply_kraus(kraus, &sigma[nu]);
        for mu in 0..4 {
            m[(mu, nu)] = 0.5 * (&sigma[mu] * &image).trace().re;
        }
    }
    Ok(m)
}

/// Choi matrix `C[(2i+k, 2j+l)] = <k|Phi(|i><j|)|l>` of the Kraus map; equals
/// `sum_beta vec(V_beta) vec(V_beta)^dag` with column-major `vec`.
fn choi_from_kraus(kraus: &[CMat]) -> CMat {
    let mut c = CMat::zeros(4, 4);
    for v in kraus {
        let vec = CVec::from_fn(4, |r, _| v[(r % 2, r / 2)]);
        c += &vec * vec.adjoint();
    }
    c
}

/// Spectral Kraus extraction from a Choi matrix. Eigenvalues below `-tol` are
/// a hard failure; those within `[-tol, tol]` are dropped as numerically zero.
fn kraus_from_choi(choi: &CMat, tol: f64) -> Result<Vec<CMat>, PolarizationError> {
    let herm_tol = DEFAULT_TOL * (1.0 + max_abs(choi));
    let spectrum = eig_hermitian(choi, herm_tol)?;
    let mut kraus = Vec::new();
    for (b, &lambda) in spectrum.eigenvalues.iter().enumerate() {
        if lambda < -tol {
            return Err(PolarizationError::NotCompletelyPositive { eigenvalue: lambda, tol });
        }
        if lambda <= tol {
            continue;
        }
        let col = spectrum.eigenvectors.column(b);
        let scale = C64::new(lambda.sqrt(), 0.0);
        kraus.push(CMat::from_fn(2, 2, |k, i| scale * col[2 * i + k]));
    }
    Ok(kraus)
}

/// Kraus operators of the map a 4x4 Mueller matrix defines in the Pauli
/// basis. Builds the Choi matrix; a spectrum that is positive within `tol`
/// yields at most four Kraus operators, a genuinely negative eigenvalue means
/// the Mueller matrix is not completely positive and therefore unphysical.
pub fn cp_from_mueller(m: &RMat, tol: f64) -> Result<Vec<CMat>, PolarizationError> {
    if m.nrows() != 4 || m.ncols() != 4 || m.iter().any(|x| !x.is_finite()) {
        return Err(PolarizationError::InvalidInput {
            reason: format!("Mueller matrix must be 4x4 and finite, got {}x{}", m.nrows(), m.ncols()),
        });
    }
    let sigma: Vec<CMat> = (0..4).map(pauli).collect();
    let phi_sigma: Vec<CMat> = (0..4)
        .map(|nu| {
            let mut out = CMat::zeros(2, 2);
            for mu in 0..4 {
                out += &sigma[mu] * C64::new(m[(mu, nu)], 0.0);
            }
            out
        })
        .collect();
    let mut choi = CMat::zeros(4, 4);
    for i in 0..2 {
        for j in 0..2 {
            // |i><j| = (1/2) sum_nu conj? no: coefficients (sigma_nu)_{ji}/2
            let image = {
                let mut out = CMat::zeros(2, 2);
                for nu in 0..4 {
                    out += &phi_sigma[nu] * (sigma[nu][(j, i)] * 0.5);
                }
                out
            };
            for k in 0..2 {
                for l in 0..2 {
                    choi[(2 * i + k, 2 * j + l)] = image[(k, l)];
                }
            }
        }
    }
    kraus_from_choi(&choi, tol)
}

/// `sum V V^dag <= 1` within tolerance: the map does not amplify intensity.
pub fn check_passivity(kraus: &[CMat]) -> bool {
    let mut gram = CMat::identity(2, 2);
    for v in kraus {
        gram -= v * v.adjoint();
    }
    check_psd(&gram, DEFAULT_COMPAT_TOL * (1.0 + max_abs(&gram)))
}

/// Both `sum V V^dag <= 1` and `sum V^dag V <= 1` within tolerance.
pub fn check_doubly_contracting(kraus: &[CMat]) -> bool {
    if !check_passivity(kraus) {
        return false;
    }
    let mut gram = CMat::identity(2, 2);
    for v in kraus {
        gram -= v.adjoint() * v;
    }
    check_psd(&gram, DEFAULT_COMPAT_TOL * (1.0 + max_abs(&gram)))
}

/// How a compatibility verdict was certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompatibilityCertificate {
    /// `Phi - V . V^dag` is completely positive (Choi PSD), which is
    /// sufficient for positivity.
    ChoiPositive,
    /// Positivity was only tested on a quasi-uniform Bloch-sphere lattice of
    /// pure states; the verdict is sample-certified.
    BlochSampled,
}

/// Verdict of [`check_compatibility`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompatibilityVerdict {
    pub compatible: bool,
    pub certificate: CompatibilityCertificate,
}

/// Quasi-uniform pure states on the Bloch sphere: a Fibonacci lattice in
/// `(z, azimuth)` mapped to Jones vectors `(cos(t/2), e^{i phi} sin(t/2))`,
/// with the whole lattice rotated by a fixed azimuth offset.
fn bloch_lattice(n_samples: usize, offset: f64) -> impl Iterator<Item = CVec> {
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n_samples).map(move |i| {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n_samples.max(1) as f64;
        let theta = z.clamp(-1.0, 1.0).acos();
        let phi = golden_angle * i as f64 + offset;
        CVec::from_vec(vec![
            C64::new((0.5 * theta).cos(), 0.0),
            C64::from_polar((0.5 * theta).sin(), phi),
        ])
    })
}

fn min_eig_herm2(m: &CMat) -> f64 {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
    let mean = 0.5 * (a + d);
    mean - (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt()
}

/// Whether `Phi - V . V^dag` is a positive map, i.e. whether the pair keeps
/// `S >= |alpha><alpha|` true through the device.
///
/// Complete positivity of the difference (Choi matrix PSD within `tol`) is
/// checked first; it is sufficient but not necessary. Failing that, the
/// difference is evaluated on `n_samples` Fibonacci-lattice pure states and
/// the verdict is downgraded to sample-certified: positive maps that are not
/// completely positive exist, and positivity has no finite certificate in
/// general, but the 2-sphere is covered densely and cheaply.
pub fn check_compatibility(
    kraus: &[CMat],
    jones: &CMat,
    n_samples: usize,
    tol: f64,
) -> CompatibilityVerdict {
    check_compatibility_seeded(kraus, jones, n_samples, tol, 0)
}

/// [`check_compatibility`] with the sample lattice rotated by a seed-derived
/// azimuth, for reproducible but distinguishable sampling runs. Seed zero is
/// the unrotated lattice.
pub fn check_compatibility_seeded(
    kraus: &[CMat],
    jones: &CMat,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> CompatibilityVerdict {
    let diff_choi = choi_from_kraus(kraus) - choi_from_kraus(std::slice::from_ref(jones));
    let herm_tol = DEFAULT_TOL * (1.0 + max_abs(&diff_choi));
    if let Ok(spectrum) = eig_hermitian(&diff_choi, herm_tol) {
        if spectrum.min_eigenvalue() >= -tol {
            return CompatibilityVerdict {
                compatible: true,
                certificate: CompatibilityCertificate::ChoiPositive,
            };
        }
    }
    // Weyl sequence on the circle: equidistributed in the seed, deterministic.
    let offset = (seed as f64 * 0.618_033_988_749_894_9).fract() * std::f64::consts::TAU;
    for phi in bloch_lattice(n_samples, offset) {
        let pure = CMat::from_fn(2, 2, |i, j| phi[i] * phi[j].conj());
        let image = apply_kraus(kraus, &pure) - jones * &pure * jones.adjoint();
        if min_eig_herm2(&image) < -tol {
            return CompatibilityVerdict {
                compatible: false,
                certificate: CompatibilityCertificate::BlochSampled,
            };
        }
    }
    CompatibilityVerdict {
        compatible: true,
        certificate: CompatibilityCertificate::BlochSampled,
    }
}

/// A polarization state: coherency matrix `S` (second moments, intensity
/// units) and averaged Jones amplitude `alpha`, with `S - |alpha><alpha|`
/// positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct StokesState {
    s: CMat,
    alpha: CVec,
}

impl StokesState {
    /// Validates Hermiticity of `S`, positivity of `S`, and the moment
    /// inequality `S >= |alpha><alpha|`, all within `tol`.
    pub fn new(s: CMat, alpha: CVec, tol: f64) -> Result<Self, PolarizationError> {
        ensure_two_by_two(&s, "coherency matrix")?;
        ensure_hermitian(&s, "coherency matrix")?;
        if alpha.len() != 2 || alpha.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(PolarizationError::InvalidInput {
                reason: format!("Jones amplitude must be a finite 2-vector, got length {}", alpha.len()),
            });
        }
        let corr = &s - &alpha * alpha.adjoint();
        if !check_psd(&s, tol) {
            return Err(PolarizationError::NotPhysical {
                reason: "coherency matrix has a negative eigenvalue".into(),
            });
        }
        if !check_psd(&corr, tol) {
            return Err(PolarizationError::NotPhysical {
                reason: "averaged amplitude exceeds the second moments: S - |alpha><alpha| is not PSD"
                    .into(),
            });
        }
        Ok(Self { s, alpha })
    }

    /// Fully coherent beam: `S = |alpha><alpha|` exactly.
    pub fn from_jones(alpha: CVec) -> Self {
        assert_eq!(alpha.len(), 2, "Jones amplitude must be a 2-vector");
        let s = &alpha * alpha.adjoint();
        Self { s, alpha }
    }

    /// Unpolarized beam of the given per-mode intensity, no averaged field.
    pub fn unpolarized(intensity: f64) -> Result<Self, PolarizationError> {
        if !(intensity >= 0.0) || !intensity.is_finite() {
            return Err(PolarizationError::InvalidInput {
                reason: format!("intensity must be non-negative, got {intensity}"),
            });
        }
        Ok(Self {
            s: CMat::identity(2, 2) * C64::new(intensity, 0.0),
            alpha: CVec::zeros(2),
        })
    }

    pub fn s(&self) -> &CMat {
        &self.s
    }

    pub fn alpha(&self) -> &CVec {
        &self.alpha
    }

    /// Stokes components of the coherency matrix.
    pub fn stokes(&self) -> [f64; 4] {
        stokes_vector_unchecked(&self.s)
    }

    /// Entropy of the beam; see [`polarization_entropy`].
    pub fn entropy(&self) -> Result<f64, PolarizationError> {
        polarization_entropy(self)
    }
}

/// Entropy of a polarization state: the field entropy of the two-mode pair,
/// determined by the eigenvalues of `S - |alpha><alpha|`. Zero exactly for a
/// fully coherent beam; positive whenever the second moments exceed the
/// averaged field, including for Stokes-polarized but phase-averaged beams.
pub fn polarization_entropy(state: &StokesState) -> Result<f64, PolarizationError> {
    let tol = 1e-7 * (1.0 + max_abs(&state.s));
    let reduced = ReducedState::new(state.s.clone(), state.alpha.clone(), tol)?;
    Ok(reduced.rsf_entropy()?)
}

/// A polarization device: a completely positive map on coherency matrices
/// (Kraus form, at most four operators) paired with a Jones matrix on
/// averaged amplitudes, with the Mueller matrix cached.
#[derive(Debug, Clone)]
pub struct MuellerJonesMap {
    kraus: Vec<CMat>,
    jones: CMat,
    mueller: RMat,
}

impl MuellerJonesMap {
    /// The do-nothing device.
    pub fn identity() -> Self {
        Self {
            kraus: vec![CMat::identity(2, 2)],
            jones: CMat::identity(2, 2),
            mueller: RMat::identity(4, 4),
        }
    }

    /// Builds and validates a device from raw parts: dimensions, double
    /// contraction of the map, contraction of the Jones matrix, and
    /// compatibility of the pair (Choi certificate first, Bloch sampling as
    /// fallback). Kraus lists longer than four are recompressed exactly.
    pub fn new(kraus: Vec<CMat>, jones: CMat) -> Result<Self, PolarizationError> {
        validate_kraus(&kraus)?;
        ensure_two_by_two(&jones, "Jones matrix")?;
        let kraus = if kraus.len() > 4 {
            kraus_from_choi(&choi_from_kraus(&kraus), 1e-12)?
        } else {
            kraus
        };
        if !check_doubly_contracting(&kraus) {
            return Err(PolarizationError::NotPhysical {
                reason: "map is not doubly contracting".into(),
            });
        }
        let gram = CMat::identity(2, 2) - &jones * jones.adjoint();
        if !check_psd(&gram, DEFAULT_COMPAT_TOL * (1.0 + max_abs(&gram))) {
            return Err(PolarizationError::NotPhysical {
                reason: "Jones matrix is not contracting".into(),
            });
        }
        let verdict = check_compatibility(&kraus, &jones, DEFAULT_COMPAT_SAMPLES, DEFAULT_COMPAT_TOL);
        if !verdict.compatible {
            return Err(PolarizationError::NotPhysical {
                reason: "map and Jones matrix are incompatible: the difference is not a positive map"
                    .into(),
            });
        }
        let mueller = mueller_from_cp(&kraus)?;
        Ok(Self { kraus, jones, mueller })
    }

    pub fn kraus(&self) -> &[CMat] {
        &self.kraus
    }

    pub fn jones(&self) -> &CMat {
        &self.jones
    }

    pub fn mueller(&self) -> &RMat {
        &self.mueller
    }

    /// Sends a beam through the device: `S -> Phi(S)`, `alpha -> V alpha`.
    /// Compatibility of the pair keeps the output a valid state.
    pub fn apply(&self, state: &StokesState) -> Result<StokesState, PolarizationError> {
        let s = apply_kraus(&self.kraus, &state.s);
        let alpha = &self.jones * &state.alpha;
        let tol = 1e-8 * (1.0 + max_abs(&s));
        StokesState::new(s, alpha, tol)
    }

    /// Serial composition: `self` is applied after `inner`, so Mueller
    /// matrices multiply in the same order, `M = M_self M_inner`. The Kraus
    /// set of the product map is recompressed through its Choi matrix back to
    /// at most four operators; compositions of valid devices stay valid, so
    /// no re-validation happens here.
    pub fn compose(&self, inner: &Self) -> Self {
        let mut products = Vec::with_capacity(self.kraus.len() * inner.kraus.len());
        for a in &self.kraus {
            for b in &inner.kraus {
                products.push(a * b);
            }
        }
        let kraus = kraus_from_choi(&choi_from_kraus(&products), 1e-12)
            .expect("Choi of an explicit Kraus set is PSD by construction");
        Self {
            kraus,
            jones: &self.jones * &inner.jones,
            mueller: &self.mueller * &inner.mueller,
        }
    }
}

/// A homogeneous optical medium traversed for a fixed duration: coherent
/// rotation generator, absorption rates, and random unitary scattering.
#[derive(Debug, Clone)]
pub struct PolarizationDeviceSpec {
    /// Hermitian rotation generator (rad/time) of the coherent part.
    pub omega: CMat,
    /// PSD absorption rate matrix (1/time).
    pub gamma_down: CMat,
    /// Weighted scattering unitaries `(w_j >= 0, u_j)` (1/time).
    pub scattering: Vec<(f64, CMat)>,
    /// Traversal time, non-negative.
    pub duration: f64,
}

impl PolarizationDeviceSpec {
    pub fn validate(&self) -> Result<(), PolarizationError> {
        ensure_two_by_two(&self.omega, "rotation generator")?;
        ensure_hermitian(&self.omega, "rotation generator")?;
        ensure_two_by_two(&self.gamma_down, "absorption matrix")?;
        ensure_hermitian(&self.gamma_down, "absorption matrix")?;
        if !check_psd(&self.gamma_down, DEFAULT_TOL * (1.0 + max_abs(&self.gamma_down))) {
            return Err(PolarizationError::NotPhysical {
                reason: "absorption matrix has a negative rate".into(),
            });
        }
        for (j, (w, u)) in self.scattering.iter().enumerate() {
            if !(*w >= 0.0) || !w.is_finite() {
                return Err(PolarizationError::InvalidInput {
                    reason: format!("scattering weight {j} must be non-negative, got {w}"),
                });
            }
            ensure_two_by_two(u, &format!("scattering unitary {j}"))?;
            if !check_unitary(u, 1e-7) {
                return Err(PolarizationError::NotPhysical {
                    reason: format!("scattering element {j} is not unitary"),
                });
            }
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(PolarizationError::InvalidInput {
                reason: format!("duration must be non-negative, got {}", self.duration),
            });
        }
        Ok(())
    }
}

/// Integrates a medium into its transfer pair.
///
/// The coherency matrix obeys
/// `dS/dt = -i[omega, S] - (1/2){gamma_down, S} + sum_j w_j (u_j S u_j^dag - S)`;
/// integrating the four Pauli inputs yields the Mueller matrix and, through
/// its Choi matrix, the Kraus operators. The averaged amplitude obeys
/// `dV/dt = -(i(omega + delta) + (1/2) gamma_down + gamma_dec) V` where
/// `gamma_dec + i delta = sum_j w_j (1 - u_j)` splits into Hermitian parts:
/// scattering both dephases the amplitude and renormalizes its rotation.
pub fn device_map(spec: &PolarizationDeviceSpec) -> Result<MuellerJonesMap, PolarizationError> {
    spec.validate()?;
    let total_weight: f64 = spec.scattering.iter().map(|(w, _)| w).sum();
    let rate_scale =
        max_abs(&spec.omega) + max_abs(&spec.gamma_down) + 2.0 * total_weight + 1e-12;
    let opts = IntegratorOptions {
        initial_step: (0.05 / rate_scale).min(spec.duration.max(1e-300)),
        local_error: 1e-11,
        ..IntegratorOptions::default()
    };

    let s_rhs = |_t: f64, s: &CMat| -> CMat {
        let mut out = commutator(&spec.omega, s) * C64::new(0.0, -1.0)
            - anticommutator(&spec.gamma_down, s) * C64::new(0.5, 0.0);
        for (w, u) in &spec.scattering {
            out += (u * s * u.adjoint() - s) * C64::new(*w, 0.0);
        }
        out
    };
    let mut mueller = RMat::zeros(4, 4);
    for nu in 0..4 {
        let mut stepper = AdaptiveStepper::new(opts);
        let image = stepper.advance(pauli(nu), 0.0, spec.duration, &s_rhs)?;
        for mu in 0..4 {
            mueller[(mu, nu)] = 0.5 * (pauli(mu) * &image).trace().re;
        }
    }
    let kraus = cp_from_mueller(&mueller, 1e-8)?;

    let mut dephase = CMat::zeros(2, 2);
    for (w, u) in &spec.scattering {
        dephase += (CMat::identity(2, 2) - u) * C64::new(*w, 0.0);
    }
    let (gamma_dec, delta) = herm_split(&dephase);
    let generator = (&spec.omega + &delta) * C64::new(0.0, -1.0)
        - &spec.gamma_down * C64::new(0.5, 0.0)
        - gamma_dec;
    let v_rhs = |_t: f64, v: &CMat| -> CMat { &generator * v };
    let mut stepper = AdaptiveStepper::new(opts);
    let jones = stepper.advance(CMat::identity(2, 2), 0.0, spec.duration, &v_rhs)?;

    if !check_doubly_contracting(&kraus) {
        return Err(PolarizationError::NotPhysical {
            reason: "integrated map lost double contraction beyond tolerance".into(),
        });
    }
    let verdict = check_compatibility(&kraus, &jones, DEFAULT_COMPAT_SAMPLES, DEFAULT_COMPAT_TOL);
    if !verdict.compatible {
        return Err(PolarizationError::NotPhysical {
            reason: "integrated map and Jones matrix came out incompatible".into(),
        });
    }
    Ok(MuellerJonesMap { kraus, jones, mueller })
}
