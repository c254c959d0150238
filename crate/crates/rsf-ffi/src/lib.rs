//! C ABI for the reduced-state-of-field toolkit.
//!
//! Conventions, mirrored in the generated `include/rsf.h`:
//!
//! * Handles (`RsfState`, `RsfGenerator`, `RsfTrajectory`) are opaque; create
//!   them through `rsf_*_new`, release them through the matching `rsf_*_free`.
//!   Freeing null is a no-op. Handles are not thread-safe to mutate, but all
//!   exported operations only read them.
//! * Every fallible function returns an [`RsfStatus`] and writes its results
//!   through out-pointers, which stay untouched on failure. The most recent
//!   failure message for the calling thread is available from
//!   [`rsf_last_error_message`] until the next failing call on that thread.
//! * Complex matrices and vectors cross the boundary as interleaved
//!   `re, im` doubles in row-major order: an `n x n` matrix is `2 n^2`
//!   doubles with entry `(i, j)` at offset `2 (i n + j)`.
//! * Strings returned through `char**` out-pointers are NUL-terminated and
//!   owned by the caller; release them with [`rsf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use rsf_core::operator::DEFAULT_TOL;
use rsf_core::polarization::mueller_from_cp;
use rsf_core::rke::{evolve, GeneratorSpec, RkeError, Trajectory};
use rsf_core::scenario::{self, Overrides, ScenarioError};
use rsf_core::state::StateError;
use rsf_core::thermal::{kms_rates, BathMode, ThermalBathSpec};
use rsf_core::{CMat, CVec, ReducedState};

/// Result class of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsfStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Arguments were readable but inconsistent or unphysical.
    InvalidArgument = 2,
    /// The computation started but failed to converge or left the valid
    /// domain.
    NumericalFailure = 3,
    /// An internal invariant failed; the library state is still sound.
    Internal = 4,
    /// A scenario file could not be read or parsed.
    ScenarioParse = 10,
    /// A scenario file parsed but failed validation.
    ScenarioValidation = 11,
    /// A scenario run failed or a compare verdict did not pass.
    ScenarioRuntime = 12,
}

/// Reduced field state: density matrix plus averaged amplitude.
pub struct RsfState(ReducedState);

/// Generator of the reduced kinetic equations.
pub struct RsfGenerator(GeneratorSpec);

/// Result of one integration run: grid, states, and diagnostics.
pub struct RsfTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NULs stripped");
    });
}

fn fail(status: RsfStatus, message: impl AsRef<str>) -> RsfStatus {
    set_error(message.as_ref());
    status
}

/// Message of the most recent failure on the calling thread. The pointer is
/// valid until the next failing call on this thread; copy it if it must
/// outlive that.
#[no_mangle]
pub extern "C" fn rsf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string; never freed.
#[no_mangle]
pub extern "C" fn rsf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn guarded(f: impl FnOnce() -> RsfStatus) -> RsfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(RsfStatus::Internal, "internal panic"),
    }
}

/// Reads an interleaved row-major complex matrix. Caller checked non-null.
unsafe fn read_cmat(data: *const f64, dim: usize) -> CMat {
    let raw = slice::from_raw_parts(data, 2 * dim * dim);
    CMat::from_fn(dim, dim, |i, j| {
        let at = 2 * (i * dim + j);
        num_complex::Complex64::new(raw[at], raw[at + 1])
    })
}

unsafe fn read_cvec(data: *const f64, dim: usize) -> CVec {
    let raw = slice::from_raw_parts(data, 2 * dim);
    CVec::from_fn(dim, |k, _| num_complex::Complex64::new(raw[2 * k], raw[2 * k + 1]))
}

unsafe fn write_cmat(m: &CMat, out: *mut f64) {
    let raw = slice::from_raw_parts_mut(out, 2 * m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let at = 2 * (i * m.ncols() + j);
            raw[at] = m[(i, j)].re;
            raw[at + 1] = m[(i, j)].im;
        }
    }
}

unsafe fn write_cvec(v: &CVec, out: *mut f64) {
    let raw = slice::from_raw_parts_mut(out, 2 * v.len());
    for k in 0..v.len() {
        raw[2 * k] = v[k].re;
        raw[2 * k + 1] = v[k].im;
    }
}

fn state_status(e: &StateError) -> RsfStatus {
    match e {
        StateError::DivergentOccupation { .. } => RsfStatus::NumericalFailure,
        _ => RsfStatus::InvalidArgument,
    }
}

fn rke_status(e: &RkeError) -> RsfStatus {
    match e {
        RkeError::InvariantViolation { .. } | RkeError::Integrate(_) => {
            RsfStatus::NumericalFailure
        }
        RkeError::State(inner) => state_status(inner),
        _ => RsfStatus::InvalidArgument,
    }
}

macro_rules! require_nonnull {
    ($($ptr:expr),+ $(,)?) => {
        $(
            if $ptr.is_null() {
                return fail(RsfStatus::NullArgument, concat!(stringify!($ptr), " is null"));
            }
        )+
    };
}

/// Creates a reduced state from `rho` (`2 dim^2` doubles) and optional
/// `alpha` (`2 dim` doubles; null means zero amplitude). `tol <= 0` selects
/// the library default positivity tolerance.
///
/// # Safety
/// `rho` must point to `2 dim^2` readable doubles and `alpha`, when non-null,
/// to `2 dim`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsf_state_new(
    dim: usize,
    rho: *const f64,
    alpha: *const f64,
    tol: f64,
    out: *mut *mut RsfState,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(rho, out);
        if dim == 0 {
            return fail(RsfStatus::InvalidArgument, "dim must be at least 1");
        }
        let rho = read_cmat(rho, dim);
        let alpha = if alpha.is_null() { CVec::zeros(dim) } else { read_cvec(alpha, dim) };
        let tol = if tol > 0.0 {
            tol
        } else {
            DEFAULT_TOL * (1.0 + rsf_core::operator::max_abs(&rho))
        };
        match ReducedState::new(rho, alpha, tol) {
            Ok(state) => {
                *out = Box::into_raw(Box::new(RsfState(state)));
                RsfStatus::Ok
            }
            Err(e) => fail(state_status(&e), e.to_string()),
        }
    })
}

/// Releases a state handle; null is a no-op.
///
/// # Safety
/// `state` must be null or a pointer returned by this library and not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn rsf_state_free(state: *mut RsfState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Number of modes of a state.
///
/// # Safety
/// `state` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rsf_state_dim(state: *const RsfState, out: *mut usize) -> RsfStatus {
    guarded(|| {
        require_nonnull!(state, out);
        *out = (*state).0.dim();
        RsfStatus::Ok
    })
}

/// Copies the density matrix into `out` (`2 dim^2` doubles).
///
/// # Safety
/// `state` must be a live handle; `out` must have room for `2 dim^2` doubles.
#[no_mangle]
pub unsafe extern "C" fn rsf_state_rho(state: *const RsfState, out: *mut f64) -> RsfStatus {
    guarded(|| {
        require_nonnull!(state, out);
        write_cmat((*state).0.rho(), out);
        RsfStatus::Ok
    })
}

/// Copies the averaged amplitude into `out` (`2 dim` doubles).
///
/// # Safety
/// `state` must be a live handle; `out` must have room for `2 dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn rsf_state_alpha(state: *const RsfState, out: *mut f64) -> RsfStatus {
    guarded(|| {
        require_nonnull!(state, out);
        write_cvec((*state).0.alpha(), out);
        RsfStatus::Ok
    })
}

/// Field entropy of the state (Boltzmann constant 1).
///
/// # Safety
/// `state` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rsf_state_entropy(state: *const RsfState, out: *mut f64) -> RsfStatus {
    guarded(|| {
        require_nonnull!(state, out);
        match (*state).0.rsf_entropy() {
            Ok(s) => {
                *out = s;
                RsfStatus::Ok
            }
            Err(e) => fail(state_status(&e), e.to_string()),
        }
    })
}

/// Total particle number `tr rho`.
///
/// # Safety
/// `state` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rsf_state_particle_number(
    state: *const RsfState,
    out: *mut f64,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(state, out);
        *out = (*state).0.particle_number();
        RsfStatus::Ok
    })
}

/// Creates a generator from its blocks. `h` is required (`2 dim^2` doubles);
/// `gamma_down`, `gamma_up`, and `xi` may be null for zero. Scattering and
/// diffusion families are passed as parallel arrays: `n` weights plus `n`
/// concatenated `2 dim^2`-double matrices.
///
/// # Safety
/// All non-null pointers must cover the documented element counts; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsf_generator_new(
    dim: usize,
    h: *const f64,
    gamma_down: *const f64,
    gamma_up: *const f64,
    xi: *const f64,
    n_scattering: usize,
    scattering_weights: *const f64,
    scattering_unitaries: *const f64,
    n_diffusion: usize,
    diffusion_weights: *const f64,
    diffusion_generators: *const f64,
    out: *mut *mut RsfGenerator,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(h, out);
        if dim == 0 {
            return fail(RsfStatus::InvalidArgument, "dim must be at least 1");
        }
        if n_scattering > 0 {
            require_nonnull!(scattering_weights, scattering_unitaries);
        }
        if n_diffusion > 0 {
            require_nonnull!(diffusion_weights, diffusion_generators);
        }
        let block = |ptr: *const f64| {
            if ptr.is_null() { CMat::zeros(dim, dim) } else { read_cmat(ptr, dim) }
        };
        let family = |n: usize, weights: *const f64, mats: *const f64| -> Vec<(f64, CMat)> {
            let ws = if n == 0 { &[][..] } else { slice::from_raw_parts(weights, n) };
            (0..n)
                .map(|k| (ws[k], read_cmat(mats.add(2 * dim * dim * k), dim)))
                .collect()
        };
        let spec = GeneratorSpec::new(
            read_cmat(h, dim),
            block(gamma_down),
            block(gamma_up),
            if xi.is_null() { CVec::zeros(dim) } else { read_cvec(xi, dim) },
            family(n_scattering, scattering_weights, scattering_unitaries),
            family(n_diffusion, diffusion_weights, diffusion_generators),
            DEFAULT_TOL,
        );
        match spec {
            Ok(g) => {
                *out = Box::into_raw(Box::new(RsfGenerator(g)));
                RsfStatus::Ok
            }
            Err(e) => fail(rke_status(&e), e.to_string()),
        }
    })
}

/// Releases a generator handle; null is a no-op.
///
/// # Safety
/// `generator` must be null or a pointer returned by this library and not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn rsf_generator_free(generator: *mut RsfGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Number of modes the generator acts on.
///
/// # Safety
/// `generator` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rsf_generator_dim(
    generator: *const RsfGenerator,
    out: *mut usize,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(generator, out);
        *out = (*generator).0.dim();
        RsfStatus::Ok
    })
}

/// Integrates the kinetic equations from `initial` over the strictly
/// increasing grid `times` (`n_times >= 1` entries). `local_error <= 0`
/// selects the library default.
///
/// # Safety
/// Handles must be live, `times` must cover `n_times` doubles, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsf_evolve(
    generator: *const RsfGenerator,
    initial: *const RsfState,
    times: *const f64,
    n_times: usize,
    hbar: f64,
    local_error: f64,
    out: *mut *mut RsfTrajectory,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(generator, initial, times, out);
        let grid = slice::from_raw_parts(times, n_times);
        let mut opts = rsf_core::integrate::IntegratorOptions::default();
        if local_error > 0.0 {
            opts.local_error = local_error;
        }
        match evolve(&(*generator).0, &(*initial).0, grid, hbar, opts) {
            Ok(trajectory) => {
                *out = Box::into_raw(Box::new(RsfTrajectory(trajectory)));
                RsfStatus::Ok
            }
            Err(e) => fail(rke_status(&e), e.to_string()),
        }
    })
}

/// Releases a trajectory handle; null is a no-op.
///
/// # Safety
/// `trajectory` must be null or a pointer returned by this library and not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn rsf_trajectory_free(trajectory: *mut RsfTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// Number of grid points in the trajectory.
///
/// # Safety
/// `trajectory` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rsf_trajectory_len(
    trajectory: *const RsfTrajectory,
    out: *mut usize,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(trajectory, out);
        *out = (*trajectory).0.times.len();
        RsfStatus::Ok
    })
}

/// Copies the time grid into `out` (`len` doubles).
///
/// # Safety
/// `trajectory` must be a live handle; `out` must have room for `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn rsf_trajectory_times(
    trajectory: *const RsfTrajectory,
    out: *mut f64,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(trajectory, out);
        let times = &(*trajectory).0.times;
        slice::from_raw_parts_mut(out, times.len()).copy_from_slice(times);
        RsfStatus::Ok
    })
}

/// Clones the state at grid index `index` into a fresh handle.
///
/// # Safety
/// `trajectory` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rsf_trajectory_state(
    trajectory: *const RsfTrajectory,
    index: usize,
    out: *mut *mut RsfState,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(trajectory, out);
        let states = &(*trajectory).0.states;
        match states.get(index) {
            Some(state) => {
                *out = Box::into_raw(Box::new(RsfState(state.clone())));
                RsfStatus::Ok
            }
            None => fail(
                RsfStatus::InvalidArgument,
                format!("index {index} out of range for {} grid points", states.len()),
            ),
        }
    })
}

/// Diagnostics at grid index `index`. Each out-pointer may be null to skip
/// that value: entropy, particle number, purity defect
/// (`max |rho - |alpha><alpha||`), and the smallest correlation eigenvalue.
///
/// # Safety
/// `trajectory` must be a live handle; non-null out-pointers must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rsf_trajectory_diagnostics(
    trajectory: *const RsfTrajectory,
    index: usize,
    out_entropy: *mut f64,
    out_particle_number: *mut f64,
    out_purity_defect: *mut f64,
    out_min_eig_corr: *mut f64,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(trajectory);
        let diagnostics = &(*trajectory).0.diagnostics;
        let Some(diag) = diagnostics.get(index) else {
            return fail(
                RsfStatus::InvalidArgument,
                format!("index {index} out of range for {} grid points", diagnostics.len()),
            );
        };
        if !out_entropy.is_null() {
            *out_entropy = diag.entropy;
        }
        if !out_particle_number.is_null() {
            *out_particle_number = diag.particle_number;
        }
        if !out_purity_defect.is_null() {
            *out_purity_defect = diag.purity_defect;
        }
        if !out_min_eig_corr.is_null() {
            *out_min_eig_corr = diag.min_eig_corr;
        }
        RsfStatus::Ok
    })
}

/// Renders the trajectory as CSV into a caller-owned string.
///
/// # Safety
/// `trajectory` must be a live handle and `out` writable; release the result
/// with `rsf_string_free`.
#[no_mangle]
pub unsafe extern "C" fn rsf_trajectory_csv(
    trajectory: *const RsfTrajectory,
    out: *mut *mut c_char,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(trajectory, out);
        let csv = (*trajectory).0.to_csv();
        match CString::new(csv) {
            Ok(text) => {
                *out = text.into_raw();
                RsfStatus::Ok
            }
            Err(_) => fail(RsfStatus::Internal, "CSV contained a NUL byte"),
        }
    })
}

/// Releases a string returned by this library; null is a no-op.
///
/// # Safety
/// `text` must be null or a string pointer returned by this library and not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn rsf_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}

/// Detailed-balance upward rates for a rotating thermal bath: mode `k` gets
/// `gamma_up[k] = exp(-hbar (omega[k] - m[k] rotation) / (k_b temperature))
/// * gamma_down[k]`.
///
/// # Safety
/// `omegas`, `gamma_downs`, `ms`, and `out_gamma_up` must each cover
/// `n_modes` elements.
#[no_mangle]
pub unsafe extern "C" fn rsf_thermal_rates(
    n_modes: usize,
    omegas: *const f64,
    gamma_downs: *const f64,
    ms: *const i64,
    temperature: f64,
    rotation: f64,
    hbar: f64,
    k_b: f64,
    out_gamma_up: *mut f64,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(omegas, gamma_downs, ms, out_gamma_up);
        let omegas = slice::from_raw_parts(omegas, n_modes);
        let gamma_downs = slice::from_raw_parts(gamma_downs, n_modes);
        let ms = slice::from_raw_parts(ms, n_modes);
        let spec = ThermalBathSpec {
            temperature,
            rotation,
            modes: (0..n_modes)
                .map(|k| BathMode { omega: omegas[k], gamma_down: gamma_downs[k], m: ms[k] })
                .collect(),
        };
        match kms_rates(&spec, hbar, k_b) {
            Ok(rates) => {
                let out = slice::from_raw_parts_mut(out_gamma_up, n_modes);
                for (slot, (up, _down)) in out.iter_mut().zip(&rates) {
                    *slot = *up;
                }
                RsfStatus::Ok
            }
            Err(e) => fail(RsfStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Mueller matrix (16 doubles, row-major) of the pure polarization map with
/// Jones matrix `jones` (8 doubles, interleaved row-major).
///
/// # Safety
/// `jones` must cover 8 doubles and `out_mueller` 16.
#[no_mangle]
pub unsafe extern "C" fn rsf_mueller_from_jones(
    jones: *const f64,
    out_mueller: *mut f64,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(jones, out_mueller);
        let jones = read_cmat(jones, 2);
        match mueller_from_cp(std::slice::from_ref(&jones)) {
            Ok(mueller) => {
                let out = slice::from_raw_parts_mut(out_mueller, 16);
                for i in 0..4 {
                    for j in 0..4 {
                        out[4 * i + j] = mueller[(i, j)];
                    }
                }
                RsfStatus::Ok
            }
            Err(e) => fail(RsfStatus::InvalidArgument, e.to_string()),
        }
    })
}

fn scenario_status(e: &ScenarioError) -> RsfStatus {
    match e {
        ScenarioError::Parse(_) => RsfStatus::ScenarioParse,
        ScenarioError::Validation(_) => RsfStatus::ScenarioValidation,
        ScenarioError::Runtime(_) => RsfStatus::ScenarioRuntime,
    }
}

/// Runs a scenario file like `rsf run`. `out_dir` may be null for the
/// current directory; `tol` NaN and `seed < 0` leave the file's settings in
/// place. On success, when `out_summary` is non-null it receives the
/// caller-owned one-line summary. A failed compare verdict returns
/// `ScenarioRuntime` after writing the outputs.
///
/// # Safety
/// `path` and, when non-null, `out_dir` must be NUL-terminated UTF-8;
/// `out_summary`, when non-null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsf_scenario_run(
    path: *const c_char,
    out_dir: *const c_char,
    tol: f64,
    seed: i64,
    out_summary: *mut *mut c_char,
) -> RsfStatus {
    guarded(|| {
        require_nonnull!(path);
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(RsfStatus::InvalidArgument, "path is not valid UTF-8");
        };
        let out_dir = if out_dir.is_null() {
            None
        } else {
            match CStr::from_ptr(out_dir).to_str() {
                Ok(dir) => Some(dir.into()),
                Err(_) => {
                    return fail(RsfStatus::InvalidArgument, "out_dir is not valid UTF-8")
                }
            }
        };
        let overrides = Overrides {
            out_dir,
            tol: tol.is_finite().then_some(tol),
            seed: u64::try_from(seed).ok(),
        };
        match scenario::run(Path::new(path), &overrides) {
            Ok(result) => {
                if !out_summary.is_null() {
                    match CString::new(result.summary) {
                        Ok(text) => *out_summary = text.into_raw(),
                        Err(_) => *out_summary = ptr::null_mut(),
                    }
                }
                if result.verdict_failed {
                    fail(RsfStatus::ScenarioRuntime, "compare verdict failed")
                } else {
                    RsfStatus::Ok
                }
            }
            Err(e) => fail(scenario_status(&e), e.to_string()),
        }
    })
}
