//! Scenario files: JSON run descriptions and the dispatch logic behind the
//! `rsf` command-line driver.
//!
//! A scenario is a single JSON object with a `kind` field selecting the
//! computation:
//!
//! * `rke` — integrate the kinetic equations for a generator and initial
//!   `(rho, alpha)`, writing a time-series CSV;
//! * `fock` — integrate the full truncated-Fock-space master equation,
//!   writing the reduced time series as CSV plus a JSON sidecar with
//!   Fock-level diagnostics (von Neumann entropy, trace, boundary
//!   population);
//! * `compare` — run both for the same generator and report per-time
//!   deviations with a PASS/FAIL verdict against a threshold;
//! * `thermal` — evaluate detailed-balance rates, closed-form occupation and
//!   amplitude trajectories, and the mode classification for a rotating
//!   bath;
//! * `polarization` — push a Stokes state through a chain of polarization
//!   devices and report both reductions, the composed Mueller/Jones pair,
//!   and physicality verdicts;
//! * `entropy` — report the field entropy and particle number of a state.
//!
//! Complex numbers are `[re, im]` pairs, matrices row-major nested arrays of
//! such pairs. Physical constants `hbar` and `k_b` are per-file with default
//! 1. Outputs are deterministic: floating-point values are printed in Rust's
//! shortest round-trip form, the only sampling (compatibility certification)
//! uses a deterministic lattice rotated by the recorded `seed`, and JSON keys
//! keep declaration order.
//!
//! Errors split into the three command-line classes: [`ScenarioError::Parse`]
//! (unreadable or schema-violating file), [`ScenarioError::Validation`]
//! (well-formed but inconsistent or unphysical content), and
//! [`ScenarioError::Runtime`] (integration failures, unreliable truncation,
//! failed compare verdicts, output I/O).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fock::{
    coherent_state, displace, evolve_fock, number_state, quasi_free_state, reduce,
    von_neumann_entropy, FockDensityMatrix, FockSpace,
};
use crate::integrate::IntegratorOptions;
use crate::jsonrep;
use crate::operator::{max_abs, max_abs_diff, max_abs_diff_vec, DEFAULT_TOL};
use crate::polarization::{
    check_compatibility_seeded, check_doubly_contracting, device_map, CompatibilityCertificate,
    MuellerJonesMap, PolarizationDeviceSpec, StokesState,
};
use crate::rke::{evolve, Diagnostics, GeneratorSpec, Trajectory};
use crate::state::ReducedState;
use crate::thermal::{
    amplitude_solution, classify_modes_with, decoherence_rate, kms_rates, occupation_solution,
    ModeClass, ThermalBathSpec,
};
use crate::{CMat, CVec};

/// Row-major complex matrix as nested `[re, im]` pairs.
pub type MatRep = Vec<Vec<[f64; 2]>>;
/// Complex vector as `[re, im]` pairs.
pub type VecRep = Vec<[f64; 2]>;

const DEFAULT_COMPARE_THRESHOLD: f64 = 1e-6;
const DEFAULT_COMPAT_TOL: f64 = 1e-9;
const DEFAULT_COMPAT_SAMPLES: usize = 20_000;

#[derive(Debug)]
pub enum ScenarioError {
    /// The file could not be read or does not match the schema.
    Parse(String),
    /// The file parsed but its content is inconsistent or unphysical.
    Validation(String),
    /// The computation or its output failed.
    Runtime(String),
}

impl ScenarioError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Parse(_) => 2,
            ScenarioError::Validation(_) => 3,
            ScenarioError::Runtime(_) => 4,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            ScenarioError::Parse(_) => "parse",
            ScenarioError::Validation(_) => "validation",
            ScenarioError::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            ScenarioError::Parse(m) | ScenarioError::Validation(m) | ScenarioError::Runtime(m) => m,
        }
    }

    /// Structured single-line JSON report, written to stderr by the CLI.
    pub fn report(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: Inner<'a>,
        }
        #[derive(Serialize)]
        struct Inner<'a> {
            class: &'a str,
            exit_code: i32,
            message: &'a str,
        }
        serde_json::to_string(&Report {
            error: Inner {
                class: self.class(),
                exit_code: self.exit_code(),
                message: self.message(),
            },
        })
        .expect("error report serializes")
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.class(), self.message())
    }
}

impl std::error::Error for ScenarioError {}

fn validation(e: impl fmt::Display) -> ScenarioError {
    ScenarioError::Validation(e.to_string())
}

fn runtime(e: impl fmt::Display) -> ScenarioError {
    ScenarioError::Runtime(e.to_string())
}

/// Command-line overrides applied on top of the file contents.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Output directory; default is the current directory.
    pub out_dir: Option<PathBuf>,
    /// Verdict threshold (`compare`) or positivity tolerance (`polarization`,
    /// `entropy`); overrides the file's `tolerance`.
    pub tol: Option<f64>,
    /// Sampling seed for compatibility certification; overrides the file's
    /// `seed`.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Rke,
    Fock,
    Compare,
    Thermal,
    Polarization,
    Entropy,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Kind::Rke => "rke",
            Kind::Fock => "fock",
            Kind::Compare => "compare",
            Kind::Thermal => "thermal",
            Kind::Polarization => "polarization",
            Kind::Entropy => "entropy",
        };
        f.write_str(name)
    }
}

/// Weighted scattering unitary `(w, u)` in wire form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedUnitaryRep {
    pub weight: f64,
    pub u: MatRep,
}

/// Weighted diffusion generator `(v, q)` in wire form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedDiffusionRep {
    pub weight: f64,
    pub q: MatRep,
}

/// Kinetic-equation generator in wire form; omitted rate blocks default to
/// zero matrices of the Hamiltonian's dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorRep {
    pub h: MatRep,
    #[serde(default)]
    pub gamma_down: Option<MatRep>,
    #[serde(default)]
    pub gamma_up: Option<MatRep>,
    #[serde(default)]
    pub xi: Option<VecRep>,
    #[serde(default)]
    pub scattering: Vec<WeightedUnitaryRep>,
    #[serde(default)]
    pub diffusion: Vec<WeightedDiffusionRep>,
}

fn square(rep: &MatRep, what: &str) -> Result<CMat, ScenarioError> {
    jsonrep::square_from_rows(rep).map_err(|e| validation(format!("{what}: {e}")))
}

impl GeneratorRep {
    pub fn to_spec(&self) -> Result<GeneratorSpec, ScenarioError> {
        let h = square(&self.h, "generator h")?;
        let d = h.nrows();
        let block = |rep: &Option<MatRep>, what: &str| -> Result<CMat, ScenarioError> {
            match rep {
                Some(rows) => square(rows, what),
                None => Ok(CMat::zeros(d, d)),
            }
        };
        let gamma_down = block(&self.gamma_down, "generator gamma_down")?;
        let gamma_up = block(&self.gamma_up, "generator gamma_up")?;
        let xi = match &self.xi {
            Some(pairs) => jsonrep::pairs_to_vec(pairs),
            None => CVec::zeros(d),
        };
        let scattering = self
            .scattering
            .iter()
            .enumerate()
            .map(|(j, w)| Ok((w.weight, square(&w.u, &format!("scattering element {j}"))?)))
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let diffusion = self
            .diffusion
            .iter()
            .enumerate()
            .map(|(j, w)| Ok((w.weight, square(&w.q, &format!("diffusion element {j}"))?)))
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        GeneratorSpec::new(h, gamma_down, gamma_up, xi, scattering, diffusion, DEFAULT_TOL)
            .map_err(validation)
    }
}

/// Reduced state `(rho, alpha)` in wire form; `alpha` defaults to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRep {
    pub rho: MatRep,
    #[serde(default)]
    pub alpha: Option<VecRep>,
}

impl StateRep {
    pub fn to_state(&self) -> Result<ReducedState, ScenarioError> {
        let rho = square(&self.rho, "state rho")?;
        let d = rho.nrows();
        let alpha = match &self.alpha {
            Some(pairs) => jsonrep::pairs_to_vec(pairs),
            None => CVec::zeros(d),
        };
        let tol = DEFAULT_TOL * (1.0 + max_abs(&rho));
        ReducedState::new(rho, alpha, tol).map_err(validation)
    }
}

/// Initial Fock-space state in wire form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FockInitRep {
    /// Coherent state `|alpha_F>`.
    Coherent { alpha: VecRep },
    /// Number state `|n_0, n_1, ...>`.
    Number { occupations: Vec<u16> },
    /// Quasi-free (Gaussian) state of `r`, optionally displaced by `alpha`.
    DisplacedThermal {
        r: MatRep,
        #[serde(default)]
        alpha: Option<VecRep>,
    },
}

impl FockInitRep {
    pub fn build(&self, space: &FockSpace) -> Result<FockDensityMatrix, ScenarioError> {
        match self {
            FockInitRep::Coherent { alpha } => {
                coherent_state(space, &jsonrep::pairs_to_vec(alpha)).map_err(validation)
            }
            FockInitRep::Number { occupations } => {
                number_state(space, occupations).map_err(validation)
            }
            FockInitRep::DisplacedThermal { r, alpha } => {
                let r = square(r, "initial r")?;
                let thermal = quasi_free_state(space, &r).map_err(validation)?;
                match alpha {
                    Some(pairs) => {
                        displace(&thermal, &jsonrep::pairs_to_vec(pairs)).map_err(validation)
                    }
                    None => Ok(thermal),
                }
            }
        }
    }
}

/// Integrator options in wire form; omitted fields keep library defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorRep {
    #[serde(default)]
    pub initial_step: Option<f64>,
    #[serde(default)]
    pub min_step: Option<f64>,
    #[serde(default)]
    pub local_error: Option<f64>,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl IntegratorRep {
    pub fn to_options(&self) -> IntegratorOptions {
        let defaults = IntegratorOptions::default();
        IntegratorOptions {
            initial_step: self.initial_step.unwrap_or(defaults.initial_step),
            min_step: self.min_step.unwrap_or(defaults.min_step),
            local_error: self.local_error.unwrap_or(defaults.local_error),
            max_steps: self.max_steps.unwrap_or(defaults.max_steps),
        }
    }
}

/// One element of a polarization device chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceRep {
    /// A homogeneous medium integrated into its transfer pair.
    Medium {
        #[serde(default)]
        omega: Option<MatRep>,
        #[serde(default)]
        gamma_down: Option<MatRep>,
        #[serde(default)]
        scattering: Vec<WeightedUnitaryRep>,
        duration: f64,
    },
    /// A literal Kraus/Jones pair.
    Map { kraus: Vec<MatRep>, jones: MatRep },
}

impl DeviceRep {
    fn build(&self, index: usize) -> Result<MuellerJonesMap, ScenarioError> {
        match self {
            DeviceRep::Medium { omega, gamma_down, scattering, duration } => {
                let block = |rep: &Option<MatRep>, what: &str| -> Result<CMat, ScenarioError> {
                    match rep {
                        Some(rows) => square(rows, what),
                        None => Ok(CMat::zeros(2, 2)),
                    }
                };
                let spec = PolarizationDeviceSpec {
                    omega: block(omega, &format!("device {index} omega"))?,
                    gamma_down: block(gamma_down, &format!("device {index} gamma_down"))?,
                    scattering: scattering
                        .iter()
                        .enumerate()
                        .map(|(j, w)| {
                            Ok((
                                w.weight,
                                square(&w.u, &format!("device {index} scattering {j}"))?,
                            ))
                        })
                        .collect::<Result<Vec<_>, ScenarioError>>()?,
                    duration: *duration,
                };
                spec.validate().map_err(validation)?;
                device_map(&spec).map_err(runtime)
            }
            DeviceRep::Map { kraus, jones } => {
                let kraus = kraus
                    .iter()
                    .enumerate()
                    .map(|(j, rep)| square(rep, &format!("device {index} Kraus {j}")))
                    .collect::<Result<Vec<_>, ScenarioError>>()?;
                let jones = square(jones, &format!("device {index} Jones"))?;
                MuellerJonesMap::new(kraus, jones).map_err(validation)
            }
        }
    }
}

/// Stokes state in wire form; `alpha` defaults to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StokesRep {
    pub s: MatRep,
    #[serde(default)]
    pub alpha: Option<VecRep>,
}

impl StokesRep {
    pub fn to_state(&self) -> Result<StokesState, ScenarioError> {
        let s = square(&self.s, "input_state s")?;
        let alpha = match &self.alpha {
            Some(pairs) => jsonrep::pairs_to_vec(pairs),
            None => CVec::zeros(2),
        };
        let tol = 1e-9 * (1.0 + max_abs(&s));
        StokesState::new(s, alpha, tol).map_err(validation)
    }
}

fn default_constant() -> f64 {
    1.0
}

/// A parsed scenario file. Field relevance depends on `kind`; irrelevant
/// fields are rejected by [`ScenarioFile::validate`] only when their absence
/// breaks the run, never merely for being present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub kind: Kind,
    #[serde(default = "default_constant")]
    pub hbar: f64,
    #[serde(default = "default_constant")]
    pub k_b: f64,
    #[serde(default)]
    pub generator: Option<GeneratorRep>,
    #[serde(default)]
    pub bath: Option<ThermalBathSpec>,
    #[serde(default)]
    pub bath_scattering: Vec<WeightedUnitaryRep>,
    #[serde(default)]
    pub initial: Option<StateRep>,
    #[serde(default)]
    pub initial_fock: Option<FockInitRep>,
    #[serde(default)]
    pub initial_occupation: Vec<f64>,
    #[serde(default)]
    pub initial_amplitude: Option<VecRep>,
    #[serde(default)]
    pub grid: Vec<f64>,
    #[serde(default)]
    pub cutoff: Option<usize>,
    #[serde(default)]
    pub integrator: IntegratorRep,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub device_chain: Vec<DeviceRep>,
    #[serde(default)]
    pub input_state: Option<StokesRep>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<String>,
}

impl ScenarioFile {
    /// Kind-specific presence and consistency checks that do not require
    /// running anything.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !self.hbar.is_finite() || self.hbar <= 0.0 {
            return Err(validation(format!("hbar must be positive, got {}", self.hbar)));
        }
        if !self.k_b.is_finite() || self.k_b <= 0.0 {
            return Err(validation(format!("k_b must be positive, got {}", self.k_b)));
        }
        let need_grid = |caller: &str| -> Result<(), ScenarioError> {
            if self.grid.is_empty() {
                return Err(validation(format!("{caller} scenarios need a non-empty time grid")));
            }
            crate::rke::validate_grid(&self.grid).map_err(validation)
        };
        match self.kind {
            Kind::Rke => {
                self.require(self.generator.is_some(), "rke scenarios need a generator")?;
                self.require(self.initial.is_some(), "rke scenarios need an initial state")?;
                need_grid("rke")?;
            }
            Kind::Fock => {
                self.require(self.generator.is_some(), "fock scenarios need a generator")?;
                self.require(self.initial_fock.is_some(), "fock scenarios need initial_fock")?;
                self.require(self.cutoff.is_some(), "fock scenarios need a cutoff")?;
                need_grid("fock")?;
            }
            Kind::Compare => {
                self.require(self.generator.is_some(), "compare scenarios need a generator")?;
                self.require(self.initial_fock.is_some(), "compare scenarios need initial_fock")?;
                self.require(self.cutoff.is_some(), "compare scenarios need a cutoff")?;
                need_grid("compare")?;
            }
            Kind::Thermal => {
                self.require(self.bath.is_some(), "thermal scenarios need a bath")?;
                need_grid("thermal")?;
                let modes = self.bath.as_ref().map_or(0, |b| b.dim());
                if !self.initial_occupation.is_empty() && self.initial_occupation.len() != modes {
                    return Err(validation(format!(
                        "initial_occupation has {} entries for {} bath modes",
                        self.initial_occupation.len(),
                        modes
                    )));
                }
                if let Some(amps) = &self.initial_amplitude {
                    if amps.len() != modes {
                        return Err(validation(format!(
                            "initial_amplitude has {} entries for {} bath modes",
                            amps.len(),
                            modes
                        )));
                    }
                }
            }
            Kind::Polarization => {
                self.require(self.input_state.is_some(), "polarization scenarios need input_state")?;
                self.require(
                    !self.device_chain.is_empty(),
                    "polarization scenarios need a non-empty device_chain",
                )?;
            }
            Kind::Entropy => {
                self.require(self.initial.is_some(), "entropy scenarios need an initial state")?;
            }
        }
        Ok(())
    }

    fn require(&self, ok: bool, msg: &str) -> Result<(), ScenarioError> {
        if ok {
            Ok(())
        } else {
            Err(validation(msg))
        }
    }
}

/// Reads and parses a scenario file, then validates kind-specific presence.
pub fn load(path: &Path) -> Result<ScenarioFile, ScenarioError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ScenarioError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let file: ScenarioFile = serde_json::from_str(&text)
        .map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
    file.validate()?;
    Ok(file)
}

/// Result of a completed scenario run.
#[derive(Debug)]
pub struct RunOutput {
    /// Files written, in a fixed order.
    pub files: Vec<PathBuf>,
    /// One-line human summary for stdout.
    pub summary: String,
    /// A compare verdict that ran to completion but failed its threshold.
    pub verdict_failed: bool,
}

fn output_base(path: &Path, file: &ScenarioFile) -> String {
    file.output.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into())
    })
}

fn out_path(overrides: &Overrides, name: &str) -> PathBuf {
    match &overrides.out_dir {
        Some(dir) => dir.join(name),
        None => PathBuf::from(name),
    }
}

fn write_output(path: &PathBuf, contents: &str) -> Result<(), ScenarioError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    fs::write(path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

/// Runs a scenario file, dispatching on its `kind`.
pub fn run(path: &Path, overrides: &Overrides) -> Result<RunOutput, ScenarioError> {
    let file = load(path)?;
    match file.kind {
        Kind::Rke => run_rke(path, &file, overrides),
        Kind::Fock => run_fock(path, &file, overrides),
        Kind::Compare => run_compare(path, &file, overrides),
        Kind::Thermal => run_thermal(path, &file, overrides),
        Kind::Polarization => run_polarization(path, &file, overrides),
        Kind::Entropy => run_entropy(path, &file, overrides),
    }
}

/// Runs a `compare` scenario; rejects any other kind.
pub fn compare(path: &Path, overrides: &Overrides) -> Result<RunOutput, ScenarioError> {
    let file = load(path)?;
    if file.kind != Kind::Compare {
        return Err(validation(format!(
            "compare needs a scenario with kind \"compare\", got \"{}\"",
            file.kind
        )));
    }
    run_compare(path, &file, overrides)
}

/// Runs a `polarization` scenario; rejects any other kind.
pub fn device_chain(path: &Path, overrides: &Overrides) -> Result<RunOutput, ScenarioError> {
    let file = load(path)?;
    if file.kind != Kind::Polarization {
        return Err(validation(format!(
            "device-chain needs a scenario with kind \"polarization\", got \"{}\"",
            file.kind
        )));
    }
    run_polarization(path, &file, overrides)
}

/// Entropy report for either a `kind: "entropy"` scenario or a bare state
/// file `{"rho": ..., "alpha": ...}`.
pub fn entropy_report(path: &Path, overrides: &Overrides) -> Result<RunOutput, ScenarioError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ScenarioError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
    if value.get("kind").is_some() {
        let file: ScenarioFile = serde_json::from_value(value)
            .map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
        file.validate()?;
        if file.kind != Kind::Entropy {
            return Err(validation(format!(
                "entropy needs a state file or a scenario with kind \"entropy\", got \"{}\"",
                file.kind
            )));
        }
        return run_entropy(path, &file, overrides);
    }
    let state: StateRep = serde_json::from_value(value)
        .map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
    let file = ScenarioFile {
        kind: Kind::Entropy,
        hbar: 1.0,
        k_b: 1.0,
        generator: None,
        bath: None,
        bath_scattering: Vec::new(),
        initial: Some(state),
        initial_fock: None,
        initial_occupation: Vec::new(),
        initial_amplitude: None,
        grid: Vec::new(),
        cutoff: None,
        integrator: IntegratorRep::default(),
        tolerance: None,
        device_chain: Vec::new(),
        input_state: None,
        n_samples: None,
        seed: None,
        output: None,
    };
    run_entropy(path, &file, overrides)
}

fn run_rke(
    path: &Path,
    file: &ScenarioFile,
    overrides: &Overrides,
) -> Result<RunOutput, ScenarioError> {
    let g = file.generator.as_ref().expect("validated").to_spec()?;
    let s0 = file.initial.as_ref().expect("validated").to_state()?;
    let traj = evolve(&g, &s0, &file.grid, file.hbar, file.integrator.to_options())
        .map_err(runtime)?;
    let csv = out_path(overrides, &format!("{}.csv", output_base(path, file)));
    write_output(&csv, &traj.to_csv())?;
    let last = traj.diagnostics.last().expect("non-empty grid");
    Ok(RunOutput {
        summary: format!(
            "rke: {} modes, {} grid points, final N = {}, final S = {}",
            s0.dim(),
            traj.times.len(),
            last.particle_number,
            last.entropy
        ),
        files: vec![csv],
        verdict_failed: false,
    })
}

/// Fock-level per-snapshot diagnostics emitted next to the reduced CSV.
#[derive(Debug, Serialize)]
struct FockReport {
    kind: &'static str,
    modes: usize,
    cutoff: usize,
    dimension: usize,
    times: Vec<f64>,
    trace: Vec<f64>,
    von_neumann_entropy: Vec<f64>,
    rsf_entropy: Vec<f64>,
    boundary_population: Vec<f64>,
}

fn reduced_trajectory(
    times: &[f64],
    snapshots: &[FockDensityMatrix],
) -> Result<(Trajectory, Vec<f64>), ScenarioError> {
    let mut states = Vec::with_capacity(snapshots.len());
    let mut diagnostics = Vec::with_capacity(snapshots.len());
    let mut rsf_entropies = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        let state = reduce(snap);
        let entropy = state.rsf_entropy().map_err(runtime)?;
        let corr = state
            .correlation_matrix(DEFAULT_TOL * (1.0 + max_abs(state.rho())))
            .map_err(runtime)?;
        let spectrum = crate::operator::eig_hermitian(&corr, DEFAULT_TOL * (1.0 + max_abs(&corr)))
            .map_err(runtime)?;
        diagnostics.push(Diagnostics {
            entropy,
            particle_number: state.particle_number(),
            purity_defect: max_abs(&corr),
            min_eig_corr: spectrum.min_eigenvalue(),
        });
        rsf_entropies.push(entropy);
        states.push(state);
    }
    Ok((
        Trajectory { times: times.to_vec(), states, diagnostics },
        rsf_entropies,
    ))
}

fn run_fock(
    path: &Path,
    file: &ScenarioFile,
    overrides: &Overrides,
) -> Result<RunOutput, ScenarioError> {
    let g = file.generator.as_ref().expect("validated").to_spec()?;
    let cutoff = file.cutoff.expect("validated");
    let space = FockSpace::new(g.dim(), cutoff).map_err(validation)?;
    let rho0 = file.initial_fock.as_ref().expect("validated").build(&space)?;
    let snapshots = evolve_fock(&g, &rho0, &file.grid, file.hbar, file.integrator.to_options())
        .map_err(runtime)?;
    let (traj, rsf_entropies) = reduced_trajectory(&file.grid, &snapshots)?;
    let report = FockReport {
        kind: "fock",
        modes: space.modes(),
        cutoff: space.cutoff(),
        dimension: space.dim(),
        times: file.grid.clone(),
        trace: snapshots.iter().map(|s| s.trace().re).collect(),
        von_neumann_entropy: snapshots
            .iter()
            .map(|s| von_neumann_entropy(s).map_err(runtime))
            .collect::<Result<_, _>>()?,
        rsf_entropy: rsf_entropies,
        boundary_population: snapshots.iter().map(|s| s.boundary_population()).collect(),
    };
    let base = output_base(path, file);
    let csv = out_path(overrides, &format!("{base}.csv"));
    write_output(&csv, &traj.to_csv())?;
    let json = out_path(overrides, &format!("{base}.json"));
    write_output(&json, &to_pretty_json(&report))?;
    Ok(RunOutput {
        summary: format!(
            "fock: {} modes at cutoff {}, dimension {}, {} grid points, final trace {}",
            space.modes(),
            space.cutoff(),
            space.dim(),
            file.grid.len(),
            report.trace.last().expect("non-empty grid")
        ),
        files: vec![csv, json],
        verdict_failed: false,
    })
}

/// Per-time deviations and verdict of a `compare` run.
#[derive(Debug, Serialize)]
struct CompareReport {
    kind: &'static str,
    modes: usize,
    cutoff: usize,
    threshold: f64,
    max_dev_rho: f64,
    max_dev_alpha: f64,
    max_dev_entropy: f64,
    pass: bool,
}

fn run_compare(
    path: &Path,
    file: &ScenarioFile,
    overrides: &Overrides,
) -> Result<RunOutput, ScenarioError> {
    let g = file.generator.as_ref().expect("validated").to_spec()?;
    let cutoff = file.cutoff.expect("validated");
    let space = FockSpace::new(g.dim(), cutoff).map_err(validation)?;
    let rho0 = file.initial_fock.as_ref().expect("validated").build(&space)?;
    let opts = file.integrator.to_options();
    let snapshots = evolve_fock(&g, &rho0, &file.grid, file.hbar, opts).map_err(runtime)?;
    let (oracle, _) = reduced_trajectory(&file.grid, &snapshots)?;
    // The kinetic run starts from the oracle's own reduction so the two
    // trajectories answer the same initial-value problem.
    let reduced = evolve(&g, &oracle.states[0], &file.grid, file.hbar, opts).map_err(runtime)?;

    let threshold = overrides
        .tol
        .or(file.tolerance)
        .unwrap_or(DEFAULT_COMPARE_THRESHOLD);
    let mut csv = String::from("t,dev_rho,dev_alpha,dev_entropy\n");
    let (mut max_rho, mut max_alpha, mut max_entropy) = (0.0f64, 0.0f64, 0.0f64);
    for (i, &t) in file.grid.iter().enumerate() {
        let dev_rho = max_abs_diff(oracle.states[i].rho(), reduced.states[i].rho());
        let dev_alpha = max_abs_diff_vec(oracle.states[i].alpha(), reduced.states[i].alpha());
        let dev_entropy =
            (oracle.diagnostics[i].entropy - reduced.diagnostics[i].entropy).abs();
        max_rho = max_rho.max(dev_rho);
        max_alpha = max_alpha.max(dev_alpha);
        max_entropy = max_entropy.max(dev_entropy);
        csv.push_str(&format!("{t:e},{dev_rho:e},{dev_alpha:e},{dev_entropy:e}\n"));
    }
    let pass = max_rho <= threshold && max_alpha <= threshold;
    let report = CompareReport {
        kind: "compare",
        modes: space.modes(),
        cutoff: space.cutoff(),
        threshold,
        max_dev_rho: max_rho,
        max_dev_alpha: max_alpha,
        max_dev_entropy: max_entropy,
        pass,
    };
    let base = output_base(path, file);
    let csv_path = out_path(overrides, &format!("{base}.csv"));
    write_output(&csv_path, &csv)?;
    let json_path = out_path(overrides, &format!("{base}.json"));
    write_output(&json_path, &to_pretty_json(&report))?;
    Ok(RunOutput {
        summary: format!(
            "compare: {} vs threshold {threshold:e}: max_dev_rho = {max_rho:e}, \
             max_dev_alpha = {max_alpha:e}, max_dev_entropy = {max_entropy:e}",
            if pass { "PASS" } else { "FAIL" }
        ),
        files: vec![csv_path, json_path],
        verdict_failed: !pass,
    })
}

/// Rates and classification of one bath mode.
#[derive(Debug, Serialize)]
struct ThermalModeReport {
    omega: f64,
    m: i64,
    gamma_up: f64,
    gamma_down: f64,
    gamma_dec: f64,
    frequency_shift: f64,
    class: ModeClass,
    stationary_occupation: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ThermalReport {
    kind: &'static str,
    hbar: f64,
    k_b: f64,
    temperature: f64,
    rotation: f64,
    modes: Vec<ThermalModeReport>,
}

fn run_thermal(
    path: &Path,
    file: &ScenarioFile,
    overrides: &Overrides,
) -> Result<RunOutput, ScenarioError> {
    let bath = file.bath.as_ref().expect("validated");
    let scattering = file
        .bath_scattering
        .iter()
        .enumerate()
        .map(|(j, w)| Ok((w.weight, square(&w.u, &format!("bath_scattering element {j}"))?)))
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    let rates = kms_rates(bath, file.hbar, file.k_b).map_err(validation)?;
    let classes =
        classify_modes_with(bath, &scattering, file.hbar, file.k_b).map_err(validation)?;
    let occ0 = if file.initial_occupation.is_empty() {
        vec![0.0; bath.dim()]
    } else {
        file.initial_occupation.clone()
    };
    let alpha0 = file.initial_amplitude.as_ref().map(|p| jsonrep::pairs_to_vec(p));

    let mut modes = Vec::with_capacity(bath.dim());
    let mut dephasing = Vec::with_capacity(bath.dim());
    for (k, mode) in bath.modes.iter().enumerate() {
        let (gamma_dec, shift) = decoherence_rate(&scattering, k).map_err(validation)?;
        let (up, down) = rates[k];
        let net = down - up;
        modes.push(ThermalModeReport {
            omega: mode.omega,
            m: mode.m,
            gamma_up: up,
            gamma_down: down,
            gamma_dec,
            frequency_shift: shift,
            class: classes[k],
            stationary_occupation: (net > 0.0).then(|| up / net),
        });
        dephasing.push((gamma_dec, shift));
    }

    let mut csv = String::from("t");
    for k in 0..bath.dim() {
        csv.push_str(&format!(",n_{k}"));
    }
    if alpha0.is_some() {
        for k in 0..bath.dim() {
            csv.push_str(&format!(",re_alpha_{k},im_alpha_{k}"));
        }
    }
    csv.push('\n');
    for &t in &file.grid {
        csv.push_str(&format!("{t:e}"));
        for (k, &(up, down)) in rates.iter().enumerate() {
            csv.push_str(&format!(",{:e}", occupation_solution(occ0[k], up, down, t)));
        }
        if let Some(a0) = &alpha0 {
            for (k, &(up, down)) in rates.iter().enumerate() {
                let (gamma_dec, shift) = dephasing[k];
                // The scattering phase runs counter to the Hamiltonian one.
                let omega_prime = bath.modes[k].omega - shift;
                let a = amplitude_solution(a0[k], omega_prime, up, down, gamma_dec, t);
                csv.push_str(&format!(",{:e},{:e}", a.re, a.im));
            }
        }
        csv.push('\n');
    }

    let report = ThermalReport {
        kind: "thermal",
        hbar: file.hbar,
        k_b: file.k_b,
        temperature: bath.temperature,
        rotation: bath.rotation,
        modes,
    };
    let base = output_base(path, file);
    let csv_path = out_path(overrides, &format!("{base}.csv"));
    write_output(&csv_path, &csv)?;
    let json_path = out_path(overrides, &format!("{base}.json"));
    write_output(&json_path, &to_pretty_json(&report))?;
    let superradiant = report
        .modes
        .iter()
        .filter(|m| m.class != ModeClass::Damped)
        .count();
    Ok(RunOutput {
        summary: format!(
            "thermal: {} modes, {} superradiant, {} grid points",
            bath.dim(),
            superradiant,
            file.grid.len()
        ),
        files: vec![csv_path, json_path],
        verdict_failed: false,
    })
}

#[derive(Debug, Serialize)]
struct StokesReport {
    stokes: [f64; 4],
    alpha: VecRep,
    entropy: f64,
}

#[derive(Debug, Serialize)]
struct DeviceReport {
    index: usize,
    doubly_contracting: bool,
    compatible: bool,
    certificate: &'static str,
}

#[derive(Debug, Serialize)]
struct PolarizationReport {
    kind: &'static str,
    seed: u64,
    n_samples: usize,
    tolerance: f64,
    input: StokesReport,
    output: StokesReport,
    mueller: Vec<Vec<f64>>,
    jones: MatRep,
    devices: Vec<DeviceReport>,
}

fn stokes_report(state: &StokesState) -> Result<StokesReport, ScenarioError> {
    Ok(StokesReport {
        stokes: state.stokes(),
        alpha: jsonrep::vec_to_pairs(state.alpha()),
        entropy: state.entropy().map_err(runtime)?,
    })
}

fn certificate_name(certificate: CompatibilityCertificate) -> &'static str {
    match certificate {
        CompatibilityCertificate::ChoiPositive => "choi_positive",
        CompatibilityCertificate::BlochSampled => "bloch_sampled",
    }
}

fn run_polarization(
    path: &Path,
    file: &ScenarioFile,
    overrides: &Overrides,
) -> Result<RunOutput, ScenarioError> {
    let input = file.input_state.as_ref().expect("validated").to_state()?;
    let seed = overrides.seed.or(file.seed).unwrap_or(0);
    let n_samples = file.n_samples.unwrap_or(DEFAULT_COMPAT_SAMPLES);
    let tol = overrides.tol.or(file.tolerance).unwrap_or(DEFAULT_COMPAT_TOL);

    let mut devices = Vec::with_capacity(file.device_chain.len());
    let mut composed = MuellerJonesMap::identity();
    for (index, rep) in file.device_chain.iter().enumerate() {
        let device = rep.build(index)?;
        let verdict = check_compatibility_seeded(device.kraus(), device.jones(), n_samples, tol, seed);
        devices.push(DeviceReport {
            index,
            doubly_contracting: check_doubly_contracting(device.kraus()),
            compatible: verdict.compatible,
            certificate: certificate_name(verdict.certificate),
        });
        composed = device.compose(&composed);
    }
    let output_state = composed.apply(&input).map_err(runtime)?;

    let report = PolarizationReport {
        kind: "polarization",
        seed,
        n_samples,
        tolerance: tol,
        input: stokes_report(&input)?,
        output: stokes_report(&output_state)?,
        mueller: (0..4)
            .map(|i| (0..4).map(|j| composed.mueller()[(i, j)]).collect())
            .collect(),
        jones: jsonrep::mat_to_rows(composed.jones()),
        devices,
    };
    let json_path = out_path(overrides, &format!("{}.json", output_base(path, file)));
    write_output(&json_path, &to_pretty_json(&report))?;
    let all_ok = report.devices.iter().all(|d| d.compatible && d.doubly_contracting);
    Ok(RunOutput {
        summary: format!(
            "polarization: {} devices, output s = [{}, {}, {}, {}], physical = {}",
            report.devices.len(),
            report.output.stokes[0],
            report.output.stokes[1],
            report.output.stokes[2],
            report.output.stokes[3],
            all_ok
        ),
        files: vec![json_path],
        verdict_failed: false,
    })
}

#[derive(Debug, Serialize)]
struct EntropyReport {
    kind: &'static str,
    modes: usize,
    entropy: f64,
    particle_number: f64,
    purity_defect: f64,
}

fn run_entropy(
    path: &Path,
    file: &ScenarioFile,
    overrides: &Overrides,
) -> Result<RunOutput, ScenarioError> {
    let state = file.initial.as_ref().expect("validated").to_state()?;
    let corr = state
        .correlation_matrix(DEFAULT_TOL * (1.0 + max_abs(state.rho())))
        .map_err(validation)?;
    let report = EntropyReport {
        kind: "entropy",
        modes: state.dim(),
        entropy: state.rsf_entropy().map_err(validation)?,
        particle_number: state.particle_number(),
        purity_defect: max_abs(&corr),
    };
    let json_path = out_path(overrides, &format!("{}.json", output_base(path, file)));
    write_output(&json_path, &to_pretty_json(&report))?;
    Ok(RunOutput {
        summary: format!(
            "entropy: {} modes, S = {}, N = {}",
            report.modes, report.entropy, report.particle_number
        ),
        files: vec![json_path],
        verdict_failed: false,
    })
}
