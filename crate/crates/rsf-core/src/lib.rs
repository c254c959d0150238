//! Reduced-state-of-field toolkit for many-mode bosonic systems.
//!
//! A macroscopic bosonic field is tracked by the pair (ρ, α): the
//! single-particle density matrix ρ_{kk'} = ⟨a†_{k'} a_k⟩ and the averaged
//! field amplitude α_k = ⟨a_k⟩. This crate provides
//!
//! - the state type, its entropy, and the quasi-free correspondence
//!   ([`state`]),
//! - reduced kinetic equations driving (ρ, α) under Hamiltonian motion,
//!   damping, pumping, a coherent source, and random scattering ([`rke`]),
//! - a truncated-Fock-space master-equation oracle used to validate the
//!   reduction ([`fock`]),
//! - thermal and rotating-bath rate constructors with a superradiance
//!   classifier ([`thermal`]),
//! - a unified Mueller/Jones calculus for two-mode polarization devices
//!   ([`polarization`]),
//! - scenario files and a CLI driver ([`scenario`]).

pub mod fock;
pub mod integrate;
pub(crate) mod jsonrep;
pub mod operator;
pub mod polarization;
pub mod rke;
pub mod scenario;
pub mod state;
#[cfg(test)]
pub(crate) mod testkit;
pub mod thermal;

pub use operator::{CMat, CVec};
pub use state::ReducedState;
