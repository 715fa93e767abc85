//! Design and simulation of universal single-qutrit gates encoded in
//! rotational states of asymmetric-top molecules.
//!
//! The crate computes rotational spectra and dipole couplings, decomposes
//! target SU(3) gates into three SU(2) rotations plus a diagonal phase gate,
//! synthesizes the realizing Gaussian microwave pulse train analytically,
//! propagates the driven multilevel dynamics, and quantifies gate/state
//! fidelities and error sensitivity.
//!
//! Internal units: ħ = 1, time in ns, angular frequency in rad/ns. Spectral
//! quantities read and print MHz; dipole moments stay in Debye and fields are
//! Rabi-rate amplitudes (rad/ns per Debye), so no electromagnetic unit system
//! enters the dynamics.

pub mod angmom;
pub mod dynamics;
pub mod encoding;
pub mod gates;
pub mod metrics;
pub mod pulses;
pub mod rotor;
pub mod sweep;

/// ω[rad/ns] = 2π·10⁻³ · (value in MHz).
pub const MHZ_TO_RAD_NS: f64 = 2.0e-3 * std::f64::consts::PI;
