//! Simulation and parameter estimation for superconducting qubits coupled to
//! phononic integrated-circuit cavities.
//!
//! The crate models the mode structure of waveguide Fabry-Perot and microring
//! phononic cavities, the decay of a qubit into that structured phonon bath
//! (Purcell physics and single-excitation dynamics), and the nonlinear
//! least-squares extraction of device parameters from frequency-resolved
//! decay-rate scans and time-domain relaxation curves.
//!
//! All rates, linewidths, and couplings are ordinary frequencies in Hz
//! (the "/2π" convention); see [`model`] for the unit rules.

pub mod dynamics;
pub mod fit;
pub mod io;
pub mod model;
pub mod ode;
pub mod spectrum;
pub mod wave;

pub use model::{
    DbrSpec, DecayCurve, FitResult, FpCavitySpec, IdtSpec, MaterialParams, Mode, ModeSet,
    QubitSpec, RingCavitySpec, ScanData, Violation,
};
