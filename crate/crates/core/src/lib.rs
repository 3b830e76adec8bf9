//! Simulation of a two-ion Mølmer-Sørensen gate driven while the ions are
//! shuttled through a stationary bichromatic Gaussian beam.
//!
//! The crate is organised as a small physics stack:
//!
//! * [`qcore`] builds the spin ⊗ spin ⊗ Fock Hilbert space and its operators.
//! * [`dynamics`] holds the interaction-frame Hamiltonian, the propagator,
//!   the shot ensemble with quasi-static laser noise, and closed-form or
//!   brute-force reference solutions.
//! * [`trap`] is the synthetic electrode plant: keyframe solving, waveform
//!   synthesis, retiming, confinement scaling and trajectory extraction.
//! * [`beam`] turns a trajectory into Rabi, Stark and Doppler envelopes.
//! * [`calib`] runs simulated calibration experiments against the plant.
//! * [`measure`] turns final states into counts, parity fits and fidelities.
//!
//! All frequencies are angular (rad/s) and ħ = 1. Lengths are in metres and
//! times in seconds unless a name says otherwise.

pub mod beam;
pub mod calib;
pub mod dynamics;
mod error;
pub mod measure;
pub mod numeric;
pub mod phys;
pub mod qcore;
pub mod trap;

pub use error::{Error, Result};
