//! Spectroscopy of warm caesium vapour in a hollow-core fibre: forward models,
//! least-squares fits, transit and pumping simulation, and Raman-memory
//! figures of merit.
//!
//! Frequencies are in Hz (not rad/s) throughout, times in s, lengths in m.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atomic;
pub mod constants;
pub mod error;
pub mod fitting;
pub mod memory;
pub mod model;
pub mod pumping;
pub mod report;
pub mod spectrum;
pub mod transit;

pub use atomic::{
    doppler_fwhm, doppler_sigma, thermal_ground_populations, AtomicSystem, PopulationWeighting, ThermalState,
};
pub use error::{Error, Result};
pub use fitting::FitResult;
pub use model::{
    crossover_frequencies, effective_to_resonant_od, resonant_to_effective_od, satspec_spectrum, transmission_spectrum,
    SatSpecModelParams, TransmissionModelParams,
};
pub use spectrum::{Spectrum, SpectrumPoint};
