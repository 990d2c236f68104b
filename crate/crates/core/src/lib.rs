//! Linearized quantum-Langevin model of coherent feedback cooling (CFC)
//! combined with dynamical backaction cooling (DBC) of a membrane in a
//! two-mode optical cavity.
//!
//! The probe mode `h` reads out the membrane; its reflection is displaced
//! by an auxiliary beam, delayed, and injected into the cooling mode `v`.
//! The crate solves the mean-field steady state, the linear fluctuation
//! dynamics in the frequency domain, spectra, phonon occupation,
//! stability of the delayed loop, parameter sweeps and staged fits.

// `!(x > 0.0)` rejects NaN on purpose; quadrature tables keep published digits;
// small dense matrix kernels read best with explicit indices.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::excessive_precision,
    clippy::needless_range_loop
)]

pub mod config;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod lm;
pub mod model;
pub mod params;
pub mod poles;
pub mod quadrature;
pub mod recipes;
pub mod spectra;
pub mod stability;
pub mod sweep;
pub mod units;

pub use error::{Error, ErrorClass, Result};
pub use geometry::{angle_x, compose_gamma, displacement_amplitude, DisplacementAmplitude, DisplacementSetup};
pub use model::{
    default_noise, drift_matrix, noise_model, solve_steady_state, thermal_occupation, DriftMatrix, LinearSystem,
    NoiseModel, SteadyState,
};
pub use params::SystemParams;
pub use spectra::{
    detected_psd, lorentzian_area, phonon_occupation, phonons_from_area_ratio, s_qq, solve_transfer, spectrum,
    FrequencyGrid, IntegrationPolicy, PhononEstimate, Quantity, Spectrum, TransferRow,
};
pub use stability::{check_stability, stability_map, Method, StabilityReport, Verdict};
pub use sweep::{detuning_scan, minimize_phonons, sweep_2d, AxisKind, SweepAxis, SweepResult};
