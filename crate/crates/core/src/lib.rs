//! Casimir energies and lateral forces between one-dimensional periodic, perfectly
//! conducting gratings at zero temperature.
//!
//! The reflection matrix of each grating comes from the C method: a coordinate
//! change flattens the surface, the field inside obeys a quadratic eigenvalue
//! problem in the Fourier basis, and boundary conditions fix the mode amplitudes.
//! Energies follow from `ln det(1 - R1 U R2 U^+)` integrated over imaginary
//! frequency and Bloch momentum.
//!
//! Units: hbar = c = 1, lengths in units of the grating period unless a profile
//! says otherwise.

pub mod analytic;
pub mod cli;
pub mod engine;
pub mod error;
pub mod qep;
pub mod quad;
pub mod scattering;
pub mod spectral;

pub use engine::{
    casimir_energy, converge_in_m, lateral_force, logdet_integrand, normal_force, CasimirResult, ConvergeSpec, Engine, Geometry,
    Placement, PolPair, QuadratureSpec,
};
pub use error::{Error, Result};
pub use spectral::{GratingProfile, Polarization, SpectralPoint};
