//! Type-I down-conversion geometry in uniaxial and biaxial crystals.
//!
//! Angles are radians and wavelengths are nanometres at every public
//! interface unless a name says otherwise.

// NaN-rejecting guards are written as negated comparisons on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dispersion;
pub mod error;
pub mod imagefit;
pub mod indicatrix;
pub mod numeric;
pub mod phasematch;
pub mod smallangle;
pub mod spectra;
pub mod walkoff;

pub use dispersion::{CrystalRegistry, CrystalSpecies, PrincipalIndices, Symmetry};
pub use error::{Error, Result};
pub use indicatrix::{Branch, WaveDirection};
pub use phasematch::{PhaseMatchSolution, PumpConfig, RingPlane, RingTrace};
