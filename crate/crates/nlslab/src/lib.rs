//! Numerical laboratory for multi-point blow-up solutions of the
//! L2-critical focusing nonlinear Schrodinger equation
//!
//! ```text
//!     i du/dt + Lap(u) = -|u|^(4/d) u        on a rectangle in R^d,
//!     u = 0 on the boundary,                 d = 1, 2, 3,
//! ```
//!
//! built around the pseudo-conformal bubble glued at p interior points.
//! The crate computes the radial ground state, assembles the glued
//! profile and its source terms, solves the Duhamel equation for the
//! remainder by Picard iteration in an exponentially weighted space,
//! evolves the PDE with a split-step scheme, and verifies the blow-up
//! diagnostics (local masses, total mass, concentration in measure and
//! the gradient growth rate).

pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod fitting;
pub mod ground_state;
pub mod profile;
pub mod remainder;
pub mod snapshot;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use spectral::{DomainKind, DomainSpec, Field, Norms, SpectralCoefficients};
