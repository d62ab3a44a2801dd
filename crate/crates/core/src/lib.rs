//! Motional recoil in heralded photon-mediated entanglement between trapped
//! emitters.
//!
//! The analytic engine works with Gaussian characteristic functions of
//! multi-mode displacements acting on thermal motional states. A truncated
//! Fock-space implementation in [`fock`] serves as an independent check.

pub mod error;
pub mod collection;
pub mod fock;
pub mod kick;
pub mod phase_space;
pub mod protocols;
pub mod quadrature;

pub use error::{RecoilError, Result};
