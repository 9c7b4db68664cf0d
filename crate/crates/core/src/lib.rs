//! Numerical core for limit-cycle bifurcations of perturbed completely
//! integrable systems.
//!
//! The pipeline runs from a Nambu/Poisson realization of an integrable
//! vector field ([`integrable`]), through a Darboux chart ([`darboux`]) and
//! the two geometric perturbation classes ([`perturb`]), to the first-order
//! displacement coefficient ([`melnikov`]) and a numerical confirmation of
//! the bifurcating cycles ([`cycles`]). The Jacobi hyperelliptic family in
//! [`jacobi`] is the built-in model.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cycles;
pub mod darboux;
mod error;
pub mod integrable;
pub mod jacobi;
pub mod melnikov;
pub mod numkernel;
pub mod perturb;

pub use darboux::{DarbouxChart, LeafCoordinates};
pub use error::{Error, Result};
pub use integrable::{IntegrableSystem, VelocityField};
pub use numkernel::ScalarField;
