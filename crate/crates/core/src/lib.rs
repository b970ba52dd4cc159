//! Stabilized spacetime finite elements for the unique continuation
//! (data assimilation) problem of the 1D wave equation.
//!
//! The unknown wave `u` on `M = (0,T) x (0,1)` is reconstructed from its
//! restriction to `O = (0,T) x omega` by solving a symmetric indefinite
//! primal-dual system posed on one global spacetime triangulation:
//!
//! ```text
//! [ M_O + gamma S      B^T          ] [u]   [l]
//! [ B             -gamma_star S_star] [z] = [0]
//! ```
//!
//! where `B` is the Nitsche-modified wave form, `S`/`S_star` are the primal
//! and dual stabilizers and `l` is the data functional.

pub mod analysis;
pub mod error;
pub mod fespace;
pub mod forms;
pub mod mesh;
pub mod plot;
pub mod problems;
pub mod quadrature;
pub mod saddle;
pub mod sparse;
pub mod study;

pub use error::{Error, Result};
