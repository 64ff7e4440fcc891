//! Floquet–Bloch band structures of 2D periodic Schrödinger operators, gap-edge
//! classification, and supercell perturbations that remove edge degeneracy.

pub mod bands;
pub mod discrete;
pub mod error;
pub mod fibre;
pub mod lattice;
pub mod linalg;
mod par;
pub mod perturb;
pub mod potential;

pub use error::{Error, Result};
