#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Zero-field and low-field clock transitions of anisotropic electron-nuclear
//! spin systems: Hamiltonian diagonalization, Zeeman sensitivities, angular
//! gradient maps, coherence-time prediction and echo-decay analysis.

pub mod cli;
pub mod config;
pub mod decoherence;
pub mod echo;
pub mod eigen;
pub mod error;
pub mod exec;
pub mod frame;
pub mod hamiltonian;
pub mod lm;
pub mod search;
pub mod sensitivity;
pub mod spin;

pub use error::{Error, Result};
pub use frame::{direction_unit_vector, rotation_from_euler, tensor_to_lab, EulerAngles, FieldVector, TensorSpec};
pub use hamiltonian::{EigenSolution, SpinModel, SpinSystem, TransitionId};
pub use spin::{Constants, HalfInteger};

/// Hex sha256 of a byte string.
pub fn hex_digest(bytes: &[u8]) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(bytes))
}

/// Shortest round-trip decimal, switching to exponent form outside [1e-4, 1e15).
pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}
