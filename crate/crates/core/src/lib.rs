//! Dissipative preparation of steady-state entanglement between two
//! three-level atoms held in distant cavities that are linked by N bosonic
//! mediating modes.
//!
//! All quantities are dimensionless, in units of the atom-cavity coupling `g`.

pub mod analysis;
pub mod dynamics;
pub mod effective;
pub mod error;
pub mod figures;
pub mod model;
pub mod qspace;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Library version, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
