// Parameter guards are written as `!(x >= 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fock;
pub mod gaussian;
pub mod povm;
pub mod scheme;
pub mod sme;

pub use error::{Error, Result};

pub use num_complex::Complex64;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
