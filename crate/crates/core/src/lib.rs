// Range checks are written `!(a < b)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod basis;
pub mod bloch;
pub mod error;
pub mod hamiltonian;
pub mod krylov;
pub mod linalg;
pub mod observables;
pub mod pauli;
pub mod runner;
pub mod thermal;

pub use error::{Error, Result};
