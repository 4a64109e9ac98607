//! Numerical potential theory on metric graphs: potential kernels, Green's
//! functions normalized by a background measure, energy minimization and
//! capacities, and equidistribution experiments for local models of elliptic
//! curves.

pub mod checks;
pub mod elliptic;
pub mod error;
pub mod green;
pub mod io;
pub mod kernel;
pub mod minimize;
pub mod paf;
pub mod space;
pub mod testgen;

pub use error::{Error, Result};
