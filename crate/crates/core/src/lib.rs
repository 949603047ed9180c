//! Exact-statevector simulation of a kicked, disordered spin chain used as
//! a sensor of AC fields, with quantum Fisher information tracking.

pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod floquet;
pub mod hilbert;
pub mod io;
pub mod qfi;

pub use error::{Error, Result};
