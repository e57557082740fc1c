//! Certified robust peak-to-peak gain and reachable-set bounds for
//! uncertain discrete-time systems, via dynamic IQCs with terminal cost.

extern crate openblas_src;

pub mod analysis;
pub mod cli;
pub mod error;
pub mod io;
pub mod iqc;
pub mod linalg;
pub mod lmi;
pub mod oracle;
pub mod sdp;
pub mod system;

pub use error::{Error, Result};
