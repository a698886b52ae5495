//! Fidelity decay under symmetries: kicked tops, interpolating random unitary
//! ensembles, collective-qubit perturbations and LDOS analysis.

pub mod echo;
pub mod ensembles;
pub mod error;
pub mod matops;
pub mod perturb;
pub mod runner;
pub mod seed;
pub mod spectra;
pub mod spin;
pub mod stats;

pub use error::{Error, Result};
