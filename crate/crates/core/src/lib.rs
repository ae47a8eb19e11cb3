//! Differentially private release of transmission network branch parameters.
//!
//! The pipeline perturbs series and shunt susceptances with Laplace noise
//! ([`dp_mechanism`]) and then solves an AC optimal power flow in which the
//! admittances are decision variables ([`restoration`]), so the released
//! network stays solvable and close to the original grid losses.

mod ad;
pub mod dp_mechanism;
pub mod error;
pub mod matpower_io;
pub mod metrics;
pub mod net_model;
pub mod opf_core;
pub mod restoration;

pub use error::{MechanismError, MetricsError, ModelError, ParseError};
