//! Simulation and verification toolkit for no-free-lunch bounds on learning
//! unitary dynamics from classical, restricted-quantum and inverse-access data.

pub mod circuit;
pub mod error;
pub mod haar;
pub mod harness;
pub mod linalg;
pub mod observables;
pub mod optimizer;
pub mod protocols;
pub mod registry;
pub mod risk;

pub use error::{Error, Result};
