//! Rydberg-EIT photon propagation: single-photon transfer, two-photon matrix models and
//! time-domain pair evolution.

pub mod config;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod pair;
pub mod potential;
pub mod scan;
pub mod single_photon;
pub mod timedomain;
pub mod units;

pub use error::{Error, Result};
pub use units::{DerivedParams, PhysicalParams};
