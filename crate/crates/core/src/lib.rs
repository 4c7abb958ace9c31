//! Public-goods provision for wireless power transfer.
//!
//! An energy transmitter (ET) broadcasts power over `N` channels to `K`
//! energy users (EUs). Received power is non-rivalrous, so EUs have every
//! incentive to free-ride. This crate provides:
//!
//! * [`model`]: the economy, utilities, costs and the random generator;
//! * [`oracle`]: centralized welfare maximization, KKT residuals and the
//!   constrained Lindahl allocation;
//! * [`pat`]: the single-channel power-and-taxation mechanism and its
//!   distributed dual-gradient solver;
//! * [`mpat`]: the multi-channel mechanism and its augmented-Lagrangian
//!   solver;
//! * [`benchmarks`]: the private-goods market equilibrium, a
//!   pure-optimization baseline and the virtual-agent transform;
//! * [`experiment`]: batch runs and CSV output;
//! * [`text`]: the flat `key = value` file format shared by every artifact.

pub mod benchmarks;
pub mod error;
pub mod experiment;
pub mod local;
pub mod model;
pub mod mpat;
pub mod oracle;
pub mod pat;
pub mod text;
pub mod trace;
pub mod units;

pub use error::{Error, Result};
