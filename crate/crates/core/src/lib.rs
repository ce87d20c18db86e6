//! Synthesis and validation of adaptive inverse-time relay settings for a
//! reconfigurable medium-voltage distribution network.
//!
//! The pipeline runs offline in four stages and is validated by a
//! deterministic event-driven simulator:
//!
//! 1. [`scenario`] draws Monte Carlo fault scenarios on the [`network`]
//!    model, solves each with the [`shortcircuit`] phasor solver, and labels
//!    every relay's view of the fault (primary / backup / other).
//! 2. [`gda`] fits a shared-covariance discriminant model per relay, ranks
//!    feature importance to pick the minimal set of topology statuses worth
//!    communicating, and fits per-mode Gaussian fault statistics.
//! 3. [`optim`] parametrizes those statistics with Gaussian CVaR points and
//!    solves a small linear program per mode (exact simplex) inside a
//!    gradient search over the curve exponents, producing relay setting
//!    groups with constraint certificates.
//! 4. [`sim`] dispatches setting groups on topology changes and replays
//!    faults against the live network, producing trip logs and coordination
//!    audits.

pub mod curve;
pub mod error;
pub mod gda;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod pipeline;
pub mod scenario;
pub mod shortcircuit;
pub mod sim;
pub mod simplex;
pub mod stats;

pub use error::{Error, Result};
