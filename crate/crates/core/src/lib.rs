//! Discrete-event simulator and protocol library for RF-link vehicle sensing.
//!
//! The building blocks:
//! - [`flood`] — slotted synchronous-transmission flooding (Glossy-style
//!   one-to-all dissemination plus a Chaos-style all-to-all share).
//! - [`channel`] — probabilistic link model: power anchors, log-distance
//!   path loss, vehicle obstruction, capture resolution, RSSI/LQI sampling.
//! - [`traffic`] — seeded vehicle stream generation, line-of-sight occupancy
//!   and the ground-truth labeling oracle.
//! - [`schedule`] — the periodic three-phase timeline (sync flood, sensitive
//!   two-node measurement, optional all-to-all share) and its constraint
//!   validator.
//! - [`metrics`] — DLL/PHY feature extraction per measurement window.
//! - [`svm`] — a small from-scratch SVM (SMO solver) for detection and
//!   size classification.
//! - [`sim`] — experiment runner binding all of the above into reproducible
//!   seeded runs, single-MP roadside studies and wide-area grids.

pub mod channel;
pub mod error;
pub mod flood;
pub mod metrics;
pub mod schedule;
pub mod sim;
pub mod svm;
pub mod traffic;
pub mod util;

pub use error::Error;

/// Simulation time in microseconds.
pub type Micros = u64;

/// Node identifier within one topology.
pub type NodeId = usize;

pub type Result<T> = std::result::Result<T, Error>;
