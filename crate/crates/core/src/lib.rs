//! Stochastic simulation of a two-node room-temperature quantum-memory network:
//! a heralded-pair source memory linked by fiber to an all-optical loop memory.
//!
//! The crate is split by responsibility:
//!
//! * [`phys_model`] holds the parameter types and the closed-form click statistics.
//! * [`ford_node`] and [`loop_node`] are the two node state machines.
//! * [`netsim`] composes them into seeded, reproducible Monte Carlo trials.
//! * [`estimators`] turns detection records into correlations, fits and lifetimes.
//! * [`chainplan`] compiles photon-chain operations into switch schedules.
//! * [`calibration`] carries the calibrated parameter sets used by the reference scenarios.

pub mod calibration;
pub mod chainplan;
pub mod estimators;
pub mod ford_node;
pub mod loop_node;
pub mod netsim;
pub mod phys_model;
pub mod time;

pub use time::TimeNs;
