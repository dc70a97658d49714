//! Deterministic simulation of fault-tolerant power allocation across
//! networked grid-following inverters.
//!
//! Two control levels are modeled. Each inverter runs a model-reference
//! adaptive current controller with projection-bounded line-resistance
//! estimation ([`mrac`], [`reference_model`], [`plant`]). Above them, a
//! decentralized primal-dual splitter divides the aggregate active and
//! reactive power references across the fleet through a doubly stochastic
//! mixing matrix, penalizing inverters whose line estimates deviate from
//! nominal ([`allocator`], [`graph`]). The fixed-step engine in [`sim`]
//! ties the levels together, injects faults and disturbances, and records
//! plot-ready time series ([`report`]) from declarative scenario files
//! ([`config`]).

pub mod allocator;
pub mod config;
pub mod dq;
pub mod graph;
pub mod mrac;
pub mod plant;
pub mod reference_model;
pub mod report;
pub mod sim;
