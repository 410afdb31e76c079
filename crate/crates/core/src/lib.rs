//! Multi-agent dynamic scheduling and discrete-event simulation for a
//! flexible flow line.

pub mod agents;
pub mod conformance;
pub mod domain;
pub mod engine;
pub mod gateway;
pub mod kernel;
pub mod metrics;
pub mod runtime;
pub mod scenario;
pub mod scheduler;

#[cfg(test)]
pub(crate) mod testutil;

pub use domain::*;
