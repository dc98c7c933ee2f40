//! Quadcopter attitude-control workbench.
//!
//! A rotation-only rigid-body simulator with first-principles motor models,
//! PID and neural rate controllers, shaped rewards, step-response and error
//! metrics, a virtual dynamometer, a body-drift checker, and a lockstep UDP
//! environment for external tuners.

pub mod config;
pub mod control;
pub mod dynamics;
pub mod dyno;
pub mod env;
pub mod error;
pub mod gyro;
pub mod io;
pub mod metrics;
pub mod propulsion;
pub mod reward;
pub mod server;
pub mod stability;
pub mod task;
pub mod trace;
pub mod wire;

pub use error::{Error, Result};
