//! Simulation, controller inference and policy learning for a multi-robot
//! perimeter-defense team.
//!
//! The pipeline has three stages:
//!
//! 1. [`scenario`] rolls out an expert team that switches between the five
//!    coordinated controllers of [`dynamics`] while three intruders attack a
//!    protected region.
//! 2. [`imm`] runs an Interacting-Multiple-Model filter (one EKF per
//!    controller) over noisy team observations and recovers the controller
//!    sequence.
//! 3. [`policy`] trains a small feed-forward classifier on the inferred
//!    labels; [`eval`] compares it with the expert and a random baseline.
//!
//! [`cli`] and [`pipeline`] wire the stages together behind a config file and
//! a set of on-disk artifacts.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod imm;
pub mod pipeline;
pub mod policy;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};

/// Planar point / vector in meters.
pub type Point = nalgebra::Vector2<f64>;
