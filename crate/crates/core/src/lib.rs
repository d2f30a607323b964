//! Wirelessly powered cell-free massive-MIMO IoT.
//!
//! The crate evaluates closed-form harvested-energy and uplink-SINR metrics for
//! cell-free, collocated and small-cell deployments, checks them against
//! Monte-Carlo simulation, and solves the joint downlink/uplink power-control
//! problem in closed form.
//!
//! Module map:
//!
//! * [`config`] – scalar system parameters, noise power, scenario files.
//! * [`geometry`] – AP grid, sensor drops, three-slope path loss, shadowing.
//! * [`pilots`] – pilot book and the per-AP LMMSE estimation cache.
//! * [`closed_form`] – harvested-energy bounds, SINR coefficients, throughput.
//! * [`monte_carlo`] – empirical oracles for energy, SINR and estimate covariances.
//! * [`power_control`] – uplink linear solve, downlink closed form, joint solution.
//! * [`experiments`] – named scenarios producing CSV tables and CDFs.

// `!(x >= 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod monte_carlo;
pub mod pilots;
pub mod power_control;
pub mod seeding;

pub use error::{Error, Result};

/// Complex baseband sample type used throughout the crate.
pub type C64 = num_complex::Complex64;
