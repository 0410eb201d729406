//! Anchored stochastic gradient methods and the machinery to check them.
//!
//! The crate is organised around the pieces an experiment needs:
//!
//! - [`problems`]: convex and nonconvex test objectives with closed-form
//!   smoothness constants and, where available, metric projections onto the
//!   solution set.
//! - [`schedules`]: Halpern weights and stepsizes, plus an exact validator for
//!   the series and coupling conditions they must satisfy.
//! - [`noise`]: martingale-difference perturbations driven by counter-based
//!   random streams.
//! - [`optimizers`]: GD, HalpernGD, SGD, HalpernSGD and KM updates, including an
//!   affine-operator mode.
//! - [`diagnostics`]: trajectory logs, log-log rate fits, Monte-Carlo aggregation
//!   and inequality audits.
//! - [`harness`]: config parsing, parallel seeded runs and the CLI plumbing.
//! - [`acceptance`]: the end-to-end acceptance criteria, shared by the test
//!   suite and the `accept` subcommand.

pub mod acceptance;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod optimizers;
pub mod problems;
pub mod schedules;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
