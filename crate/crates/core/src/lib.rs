//! Accelerated failure-time regression with two independent spatial random
//! effects: one on the physical cabinet grid (Euclidean per-coordinate
//! distances) and one on the logical interconnect (a folded torus).
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: grid, folded-torus relabeling, unit placement
//! - [`kernels`]: powered-exponential correlation matrices, Kronecker
//!   construction on the torus, jittered Cholesky and eigenvalue checks
//! - [`model`]: censored log-location-scale likelihood, priors,
//!   reparameterization and the analytic log-posterior gradient
//! - [`sampler`]: Hamiltonian Monte Carlo with warmup adaptation and
//!   convergence diagnostics
//! - [`simulate`]: synthetic data and RMSE-based recovery studies
//! - [`analyze`]: posterior summaries, Kaplan–Meier, log-rank, stepping-stone
//!   evidence and Bayes factors
//! - [`ingest`]: CSV loading for the GPU and generic schemas

pub mod analyze;
pub mod error;
pub mod ingest;
pub mod kernels;
pub mod model;
pub mod sampler;
pub mod simulate;
pub mod topology;

pub use error::{Error, ErrorClass, Result};
