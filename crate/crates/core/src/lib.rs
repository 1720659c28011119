//! Deterministic federated learning simulator with server-side early
//! stopping driven by a fixed proxy validation set.
//!
//! The crate is organized around four subsystems:
//!
//! - [`model`]: flat-vector linear / one-hidden-layer tanh models,
//!   multi-label BCE loss, analytic gradients and a finite-difference
//!   gradient checker.
//! - [`data`]: synthetic multi-label task generation, Dirichlet label-skew
//!   partitioning across clients, and the parametric proxy validation set
//!   generator with fidelity knobs.
//! - [`fed`]: the round engine — client sampling, local optimization
//!   strategies (FedAvg, FedSAM, FedDyn), server aggregation, telemetry.
//! - [`stopping`]: proxy-validation accuracy, the patience monitor and its
//!   batch-scan counterpart, and the test-optimal round oracle.
//!
//! Everything is a pure function of its inputs and an explicit `u64` seed;
//! repeated runs are bit-identical.

pub mod data;
pub mod error;
pub mod fed;
pub mod model;
pub mod seed;
pub mod stopping;

pub use error::{CoreError, Result};
