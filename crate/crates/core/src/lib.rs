//! Continuous photon counting in a lossless cavity coupled to a fast-relaxing
//! detector.
//!
//! The crate implements the SD and E quantum-jump superoperator families on a
//! truncated Fock space, the unconditioned master-equation evolution they
//! generate, a stochastic unraveling into counting trajectories, and a
//! first-principles check that reducing the joint detector–field dynamics over
//! one short step reproduces the SD superoperators.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evolution;
pub mod fockspace;
pub mod jump_models;
pub mod microderivation;
pub mod trajectories;

pub use error::{Error, Result};
pub use fockspace::{DensityMatrix, FockDim, PhotonDistribution, UnnormalizedDensity, C64};
pub use evolution::TimeGrid;
pub use jump_models::{FieldKind, JumpModel, ModelKind};
pub use trajectories::RngStream;
