//! Simulation of an NV electron spin coupled to two 13C nuclei.
//!
//! The crate covers gate synthesis from hyperfine parameters, the entangling
//! circuit, storage of the nuclear pair under collective noise, two-qubit
//! tomography and the fits used to summarize each experiment.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod experiments;
pub mod noise_models;
pub mod numerics;
pub mod nv_model;
pub mod pulse_engine;
pub mod readout_model;
pub mod spin_core;
pub mod tomography;

pub use error::{Error, Result};
