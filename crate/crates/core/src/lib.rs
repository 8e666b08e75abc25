//! Thin-shell contact detection and a learned dynamics surrogate.
//!
//! The crate has two halves that meet in the training loop:
//!
//! * a continuous collision detection (CCD) pipeline that finds the exact
//!   coplanarity instants of linearly moving triangle pairs and turns them
//!   into a sparse per-triangle contact field, and
//! * an encode-process-decode graph network that predicts per-node
//!   accelerations for a mesh, trained against ground-truth kinematics with
//!   an optional contact penalty evaluated on its own predicted trajectories.
//!
//! Supporting modules cover dataset I/O, scene generation, training,
//! rollout, and benchmarking; `src/main.rs` exposes everything as a CLI.

pub mod bench;
pub mod ccd;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod jsonio;
pub mod loss;
pub mod mesh;
pub mod scene;
pub mod rollout;
pub mod train;

pub use error::{Error, Result};
