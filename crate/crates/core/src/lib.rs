//! Skeleton-based action recognition toolkit.
//!
//! The crate covers the whole GCN pipeline for skeleton sequences:
//!
//! - [`skeleton`]: joint layouts, sequences, the `SKL1` container and a
//!   synthetic motion dataset for desk-scale experiments
//! - [`graph`]: adjacency construction, degree normalization and spatial
//!   partitioning
//! - [`transforms`]: pre-normalization, padding, temporal sampling, spatial
//!   augmentation and stream derivation (bone / motion)
//! - [`engine`]: a small dense tensor library with a reverse-mode tape and a
//!   finite-difference gradient checker
//! - [`models`]: ST-GCN and ST-GCN++ backbones plus a parameter / FLOP profiler
//! - [`training`]: SGD with Nesterov momentum, cosine annealing, train / eval
//!   loops and multi-stream score fusion
//! - [`heatmap`]: Gaussian joint maps and 3D heatmap volumes
//! - [`verify`]: finite-difference checks of every op and a tiny network
//! - [`cli`]: the command implementations behind the `skelact` binary
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod graph;
pub mod heatmap;
pub mod models;
pub mod rng;
pub mod skeleton;
pub mod training;
pub mod transforms;
pub mod verify;

pub use error::{Error, Result};
