//! Pure algorithmic core of the GraphLeap Vision-GNN engine.
//!
//! Everything here is `no_std` + `alloc`: model and hardware descriptions,
//! dense feature matrices, dilated kNN graph construction, the feature update
//! math (MRConv, Grapher, FFN, normalization, activations), the pre/post
//! processing stages, single-threaded reference schedules, and the analytical
//! cycle model with its event-driven pipeline simulator.
//!
//! IO, configuration documents, threads and the CLI live in the `graphleap`
//! crate.

#![no_std]

extern crate alloc;

pub mod config;
mod error;
pub mod fue;
pub mod gce;
pub mod perf;
pub mod schedule;
pub mod stages;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{FeatureMatrix, GraphTopology};
