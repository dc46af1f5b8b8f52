//! Deterministic simulator and verification toolkit for near-data-processing
//! persistent memory.
//!
//! The crate models a group of NDP-capable PM devices executing offloaded
//! crash-consistency primitives, records execution traces, checks persist
//! ordering invariants on them, and exhaustively enumerates crash points of
//! small programs to classify every recovered image.

pub mod checker;
pub mod config;
pub mod cost;
pub mod device;
pub mod engine;
pub mod harness;
pub mod error;
pub mod layout;
pub mod oracle;
pub mod pm;
pub mod primitives;
pub mod recovery;
pub mod scalar;
pub mod scenario;
pub mod snapshot;
pub mod sync;
pub mod trace;
pub mod translate;
pub mod txlib;
pub mod workloads;

pub use cost::CostModel;
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Cost model in double precision, the default for experiments.
pub type CostModelF64 = CostModel<f64>;
pub type CostModelF32 = CostModel<f32>;
