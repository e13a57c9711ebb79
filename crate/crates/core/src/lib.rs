//! Dual-level multiple instance learning.
//!
//! A bag branch (attention aggregation with hard-positive mining) and an
//! instance branch (a classifier trained on attention-derived soft labels)
//! share one encoder and supervise each other. Self-confidence terms on both
//! sides let confident predictions override noisy pseudo-labels.
//!
//! Everything runs on a small `f64` reverse-mode engine ([`tensor`]); the
//! model, losses, data formats, metrics and the training schedule are built
//! on top of it.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
