//! Deterministic federated-learning simulator.
//!
//! The crate trains a small dense classifier over synthetic, optionally
//! label-skewed client partitions and compares server-side aggregation
//! strategies — sample-count weighting, label-count weighting, per-label
//! attention weighting, and their proximal variants — on convergence speed
//! and final quality. Every stage (data generation, partitioning, client
//! selection, local training, aggregation) runs on seeded, domain-separated
//! random streams, so a given configuration reproduces bit-identical
//! results across runs and thread counts.

pub mod aggregation;
pub mod cli;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod seeding;

pub use error::{Error, Result};
