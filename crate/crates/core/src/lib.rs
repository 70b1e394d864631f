//! Sequence-classification toolkit for disordered-speech attribute detection.
//!
//! The crate is organized around six subsystems:
//!
//! - [`nn`] — minimal neural-network substrate: tensors, a reverse-mode tape
//!   over a fixed op vocabulary, Adam, and finite-difference gradient checks.
//! - [`audio`] — deterministic 128-dim log-mel front-end at a 10 ms frame rate.
//! - [`embedding`] — binary container for precomputed frozen-encoder
//!   embeddings with per-layer selection, plus a pseudo-encoder for tests.
//! - [`models`] — the class-specific-latent cross-attention classifier with
//!   factorized projection, and transformer / perceiver pooling baselines.
//! - [`corpus`] — synthetic disordered-speech corpus generator for the three
//!   clinical tasks (VP, AMR, SMR) with 14 injectable attribute labels and an
//!   independent signal-analysis oracle.
//! - [`harness`] — training/evaluation harness: metric computation,
//!   architecture comparison, layer sweeps, task pooling, seed sweeps,
//!   and report generation.

pub mod audio;
// pub mod corpus;
pub mod embedding;
pub mod error;
// pub mod harness;
pub mod models;
pub mod nn;
pub mod util;

pub use error::{Error, Result};
pub use nn::scalar::Scalar;
pub use nn::tensor::{AttentionMask, Parameter, Tensor};
