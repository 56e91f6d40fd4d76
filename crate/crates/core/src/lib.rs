//! Self-supervised dictionary learning.
//!
//! A partially labeled feature matrix is turned into soft pseudo-labels by
//! p-Laplacian attention hypergraph propagation, and those labels then
//! supervise a label-embedded dictionary and linear classifier.
//!
//! Stages, in pipeline order:
//!
//! * [`matrixio`]: feature, label and model files; synthetic blobs.
//! * [`hypergraph`]: centroid-kNN hypergraph with Gaussian incidence.
//! * [`plap`]: hypergraph Laplacian, p-Laplacian hyperedge embedding,
//!   attention regularizer.
//! * [`pseudolabel`]: initial label matrix and closed-form propagation.
//! * [`dictlearn`]: coordinate-descent codes with block dictionary and
//!   classifier updates.
//! * [`classify`]: encoding, prediction and accuracy.
//! * [`pipeline`]: orchestration, sweeps and run metadata.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and sequentially otherwise; see [`par`].

pub mod classify;
pub mod config;
pub mod dictlearn;
pub mod error;
pub mod hypergraph;
pub mod matrixio;
pub mod par;
pub mod pipeline;
pub mod plap;
pub mod pseudolabel;

pub use config::RunConfig;
pub use error::{ErrorKind, Result, SsdlError};
pub use nalgebra;
