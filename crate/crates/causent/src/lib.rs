//! Identification of governing equations for partially observed stochastic
//! dynamical systems.
//!
//! The library learns a sparse quadratic/cubic drift model and diagonal noise
//! amplitudes for a system whose state splits into observed and hidden
//! variables, requiring only a time series of the observed ones. Hidden
//! dynamics must enter linearly (conditionally Gaussian structure), which
//! covers two-layer geophysical models, reduced stochastic parameterizations
//! and excitable lattices. Learning alternates three closed-form stages:
//!
//! 1. [`cgns`]: conditional Gaussian filtering/smoothing of the hidden state
//!    given the observed path, and backward sampling of hidden trajectories;
//! 2. [`causality`]: causation-entropy screening of a term library against the
//!    combined observed/sampled data to select the model structure;
//! 3. [`estimation`]: maximum-likelihood coefficients for the retained terms
//!    under exact energy-conservation constraints.
//!
//! [`learning`] wires the stages into the iterative loop, [`dynamics`] holds
//! model/term/trajectory types plus the benchmark catalog, [`stats`] provides
//! the long-run diagnostics and [`experiment`] the file-driven runs used by
//! the `causent` CLI.

pub mod causality;
pub mod cgns;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod io;
pub mod learning;
pub mod stats;
mod util;

pub use error::{Error, Result};
