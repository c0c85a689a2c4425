//! Two-stage stochastic homogenization of 2D diffusion problems with random,
//! rapidly oscillating coefficients.
//!
//! Stage one solves periodic cell problems per block and sample to obtain
//! equivalent tensors; stage two solves the homogenized Dirichlet problem with
//! their empirical mean. A Monte Carlo reference pipeline, a direct fine-mesh
//! oracle and several convergence studies sit on top.

pub mod cli;
pub mod config;
pub mod error;
pub mod fem;
pub mod homogenize;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod microstructure;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, ErrorCategory, Result};
pub use tensor::Mat2;
