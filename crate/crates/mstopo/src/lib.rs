//! Multiscale topology optimization on structured 2D grids.
//!
//! The library optimizes coated, infill-graded structures in which every
//! macroscale "density" stands for a two-parameter triangular microstructure.
//! A design is described by two element fields on an L-shaped domain: a
//! density field `x` (how much material the local lattice carries) and a void
//! indicator `s` (whether there is any structure at all). Both pass through a
//! Helmholtz-type PDE filter and smoothed Heaviside projections; three
//! projection thresholds give the eroded / intermediate / dilated realizations
//! used for robust design.
//!
//! On the physical fields the library evaluates
//!
//! * compliance of the prescribed load case,
//! * the fundamental buckling load factor from a linearized eigenproblem,
//! * a microstructural yield load factor (per-element von Mises measure
//!   against a density-dependent yield limit calibrated on the lattice), and
//! * a local, microstructural buckling load factor (per-element stress
//!   against a three-parameter Willam–Warnke-type failure cone calibrated on
//!   uniaxial tension/compression and equibiaxial compression limits).
//!
//! The measures are aggregated with corrected p-norms, differentiated with
//! adjoint solves, and driven by a native Method of Moving Asymptotes
//! optimizer. Converged designs can be de-homogenized into an explicit
//! triangular lattice raster or contour set and re-analyzed pixel-by-pixel.
//!
//! # Modules
//!
//! - [`config`]: run configuration, flat key/value config files, material presets.
//! - [`mesh`]: structured L-domain / raster meshes, fields, loads, boundary tags.
//! - [`linalg`]: skyline Cholesky and a generalized buckling eigensolver.
//! - [`filter`]: PDE filter, Heaviside projection, infill regularization,
//!   three-field composition and its reverse-mode chain.
//! - [`material`]: RAMP moduli, yield-limit polynomial, buckling limits and
//!   the Willam–Warnke equivalent.
//! - [`fea`]: plane-stress Q4 analysis: stiffness, stresses, geometric
//!   stiffness and buckling eigenpairs.
//! - [`cell`]: the two-parameter triangular lattice: closed-form fields,
//!   rasterization, periodic homogenization, yield sweeps and parameter fits.
//! - [`failure`]: relaxed aggregation of element measures into load factors.
//! - [`mma`]: the Method of Moving Asymptotes subproblem solver.
//! - [`sensitivity`]: adjoint gradients of compliance, stress aggregates and
//!   buckling aggregates through the full field chain.
//! - [`problem`]: the named optimization problems and the continuation loop.
//! - [`dehom`]: de-homogenization to rasters/contours, coating and audits.
//! - [`io`]: CSV grids, portable graymaps, SVG polylines, manifests,
//!   checkpoints.
//! - [`report`]: history post-processing and design/material cross-checks.
//!
//! # Example
//!
//! Evaluate the homogenized stiffness and yield strength of one lattice cell:
//!
//! ```
//! use mstopo::cell::{GeometryParams, MicroCell};
//!
//! // Parameters for a nominal relative density of 0.5 under the
//! // maximum-yield calibration.
//! let params = GeometryParams::from_density(0.5, mstopo::cell::FitFamily::MaxYield);
//! let cell = MicroCell::rasterize(&params, 64);
//! let density = cell.volume_fraction();
//! assert!((density - 0.5).abs() < 0.05);
//! ```

pub mod cell;
pub mod config;
pub mod dehom;
pub mod failure;
pub mod fea;
pub mod filter;
pub mod io;
pub mod linalg;
pub mod material;
pub mod mesh;
pub mod mma;
pub mod problem;
pub mod report;
pub mod sensitivity;

use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("eigensolver converged only {converged} of {requested} requested modes")]
    EigenUnconverged { converged: usize, requested: usize },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("failure-surface calibration is degenerate: {0}")]
    Degenerate(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
