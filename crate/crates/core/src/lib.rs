//! Recovery of a single image from a large noisy measurement holding many
//! randomly rotated, arbitrarily spaced copies of it.
//!
//! The pipeline never locates individual copies. It matches the first three
//! autocorrelations of the measurement against analytic predictions built
//! from a steerable Fourier-Bessel expansion of the unknown image.
//!
//! Module map:
//! - [`basis`]: Bessel roots, sampled eigenfunctions, steering and synthesis
//! - [`measurement`]: placement policies and measurement rendering
//! - [`moments`]: empirical autocorrelations of a measurement
//! - [`image_moments`]: rotationally averaged image-side moments and gradients
//! - [`separation`]: pair and triplet separation functions
//! - [`forward`]: predicted autocorrelations and their Jacobians
//! - [`recovery`]: least-squares objective, BFGS, two-stage recovery
//! - [`ctf`]: moment-domain deconvolution of a point-spread kernel
//! - [`experiment`]: sweeps used by the command line tool

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod ctf;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod image_moments;
pub mod measurement;
pub mod moments;
pub mod recovery;
pub mod separation;
mod binio;
mod dft;

pub use basis::{BasisSpec, BasisTables, BesselRootTable, CoefficientVector, ImageGrid};
pub use error::{Error, Result};
pub use forward::{ForwardModel, ForwardPrediction};
pub use image_moments::{FreqVectors, ImageMomentSet, SpatialMoments};
pub use measurement::{Measurement, PlacementMode, PlacementPolicy};
pub use moments::MomentSet;
pub use recovery::{Objective, RecoveryResult};
pub use separation::SeparationFunctions;

pub use num_complex::Complex64;
