//! Dual-source PET/CT lesion segmentation toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`volume`] holds 3D voxel grids with physical geometry, the on-disk
//!   volume format, rigid resampling and translation-search alignment.
//! * [`phantom`] generates deterministic synthetic PET/CT cohorts carrying two
//!   annotation sets: a broad high-sensitivity Label A and a core
//!   high-specificity Label B.
//! * [`preprocess`] applies bone windowing, min-max normalisation, axial
//!   slicing, background-slice filtering and resizing.
//! * [`dataset`] splits patients, augments slices and iterates batches.
//! * [`nn`] is a small dense tensor engine with hand-written backward passes
//!   and an early-fusion U-Net.
//! * [`training`] implements the Dice/BCE hybrid loss, Adam, cosine annealing,
//!   early stopping and the decoupled dual-source training loop.
//! * [`eval`] scores reconstructed 3D predictions per patient and builds the
//!   model-by-annotation cross-evaluation matrix.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod format;
pub mod gradcheck;
pub mod nn;
pub mod phantom;
pub mod preprocess;
pub mod real;
pub mod rng;
pub mod training;
pub mod volume;

pub use error::{Error, Result};
pub use real::Real;
