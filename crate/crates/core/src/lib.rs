//! Warm-cloud moisture dynamics in pressure coordinates.
//!
//! Finite-volume discretization of the coupled temperature / water vapour /
//! cloud water / rain water system, a Rothe (implicit Euler) solver for
//! linear parabolic Robin problems with discrete energy certificates, and
//! randomized property batteries for the microphysics kernels.

// `!(x > 0.0)` is used on purpose so NaN is rejected with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod grid;
pub mod microphysics;
pub mod ops;
pub mod rothe;
pub mod selftest;
pub mod solver;
pub mod stepper;
pub mod thermo;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Grid, ScalarField, Side, StateFields, WeightProfile};
pub use thermo::{BackgroundProfile, Diffusivity, PhysicalParams};
