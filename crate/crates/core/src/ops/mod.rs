//! Discrete spatial operators.

pub mod advection;
pub mod diffusion;
pub mod sedimentation;

pub use advection::{
    advect, convection_cell_for_cfl, discrete_divergence, make_convection_cell, VelocityField,
};
pub use diffusion::{
    apply_diffusion, apply_theta_diffusion, exner_levels, robin_ghost, robin_ghost_at, scale_levels,
    BoundaryField, EllipticOperator, RobinBCSet, RobinBc,
};
pub use sedimentation::{apply_sedimentation, Sedimentation};
