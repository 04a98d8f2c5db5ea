//! Riesz and logarithmic equilibrium measures of discretized compact sets,
//! their capacities and moments, and numerical checks of moment minimality
//! for balls.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closedform;
pub mod error;
pub mod equilibrium;
pub mod geometry;
pub mod kernels;
pub mod moments;
pub mod quadrature;
pub mod startransform;
pub mod verify;

pub use error::{Error, Result};
pub use equilibrium::{
    capacity_from_energy, discrete_energy, frostman_check, potential, solve_equilibrium, DiscreteMeasure,
    EquilibriumResult, FrostmanReport, SolverMethod, SolverOptions,
};
pub use geometry::{build_mesh, nearest_neighbor_separation, Grading, Mesh, Primitive, SetSpec};
pub use kernels::{kernel_matrix, KernelKind, KernelMatrix, KernelSpec};
pub use moments::{compare_moments, moment, moment_of, MomentComparison, MomentOrder, Verdict};
pub use verify::{equality_case_probe, run_campaign, CampaignReport, CampaignSpec, ExtraSet, KernelParam, Theorem};
