//! Trajectory-based approximation of slow invariant manifolds in chemical
//! kinetics.
//!
//! The crate solves, for fixed reaction-progress values, the optimization
//! problem "find the initial composition whose trajectory minimizes an
//! integrated curvature or relaxation functional", and provides the
//! supporting pieces: kinetics models, a stiff integrator with quadrature
//! and event stops, the objective integrands, sweeps, consistency tests,
//! ILDM points and objective landscapes.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criteria;
pub mod error;
pub mod field;
pub mod ildm;
pub mod integrator;
pub mod landscape;
pub mod linalg;
pub mod mechanism;
pub mod simopt;

pub use criteria::{CriterionKind, CriterionOptions, DerivativeScheme};
pub use error::{Error, Result};
pub use field::{LinearField, VectorField};
pub use integrator::{integrate, integrate_on_grid, IntegratorOptions, Method, StepGrid, StopCondition, Trajectory};
pub use mechanism::{equilibrium_state, Mechanism, MechanismKind, State};
pub use simopt::{consistency_test, reconstruct_point, sweep_manifold, ProblemSpec, SolveResult, SweepSpec};
pub use ildm::{ildm_point, IldmPoint, IldmSpec};
pub use landscape::{reference_sim_trajectory, scan_landscape, Axis, LandscapeGrid, LandscapeResult, LandscapeStop};
