//! Trajectory-based reconstruction of slow-manifold points: minimize a
//! curvature criterion over initial compositions with prescribed progress
//! variables.

mod consistency;
mod optimizer;
mod problem;
mod sweep;

use serde::Serialize;

pub use consistency::{consistency_test, time_at_progress, ConsistencyReport};
pub use problem::{OptimizerOptions, ProblemSpec, Reduced, StopPolicy, EPSILON_FRACTION, HORIZON_DECAY};
pub use sweep::{sweep_manifold, ManifoldResult, SweepEntry, SweepSpec};

use crate::error::{Error, Result};
use crate::integrator::{IntegratorOptions, StopCondition, Trajectory};

/// BFGS curvature below this (relative to `|F| / scale^2`) marks a flat valley.
pub const FLAT_VALLEY: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    /// Optimal initial composition.
    pub c0: Vec<f64>,
    /// Objective of the tight re-integration, equal to `trajectory.quadrature`.
    pub objective: f64,
    pub trajectory: Trajectory,
    pub stop: StopCondition,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    /// Smallest eigenvalue of the BFGS Hessian estimate (NaN if none was built).
    pub hessian_min_eigenvalue: f64,
    pub flat_valley: bool,
    pub used_fallback: bool,
}

/// Solve one reconstruction problem from `spec.initial_guess` or the
/// feasible center.
pub fn reconstruct_point(spec: &ProblemSpec) -> Result<SolveResult> {
    solve(spec, None, spec.initial_guess.as_deref())
}

pub(crate) fn solve(spec: &ProblemSpec, stop: Option<StopCondition>, start: Option<&[f64]>) -> Result<SolveResult> {
    let red = Reduced::new(spec)?;
    let center = red.center(spec)?;
    let stop = match stop {
        Some(s) => s,
        None => spec.resolve_stop(&center)?,
    };
    let z_center = red.to_z(&center);
    let z0 = match start {
        Some(c) => {
            if c.len() != red.n {
                return Err(Error::DimensionMismatch { expected: red.n, got: c.len() });
            }
            red.restore(&red.to_z(c), &z_center)
        }
        None => z_center,
    };
    let out = optimizer::minimize(spec, &red, stop, z0)?;
    finish(spec, &red, stop, out)
}

fn finish(spec: &ProblemSpec, red: &Reduced, stop: StopCondition, out: optimizer::Outcome) -> Result<SolveResult> {
    let c0 = red.point(&out.z);
    let tight = IntegratorOptions {
        rtol: spec.integrator.rtol * 0.1,
        atol: spec.integrator.atol * 0.1,
        ..spec.integrator
    };
    let phi = spec.integrand();
    let trajectory = crate::integrator::integrate(&spec.mechanism, &c0, stop, Some(&phi), &tight)?;
    let curvature_scale = out.value.abs().max(f64::MIN_POSITIVE) / (red.scale * red.scale);
    let flat_valley = out.hessian_min_eigenvalue.is_finite() && out.hessian_min_eigenvalue < FLAT_VALLEY * curvature_scale;
    if flat_valley {
        log::warn!("flat objective valley at {c0:?}");
    }
    if !out.converged {
        log::warn!("optimizer stopped without meeting tolerances (kkt {:e})", out.kkt);
    }
    Ok(SolveResult {
        c0,
        objective: trajectory.quadrature,
        trajectory,
        stop,
        iterations: out.iterations,
        evaluations: out.evaluations,
        converged: out.converged,
        kkt_residual: out.kkt,
        hessian_min_eigenvalue: out.hessian_min_eigenvalue,
        flat_valley,
        used_fallback: out.used_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::CriterionKind;
    use crate::field::VectorField;
    use crate::mechanism::Mechanism;

    #[test]
    fn davis_skodje_b_point_near_sim() {
        let spec = ProblemSpec::new(Mechanism::davis_skodje(10.0).unwrap(), CriterionKind::B).fix(0, 1.0);
        let r = reconstruct_point(&spec).unwrap();
        assert!(r.converged, "{r:?}");
        assert_eq!(r.c0[0], 1.0);
        assert!((r.c0[1] - 0.5).abs() < 5e-3, "{:?}", r.c0);
        assert!((r.objective - r.trajectory.quadrature).abs() == 0.0);
    }

    #[test]
    fn fixed_origin_collapses_to_equilibrium() {
        let spec = ProblemSpec::new(Mechanism::davis_skodje(10.0).unwrap(), CriterionKind::A).fix(0, 0.0);
        let r = reconstruct_point(&spec).unwrap();
        assert!(r.c0[1].abs() < 1e-6, "{:?}", r.c0);
    }

    #[test]
    fn ozone_solution_respects_constraints() {
        let m = Mechanism::ozone(1000.0).unwrap();
        let spec = ProblemSpec::new(m.clone(), CriterionKind::B).fix(1, 0.3);
        let r = reconstruct_point(&spec).unwrap();
        assert_eq!(r.c0[1], 0.3);
        assert!(r.c0.iter().all(|&v| v >= 0.0));
        assert!(m.conservation_residual(&r.c0).unwrap()[0].abs() <= 1e-10);
        assert!(m.rhs(&r.c0).iter().all(|v| v.is_finite()));
    }
}
