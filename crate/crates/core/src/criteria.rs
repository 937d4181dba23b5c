//! Relaxation and curvature integrands.
//!
//! All objective integrands are built from the velocity `f(c)` and the
//! acceleration `c'' = J_f(c) f(c)` along the trajectory. The acceleration
//! is computed by default with a complex step, `Im f(c + i d f) / d`, which
//! costs one complex right-hand-side evaluation.

use std::str::FromStr;
use std::sync::Once;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CriterionKind {
    /// Euclidean norm of the acceleration.
    A,
    /// Acceleration norm weighted by `diag(1 / c_i)`.
    B,
    /// Total curvature.
    C,
    /// `(c''^T M c'')^(1/2)` for a symmetric positive-definite `M`.
    #[serde(rename = "metric")]
    GeneralMetric { weights: Vec<Vec<f64>> },
}

impl CriterionKind {
    pub fn metric(weights: &DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if weights.ncols() != n || n == 0 {
            return Err(Error::InvalidProblem("metric weight matrix must be square".into()));
        }
        let scale = weights.amax().max(f64::MIN_POSITIVE);
        if (weights - weights.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidProblem("metric weight matrix is not symmetric".into()));
        }
        if weights.clone().cholesky().is_none() {
            return Err(Error::InvalidProblem("metric weight matrix is not positive definite".into()));
        }
        Ok(CriterionKind::GeneralMetric {
            weights: (0..n).map(|i| weights.row(i).iter().copied().collect()).collect(),
        })
    }

    /// Parse a metric from a JSON array of rows.
    pub fn metric_from_json(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidProblem("metric weight matrix must be square".into()));
        }
        Self::metric(&DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn label(&self) -> &'static str {
        match self {
            CriterionKind::A => "A",
            CriterionKind::B => "B",
            CriterionKind::C => "C",
            CriterionKind::GeneralMetric { .. } => "metric",
        }
    }
}

impl FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(CriterionKind::A),
            "B" | "b" => Ok(CriterionKind::B),
            "C" | "c" => Ok(CriterionKind::C),
            other => Err(Error::Parse(format!("unknown criterion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", content = "delta", rename_all = "kebab-case")]
pub enum DerivativeScheme {
    ComplexStep(f64),
    /// Relative step; the absolute step is `delta * (1 + |c|_inf)`.
    CentralDifference(f64),
    AnalyticJacobian,
}

impl Default for DerivativeScheme {
    fn default() -> Self {
        DerivativeScheme::ComplexStep(1e-20)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionOptions {
    pub scheme: DerivativeScheme,
    /// Lower bound on concentrations inside the criterion-B weights.
    pub weight_floor: f64,
    /// Concentrations in `[-negative_slack, 0]` are floored instead of
    /// rejected. Integrator trial states dip slightly below zero near
    /// exhausted species; direct evaluations keep this at zero.
    pub negative_slack: f64,
}

impl Default for CriterionOptions {
    fn default() -> Self {
        Self {
            scheme: DerivativeScheme::default(),
            weight_floor: 1e-12,
            negative_slack: 0.0,
        }
    }
}

static FALLBACK_WARNING: Once = Once::new();

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn central_direction(field: &dyn VectorField, c: &[f64], f: &[f64], rel: f64) -> Vec<f64> {
    let n = c.len();
    let fn_ = norm(f);
    if fn_ == 0.0 {
        return vec![0.0; n];
    }
    let h = rel * (1.0 + c.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let cp: Vec<f64> = c.iter().zip(f).map(|(x, d)| x + h * d / fn_).collect();
    let cm: Vec<f64> = c.iter().zip(f).map(|(x, d)| x - h * d / fn_).collect();
    field.eval(&cp, &mut plus);
    field.eval(&cm, &mut minus);
    plus.iter().zip(&minus).map(|(p, m)| fn_ * (p - m) / (2.0 * h)).collect()
}

fn second_derivative_with(field: &dyn VectorField, c: &[f64], f: &[f64], scheme: DerivativeScheme) -> Result<Vec<f64>> {
    let n = c.len();
    match scheme {
        DerivativeScheme::ComplexStep(delta) => {
            if !(delta > 0.0) {
                return Err(Error::InvalidProblem("complex step must be positive".into()));
            }
            // Step along the unit direction: with |f| large, d * f would leave
            // the regime where the cubic Taylor term is negligible.
            let fn_ = norm(f);
            if fn_ == 0.0 {
                return Ok(vec![0.0; n]);
            }
            let z: Vec<Complex64> = c.iter().zip(f).map(|(x, d)| Complex64::new(*x, delta * d / fn_)).collect();
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            if field.eval_complex(&z, &mut out) {
                Ok(out.iter().map(|w| fn_ * w.im / delta).collect())
            } else {
                FALLBACK_WARNING.call_once(|| {
                    log::warn!("right-hand side has no complex extension; using central differences");
                });
                Ok(central_direction(field, c, f, 1e-6))
            }
        }
        DerivativeScheme::CentralDifference(rel) => {
            if !(rel > 0.0) {
                return Err(Error::InvalidProblem("difference step must be positive".into()));
            }
            Ok(central_direction(field, c, f, rel))
        }
        DerivativeScheme::AnalyticJacobian => {
            let j = field.jacobian(c);
            Ok((0..n).map(|i| (0..n).map(|k| j[(i, k)] * f[k]).sum()).collect())
        }
    }
}

fn check_dim(field: &dyn VectorField, c: &[f64]) -> Result<()> {
    if c.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: c.len() });
    }
    Ok(())
}

/// `c'' = J_f(c) f(c)`.
pub fn directional_second_derivative(field: &dyn VectorField, c: &[f64], scheme: DerivativeScheme) -> Result<Vec<f64>> {
    check_dim(field, c)?;
    let f = field.rhs(c);
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("right-hand side".into()));
    }
    second_derivative_with(field, c, &f, scheme)
}

/// Velocity and acceleration at `c`.
fn kinematics(field: &dyn VectorField, c: &[f64], scheme: DerivativeScheme) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(field, c)?;
    let f = field.rhs(c);
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("right-hand side".into()));
    }
    let a = second_derivative_with(field, c, &f, scheme)?;
    Ok((f, a))
}

fn weights(c: &[f64], opts: &CriterionOptions) -> Result<Vec<f64>> {
    c.iter()
        .enumerate()
        .map(|(i, &x)| {
            if !(x > 0.0) && !(x >= -opts.negative_slack && opts.negative_slack > 0.0) {
                return Err(Error::NonPositiveConcentration { index: i, value: x });
            }
            if x < opts.weight_floor {
                log::trace!("weight floor active for component {i} ({x:e})");
            }
            Ok(1.0 / x.max(opts.weight_floor))
        })
        .collect()
}

fn weighted_norm(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
}

/// `||J f|| / ||f||`.
pub fn phi_a(field: &dyn VectorField, c: &[f64]) -> Result<f64> {
    let (f, a) = kinematics(field, c, DerivativeScheme::default())?;
    let nf = norm(&f);
    if nf == 0.0 {
        return Err(Error::SingularPoint);
    }
    Ok(norm(&a) / nf)
}

/// `||J f||_W / ||f||_W` with `W = diag(1 / max(c_i, floor))`.
pub fn phi_b(field: &dyn VectorField, c: &[f64], opts: &CriterionOptions) -> Result<f64> {
    let w = weights(c, opts)?;
    let (f, a) = kinematics(field, c, opts.scheme)?;
    let nf = weighted_norm(&f, &w);
    if nf == 0.0 {
        return Err(Error::SingularPoint);
    }
    Ok(weighted_norm(&a, &w) / nf)
}

/// Component of `a` orthogonal to `v`, divided by `|v|`; equals `kappa |v|`.
fn normal_acceleration(v: &[f64], a: &[f64]) -> Result<f64> {
    let nv = norm(v);
    if nv == 0.0 {
        return Err(Error::SingularPoint);
    }
    let along: f64 = v.iter().zip(a).map(|(x, y)| x / nv * y).sum();
    let perp = v.iter().zip(a).map(|(x, y)| (y - along * x / nv).powi(2)).sum::<f64>().sqrt();
    Ok(perp / nv)
}

/// Curvature of a curve with velocity `v` and acceleration `a`.
pub fn curvature_from_derivatives(v: &[f64], a: &[f64]) -> Result<f64> {
    Ok(normal_acceleration(v, a)? / norm(v))
}

/// Geometric curvature of the trajectory through `c`.
pub fn local_curvature(field: &dyn VectorField, c: &[f64], scheme: DerivativeScheme) -> Result<f64> {
    let (f, a) = kinematics(field, c, scheme)?;
    curvature_from_derivatives(&f, &a)
}

/// Time-parametrized integrand of the chosen criterion.
pub fn objective_integrand(kind: &CriterionKind, field: &dyn VectorField, c: &[f64], opts: &CriterionOptions) -> Result<f64> {
    let value = match kind {
        CriterionKind::A => {
            let (_, a) = kinematics(field, c, opts.scheme)?;
            norm(&a)
        }
        CriterionKind::B => {
            let w = weights(c, opts)?;
            let (_, a) = kinematics(field, c, opts.scheme)?;
            weighted_norm(&a, &w)
        }
        CriterionKind::C => {
            let (f, a) = kinematics(field, c, opts.scheme)?;
            normal_acceleration(&f, &a)?
        }
        CriterionKind::GeneralMetric { weights } => {
            if weights.len() != c.len() {
                return Err(Error::DimensionMismatch { expected: c.len(), got: weights.len() });
            }
            let (_, a) = kinematics(field, c, opts.scheme)?;
            let q: f64 = weights
                .iter()
                .zip(&a)
                .map(|(row, ai)| ai * row.iter().zip(&a).map(|(m, aj)| m * aj).sum::<f64>())
                .sum();
            q.max(0.0).sqrt()
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("criterion {} integrand", kind.label())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::LinearField;
    use crate::integrator::{integrate, IntegratorOptions, StopCondition};
    use crate::linalg::{feasible_center, row_and_null_space};
    use crate::mechanism::Mechanism;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn ds6() -> Mechanism {
        Mechanism::davis_skodje(6.0).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
    }

    /// Random admissible state: feasible center moved along a random
    /// null-space direction, staying nonnegative.
    fn random_admissible(m: &Mechanism, rng: &mut impl Rng) -> Vec<f64> {
        let n = m.n_species();
        if m.conservation.is_empty() {
            return (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
        }
        let e = m.conservation_matrix();
        let b = DVector::from_vec(m.conservation_constants());
        let center = feasible_center(&e, &b, &vec![0.0; n], &vec![f64::INFINITY; n], &vec![true; n], 10.0).unwrap();
        let (_, null) = row_and_null_space(&e);
        let z = DVector::from_fn(null.ncols(), |_, _| rng.random_range(-1.0..1.0));
        let d = &null * z;
        let mut t_max = f64::INFINITY;
        for i in 0..n {
            if d[i] < 0.0 {
                t_max = t_max.min(-center[i] / d[i]);
            }
        }
        let t = rng.random_range(0.0..0.95) * t_max.min(10.0);
        (0..n).map(|i| (center[i] + t * d[i]).max(1e-9)).collect()
    }

    #[test]
    fn linear_second_derivative_is_a_squared_c() {
        let field = LinearField::diagonal(&[-1.0, -2.0]);
        for scheme in [DerivativeScheme::default(), DerivativeScheme::AnalyticJacobian, DerivativeScheme::CentralDifference(1e-6)] {
            let a = directional_second_derivative(&field, &[1.0, 1.0], scheme).unwrap();
            assert!((a[0] - 1.0).abs() < 1e-8 && (a[1] - 4.0).abs() < 1e-8, "{scheme:?}: {a:?}");
        }
    }

    #[test]
    fn davis_skodje_second_derivative() {
        let a = directional_second_derivative(&ds6(), &[1.0, 0.5], DerivativeScheme::default()).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-14 && a[1].abs() < 1e-14, "{a:?}");
        let fd = directional_second_derivative(&ds6(), &[1.0, 0.5], DerivativeScheme::CentralDifference(1e-6)).unwrap();
        assert!((fd[0] - 1.0).abs() < 1e-7 && fd[1].abs() < 1e-7);
    }

    #[test]
    fn complex_step_matches_jacobian_on_builtins() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for m in [
            Mechanism::davis_skodje(10.0).unwrap(),
            Mechanism::h2_six_species().unwrap(),
            Mechanism::ozone(1000.0).unwrap(),
            Mechanism::ozone(350.0).unwrap(),
        ] {
            for _ in 0..100 {
                let c = random_admissible(&m, &mut rng);
                let cs = directional_second_derivative(&m, &c, DerivativeScheme::default()).unwrap();
                let an = directional_second_derivative(&m, &c, DerivativeScheme::AnalyticJacobian).unwrap();
                let scale = norm(&an);
                let diff: Vec<f64> = cs.iter().zip(&an).map(|(x, y)| x - y).collect();
                assert!(norm(&diff) <= 1e-12 * scale, "{}: {c:?}", m.name);
            }
        }
    }

    #[test]
    fn phi_a_examples() {
        let field = LinearField::diagonal(&[-3.0]);
        assert!(close(phi_a(&field, &[0.7]).unwrap(), 3.0, 1e-15));
        assert!(close(phi_a(&ds6(), &[1.0, 0.5]).unwrap(), 1.0 / 1.0625f64.sqrt(), 1e-14));
        assert!(matches!(phi_a(&ds6(), &[0.0, 0.0]), Err(Error::SingularPoint)));
    }

    #[test]
    fn phi_a_within_singular_values() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let m = Mechanism::h2_six_species().unwrap();
        for _ in 0..50 {
            let c = random_admissible(&m, &mut rng);
            let sv = m.jacobian(&c).singular_values();
            let v = phi_a(&m, &c).unwrap();
            assert!(v <= sv.max() * (1.0 + 1e-10) && v >= sv.min() * (1.0 - 1e-10) - 1e-12);
        }
    }

    #[test]
    fn phi_b_examples() {
        let opts = CriterionOptions::default();
        let field = LinearField::diagonal(&[-2.5]);
        assert!(close(phi_b(&field, &[0.3], &opts).unwrap(), 2.5, 1e-15));
        assert!(close(phi_b(&ds6(), &[1.0, 0.5], &opts).unwrap(), 1.0 / 1.125f64.sqrt(), 1e-14));
        let eq = [0.4, 0.4];
        assert!(close(phi_b(&ds6(), &eq, &opts).unwrap(), phi_a(&ds6(), &eq).unwrap(), 1e-14));
        assert!(matches!(phi_b(&ds6(), &[1.0, 0.0], &opts), Err(Error::NonPositiveConcentration { index: 1, .. })));
        let slack = CriterionOptions { negative_slack: 1e-9, ..opts };
        assert!(phi_b(&ds6(), &[1.0, -1e-10], &slack).is_ok());
    }

    #[test]
    fn curvature_examples() {
        let h = LinearField::harmonic();
        for r in [0.5, 1.0, 3.0] {
            let k = local_curvature(&h, &[r, 0.0], DerivativeScheme::default()).unwrap();
            assert!(close(k, 1.0 / r, 1e-14));
        }
        let id = LinearField::diagonal(&[-1.0, -1.0, -1.0]);
        assert!(local_curvature(&id, &[0.2, 0.3, 0.4], DerivativeScheme::default()).unwrap() < 1e-15);
    }

    /// Field flowing backwards in time.
    struct Reversed<'a>(&'a Mechanism);

    impl VectorField for Reversed<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn eval(&self, c: &[f64], out: &mut [f64]) {
            self.0.eval(c, out);
            out.iter_mut().for_each(|x| *x = -*x);
        }
    }

    #[test]
    fn davis_skodje_curvature_matches_trajectory_differences() {
        let m = ds6();
        let c0 = [1.0, 0.5];
        let opts = IntegratorOptions::default().with_tolerances(1e-13, 1e-15);
        let at = |t: f64| -> Vec<f64> {
            if t == 0.0 {
                return c0.to_vec();
            }
            let stop = StopCondition::FixedHorizon { t_final: t.abs() };
            if t > 0.0 {
                integrate(&m, &c0, stop, None, &opts).unwrap().final_state().to_vec()
            } else {
                integrate(&Reversed(&m), &c0, stop, None, &opts).unwrap().final_state().to_vec()
            }
        };
        // central differences of the trajectory, two Richardson levels
        let diffs = |h: f64| {
            let (p, z, q) = (at(h), at(0.0), at(-h));
            let v: Vec<f64> = (0..2).map(|i| (p[i] - q[i]) / (2.0 * h)).collect();
            let a: Vec<f64> = (0..2).map(|i| (p[i] - 2.0 * z[i] + q[i]) / (h * h)).collect();
            (v, a)
        };
        let levels: Vec<(Vec<f64>, Vec<f64>)> = [0.04, 0.02, 0.01].iter().map(|&h| diffs(h)).collect();
        let extrapolate = |x: [&Vec<f64>; 3]| -> Vec<f64> {
            (0..2)
                .map(|i| {
                    let r1 = (4.0 * x[1][i] - x[0][i]) / 3.0;
                    let r2 = (4.0 * x[2][i] - x[1][i]) / 3.0;
                    (16.0 * r2 - r1) / 15.0
                })
                .collect()
        };
        let v = extrapolate([&levels[0].0, &levels[1].0, &levels[2].0]);
        let a = extrapolate([&levels[0].1, &levels[1].1, &levels[2].1]);
        let oracle = (v[0] * a[1] - v[1] * a[0]).abs() / norm(&v).powi(3);
        let k = local_curvature(&m, &c0, DerivativeScheme::default()).unwrap();
        assert!(close(k, oracle, 1e-6), "{k} vs {oracle}");
    }

    #[test]
    fn metric_identity_equals_a() {
        let id = CriterionKind::metric(&DMatrix::identity(2, 2)).unwrap();
        let opts = CriterionOptions::default();
        for c in [[1.0, 0.5], [0.3, 1.2], [2.0, 0.1]] {
            let x = objective_integrand(&id, &ds6(), &c, &opts).unwrap();
            let y = objective_integrand(&CriterionKind::A, &ds6(), &c, &opts).unwrap();
            assert!(close(x, y, 1e-14));
        }
    }

    #[test]
    fn metric_validation() {
        assert!(CriterionKind::metric(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(CriterionKind::metric(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
        assert!(CriterionKind::metric_from_json("[[2.0, 0.5], [0.5, 1.0]]").is_ok());
        assert!(CriterionKind::metric_from_json("[[1.0]").is_err());
        assert_eq!("B".parse::<CriterionKind>().unwrap(), CriterionKind::B);
        assert!("D".parse::<CriterionKind>().is_err());
    }

    #[test]
    fn scalar_flow_integrand_closed_form() {
        let opts = CriterionOptions::default();
        for (lambda, c) in [(1.0, 0.5), (3.0, -2.0), (0.25, 8.0)] {
            let field = LinearField::diagonal(&[-lambda]);
            let v = objective_integrand(&CriterionKind::A, &field, &[c], &opts).unwrap();
            assert_eq!(v, lambda * lambda * f64::abs(c));
        }
    }

    #[test]
    fn total_curvature_of_circle_is_two_pi() {
        let h = LinearField::harmonic();
        let opts = CriterionOptions::default();
        let phi = |c: &[f64]| objective_integrand(&CriterionKind::C, &h, c, &opts);
        let tr = integrate(
            &h,
            &[2.0, 0.0],
            StopCondition::FixedHorizon { t_final: 2.0 * std::f64::consts::PI },
            Some(&phi),
            &IntegratorOptions::default(),
        )
        .unwrap();
        assert!((tr.quadrature - 2.0 * std::f64::consts::PI).abs() <= 1e-6);
    }

    #[test]
    fn criterion_b_decreases_toward_equilibrium_on_h2() {
        let m = Mechanism::h2_six_species().unwrap();
        let opts = CriterionOptions::default();
        // c_H2O = 0.3 with the remaining mass split between H2 and O2 plus radicals
        let c0 = [0.6, 0.275, 0.3, 0.1, 0.05, 0.1];
        assert!(m.conservation_residual(&c0).unwrap().iter().all(|r| r.abs() < 1e-12));
        let tr = integrate(&m, &c0, StopCondition::FixedHorizon { t_final: 5.0 }, None, &IntegratorOptions::default()).unwrap();
        let vals: Vec<f64> = tr
            .states
            .iter()
            .map(|c| objective_integrand(&CriterionKind::B, &m, c, &opts).unwrap())
            .collect();
        assert!(vals.iter().all(|v| v.is_finite() && *v > 0.0));
        // decay on the tail, above the noise floor set by atol
        let peak = (0..vals.len()).max_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
        let floor = 1e-4 * vals[peak];
        let tail: Vec<f64> = vals[peak..].iter().copied().filter(|v| *v > floor).collect();
        assert!(tail.len() > 3);
        for w in tail.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{w:?}");
        }
    }

    proptest! {
        #[test]
        fn curvature_is_reparametrization_invariant(
            v in prop::collection::vec(-10.0f64..10.0, 3),
            a in prop::collection::vec(-10.0f64..10.0, 3),
            alpha in 0.01f64..100.0,
            beta in -10.0f64..10.0,
        ) {
            prop_assume!(norm(&v) > 1e-3);
            let k = curvature_from_derivatives(&v, &a).unwrap();
            let v2: Vec<f64> = v.iter().map(|x| alpha * x).collect();
            let a2: Vec<f64> = a.iter().zip(&v).map(|(y, x)| alpha * alpha * y + beta * x).collect();
            let k2 = curvature_from_derivatives(&v2, &a2).unwrap();
            prop_assert!((k - k2).abs() <= 1e-12 * k.max(1e-300) || (k - k2).abs() < 1e-13 * norm(&a) / norm(&v).powi(2));
        }

        #[test]
        fn phi_a_rotation_invariant(
            d in prop::collection::vec(-5.0f64..-0.1, 2),
            off in -2.0f64..2.0,
            theta in 0.0f64..std::f64::consts::TAU,
            c in prop::collection::vec(-3.0f64..3.0, 2),
        ) {
            prop_assume!(norm(&c) > 1e-2);
            let m = DMatrix::from_row_slice(2, 2, &[d[0], off, 0.0, d[1]]);
            let q = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
            let rotated = LinearField::new(&q * &m * q.transpose());
            let cv = DVector::from_column_slice(&c);
            let qc = &q * &cv;
            let x = phi_a(&LinearField::new(m), &c).unwrap();
            let y = phi_a(&rotated, qc.as_slice()).unwrap();
            prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
        }

        #[test]
        fn integrands_are_nonnegative(y1 in 0.01f64..3.0, y2 in 0.01f64..3.0) {
            let m = ds6();
            let opts = CriterionOptions::default();
            for kind in [CriterionKind::A, CriterionKind::B, CriterionKind::C] {
                let v = objective_integrand(&kind, &m, &[y1, y2], &opts).unwrap();
                prop_assert!(v >= 0.0);
            }
        }
    }
}
