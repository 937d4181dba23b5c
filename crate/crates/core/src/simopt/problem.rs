use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criteria::{objective_integrand, CriterionKind, CriterionOptions};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::integrator::{integrate, integrate_on_grid, IntegratorOptions, StepGrid, StopCondition, Trajectory};
use crate::linalg::{feasible_center, min_norm_solution, row_and_null_space};
use crate::mechanism::Mechanism;

/// Relative velocity decay that ends the horizon probe for criteria A and B.
pub const HORIZON_DECAY: f64 = 1e-6;
/// Default `epsilon / ||f(c_ref)||` for criterion C.
pub const EPSILON_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    /// Projected-gradient tolerance relative to `|objective| / scale`.
    pub gtol: f64,
    /// Tolerance on the predicted quasi-Newton step, relative to the
    /// feasible-region scale.
    pub xtol: f64,
    pub max_iterations: usize,
    /// Forward-difference step relative to the feasible-region scale.
    pub fd_step: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { gtol: 1e-7, xtol: 1e-8, max_iterations: 200, fd_step: 1e-9 }
    }
}

/// How the end of each trajectory is chosen when no explicit stop is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum StopPolicy {
    /// A, B and metric: fixed horizon where `||f||` of the reference
    /// trajectory has decayed by `decay`; C: `epsilon = fraction * ||f(c_ref)||`.
    Auto { decay: f64, fraction: f64 },
    Explicit(StopCondition),
}

impl Default for StopPolicy {
    fn default() -> Self {
        StopPolicy::Auto { decay: HORIZON_DECAY, fraction: EPSILON_FRACTION }
    }
}

/// One species-reconstruction problem: fixed progress values, conservation,
/// bounds and the criterion to minimize.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemSpec {
    pub mechanism: Mechanism,
    pub criterion: CriterionKind,
    pub fixed: BTreeMap<usize, f64>,
    pub stop: StopPolicy,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integrator: IntegratorOptions,
    pub criterion_options: CriterionOptions,
    pub optimizer: OptimizerOptions,
    /// Starting composition; the feasible center is used otherwise.
    pub initial_guess: Option<Vec<f64>>,
}

impl ProblemSpec {
    pub fn new(mechanism: Mechanism, criterion: CriterionKind) -> Self {
        let n = mechanism.n_species();
        let upper = conservation_upper_bounds(&mechanism);
        let integrator = IntegratorOptions::default();
        let criterion_options = CriterionOptions { negative_slack: 10.0 * integrator.atol, ..Default::default() };
        Self {
            mechanism,
            criterion,
            fixed: BTreeMap::new(),
            stop: StopPolicy::default(),
            lower: vec![0.0; n],
            upper,
            integrator,
            criterion_options,
            optimizer: OptimizerOptions::default(),
            initial_guess: None,
        }
    }

    pub fn fix(mut self, index: usize, value: f64) -> Self {
        self.fixed.insert(index, value);
        self
    }

    pub fn fix_species(self, name: &str, value: f64) -> Result<Self> {
        let i = self.mechanism.species_index(name)?;
        Ok(self.fix(i, value))
    }

    pub fn with_stop(mut self, stop: StopCondition) -> Self {
        self.stop = StopPolicy::Explicit(stop);
        self
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.integrator.rtol = rtol;
        self.integrator.atol = atol;
        self.criterion_options.negative_slack = 10.0 * atol;
        self
    }

    pub fn with_conservation_constants(mut self, constants: &[f64]) -> Result<Self> {
        self.mechanism = self.mechanism.with_conservation_constants(constants)?;
        self.upper = conservation_upper_bounds(&self.mechanism);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mechanism.n_species();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.lower.len().min(self.upper.len()) });
        }
        if self.lower.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::InvalidProblem("lower bounds must be nonnegative".into()));
        }
        for (&i, &v) in &self.fixed {
            if i >= n {
                return Err(Error::DimensionMismatch { expected: n, got: i + 1 });
            }
            if !v.is_finite() {
                return Err(Error::InvalidProblem(format!("fixed value for species {i} is not finite")));
            }
        }
        if self.fixed.len() + self.mechanism.conservation.len() >= n {
            return Err(Error::InvalidProblem("no degrees of freedom left to optimize".into()));
        }
        if let StopPolicy::Explicit(stop) = self.stop {
            stop.validate()?;
        }
        Ok(())
    }

    pub(crate) fn integrand(&self) -> impl Fn(&[f64]) -> Result<f64> + Sync + '_ {
        move |c: &[f64]| objective_integrand(&self.criterion, &self.mechanism, c, &self.criterion_options)
    }

    /// Objective and trajectory for one initial composition.
    pub fn evaluate(&self, c0: &[f64], stop: StopCondition) -> Result<Trajectory> {
        let phi = self.integrand();
        integrate(&self.mechanism, c0, stop, Some(&phi), &self.integrator)
    }

    pub fn evaluate_on_grid(&self, c0: &[f64], stop: StopCondition, grid: &StepGrid) -> Result<f64> {
        let phi = self.integrand();
        Ok(integrate_on_grid(&self.mechanism, c0, stop, Some(&phi), &self.integrator, grid)?.quadrature)
    }

    /// Stop condition used for every evaluation of this problem, fixed from
    /// the reference composition so it does not depend on the start point.
    pub fn resolve_stop(&self, reference: &[f64]) -> Result<StopCondition> {
        let (decay, fraction) = match self.stop {
            StopPolicy::Explicit(stop) => return Ok(stop),
            StopPolicy::Auto { decay, fraction } => (decay, fraction),
        };
        let f = self.mechanism.rhs(reference);
        let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(StopCondition::FixedHorizon { t_final: 1.0 });
        }
        match self.criterion {
            CriterionKind::C => Ok(StopCondition::VelocityNorm { epsilon: fraction * norm }),
            _ => {
                let probe = integrate(
                    &self.mechanism,
                    reference,
                    StopCondition::VelocityNorm { epsilon: decay * norm },
                    None,
                    &self.integrator,
                )?;
                let t_final = probe.final_time();
                if t_final > 0.0 {
                    Ok(StopCondition::FixedHorizon { t_final })
                } else {
                    Ok(StopCondition::FixedHorizon { t_final: 1.0 })
                }
            }
        }
    }
}

/// `c_i <= C_k / a_ki` for every relation with nonnegative coefficients.
fn conservation_upper_bounds(m: &Mechanism) -> Vec<f64> {
    let n = m.n_species();
    let mut upper = vec![f64::INFINITY; n];
    for rel in &m.conservation {
        if rel.coefficients.iter().any(|&a| a < 0.0) {
            continue;
        }
        for i in 0..n {
            let a = rel.coefficients[i];
            if a > 0.0 {
                upper[i] = upper[i].min(rel.constant / a);
            }
        }
    }
    upper
}

/// Affine parameterization `c = x_p + N z` of the fixed-value and
/// conservation constraints, with bounds as linear inequalities on `z`.
#[derive(Debug, Clone)]
pub struct Reduced {
    pub n: usize,
    pub xp: DVector<f64>,
    pub null: DMatrix<f64>,
    pub fixed: Vec<(usize, f64)>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Constraint rows `a . z >= b`.
    pub(crate) rows: Vec<(DVector<f64>, f64)>,
    /// Typical size of the feasible region in `z`.
    pub scale: f64,
}

impl Reduced {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let m = &spec.mechanism;
        let n = m.n_species();
        let nrel = m.conservation.len();
        let k = nrel + spec.fixed.len();
        let mut e = DMatrix::zeros(k, n);
        let mut b = DVector::zeros(k);
        for (r, rel) in m.conservation.iter().enumerate() {
            for j in 0..n {
                e[(r, j)] = rel.coefficients[j];
            }
            b[r] = rel.constant;
        }
        for (r, (&i, &v)) in spec.fixed.iter().enumerate() {
            e[(nrel + r, i)] = 1.0;
            b[nrel + r] = v;
        }
        let (row, null) = row_and_null_space(&e);
        if row.ncols() < k {
            return Err(Error::InvalidProblem("fixed values are linearly dependent on the conservation relations".into()));
        }
        let xp = min_norm_solution(&e, &b);
        let fixed: Vec<(usize, f64)> = spec.fixed.iter().map(|(&i, &v)| (i, v)).collect();
        let mut rows = Vec::new();
        for i in 0..n {
            if spec.fixed.contains_key(&i) {
                continue;
            }
            let a = null.row(i).transpose();
            if a.norm() < 1e-12 {
                continue;
            }
            rows.push((a.clone(), spec.lower[i] - xp[i]));
            if spec.upper[i].is_finite() {
                rows.push((-a, xp[i] - spec.upper[i]));
            }
        }
        let span = (0..n)
            .filter(|i| !spec.fixed.contains_key(i) && spec.upper[*i].is_finite())
            .map(|i| spec.upper[i] - spec.lower[i])
            .fold(0.0f64, f64::max);
        let scale = if span > 0.0 { span } else { 1.0 };
        Ok(Self { n, xp, null, fixed, lower: spec.lower.clone(), upper: spec.upper.clone(), rows, scale })
    }

    pub fn dof(&self) -> usize {
        self.null.ncols()
    }

    /// Composition for `z`, clipped into the bounds with fixed entries
    /// restored exactly.
    pub fn point(&self, z: &DVector<f64>) -> Vec<f64> {
        let mut c = &self.xp + &self.null * z;
        for i in 0..self.n {
            c[i] = c[i].clamp(self.lower[i], self.upper[i]);
        }
        for &(i, v) in &self.fixed {
            c[i] = v;
        }
        c.as_slice().to_vec()
    }

    pub fn to_z(&self, c: &[f64]) -> DVector<f64> {
        self.null.transpose() * (DVector::from_column_slice(c) - &self.xp)
    }

    /// Smallest constraint slack at `z` (negative when infeasible).
    pub fn min_slack(&self, z: &DVector<f64>) -> f64 {
        self.rows.iter().map(|(a, b)| a.dot(z) - b).fold(f64::INFINITY, f64::min)
    }

    pub fn feasible(&self, z: &DVector<f64>) -> bool {
        self.min_slack(z) >= -1e-13 * self.scale
    }

    /// Feasible center of the reduced region (phase-one linear program).
    pub fn center(&self, spec: &ProblemSpec) -> Result<Vec<f64>> {
        let m = &spec.mechanism;
        let n = self.n;
        let nrel = m.conservation.len();
        let k = nrel + self.fixed.len();
        let mut e = DMatrix::zeros(k, n);
        let mut b = DVector::zeros(k);
        for (r, rel) in m.conservation.iter().enumerate() {
            for j in 0..n {
                e[(r, j)] = rel.coefficients[j];
            }
            b[r] = rel.constant;
        }
        for (r, &(i, v)) in self.fixed.iter().enumerate() {
            e[(nrel + r, i)] = 1.0;
            b[nrel + r] = v;
        }
        let centered: Vec<bool> = (0..n).map(|i| !spec.fixed.contains_key(&i)).collect();
        let cap = m.conservation_constants().into_iter().fold(1.0f64, f64::max);
        let fixed_ok = self.fixed.iter().all(|&(i, v)| v >= self.lower[i] && v <= self.upper[i]);
        if !fixed_ok {
            return Err(Error::Infeasible("fixed value outside its bounds".into()));
        }
        let c = feasible_center(&e, &b, &self.lower, &self.upper, &centered, cap)?;
        Ok(self.point(&self.to_z(c.as_slice())))
    }

    /// Largest `alpha` with `z + alpha p` feasible, and the blocking row.
    pub(crate) fn ratio_test(&self, z: &DVector<f64>, p: &DVector<f64>, active: &[usize]) -> (f64, Option<usize>) {
        let mut best = (f64::INFINITY, None);
        for (r, (a, b)) in self.rows.iter().enumerate() {
            if active.contains(&r) {
                continue;
            }
            let ap = a.dot(p);
            if ap < 0.0 {
                let alpha = ((a.dot(z) - b) / -ap).max(0.0);
                if alpha < best.0 {
                    best = (alpha, Some(r));
                }
            }
        }
        best
    }

    /// Pull `z` back into the feasible region along the segment to `inside`.
    pub(crate) fn restore(&self, z: &DVector<f64>, inside: &DVector<f64>) -> DVector<f64> {
        if self.feasible(z) {
            return z.clone();
        }
        let d = z - inside;
        let (alpha, _) = self.ratio_test(inside, &d, &[]);
        inside + d * alpha.min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ozone_reduction_has_one_dof() {
        let spec = ProblemSpec::new(Mechanism::ozone(1000.0).unwrap(), CriterionKind::B).fix(1, 0.3);
        let red = Reduced::new(&spec).unwrap();
        assert_eq!(red.dof(), 1);
        let c = red.center(&spec).unwrap();
        assert_eq!(c[1], 0.3);
        assert!((c[0] - 0.1).abs() < 1e-12 && (c[2] - 0.1).abs() < 1e-12, "{c:?}");
        let r = spec.mechanism.conservation_residual(&c).unwrap();
        assert!(r[0].abs() < 1e-12);
    }

    #[test]
    fn h2_bounds_from_conservation() {
        let spec = ProblemSpec::new(Mechanism::h2_six_species().unwrap(), CriterionKind::A);
        assert_eq!(spec.upper, vec![1.0, 0.5, 1.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_problems_without_freedom() {
        let spec = ProblemSpec::new(Mechanism::ozone(1000.0).unwrap(), CriterionKind::A).fix(0, 0.1).fix(1, 0.2);
        assert!(spec.validate().is_err());
        let spec = ProblemSpec::new(Mechanism::ozone(1000.0).unwrap(), CriterionKind::A).fix(1, 0.7);
        let red = Reduced::new(&spec).unwrap();
        assert!(matches!(red.center(&spec), Err(Error::Infeasible(_))));
    }

    #[test]
    fn explicit_stop_is_kept() {
        let stop = StopCondition::FixedHorizon { t_final: 3.0 };
        let spec = ProblemSpec::new(Mechanism::davis_skodje(10.0).unwrap(), CriterionKind::A).fix(0, 1.0).with_stop(stop);
        assert_eq!(spec.resolve_stop(&[1.0, 1.0]).unwrap(), stop);
    }

    #[test]
    fn auto_horizon_reaches_decay() {
        let spec = ProblemSpec::new(Mechanism::davis_skodje(10.0).unwrap(), CriterionKind::A).fix(0, 1.0);
        let StopCondition::FixedHorizon { t_final } = spec.resolve_stop(&[1.0, 1.0]).unwrap() else {
            panic!("expected a fixed horizon");
        };
        // slow decay is exp(-t): roughly ln(1e6) plus the fast transient
        assert!(t_final > 12.0 && t_final < 16.0, "{t_final}");
    }
}
