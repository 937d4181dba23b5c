//! Objective values over grids of initial compositions, and a trajectory
//! tail used as a stand-in for the slow manifold.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{objective_integrand, CriterionKind, CriterionOptions};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::integrator::{integrate, IntegratorOptions, StopCondition, Trajectory};
use crate::mechanism::Mechanism;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub index: usize,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub scale: AxisScale,
}

impl Axis {
    pub fn linear(index: usize, min: f64, max: f64, count: usize) -> Self {
        Self { index, min, max, count, scale: AxisScale::Linear }
    }

    pub fn log(index: usize, min: f64, max: f64, count: usize) -> Self {
        Self { index, min, max, count, scale: AxisScale::Log }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::InvalidProblem(format!("axis for species {} needs at least two points", self.index)));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::InvalidProblem(format!("axis range [{}, {}] is empty", self.min, self.max)));
        }
        if self.scale == AxisScale::Log && self.min <= 0.0 {
            return Err(Error::InvalidProblem("logarithmic axis needs a positive range".into()));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                let s = k as f64 / last;
                match self.scale {
                    AxisScale::Linear => self.min + s * (self.max - self.min),
                    AxisScale::Log => (self.min.ln() + s * (self.max / self.min).ln()).exp(),
                }
            })
            .collect()
    }
}

/// How each node's trajectory ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LandscapeStop {
    Absolute(StopCondition),
    /// `VelocityNorm` with `epsilon = fraction * ||f(c0)||` per node.
    RelativeVelocity { fraction: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct LandscapeGrid {
    /// Progress axis first, then the axis minimized over per column.
    pub axes: [Axis; 2],
    pub criterion: CriterionKind,
    pub stop: LandscapeStop,
    /// Values for species that neither an axis nor conservation determines.
    pub pinned: BTreeMap<usize, f64>,
    pub integrator: IntegratorOptions,
    pub criterion_options: CriterionOptions,
}

impl LandscapeGrid {
    pub fn new(axes: [Axis; 2], criterion: CriterionKind, stop: LandscapeStop) -> Self {
        Self {
            axes,
            criterion,
            stop,
            pinned: BTreeMap::new(),
            integrator: IntegratorOptions::default(),
            criterion_options: CriterionOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "lowercase")]
pub enum NodeStatus {
    Ok,
    Infeasible,
    Failed(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct LandscapeResult {
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    /// `values[i][j]` at `(axis1[i], axis2[j])`; NaN unless the status is ok.
    pub values: Vec<Vec<f64>>,
    pub status: Vec<Vec<NodeStatus>>,
    /// Per `axis1` column: `(axis2 value, objective)` of the smallest finite entry.
    pub argmin: Vec<Option<(f64, f64)>>,
}

impl LandscapeResult {
    pub fn infeasible_count(&self) -> usize {
        self.status.iter().flatten().filter(|s| **s == NodeStatus::Infeasible).count()
    }

    pub fn failed_count(&self) -> usize {
        self.status.iter().flatten().filter(|s| matches!(s, NodeStatus::Failed(_))).count()
    }
}

/// Fills in species not on an axis from conservation and `pinned`.
struct Reconstruction {
    n: usize,
    known: Vec<usize>,
    unknown: Vec<usize>,
    /// Solves `E_u c_u = C - E_k c_k`.
    solve: Option<DMatrix<f64>>,
    e_known: DMatrix<f64>,
    constants: DVector<f64>,
}

impl Reconstruction {
    fn new(m: &Mechanism, grid: &LandscapeGrid) -> Result<Self> {
        let n = m.n_species();
        let mut known: Vec<usize> = grid.axes.iter().map(|a| a.index).collect();
        known.extend(grid.pinned.keys().copied());
        if known.iter().any(|&i| i >= n) {
            return Err(Error::DimensionMismatch { expected: n, got: known.iter().copied().max().unwrap_or(0) + 1 });
        }
        let mut sorted = known.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != known.len() {
            return Err(Error::InvalidProblem("axis and pinned species must be distinct".into()));
        }
        let unknown: Vec<usize> = (0..n).filter(|i| !known.contains(i)).collect();
        let e = m.conservation_matrix();
        let constants = DVector::from_vec(m.conservation_constants());
        let e_known = e.select_columns(&known);
        let solve = if unknown.is_empty() {
            None
        } else {
            let e_u = e.select_columns(&unknown);
            if e_u.nrows() < unknown.len() || e_u.rank(1e-10) < unknown.len() {
                return Err(Error::InvalidProblem(format!(
                    "species {unknown:?} are not determined by the axes and conservation; pin them"
                )));
            }
            Some(e_u.pseudo_inverse(1e-12).map_err(|e| Error::InvalidProblem(e.to_string()))?)
        };
        Ok(Self { n, known, unknown, solve, e_known, constants })
    }

    /// Full composition, or `None` when a reconstructed entry is negative.
    fn point(&self, values: &[f64]) -> Option<Vec<f64>> {
        let mut c = vec![0.0; self.n];
        for (&i, &v) in self.known.iter().zip(values) {
            c[i] = v;
        }
        if let Some(pinv) = &self.solve {
            let kv = DVector::from_column_slice(values);
            let terms = &self.e_known * &kv;
            let rhs = &self.constants - &terms;
            let cu = pinv * rhs;
            let size = self.constants.amax().max(terms.amax());
            for (&i, &v) in self.unknown.iter().zip(cu.iter()) {
                if v < -1e-13 * size {
                    return None;
                }
                c[i] = v.max(0.0);
            }
        }
        Some(c)
    }
}

/// Integrate from every grid node and record the criterion's objective.
pub fn scan_landscape(m: &Mechanism, grid: &LandscapeGrid) -> Result<LandscapeResult> {
    for a in &grid.axes {
        a.validate()?;
    }
    if grid.axes[0].index == grid.axes[1].index {
        return Err(Error::InvalidProblem("landscape axes must be distinct species".into()));
    }
    if let LandscapeStop::Absolute(s) = grid.stop {
        s.validate()?;
    }
    let rec = Reconstruction::new(m, grid)?;
    let axis1 = grid.axes[0].values();
    let axis2 = grid.axes[1].values();
    let pinned: Vec<f64> = grid.pinned.values().copied().collect();
    let phi = |c: &[f64]| objective_integrand(&grid.criterion, m, c, &grid.criterion_options);

    let nodes: Vec<(usize, usize)> = (0..axis1.len()).flat_map(|i| (0..axis2.len()).map(move |j| (i, j))).collect();
    let evaluated: Vec<(f64, NodeStatus)> = nodes
        .par_iter()
        .map(|&(i, j)| {
            let mut known = vec![axis1[i], axis2[j]];
            known.extend(&pinned);
            let Some(c0) = rec.point(&known) else {
                return (f64::NAN, NodeStatus::Infeasible);
            };
            let stop = match grid.stop {
                LandscapeStop::Absolute(s) => s,
                LandscapeStop::RelativeVelocity { fraction } => {
                    let norm = m.rhs(&c0).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        return (0.0, NodeStatus::Ok);
                    }
                    StopCondition::VelocityNorm { epsilon: fraction * norm }
                }
            };
            match integrate(m, &c0, stop, Some(&phi), &grid.integrator) {
                Ok(tr) if tr.quadrature.is_finite() => (tr.quadrature, NodeStatus::Ok),
                Ok(_) => (f64::NAN, NodeStatus::Failed("non-finite objective".into())),
                Err(e) => (f64::NAN, NodeStatus::Failed(e.to_string())),
            }
        })
        .collect();

    let mut values = vec![vec![f64::NAN; axis2.len()]; axis1.len()];
    let mut status = vec![vec![NodeStatus::Ok; axis2.len()]; axis1.len()];
    for (&(i, j), (v, s)) in nodes.iter().zip(evaluated) {
        values[i][j] = v;
        status[i][j] = s;
    }
    let argmin = values
        .iter()
        .map(|col| {
            col.iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(j, &v)| (axis2[j], v))
        })
        .collect();
    Ok(LandscapeResult { axis1, axis2, values, status, argmin })
}

/// Fraction of arc length dropped from the start of the reference trajectory.
pub const TRANSIENT_FRACTION: f64 = 0.2;

/// Integrate from `far_point` towards equilibrium and keep the part after
/// the first `discard` fraction of arc length.
pub fn reference_sim_trajectory(m: &Mechanism, far_point: &[f64], discard: f64, opts: &IntegratorOptions) -> Result<Trajectory> {
    if !(0.0..1.0).contains(&discard) {
        return Err(Error::InvalidProblem(format!("discard fraction {discard} outside [0, 1)")));
    }
    let f0 = m.rhs_checked(far_point)?;
    let norm = f0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidProblem("far point is a stationary point".into()));
    }
    let full = integrate(m, far_point, StopCondition::VelocityNorm { epsilon: 1e-10 * norm }, None, opts)?;
    let arc = full.arc_length(8);
    let total = *arc.last().expect("nonempty");
    let k = arc.iter().position(|&s| s >= discard * total).unwrap_or(0);
    Ok(full.tail_from(k))
}

/// Dense polyline of a trajectory with `refine` samples per step.
pub fn dense_points(tr: &Trajectory, refine: usize) -> Vec<Vec<f64>> {
    let refine = refine.max(1);
    let mut out = vec![tr.states[0].clone()];
    for k in 1..tr.len() {
        let (t0, t1) = (tr.times[k - 1], tr.times[k]);
        for s in 1..refine {
            out.push(tr.state_at(t0 + (t1 - t0) * s as f64 / refine as f64));
        }
        out.push(tr.states[k].clone());
    }
    out
}

/// Euclidean distance from `p` to a polyline.
pub fn distance_to_curve(p: &[f64], curve: &[Vec<f64>]) -> f64 {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    if curve.len() == 1 {
        return dist2(p, &curve[0]).sqrt();
    }
    let mut best = f64::INFINITY;
    for w in curve.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (mut len2, mut dot) = (0.0, 0.0);
        for ((pi, ai), bi) in p.iter().zip(a).zip(b) {
            let d = bi - ai;
            len2 += d * d;
            dot += (pi - ai) * d;
        }
        let s = if len2 > 0.0 { (dot / len2).clamp(0.0, 1.0) } else { 0.0 };
        let d2: f64 = p.iter().zip(a).zip(b).map(|((pi, ai), bi)| (pi - ai - s * (bi - ai)).powi(2)).sum();
        best = best.min(d2);
    }
    best.sqrt()
}

/// Largest distance between a trajectory and the reference curve, taken
/// over the part of the trajectory up to its closest approach to the
/// reference end point (beyond it the reference has nothing to compare).
pub fn relaxation_defect(tr: &Trajectory, reference: &[Vec<f64>]) -> f64 {
    let Some(end) = reference.last() else {
        return f64::NAN;
    };
    let pts = dense_points(tr, 4);
    let dist2 = |p: &[f64]| p.iter().zip(end).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let stop = (0..pts.len()).min_by(|&a, &b| dist2(&pts[a]).total_cmp(&dist2(&pts[b]))).unwrap_or(0);
    pts[..=stop].iter().map(|p| distance_to_curve(p, reference)).fold(0.0, f64::max)
}

/// Value of component `target` where component `index` of the trajectory
/// first reaches `value`, from the dense output.
pub fn value_along(tr: &Trajectory, index: usize, value: f64, target: usize) -> Option<f64> {
    for k in 1..tr.len() {
        let (a, b) = (tr.states[k - 1][index] - value, tr.states[k][index] - value);
        if a == 0.0 {
            return Some(tr.states[k - 1][target]);
        }
        if a * b <= 0.0 {
            let (mut lo, mut hi) = (tr.times[k - 1], tr.times[k]);
            let sign = a.signum();
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if sign * (tr.state_at(mid)[index] - value) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(tr.state_at(0.5 * (lo + hi))[target]);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_values() {
        let a = Axis::log(0, 1e-6, 1e-2, 5);
        let v = a.values();
        assert!((v[2] - 1e-4).abs() < 1e-18);
        assert_eq!(Axis::linear(0, 0.0, 1.0, 3).values(), vec![0.0, 0.5, 1.0]);
        assert!(Axis::log(0, 0.0, 1.0, 3).validate().is_err());
        assert!(Axis::linear(0, 0.0, 1.0, 1).validate().is_err());
    }

    #[test]
    fn ozone_reconstruction_marks_negative_nodes() {
        let m = Mechanism::ozone(1000.0).unwrap();
        // c_O = 1 - 2 c_O2 - 3 c_O3
        let axes = [Axis::linear(1, 0.05, 0.45, 5), Axis::linear(2, 0.01, 0.31, 4)];
        let mut grid = LandscapeGrid::new(axes, CriterionKind::B, LandscapeStop::Absolute(StopCondition::FixedHorizon { t_final: 1e-9 }));
        grid.integrator = grid.integrator.with_tolerances(1e-6, 1e-10);
        let r = scan_landscape(&m, &grid).unwrap();
        let expected = r
            .axis1
            .iter()
            .flat_map(|&x| r.axis2.iter().map(move |&y| 1.0 - 2.0 * x - 3.0 * y))
            .filter(|&o| o < 0.0)
            .count();
        assert_eq!(r.infeasible_count(), expected);
        assert!(expected > 0);
    }

    #[test]
    fn underdetermined_species_are_rejected() {
        let m = Mechanism::h2_six_species().unwrap();
        let axes = [Axis::linear(0, 0.1, 0.2, 2), Axis::linear(2, 0.1, 0.2, 2)];
        let grid = LandscapeGrid::new(axes, CriterionKind::A, LandscapeStop::RelativeVelocity { fraction: 1e-4 });
        assert!(scan_landscape(&m, &grid).is_err());
    }

    #[test]
    fn davis_skodje_tail_follows_sim() {
        let m = Mechanism::davis_skodje(10.0).unwrap();
        let opts = IntegratorOptions::default().with_tolerances(1e-10, 1e-12);
        let tail = reference_sim_trajectory(&m, &[3.0, 0.745], TRANSIENT_FRACTION, &opts).unwrap();
        for c in &tail.states {
            assert!((c[1] - c[0] / (1.0 + c[0])).abs() < 1e-3, "{c:?}");
        }
        // a tail of the tail lies on the tail
        let again = reference_sim_trajectory(&m, &tail.states[0], TRANSIENT_FRACTION, &opts).unwrap();
        let curve = dense_points(&tail, 4);
        for c in &again.states {
            assert!(distance_to_curve(c, &curve) < 1e-6);
        }
    }

    #[test]
    fn polyline_distance() {
        let curve = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        assert!((distance_to_curve(&[0.5, 0.3], &curve) - 0.3).abs() < 1e-15);
        assert!((distance_to_curve(&[2.0, 2.0], &curve) - 2f64.sqrt()).abs() < 1e-15);
    }
}
