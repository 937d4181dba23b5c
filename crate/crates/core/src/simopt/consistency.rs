use serde::Serialize;

use super::{solve, ProblemSpec, SolveResult};
use crate::error::{Error, Result};
use crate::integrator::{StopCondition, Trajectory};

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub t1: f64,
    pub first: SolveResult,
    /// Re-solve with the fixed species set to the first trajectory's values at `t1`.
    pub second: SolveResult,
    /// Max-norm difference of the two initial compositions.
    pub initial_defect: f64,
    /// Largest max-norm difference `|c2(t) - c1(t + t1)|` over the overlap.
    pub defect: f64,
}

/// Solve, then re-solve from the optimal trajectory at `t1` and compare
/// the second trajectory with the tail of the first.
pub fn consistency_test(spec: &ProblemSpec, t1: f64) -> Result<ConsistencyReport> {
    if !(t1 >= 0.0) {
        return Err(Error::InvalidProblem(format!("t1 must be nonnegative, got {t1}")));
    }
    let first = solve(spec, None, spec.initial_guess.as_deref())?;
    if t1 > first.trajectory.final_time() {
        return Err(Error::InvalidProblem(format!(
            "t1 = {t1} lies beyond the optimal trajectory (ends at {})",
            first.trajectory.final_time()
        )));
    }
    let at = first.trajectory.state_at(t1);
    let mut second_spec = spec.clone();
    for (&i, v) in second_spec.fixed.iter_mut() {
        *v = at[i];
    }
    let second = solve(&second_spec, Some(first.stop), Some(&at))?;
    let initial_defect = max_diff(&second.c0, &at);
    let overlap = (first.trajectory.final_time() - t1).min(second.trajectory.final_time());
    let defect = tail_defect(&first.trajectory, &second.trajectory, t1, overlap).max(initial_defect);
    Ok(ConsistencyReport { t1, first, second, initial_defect, defect })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn tail_defect(first: &Trajectory, second: &Trajectory, t1: f64, overlap: f64) -> f64 {
    second
        .times
        .iter()
        .zip(&second.states)
        .take_while(|(t, _)| **t <= overlap)
        .map(|(t, c)| max_diff(c, &first.state_at(t + t1)))
        .fold(0.0, f64::max)
}

/// First time at which component `index` has covered `fraction` of its way
/// from the initial value to `target`, located on the dense output.
pub fn time_at_progress(tr: &Trajectory, index: usize, fraction: f64, target: f64) -> Option<f64> {
    let start = tr.states[0][index];
    let level = start + fraction * (target - start);
    let sign = (target - start).signum();
    let g = |c: &[f64]| sign * (c[index] - level);
    let k = tr.states.iter().position(|c| g(c) >= 0.0)?;
    if k == 0 {
        return Some(tr.times[0]);
    }
    let (mut a, mut b) = (tr.times[k - 1], tr.times[k]);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if g(&tr.state_at(m)) >= 0.0 {
            b = m;
        } else {
            a = m;
        }
        if b - a <= 1e-14 * b.abs() {
            break;
        }
    }
    Some(b)
}

impl ConsistencyReport {
    pub fn stop(&self) -> StopCondition {
        self.first.stop
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::CriterionKind;
    use crate::mechanism::Mechanism;

    #[test]
    fn zero_offset_is_exactly_consistent() {
        let spec = ProblemSpec::new(Mechanism::davis_skodje(10.0).unwrap(), CriterionKind::B).fix(0, 1.0);
        let rep = consistency_test(&spec, 0.0).unwrap();
        assert!(rep.defect <= 1e-8, "{}", rep.defect);
    }

    #[test]
    fn progress_time_on_exponential() {
        let m = Mechanism::davis_skodje(10.0).unwrap();
        let tr = crate::integrator::integrate(
            &m,
            &[1.0, 0.5],
            StopCondition::FixedHorizon { t_final: 5.0 },
            None,
            &Default::default(),
        )
        .unwrap();
        let t = time_at_progress(&tr, 0, 0.5, 0.0).unwrap();
        assert!((t - std::f64::consts::LN_2).abs() < 1e-6, "{t}");
    }
}
