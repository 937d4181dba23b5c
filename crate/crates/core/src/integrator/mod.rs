//! Stiff initial-value solver with a quadrature-augmented state.
//!
//! The state `c` is extended by one component `q` with `q' = Phi(c)` so the
//! objective integral is carried with the same error control as the
//! dynamics. Two implicit methods are available: variable-order BDF (orders
//! 1-5, the default) and the three-stage Radau IIA collocation method.
//!
//! Every run records the accepted step sequence as a [`StepGrid`].
//! Replaying a grid integrates a perturbed initial value on exactly the same
//! steps (internal numerical differentiation), which keeps finite-difference
//! derivatives of the shooting map smooth.

mod bdf;
mod radau;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;

pub(crate) use bdf::Bdf;
pub(crate) use radau::Radau;

/// Scalar integrand `Phi(c)` accumulated along the trajectory.
pub type Integrand<'a> = dyn Fn(&[f64]) -> Result<f64> + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ImplicitBdf,
    ImplicitRk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    pub method: Method,
    /// Horizon after which event-based stops give up.
    pub t_max: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_step: f64::INFINITY,
            initial_step: None,
            max_steps: 100_000,
            method: Method::ImplicitBdf,
            t_max: 1e15,
        }
    }
}

impl IntegratorOptions {
    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidProblem("tolerances must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidProblem("max_steps must be positive".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidProblem("max_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StopCondition {
    FixedHorizon { t_final: f64 },
    /// Stop where `||f(c)||_2` first drops to `epsilon`.
    VelocityNorm { epsilon: f64 },
    /// Stop where component `index` first reaches `value`.
    ProgressReached { index: usize, value: f64 },
}

impl StopCondition {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StopCondition::FixedHorizon { t_final } if !(t_final > 0.0) => {
                Err(Error::InvalidProblem(format!("t_final must be positive, got {t_final}")))
            }
            StopCondition::VelocityNorm { epsilon } if !(epsilon > 0.0) => {
                Err(Error::InvalidProblem(format!("epsilon must be positive, got {epsilon}")))
            }
            _ => Ok(()),
        }
    }
}

/// One accepted step: its end time and the method order used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t_end: f64,
    pub order: usize,
}

/// Accepted step sequence of a nominal run, replayable on perturbed data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepGrid {
    pub method: Option<Method>,
    pub steps: Vec<StepRecord>,
}

impl StepGrid {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone)]
pub(crate) enum DenseSegment {
    Bdf {
        t: f64,
        h: f64,
        order: usize,
        d: DMatrix<f64>,
    },
    Radau {
        t_old: f64,
        h: f64,
        y_old: DVector<f64>,
        q: DMatrix<f64>,
    },
}

impl DenseSegment {
    pub(crate) fn eval(&self, at: f64) -> DVector<f64> {
        match self {
            DenseSegment::Bdf { t, h, order, d } => {
                let mut y = d.column(0).into_owned();
                let mut p = 1.0;
                for j in 0..*order {
                    p *= (at - (t - h * j as f64)) / (h * (j + 1) as f64);
                    y.axpy(p, &d.column(j + 1), 1.0);
                }
                y
            }
            DenseSegment::Radau { t_old, h, y_old, q } => {
                let x = (at - t_old) / h;
                let mut y = y_old.clone();
                let mut p = 1.0;
                for j in 0..3 {
                    p *= x;
                    y.axpy(p, &q.column(j), 1.0);
                }
                y
            }
        }
    }
}

/// Solution of one integration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Integral of the integrand over the whole trajectory (0 without one).
    pub quadrature: f64,
    /// Running integral at every output time.
    pub quadrature_path: Vec<f64>,
    /// Stop condition that ended the run.
    pub termination: StopCondition,
    #[serde(skip)]
    pub grid: StepGrid,
    #[serde(skip)]
    pub(crate) segments: Vec<DenseSegment>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least the initial point")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial point")
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// State at time `t` from the dense output (clamped to the span).
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let n = self.dim();
        if t <= self.times[0] || self.segments.is_empty() {
            return self.states[0].clone();
        }
        if t >= self.final_time() {
            return self.final_state().to_vec();
        }
        // segment k covers [times[k], times[k + 1]]
        let k = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.states[i].clone(),
            Err(i) => i - 1,
        };
        let y = self.segments[k.min(self.segments.len() - 1)].eval(t);
        y.iter().take(n).copied().collect()
    }

    /// The part of the trajectory from output index `k` on (times unchanged).
    pub fn tail_from(&self, k: usize) -> Trajectory {
        let k = k.min(self.len() - 1);
        let q0 = self.quadrature_path.get(k).copied().unwrap_or(0.0);
        Trajectory {
            times: self.times[k..].to_vec(),
            states: self.states[k..].to_vec(),
            quadrature: self.quadrature - q0,
            quadrature_path: self.quadrature_path.iter().skip(k).map(|q| q - q0).collect(),
            termination: self.termination,
            grid: StepGrid { method: self.grid.method, steps: self.grid.steps.iter().skip(k).copied().collect() },
            segments: self.segments.iter().skip(k).cloned().collect(),
        }
    }

    /// Cumulative Euclidean arc length at each output time, using the dense
    /// output with `refine` sub-samples per step.
    pub fn arc_length(&self, refine: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.push(0.0);
        let mut total = 0.0;
        for k in 1..self.len() {
            let (t0, t1) = (self.times[k - 1], self.times[k]);
            let mut prev = self.states[k - 1].clone();
            for s in 1..=refine.max(1) {
                let t = t0 + (t1 - t0) * s as f64 / refine.max(1) as f64;
                let cur = if s == refine.max(1) { self.states[k].clone() } else { self.state_at(t) };
                total += prev.iter().zip(&cur).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                prev = cur;
            }
            out.push(total);
        }
        out
    }
}

/// Field plus optional quadrature, presented to the steppers as one system.
pub(crate) struct Augmented<'a> {
    pub field: &'a dyn VectorField,
    pub integrand: Option<&'a Integrand<'a>>,
    pub n: usize,
}

impl Augmented<'_> {
    pub fn dim(&self) -> usize {
        self.n + usize::from(self.integrand.is_some())
    }

    pub fn rhs(&self, y: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
        let n = self.n;
        self.field.eval(&y.as_slice()[..n], &mut out.as_mut_slice()[..n]);
        if let Some(phi) = self.integrand {
            out[n] = phi(&y.as_slice()[..n])?;
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("right-hand side".into()))
        }
    }

    /// Jacobian of the augmented system with a zero quadrature row. Newton
    /// convergence is judged on the state block; the quadrature is then
    /// updated explicitly from the converged state.
    pub fn jacobian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let jf = self.field.jacobian(&y.as_slice()[..n]);
        if self.integrand.is_none() {
            return jf;
        }
        let mut j = DMatrix::zeros(n + 1, n + 1);
        j.view_mut((0, 0), (n, n)).copy_from(&jf);
        j
    }
}

pub(crate) trait Stepper {
    fn t(&self) -> f64;
    fn y(&self) -> &DVector<f64>;
    /// Take one adaptive step not exceeding `t_bound`.
    fn step(&mut self, sys: &Augmented, t_bound: f64) -> Result<StepRecord>;
    /// Take exactly the recorded step.
    fn replay(&mut self, sys: &Augmented, rec: &StepRecord) -> Result<()>;
    fn dense(&self) -> DenseSegment;
}

/// RMS norm over the first `n` components of each block of length `m`.
pub(crate) fn rms_norm_state(v: &DVector<f64>, scale: &DVector<f64>, m: usize, n: usize) -> f64 {
    let idx = (0..v.len()).filter(|i| i % m < n);
    let count = idx.clone().count().max(1) as f64;
    (idx.map(|i| (v[i] / scale[i]).powi(2)).sum::<f64>() / count).sqrt()
}

pub(crate) fn rms_norm(v: &DVector<f64>, scale: &DVector<f64>) -> f64 {
    let n = v.len().max(1) as f64;
    (v.iter().zip(scale.iter()).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n).sqrt()
}

pub(crate) fn select_initial_step(
    sys: &Augmented,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    interval: f64,
    max_step: f64,
    order: usize,
    rtol: f64,
    atol: f64,
) -> Result<f64> {
    let scale = y0.map(|v| atol + v.abs() * rtol);
    let d0 = rms_norm(y0, &scale);
    let d1 = rms_norm(f0, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(interval);
    let y1 = y0 + f0 * h0;
    let mut f1 = DVector::zeros(y0.len());
    sys.rhs(&y1, &mut f1)?;
    let d2 = rms_norm(&(&f1 - f0), &scale) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / (order as f64 + 1.0))
    };
    Ok((100.0 * h0).min(h1).min(interval).min(max_step))
}

enum Event<'a> {
    None,
    Velocity { field: &'a dyn VectorField, epsilon: f64 },
    Progress { index: usize, value: f64, sign: f64 },
}

impl Event<'_> {
    /// Positive before the event, nonpositive once it has happened.
    fn value(&self, y: &[f64], work: &mut [f64]) -> f64 {
        match self {
            Event::None => 1.0,
            Event::Velocity { field, epsilon } => {
                let n = work.len();
                field.eval(&y[..n], work);
                work.iter().map(|v| v * v).sum::<f64>().sqrt() - epsilon
            }
            Event::Progress { index, value, sign } => sign * (y[*index] - value),
        }
    }
}

/// Integrate `dc/dt = f(c)` from `c0` until `stop`, accumulating `integrand`.
pub fn integrate(
    field: &dyn VectorField,
    c0: &[f64],
    stop: StopCondition,
    integrand: Option<&Integrand>,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    run(field, c0, stop, integrand, opts, None)
}

/// Integrate on the step sequence of a previous run. Steps past the end of
/// the grid (needed when a perturbed event fires later) repeat the last
/// step size.
pub fn integrate_on_grid(
    field: &dyn VectorField,
    c0: &[f64],
    stop: StopCondition,
    integrand: Option<&Integrand>,
    opts: &IntegratorOptions,
    grid: &StepGrid,
) -> Result<Trajectory> {
    run(field, c0, stop, integrand, opts, Some(grid))
}

fn run(
    field: &dyn VectorField,
    c0: &[f64],
    stop: StopCondition,
    integrand: Option<&Integrand>,
    opts: &IntegratorOptions,
    grid: Option<&StepGrid>,
) -> Result<Trajectory> {
    opts.validate()?;
    stop.validate()?;
    let n = field.dim();
    if c0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: c0.len() });
    }
    if c0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial value".into()));
    }
    if let StopCondition::ProgressReached { index, .. } = stop {
        if index >= n {
            return Err(Error::DimensionMismatch { expected: n, got: index + 1 });
        }
    }
    let sys = Augmented { field, integrand, n };
    let m = sys.dim();
    let mut y0 = DVector::zeros(m);
    y0.as_mut_slice()[..n].copy_from_slice(c0);

    let t_bound = match stop {
        StopCondition::FixedHorizon { t_final } => t_final,
        _ => opts.t_max,
    };
    let event = match stop {
        StopCondition::VelocityNorm { epsilon } => Event::Velocity { field, epsilon },
        StopCondition::ProgressReached { index, value } => {
            let d = c0[index] - value;
            Event::Progress { index, value, sign: if d < 0.0 { -1.0 } else { 1.0 } }
        }
        StopCondition::FixedHorizon { .. } => Event::None,
    };
    let mut work = vec![0.0; n];

    let mut times = vec![0.0];
    let mut states = vec![c0.to_vec()];
    let mut qpath = vec![0.0];
    let mut segments = Vec::new();
    let mut steps = Vec::new();

    let finish = |times: Vec<f64>, states: Vec<Vec<f64>>, qpath: Vec<f64>, segments, steps, method| {
        Trajectory {
            quadrature: *qpath.last().unwrap(),
            times,
            states,
            quadrature_path: qpath,
            termination: stop,
            grid: StepGrid { method: Some(method), steps },
            segments,
        }
    };

    let method = grid.and_then(|g| g.method).unwrap_or(opts.method);
    let mut g_prev = event.value(y0.as_slice(), &mut work);
    if g_prev <= 0.0 {
        return Ok(finish(times, states, qpath, segments, steps, method));
    }

    let mut stepper: Box<dyn Stepper> = match method {
        Method::ImplicitBdf => Box::new(Bdf::new(&sys, y0, t_bound, opts, grid)?),
        Method::ImplicitRk => Box::new(Radau::new(&sys, y0, t_bound, opts, grid)?),
    };

    let mut replay_iter = grid.map(|g| g.steps.iter());
    let mut last_h = 0.0;
    let mut last_order = 1;
    loop {
        if steps.len() >= opts.max_steps {
            return Err(Error::StepLimit(opts.max_steps));
        }
        let t_old = stepper.t();
        let rec = match replay_iter.as_mut() {
            None => stepper.step(&sys, t_bound)?,
            Some(it) => {
                let rec = match it.next() {
                    Some(r) => *r,
                    None => {
                        if matches!(stop, StopCondition::FixedHorizon { .. }) {
                            break;
                        }
                        StepRecord { t_end: t_old + last_h, order: last_order }
                    }
                };
                stepper.replay(&sys, &rec)?;
                rec
            }
        };
        last_h = rec.t_end - t_old;
        last_order = rec.order;
        steps.push(rec);
        let seg = stepper.dense();
        let y = stepper.y().clone();
        let t = stepper.t();
        let g = event.value(y.as_slice(), &mut work);
        if g <= 0.0 {
            // bisection on the dense output
            let (mut lo, mut hi) = (t_old, t);
            let (mut g_lo, mut g_hi) = (g_prev, g);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let gm = event.value(seg.eval(mid).as_slice(), &mut work);
                if gm > 0.0 {
                    lo = mid;
                    g_lo = gm;
                } else {
                    hi = mid;
                    g_hi = gm;
                }
            }
            let t_event = if g_lo.abs() < g_hi.abs() { lo } else { hi };
            let y_event = if t_event == t { y } else { seg.eval(t_event) };
            if t_event > *times.last().unwrap() {
                times.push(t_event);
                states.push(y_event.as_slice()[..n].to_vec());
                qpath.push(if m > n { y_event[n] } else { 0.0 });
                segments.push(seg);
            }
            return Ok(finish(times, states, qpath, segments, steps, method));
        }
        g_prev = g;
        times.push(t);
        states.push(y.as_slice()[..n].to_vec());
        qpath.push(if m > n { y[n] } else { 0.0 });
        segments.push(seg);
        if t >= t_bound {
            if matches!(stop, StopCondition::FixedHorizon { .. }) {
                break;
            }
            return Err(Error::EventNotTriggered(t));
        }
    }
    Ok(finish(times, states, qpath, segments, steps, method))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::LinearField;
    use crate::mechanism::Mechanism;

    fn both_methods() -> [IntegratorOptions; 2] {
        [
            IntegratorOptions::default(),
            IntegratorOptions::default().with_method(Method::ImplicitRk),
        ]
    }

    #[test]
    fn scalar_decay_matches_exponential() {
        let field = LinearField::diagonal(&[-1.0]);
        for opts in both_methods() {
            let tr = integrate(&field, &[1.0], StopCondition::FixedHorizon { t_final: 1.0 }, None, &opts).unwrap();
            assert_eq!(tr.final_time(), 1.0);
            let err = (tr.final_state()[0] - (-1.0f64).exp()).abs();
            assert!(err <= 10.0 * opts.rtol, "{:?}: {err:e}", opts.method);
        }
    }

    #[test]
    fn davis_skodje_first_component_decays_exactly() {
        let m = Mechanism::davis_skodje(10.0).unwrap();
        for opts in both_methods() {
            let tr = integrate(&m, &[1.5, 0.1], StopCondition::FixedHorizon { t_final: 3.0 }, None, &opts).unwrap();
            for (t, c) in tr.times.iter().zip(&tr.states) {
                let exact = 1.5 * (-t).exp();
                assert!((c[0] - exact).abs() <= 1e-6 * exact + 1e-9, "t={t} {} vs {exact}", c[0]);
            }
        }
    }

    #[test]
    fn unit_quadrature_measures_time() {
        let m = Mechanism::davis_skodje(6.0).unwrap();
        let one = |_: &[f64]| -> Result<f64> { Ok(1.0) };
        for opts in both_methods() {
            let tr = integrate(&m, &[1.0, 1.0], StopCondition::FixedHorizon { t_final: 7.5 }, Some(&one), &opts).unwrap();
            assert!((tr.quadrature - 7.5).abs() <= 1e-10 * 7.5, "{}", tr.quadrature);
        }
    }

    #[test]
    fn velocity_event_is_localized() {
        let m = Mechanism::davis_skodje(6.0).unwrap();
        for opts in both_methods() {
            let eps = 1e-3;
            let tr = integrate(&m, &[1.0, 2.0], StopCondition::VelocityNorm { epsilon: eps }, None, &opts).unwrap();
            let f = m.rhs(tr.final_state());
            let norm = (f[0] * f[0] + f[1] * f[1]).sqrt();
            assert!((norm - eps).abs() <= 1e-6 * eps, "{norm}");
        }
    }

    #[test]
    fn progress_event_stops_on_value() {
        let m = Mechanism::davis_skodje(6.0).unwrap();
        let tr = integrate(
            &m,
            &[2.0, 0.1],
            StopCondition::ProgressReached { index: 0, value: 1.0 },
            None,
            &IntegratorOptions::default(),
        )
        .unwrap();
        assert!((tr.final_time() - 2.0f64.ln()).abs() < 1e-7);
        assert!((tr.final_state()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn immediate_event_returns_initial_point() {
        let m = Mechanism::davis_skodje(6.0).unwrap();
        let tr = integrate(&m, &[0.0, 0.0], StopCondition::VelocityNorm { epsilon: 1e-3 }, None, &IntegratorOptions::default()).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.quadrature, 0.0);
    }

    #[test]
    fn harmonic_oscillator_preserves_radius() {
        let field = LinearField::harmonic();
        for opts in both_methods() {
            let tr = integrate(
                &field,
                &[1.0, 0.0],
                StopCondition::FixedHorizon { t_final: 2.0 * std::f64::consts::PI },
                None,
                &opts,
            )
            .unwrap();
            for c in &tr.states {
                let r2 = c[0] * c[0] + c[1] * c[1];
                assert!((r2 - 1.0).abs() <= 100.0 * opts.rtol, "{:?}: {r2}", opts.method);
            }
        }
    }

    #[test]
    fn event_never_triggered_is_an_error() {
        let field = LinearField::harmonic();
        let opts = IntegratorOptions { t_max: 20.0, ..Default::default() };
        let err = integrate(&field, &[1.0, 0.0], StopCondition::VelocityNorm { epsilon: 0.5 }, None, &opts).unwrap_err();
        assert!(matches!(err, Error::EventNotTriggered(_)));
    }

    #[test]
    fn step_limit_is_reported() {
        let m = Mechanism::davis_skodje(6.0).unwrap();
        let opts = IntegratorOptions { max_steps: 3, ..Default::default() };
        let err = integrate(&m, &[1.0, 1.0], StopCondition::FixedHorizon { t_final: 10.0 }, None, &opts).unwrap_err();
        assert!(matches!(err, Error::StepLimit(3)));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let m = Mechanism::davis_skodje(6.0).unwrap();
        let opts = IntegratorOptions::default();
        assert!(integrate(&m, &[1.0], StopCondition::FixedHorizon { t_final: 1.0 }, None, &opts).is_err());
        assert!(integrate(&m, &[f64::NAN, 1.0], StopCondition::FixedHorizon { t_final: 1.0 }, None, &opts).is_err());
        assert!(integrate(&m, &[1.0, 1.0], StopCondition::FixedHorizon { t_final: -1.0 }, None, &opts).is_err());
        let bad = IntegratorOptions { rtol: 0.0, ..Default::default() };
        assert!(integrate(&m, &[1.0, 1.0], StopCondition::FixedHorizon { t_final: 1.0 }, None, &bad).is_err());
    }

    #[test]
    fn replay_reproduces_nominal_run() {
        let m = Mechanism::h2_six_species().unwrap();
        let c0 = [0.6, 0.3, 0.3, 0.1, 0.05, 0.05];
        let phi = |c: &[f64]| -> Result<f64> { Ok(c.iter().map(|x| x * x).sum()) };
        for opts in both_methods() {
            let stop = StopCondition::FixedHorizon { t_final: 2.0 };
            let nominal = integrate(&m, &c0, stop, Some(&phi), &opts).unwrap();
            let again = integrate_on_grid(&m, &c0, stop, Some(&phi), &opts, &nominal.grid).unwrap();
            assert_eq!(again.times, nominal.times);
            assert!((again.quadrature - nominal.quadrature).abs() <= 1e-7 * nominal.quadrature.abs());
        }
    }

    #[test]
    fn dense_output_interpolates_between_steps() {
        let field = LinearField::diagonal(&[-1.0]);
        for opts in both_methods() {
            let tr = integrate(&field, &[1.0], StopCondition::FixedHorizon { t_final: 4.0 }, None, &opts).unwrap();
            for t in [0.3, 1.1, 2.7, 3.9] {
                let v = tr.state_at(t)[0];
                assert!((v - (-t).exp()).abs() < 1e-6, "{t}: {v}");
            }
        }
    }
}
