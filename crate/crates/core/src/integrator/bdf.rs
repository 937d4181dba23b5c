//! Variable-order BDF in Nordsieck-like difference form (orders 1 to 5).

use nalgebra::{DMatrix, DVector, LU};

use super::{rms_norm, rms_norm_state, select_initial_step, Augmented, DenseSegment, IntegratorOptions, StepGrid, StepRecord, Stepper};
use crate::error::{Error, Result};

const MAX_ORDER: usize = 5;
const NEWTON_MAXITER: usize = 4;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const KAPPA: [f64; 6] = [0.0, -0.1850, -1.0 / 9.0, -0.0823, -0.0415, 0.0];

struct Coefficients {
    gamma: [f64; 6],
    alpha: [f64; 6],
    error_const: [f64; 6],
}

fn coefficients() -> Coefficients {
    let mut gamma = [0.0; 6];
    for k in 1..6 {
        gamma[k] = gamma[k - 1] + 1.0 / k as f64;
    }
    let mut alpha = [0.0; 6];
    let mut error_const = [0.0; 6];
    for k in 0..6 {
        alpha[k] = (1.0 - KAPPA[k]) * gamma[k];
        error_const[k] = KAPPA[k] * gamma[k] + 1.0 / (k + 1) as f64;
    }
    Coefficients { gamma, alpha, error_const }
}

fn compute_r(order: usize, factor: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(order + 1, order + 1);
    for j in 0..=order {
        m[(0, j)] = 1.0;
    }
    for i in 1..=order {
        for j in 1..=order {
            m[(i, j)] = (i as f64 - 1.0 - factor * j as f64) / i as f64;
        }
    }
    for i in 1..=order {
        for j in 0..=order {
            m[(i, j)] *= m[(i - 1, j)];
        }
    }
    m
}

/// Rescale the first `order + 1` difference columns for a step change by `factor`.
fn change_d(d: &mut DMatrix<f64>, order: usize, factor: f64) {
    let r = compute_r(order, factor);
    let u = compute_r(order, 1.0);
    let ru = r * u;
    let cols = d.columns(0, order + 1) * ru;
    d.columns_mut(0, order + 1).copy_from(&cols);
}

pub(crate) struct Bdf {
    t: f64,
    y: DVector<f64>,
    d: DMatrix<f64>,
    order: usize,
    h_abs: f64,
    n_equal_steps: usize,
    jac: DMatrix<f64>,
    lu: Option<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    rtol: f64,
    atol: f64,
    max_step: f64,
    newton_tol: f64,
    co: Coefficients,
    last: StepRecord,
    last_h: f64,
    last_d: DMatrix<f64>,
}

struct NewtonOutcome {
    converged: bool,
    iterations: usize,
    y: DVector<f64>,
    d: DVector<f64>,
}

impl Bdf {
    pub(crate) fn new(
        sys: &Augmented,
        y0: DVector<f64>,
        t_bound: f64,
        opts: &IntegratorOptions,
        grid: Option<&StepGrid>,
    ) -> Result<Self> {
        let m = y0.len();
        let mut f0 = DVector::zeros(m);
        sys.rhs(&y0, &mut f0)?;
        let h_abs = match (grid.and_then(|g| g.steps.first()), opts.initial_step) {
            (Some(first), _) => first.t_end,
            (None, Some(h)) => h.min(opts.max_step),
            (None, None) => select_initial_step(sys, &y0, &f0, t_bound, opts.max_step, 1, opts.rtol, opts.atol)?,
        };
        let mut d = DMatrix::zeros(m, MAX_ORDER + 3);
        d.set_column(0, &y0);
        d.set_column(1, &(&f0 * h_abs));
        let jac = sys.jacobian(&y0);
        let eps = f64::EPSILON;
        Ok(Self {
            t: 0.0,
            y: y0,
            d,
            order: 1,
            h_abs,
            n_equal_steps: 0,
            jac,
            lu: None,
            rtol: opts.rtol,
            atol: opts.atol,
            max_step: opts.max_step,
            newton_tol: (10.0 * eps / opts.rtol).max(0.03f64.min(opts.rtol.sqrt())),
            co: coefficients(),
            last: StepRecord { t_end: 0.0, order: 1 },
            last_h: h_abs,
            last_d: DMatrix::zeros(m, 1),
        })
    }

    fn predict(&self) -> (DVector<f64>, DVector<f64>) {
        let order = self.order;
        let y_predict = self.d.columns(0, order + 1).column_sum();
        let mut psi = DVector::zeros(self.y.len());
        for k in 1..=order {
            psi.axpy(self.co.gamma[k], &self.d.column(k), 1.0);
        }
        psi /= self.co.alpha[order];
        (y_predict, psi)
    }

    fn newton(
        &self,
        sys: &Augmented,
        y_predict: &DVector<f64>,
        c: f64,
        psi: &DVector<f64>,
        scale: &DVector<f64>,
        lu: &LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        max_iter: usize,
    ) -> Result<NewtonOutcome> {
        let m = y_predict.len();
        let mut d = DVector::zeros(m);
        let mut y = y_predict.clone();
        let mut f = DVector::zeros(m);
        let mut dy_norm_old: Option<f64> = None;
        let mut converged = false;
        let mut k = 0;
        while k < max_iter {
            if sys.rhs(&y, &mut f).is_err() {
                break;
            }
            let rhs = &f * c - psi - &d;
            let Some(dy) = lu.solve(&rhs) else { break };
            let dy_norm = rms_norm_state(&dy, scale, m, sys.n);
            let rate = dy_norm_old.map(|old| dy_norm / old);
            if let Some(rate) = rate {
                if rate >= 1.0 || rate.powi((max_iter - k) as i32) / (1.0 - rate) * dy_norm > self.newton_tol {
                    break;
                }
            }
            y += &dy;
            d += &dy;
            if dy_norm == 0.0 || rate.is_some_and(|r| r / (1.0 - r) * dy_norm < self.newton_tol) {
                converged = true;
                break;
            }
            dy_norm_old = Some(dy_norm);
            k += 1;
        }
        if converged && m > sys.n {
            if sys.rhs(&y, &mut f).is_ok() {
                let q = sys.n;
                let dq = f[q] * c - psi[q] - d[q];
                y[q] += dq;
                d[q] += dq;
            } else {
                converged = false;
            }
        }
        Ok(NewtonOutcome { converged, iterations: k + 1, y, d })
    }

    fn factor(&self, c: f64) -> Result<LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        let m = self.y.len();
        let a = DMatrix::identity(m, m) - &self.jac * c;
        let lu = a.lu();
        if lu.is_invertible() {
            Ok(lu)
        } else {
            Err(Error::NewtonFailure(self.t))
        }
    }

    /// Difference-table update after a converged step.
    fn accept(&mut self, t_new: f64, y_new: DVector<f64>, d: DVector<f64>) {
        let order = self.order;
        self.n_equal_steps += 1;
        self.t = t_new;
        self.y = y_new;
        self.d.set_column(order + 2, &(&d - self.d.column(order + 1)));
        self.d.set_column(order + 1, &d);
        for i in (0..=order).rev() {
            let next = self.d.column(i + 1).into_owned();
            let mut col = self.d.column_mut(i);
            col += next;
        }
        self.last_d = self.d.columns(0, order + 1).into_owned();
    }
}

impl Stepper for Bdf {
    fn t(&self) -> f64 {
        self.t
    }

    fn y(&self) -> &DVector<f64> {
        &self.y
    }

    fn step(&mut self, sys: &Augmented, t_bound: f64) -> Result<StepRecord> {
        let t = self.t;
        let min_step = 10.0 * (next_up(t) - t);
        if self.h_abs > self.max_step {
            let factor = self.max_step / self.h_abs;
            change_d(&mut self.d, self.order, factor);
            self.h_abs = self.max_step;
            self.n_equal_steps = 0;
            self.lu = None;
        } else if self.h_abs < min_step {
            let factor = min_step / self.h_abs;
            change_d(&mut self.d, self.order, factor);
            self.h_abs = min_step;
            self.n_equal_steps = 0;
            self.lu = None;
        }

        let mut current_jac = false;
        let (t_new, y_new, d, n_iter, error_norm, safety) = loop {
            if self.h_abs < min_step {
                return Err(Error::StepTooSmall(t));
            }
            let mut h = self.h_abs;
            let mut t_new = t + h;
            if t_new > t_bound {
                t_new = t_bound;
                change_d(&mut self.d, self.order, (t_new - t) / self.h_abs);
                self.n_equal_steps = 0;
                self.lu = None;
            }
            h = t_new - t;
            self.h_abs = h;
            let order = self.order;
            let (y_predict, psi) = self.predict();
            let scale = y_predict.map(|v| self.atol + self.rtol * v.abs());
            let c = h / self.co.alpha[order];

            let res = loop {
                if self.lu.is_none() {
                    self.lu = Some(self.factor(c)?);
                }
                let res = self.newton(sys, &y_predict, c, &psi, &scale, self.lu.as_ref().unwrap(), NEWTON_MAXITER)?;
                if res.converged || current_jac {
                    break res;
                }
                self.jac = sys.jacobian(&y_predict);
                self.lu = None;
                current_jac = true;
            };
            if !res.converged {
                let factor = 0.5;
                self.h_abs *= factor;
                change_d(&mut self.d, order, factor);
                self.n_equal_steps = 0;
                self.lu = None;
                continue;
            }
            let safety = 0.9 * (2 * NEWTON_MAXITER + 1) as f64 / (2 * NEWTON_MAXITER + res.iterations) as f64;
            let scale = res.y.map(|v| self.atol + self.rtol * v.abs());
            let error = &res.d * self.co.error_const[order];
            let error_norm = rms_norm(&error, &scale);
            if error_norm > 1.0 {
                let factor = MIN_FACTOR.max(safety * error_norm.powf(-1.0 / (order as f64 + 1.0)));
                self.h_abs *= factor;
                change_d(&mut self.d, order, factor);
                self.n_equal_steps = 0;
                self.lu = None;
                continue;
            }
            break (t_new, res.y, res.d, res.iterations, error_norm, safety);
        };
        let _ = n_iter;
        let order = self.order;
        self.last_h = t_new - t;
        self.accept(t_new, y_new, d);
        self.last = StepRecord { t_end: t_new, order };

        if self.n_equal_steps < order + 1 {
            return Ok(self.last);
        }
        let scale = self.y.map(|v| self.atol + self.rtol * v.abs());
        let error_m_norm = if order > 1 {
            rms_norm(&(self.d.column(order) * self.co.error_const[order - 1]), &scale)
        } else {
            f64::INFINITY
        };
        let error_p_norm = if order < MAX_ORDER {
            rms_norm(&(self.d.column(order + 2) * self.co.error_const[order + 1]), &scale)
        } else {
            f64::INFINITY
        };
        let norms = [error_m_norm, error_norm, error_p_norm];
        let mut best = 0;
        let mut best_factor = f64::NEG_INFINITY;
        for (i, en) in norms.iter().enumerate() {
            let ord = order as f64 - 1.0 + i as f64;
            let f = if *en == 0.0 { f64::INFINITY } else { en.powf(-1.0 / (ord + 1.0)) };
            if f > best_factor {
                best_factor = f;
                best = i;
            }
        }
        let new_order = order + best - 1;
        self.order = new_order;
        let factor = MAX_FACTOR.min(safety * best_factor);
        self.h_abs *= factor;
        change_d(&mut self.d, new_order, factor);
        self.n_equal_steps = 0;
        self.lu = None;
        Ok(self.last)
    }

    fn replay(&mut self, sys: &Augmented, rec: &StepRecord) -> Result<()> {
        let t = self.t;
        let h = rec.t_end - t;
        if !(h > 0.0) {
            return Err(Error::InvalidProblem(format!("replayed step ends at {} before {t}", rec.t_end)));
        }
        let order = rec.order.clamp(1, MAX_ORDER);
        if order != self.order {
            self.order = order;
            self.lu = None;
        }
        if h != self.h_abs {
            change_d(&mut self.d, order, h / self.h_abs);
            self.h_abs = h;
            self.lu = None;
        }
        let (y_predict, psi) = self.predict();
        let scale = y_predict.map(|v| self.atol + self.rtol * v.abs());
        let c = h / self.co.alpha[order];
        if self.lu.is_none() {
            self.lu = Some(self.factor(c)?);
        }
        let mut res = self.newton(sys, &y_predict, c, &psi, &scale, self.lu.as_ref().unwrap(), NEWTON_MAXITER)?;
        if !res.converged {
            self.jac = sys.jacobian(&y_predict);
            self.lu = Some(self.factor(c)?);
            res = self.newton(sys, &y_predict, c, &psi, &scale, self.lu.as_ref().unwrap(), 4 * NEWTON_MAXITER)?;
        }
        if !res.converged {
            return Err(Error::NewtonFailure(t));
        }
        self.last_h = h;
        self.accept(rec.t_end, res.y, res.d);
        self.last = StepRecord { t_end: rec.t_end, order };
        Ok(())
    }

    fn dense(&self) -> DenseSegment {
        // snapshot taken before the order and step size change
        self.dense_segment()
    }
}

impl Bdf {
    fn dense_segment(&self) -> DenseSegment {
        DenseSegment::Bdf {
            t: self.t,
            h: self.last_h,
            order: self.last.order,
            d: self.last_d.clone(),
        }
    }
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_matrix_for_unit_factor_is_involution() {
        for order in 1..=5 {
            let u = compute_r(order, 1.0);
            let uu = &u * &u;
            assert!((uu - DMatrix::identity(order + 1, order + 1)).amax() < 1e-12);
        }
    }

    #[test]
    fn change_d_order_one_scales_first_difference() {
        let mut d = DMatrix::from_row_slice(1, 8, &[1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        change_d(&mut d, 1, 0.25);
        assert_eq!(d[(0, 0)], 1.0);
        assert!((d[(0, 1)] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn error_constants_match_known_values() {
        let co = coefficients();
        assert!((co.gamma[3] - 11.0 / 6.0).abs() < 1e-15);
        assert!((co.error_const[1] - (-0.1850 + 0.5)).abs() < 1e-15);
        assert!((co.alpha[5] - 137.0 / 60.0).abs() < 1e-14);
    }
}
