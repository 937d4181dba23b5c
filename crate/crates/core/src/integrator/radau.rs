//! Three-stage Radau IIA collocation (order 5) with an embedded error
//! estimate. The stage system is solved as one `3m x 3m` Newton problem.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::{rms_norm, rms_norm_state, select_initial_step, Augmented, DenseSegment, IntegratorOptions, StepGrid, StepRecord, Stepper};
use crate::error::{Error, Result};

const NEWTON_MAXITER: usize = 6;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

struct Tableau {
    c: [f64; 3],
    a: [[f64; 3]; 3],
    e: [f64; 3],
    p: [[f64; 3]; 3],
    mu_real: f64,
}

fn tableau() -> Tableau {
    let s6 = 6f64.sqrt();
    Tableau {
        c: [(4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0],
        a: [
            [(88.0 - 7.0 * s6) / 360.0, (296.0 - 169.0 * s6) / 1800.0, (-2.0 + 3.0 * s6) / 225.0],
            [(296.0 + 169.0 * s6) / 1800.0, (88.0 + 7.0 * s6) / 360.0, (-2.0 - 3.0 * s6) / 225.0],
            [(16.0 - s6) / 36.0, (16.0 + s6) / 36.0, 1.0 / 9.0],
        ],
        e: [(-13.0 - 7.0 * s6) / 3.0, (-13.0 + 7.0 * s6) / 3.0, -1.0 / 3.0],
        p: [
            [13.0 / 3.0 + 7.0 * s6 / 3.0, -23.0 / 3.0 - 22.0 * s6 / 3.0, 10.0 / 3.0 + 5.0 * s6],
            [13.0 / 3.0 - 7.0 * s6 / 3.0, -23.0 / 3.0 + 22.0 * s6 / 3.0, 10.0 / 3.0 - 5.0 * s6],
            [1.0 / 3.0, -8.0 / 3.0, 10.0 / 3.0],
        ],
        mu_real: 3.0 + 3f64.powf(2.0 / 3.0) - 3f64.powf(1.0 / 3.0),
    }
}

fn predict_factor(h_abs: f64, h_abs_old: Option<f64>, error_norm: f64, error_norm_old: Option<f64>) -> f64 {
    let multiplier = match (h_abs_old, error_norm_old) {
        (Some(h_old), Some(e_old)) if error_norm != 0.0 => h_abs / h_old * (e_old / error_norm).powf(0.25),
        _ => 1.0,
    };
    if error_norm == 0.0 {
        MAX_FACTOR
    } else {
        multiplier.min(1.0) * error_norm.powf(-0.25)
    }
}

pub(crate) struct Radau {
    t: f64,
    y: DVector<f64>,
    f: DVector<f64>,
    h_abs: f64,
    h_abs_old: Option<f64>,
    error_norm_old: Option<f64>,
    jac: DMatrix<f64>,
    current_jac: bool,
    lu_stage: Option<LU<f64, Dyn, Dyn>>,
    lu_real: Option<LU<f64, Dyn, Dyn>>,
    rtol: f64,
    atol: f64,
    max_step: f64,
    newton_tol: f64,
    tab: Tableau,
    /// Dense output of the last step.
    sol: Option<(f64, f64, DVector<f64>, DMatrix<f64>)>,
    last: StepRecord,
}

struct Collocation {
    converged: bool,
    iterations: usize,
    rate: f64,
    z: DMatrix<f64>,
}

impl Radau {
    pub(crate) fn new(
        sys: &Augmented,
        y0: DVector<f64>,
        t_bound: f64,
        opts: &IntegratorOptions,
        grid: Option<&StepGrid>,
    ) -> Result<Self> {
        let m = y0.len();
        let mut f = DVector::zeros(m);
        sys.rhs(&y0, &mut f)?;
        let h_abs = match (grid.and_then(|g| g.steps.first()), opts.initial_step) {
            (Some(first), _) => first.t_end,
            (None, Some(h)) => h.min(opts.max_step),
            (None, None) => select_initial_step(sys, &y0, &f, t_bound, opts.max_step, 3, opts.rtol, opts.atol)?,
        };
        let jac = sys.jacobian(&y0);
        Ok(Self {
            t: 0.0,
            y: y0,
            f,
            h_abs,
            h_abs_old: None,
            error_norm_old: None,
            jac,
            current_jac: true,
            lu_stage: None,
            lu_real: None,
            rtol: opts.rtol,
            atol: opts.atol,
            max_step: opts.max_step,
            newton_tol: (10.0 * f64::EPSILON / opts.rtol).max(0.03f64.min(opts.rtol.sqrt())),
            tab: tableau(),
            sol: None,
            last: StepRecord { t_end: 0.0, order: 5 },
        })
    }

    fn factorize(&mut self, h: f64) -> Result<()> {
        let m = self.y.len();
        let mut big = DMatrix::<f64>::identity(3 * m, 3 * m);
        for i in 0..3 {
            for j in 0..3 {
                let mut block = big.view_mut((i * m, j * m), (m, m));
                block -= &self.jac * (h * self.tab.a[i][j]);
            }
        }
        let lu = big.lu();
        let real = (DMatrix::identity(m, m) * (self.tab.mu_real / h) - &self.jac).lu();
        if !lu.is_invertible() || !real.is_invertible() {
            return Err(Error::NewtonFailure(self.t));
        }
        self.lu_stage = Some(lu);
        self.lu_real = Some(real);
        Ok(())
    }

    fn initial_guess(&self, h: f64) -> DMatrix<f64> {
        let m = self.y.len();
        match &self.sol {
            None => DMatrix::zeros(m, 3),
            Some((t_old, h_old, y_old, q)) => {
                let seg = DenseSegment::Radau { t_old: *t_old, h: *h_old, y_old: y_old.clone(), q: q.clone() };
                let mut z = DMatrix::zeros(m, 3);
                for k in 0..3 {
                    let yk = seg.eval(self.t + h * self.tab.c[k]) - &self.y;
                    z.set_column(k, &yk);
                }
                z
            }
        }
    }

    /// Simplified Newton on the stage increments `Z` (columns are stages).
    fn collocation(&self, sys: &Augmented, h: f64, z0: &DMatrix<f64>, max_iter: usize) -> Collocation {
        let m = self.y.len();
        let lu = self.lu_stage.as_ref().expect("factorized");
        let scale = self.y.map(|v| self.atol + self.rtol * v.abs());
        let scale3 = DVector::from_fn(3 * m, |i, _| scale[i % m]);
        let mut z = z0.clone();
        let mut f = DMatrix::zeros(m, 3);
        let mut fk = DVector::zeros(m);
        let mut dz_norm_old: Option<f64> = None;
        let mut rate = f64::NAN;
        for k in 0..max_iter {
            for s in 0..3 {
                let ys = &self.y + z.column(s);
                if sys.rhs(&ys, &mut fk).is_err() {
                    return Collocation { converged: false, iterations: k + 1, rate, z };
                }
                f.set_column(s, &fk);
            }
            let mut g = DVector::zeros(3 * m);
            for i in 0..3 {
                let mut gi = -z.column(i);
                for j in 0..3 {
                    gi.axpy(h * self.tab.a[i][j], &f.column(j), 1.0);
                }
                g.rows_mut(i * m, m).copy_from(&gi);
            }
            let Some(dz) = lu.solve(&g) else {
                return Collocation { converged: false, iterations: k + 1, rate, z };
            };
            let dz_norm = rms_norm_state(&dz, &scale3, m, sys.n);
            if let Some(old) = dz_norm_old {
                rate = dz_norm / old;
                if rate >= 1.0 || rate.powi((max_iter - k) as i32) / (1.0 - rate) * dz_norm > self.newton_tol {
                    return Collocation { converged: false, iterations: k + 1, rate, z };
                }
            }
            for s in 0..3 {
                let mut col = z.column_mut(s);
                col += dz.rows(s * m, m);
            }
            if dz_norm == 0.0 || (dz_norm_old.is_some() && rate / (1.0 - rate) * dz_norm < self.newton_tol) {
                let converged = m == sys.n || self.quadrature_stages(sys, h, &mut z);
                return Collocation { converged, iterations: k + 1, rate, z };
            }
            dz_norm_old = Some(dz_norm);
        }
        Collocation { converged: false, iterations: max_iter, rate, z }
    }

    /// Quadrature stages from the converged state stages.
    fn quadrature_stages(&self, sys: &Augmented, h: f64, z: &mut DMatrix<f64>) -> bool {
        let m = self.y.len();
        let mut fq = [0.0; 3];
        let mut fk = DVector::zeros(m);
        for (s, slot) in fq.iter_mut().enumerate() {
            if sys.rhs(&(&self.y + z.column(s)), &mut fk).is_err() {
                return false;
            }
            *slot = fk[sys.n];
        }
        for i in 0..3 {
            z[(sys.n, i)] = (0..3).map(|j| h * self.tab.a[i][j] * fq[j]).sum();
        }
        true
    }

    fn error_estimate(&self, sys: &Augmented, h: f64, z: &DMatrix<f64>, y_new: &DVector<f64>, rejected: bool) -> Result<f64> {
        let lu = self.lu_real.as_ref().expect("factorized");
        let mut ze = DVector::zeros(self.y.len());
        for s in 0..3 {
            ze.axpy(self.tab.e[s] / h, &z.column(s), 1.0);
        }
        let mut err = lu.solve(&(&self.f + &ze)).ok_or(Error::NewtonFailure(self.t))?;
        let scale = DVector::from_fn(self.y.len(), |i, _| self.atol + self.rtol * self.y[i].abs().max(y_new[i].abs()));
        let mut norm = rms_norm(&err, &scale);
        if rejected && norm > 1.0 {
            let mut f = DVector::zeros(self.y.len());
            sys.rhs(&(&self.y + &err), &mut f)?;
            err = lu.solve(&(f + &ze)).ok_or(Error::NewtonFailure(self.t))?;
            norm = rms_norm(&err, &scale);
        }
        Ok(norm)
    }

    fn advance(&mut self, sys: &Augmented, t_new: f64, z: DMatrix<f64>) -> Result<()> {
        let h = t_new - self.t;
        let y_new = &self.y + z.column(2);
        let mut q = DMatrix::zeros(self.y.len(), 3);
        for j in 0..3 {
            for s in 0..3 {
                let mut col = q.column_mut(j);
                col.axpy(self.tab.p[s][j], &z.column(s), 1.0);
            }
        }
        self.sol = Some((self.t, h, self.y.clone(), q));
        self.t = t_new;
        self.y = y_new;
        sys.rhs(&self.y, &mut self.f)?;
        self.last = StepRecord { t_end: t_new, order: 5 };
        Ok(())
    }
}

impl Stepper for Radau {
    fn t(&self) -> f64 {
        self.t
    }

    fn y(&self) -> &DVector<f64> {
        &self.y
    }

    fn step(&mut self, sys: &Augmented, t_bound: f64) -> Result<StepRecord> {
        let t = self.t;
        let min_step = 10.0 * (t.abs() * f64::EPSILON).max(f64::MIN_POSITIVE);
        let (mut h_abs, mut h_abs_old, mut error_norm_old) = (self.h_abs, self.h_abs_old, self.error_norm_old);
        if h_abs > self.max_step {
            h_abs = self.max_step;
            h_abs_old = None;
            error_norm_old = None;
        } else if h_abs < min_step {
            h_abs = min_step;
            h_abs_old = None;
            error_norm_old = None;
        }
        let mut rejected = false;
        let (t_new, col, error_norm) = loop {
            if h_abs < min_step {
                return Err(Error::StepTooSmall(t));
            }
            let t_new = (t + h_abs).min(t_bound);
            let h = t_new - t;
            h_abs = h;
            let z0 = self.initial_guess(h);
            let col = loop {
                if self.lu_stage.is_none() {
                    self.factorize(h)?;
                }
                let col = self.collocation(sys, h, &z0, NEWTON_MAXITER);
                if col.converged || self.current_jac {
                    break col;
                }
                self.jac = sys.jacobian(&self.y);
                self.current_jac = true;
                self.lu_stage = None;
            };
            if !col.converged {
                h_abs *= 0.5;
                self.lu_stage = None;
                continue;
            }
            let y_new = &self.y + col.z.column(2);
            let error_norm = self.error_estimate(sys, h, &col.z, &y_new, rejected)?;
            if error_norm > 1.0 {
                let safety = 0.9 * (2 * NEWTON_MAXITER + 1) as f64 / (2 * NEWTON_MAXITER + col.iterations) as f64;
                let factor = predict_factor(h_abs, h_abs_old, error_norm, error_norm_old);
                h_abs *= MIN_FACTOR.max(safety * factor);
                self.lu_stage = None;
                rejected = true;
                continue;
            }
            break (t_new, col, error_norm);
        };
        let safety = 0.9 * (2 * NEWTON_MAXITER + 1) as f64 / (2 * NEWTON_MAXITER + col.iterations) as f64;
        let recompute_jac = col.iterations > 2 && col.rate > 1e-3;
        let mut factor = MAX_FACTOR.min(safety * predict_factor(h_abs, h_abs_old, error_norm, error_norm_old));
        if !recompute_jac && factor < 1.2 {
            factor = 1.0;
        } else {
            self.lu_stage = None;
        }
        self.advance(sys, t_new, col.z)?;
        if recompute_jac {
            self.jac = sys.jacobian(&self.y);
            self.current_jac = true;
        } else {
            self.current_jac = false;
        }
        self.h_abs_old = Some(self.h_abs);
        self.error_norm_old = Some(error_norm);
        self.h_abs = h_abs * factor;
        Ok(self.last)
    }

    fn replay(&mut self, sys: &Augmented, rec: &StepRecord) -> Result<()> {
        let t = self.t;
        let h = rec.t_end - t;
        if !(h > 0.0) {
            return Err(Error::InvalidProblem(format!("replayed step ends at {} before {t}", rec.t_end)));
        }
        if h != self.h_abs {
            self.lu_stage = None;
            self.h_abs = h;
        }
        let z0 = self.initial_guess(h);
        if self.lu_stage.is_none() {
            self.factorize(h)?;
        }
        let mut col = self.collocation(sys, h, &z0, NEWTON_MAXITER);
        if !col.converged {
            self.jac = sys.jacobian(&self.y);
            self.factorize(h)?;
            col = self.collocation(sys, h, &z0, 4 * NEWTON_MAXITER);
        }
        if !col.converged {
            return Err(Error::NewtonFailure(t));
        }
        self.advance(sys, rec.t_end, col.z)
    }

    fn dense(&self) -> DenseSegment {
        let (t_old, h, y_old, q) = self.sol.clone().expect("dense output after a step");
        DenseSegment::Radau { t_old, h, y_old, q }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tableau_rows_sum_to_nodes() {
        let tab = tableau();
        for i in 0..3 {
            let s: f64 = tab.a[i].iter().sum();
            assert!((s - tab.c[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn dense_polynomial_reproduces_stages() {
        // Q = Z^T P must interpolate the stage values at the collocation nodes.
        let tab = tableau();
        let z = [1.0, -2.0, 0.5];
        for k in 0..3 {
            let x = tab.c[k];
            let mut v = 0.0;
            for j in 0..3 {
                let qj: f64 = (0..3).map(|s| z[s] * tab.p[s][j]).sum();
                v += qj * x.powi(j as i32 + 1);
            }
            assert!((v - z[k]).abs() < 1e-12, "{k}: {v}");
        }
    }
}
