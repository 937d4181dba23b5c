//! Autonomous vector fields `dc/dt = f(c)`.
//!
//! Mechanisms implement [`VectorField`]; so do the small linear and
//! oscillator systems used for checking the geometric kernels.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    /// Evaluate `f(c)` into `out`.
    fn eval(&self, c: &[f64], out: &mut [f64]);

    /// Evaluate `f` over complex-extended arguments. Returns `false` when the
    /// field has no analytic complex extension.
    fn eval_complex(&self, _c: &[Complex64], _out: &mut [Complex64]) -> bool {
        false
    }

    /// Jacobian `J_f(c)`. Defaults to central differences.
    fn jacobian(&self, c: &[f64]) -> DMatrix<f64> {
        central_jacobian(self, c)
    }

    fn rhs(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(c, &mut out);
        out
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, c: &[f64], out: &mut [f64]) {
        (**self).eval(c, out)
    }
    fn eval_complex(&self, c: &[Complex64], out: &mut [Complex64]) -> bool {
        (**self).eval_complex(c, out)
    }
    fn jacobian(&self, c: &[f64]) -> DMatrix<f64> {
        (**self).jacobian(c)
    }
}

pub(crate) fn central_jacobian<F: VectorField + ?Sized>(field: &F, c: &[f64]) -> DMatrix<f64> {
    let n = field.dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut x = c.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = 1e-6 * (1.0 + c[j].abs());
        x[j] = c[j] + h;
        field.eval(&x, &mut fp);
        x[j] = c[j] - h;
        field.eval(&x, &mut fm);
        x[j] = c[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Linear field `f(c) = A c`.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub matrix: DMatrix<f64>,
}

impl LinearField {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        assert!(matrix.is_square(), "linear field needs a square matrix");
        Self { matrix }
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(entries)))
    }

    /// The harmonic oscillator `y1' = y2, y2' = -y1`.
    pub fn harmonic() -> Self {
        Self::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]))
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, c: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            out[i] = (0..n).map(|j| self.matrix[(i, j)] * c[j]).sum();
        }
    }

    fn eval_complex(&self, c: &[Complex64], out: &mut [Complex64]) -> bool {
        let n = self.dim();
        for i in 0..n {
            out[i] = (0..n).map(|j| c[j] * self.matrix[(i, j)]).sum();
        }
        true
    }

    fn jacobian(&self, _c: &[f64]) -> DMatrix<f64> {
        self.matrix.clone()
    }
}
