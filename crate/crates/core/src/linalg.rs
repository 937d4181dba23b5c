//! Dense helpers for the tiny systems in this crate: orthonormal bases,
//! minimum-norm solutions and a two-phase simplex method.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Orthonormal bases `(row_space, null_space)` of `a` as columns of `n x k`
/// matrices, via modified Gram–Schmidt with one reorthogonalization pass.
pub fn row_and_null_space(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let push = |v: DVector<f64>, basis: &mut Vec<DVector<f64>>, thresh: f64| -> bool {
        let mut w = v;
        for _ in 0..2 {
            for q in basis.iter() {
                let d = q.dot(&w);
                w -= q * d;
            }
        }
        let norm = w.norm();
        if norm > thresh {
            basis.push(w / norm);
            true
        } else {
            false
        }
    };
    for i in 0..a.nrows() {
        let row = a.row(i).transpose();
        push(row, &mut basis, 1e-10 * scale);
    }
    let rank = basis.len();
    for j in 0..n {
        if basis.len() == n {
            break;
        }
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        push(e, &mut basis, 1e-8);
    }
    let row = DMatrix::from_fn(n, rank, |i, k| basis[k][i]);
    let null = DMatrix::from_fn(n, n - rank, |i, k| basis[rank + k][i]);
    (row, null)
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn min_norm_solution(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12).expect("SVD computed with both factors")
}

/// Minimize `cost . x` subject to `a x = b`, `x >= 0` with a dense two-phase
/// simplex tableau and Bland's rule.
pub fn simplex_minimize(a: &DMatrix<f64>, b: &DVector<f64>, cost: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    const TOL: f64 = 1e-11;
    // tableau columns: n structural, m artificial, rhs
    let width = n + m + 1;
    let mut t = DMatrix::<f64>::zeros(m + 1, width);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, width - 1)] = sign * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    fn pivot(t: &mut DMatrix<f64>, basis: &mut [usize], row: usize, col: usize) {
        let p = t[(row, col)];
        let w = t.ncols();
        for j in 0..w {
            t[(row, j)] /= p;
        }
        for i in 0..t.nrows() {
            if i != row {
                let f = t[(i, col)];
                if f != 0.0 {
                    for j in 0..w {
                        let v = t[(row, j)] * f;
                        t[(i, j)] -= v;
                    }
                }
            }
        }
        basis[row] = col;
    }

    fn run(t: &mut DMatrix<f64>, basis: &mut [usize], allowed: usize) -> Result<()> {
        let m = t.nrows() - 1;
        let w = t.ncols();
        for _ in 0..10_000 {
            let Some(col) = (0..allowed).find(|&j| t[(m, j)] < -TOL) else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..m {
                if t[(i, col)] > TOL {
                    let ratio = t[(i, w - 1)] / t[(i, col)];
                    match best {
                        Some((bi, br)) if ratio > br + TOL || (ratio > br - TOL && basis[i] > basis[bi]) => {}
                        _ => best = Some((i, ratio)),
                    }
                }
            }
            let Some((row, _)) = best else {
                return Err(Error::InvalidProblem("linear program is unbounded".into()));
            };
            pivot(t, basis, row, col);
        }
        Err(Error::InvalidProblem("simplex iteration limit".into()))
    }

    // phase one: minimize the sum of artificials
    for j in 0..width {
        let s: f64 = (0..m).map(|i| t[(i, j)]).sum();
        t[(m, j)] = if (n..n + m).contains(&j) { 0.0 } else { -s };
    }
    run(&mut t, &mut basis, n + m)?;
    if -t[(m, width - 1)] > 1e-9 * (1.0 + b.amax()) {
        return Err(Error::Infeasible(format!(
            "phase-one residual {:e}",
            -t[(m, width - 1)]
        )));
    }
    // drive remaining artificials out of the basis
    for i in 0..m {
        if basis[i] >= n {
            if let Some(col) = (0..n).find(|&j| t[(i, j)].abs() > TOL) {
                pivot(&mut t, &mut basis, i, col);
            }
        }
    }
    // phase two
    for j in 0..width {
        t[(m, j)] = if j < n { cost[j] } else { 0.0 };
    }
    for i in 0..m {
        let bj = basis[i];
        if bj < n {
            let f = t[(m, bj)];
            if f != 0.0 {
                for j in 0..width {
                    let v = t[(i, j)] * f;
                    t[(m, j)] -= v;
                }
            }
        }
    }
    run(&mut t, &mut basis, n)?;
    let mut x = DVector::zeros(n);
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[(i, width - 1)];
        }
    }
    Ok(x)
}

/// A point of `{x : a x = b, lower <= x <= upper}` that maximizes the
/// smallest lower-bound slack over the `centered` components (capped at
/// `cap`). Fails when the set is empty.
pub fn feasible_center(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lower: &[f64],
    upper: &[f64],
    centered: &[bool],
    cap: f64,
) -> Result<DVector<f64>> {
    let n = a.ncols();
    let finite: Vec<usize> = (0..n).filter(|&i| upper[i].is_finite()).collect();
    // variables: u (n), t, s (n), w (finite), v
    let nv = n + 1 + n + finite.len() + 1;
    let t_idx = n;
    let nrows = a.nrows() + n + finite.len() + 1;
    let mut lp = DMatrix::zeros(nrows, nv);
    let mut rhs = DVector::zeros(nrows);
    let lb = DVector::from_column_slice(lower);
    let shifted = b - a * &lb;
    for i in 0..a.nrows() {
        for j in 0..n {
            lp[(i, j)] = a[(i, j)];
        }
        rhs[i] = shifted[i];
    }
    let mut r = a.nrows();
    for i in 0..n {
        lp[(r, i)] = 1.0;
        lp[(r, n + 1 + i)] = -1.0;
        if centered[i] {
            lp[(r, t_idx)] = -1.0;
        }
        r += 1;
    }
    for (k, &i) in finite.iter().enumerate() {
        lp[(r, i)] = 1.0;
        lp[(r, 2 * n + 1 + k)] = 1.0;
        rhs[r] = upper[i] - lower[i];
        r += 1;
    }
    lp[(r, t_idx)] = 1.0;
    lp[(r, nv - 1)] = 1.0;
    rhs[r] = cap;
    let mut cost = DVector::zeros(nv);
    cost[t_idx] = -1.0;
    let sol = simplex_minimize(&lp, &rhs, &cost)?;
    Ok(DVector::from_fn(n, |i, _| sol[i] + lower[i]))
}
