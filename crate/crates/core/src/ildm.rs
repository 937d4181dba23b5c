//! Intrinsic low-dimensional manifold points: compositions where the fast
//! left invariant subspace of the reduced Jacobian annihilates the field.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::criteria::CriterionKind;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::linalg::row_and_null_space;
use crate::mechanism::Mechanism;
use crate::simopt::{ProblemSpec, Reduced};

#[derive(Debug, Clone)]
pub struct IldmSpec {
    pub mechanism: Mechanism,
    /// Manifold dimension; must equal the number of fixed species.
    pub dimension: usize,
    pub fixed: BTreeMap<usize, f64>,
    /// Residual tolerance relative to `max(1, ||f||)`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl IldmSpec {
    pub fn new(mechanism: Mechanism, dimension: usize) -> Self {
        Self { mechanism, dimension, fixed: BTreeMap::new(), tolerance: 1e-9, max_iterations: 100 }
    }

    pub fn fix(mut self, index: usize, value: f64) -> Self {
        self.fixed.insert(index, value);
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IldmPoint {
    pub c: Vec<f64>,
    /// `||Z_f^T f||`.
    pub residual: f64,
    /// Reduced-Jacobian eigenvalues, descending real part, as `(re, im)`.
    pub spectrum: Vec<(f64, f64)>,
    /// `|Re lambda_m / Re lambda_{m+1}|`; small values mean a wide gap.
    pub spectral_gap: f64,
    pub iterations: usize,
}

/// Real Schur form `a = q t q^T` with diagonal blocks sorted by descending
/// real part. Returns `(q, t, block sizes)`.
pub fn ordered_schur(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, Vec<usize>) {
    let n = a.nrows();
    let (mut q, mut t) = a.clone().schur().unpack();
    let tol = 1e-14 * a.norm().max(f64::MIN_POSITIVE);
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > tol {
            if split_real_pair(&mut q, &mut t, i) {
                blocks.push(1);
                blocks.push(1);
            } else {
                blocks.push(2);
            }
            i += 2;
        } else {
            if i + 1 < n {
                t[(i + 1, i)] = 0.0;
            }
            blocks.push(1);
            i += 1;
        }
    }
    // bubble sort on block real parts
    let mut swapped = true;
    while swapped {
        swapped = false;
        let mut start = 0;
        for b in 0..blocks.len().saturating_sub(1) {
            let (p, r) = (blocks[b], blocks[b + 1]);
            let re_a = block_real_part(&t, start, p);
            let re_b = block_real_part(&t, start + p, r);
            if re_b > re_a {
                swap_blocks(&mut q, &mut t, start, p, r);
                blocks.swap(b, b + 1);
                swapped = true;
                start += r;
            } else {
                start += p;
            }
        }
    }
    (q, t, blocks)
}

fn block_real_part(t: &DMatrix<f64>, i: usize, size: usize) -> f64 {
    if size == 1 {
        t[(i, i)]
    } else {
        0.5 * (t[(i, i)] + t[(i + 1, i + 1)])
    }
}

fn block_eigenvalues(t: &DMatrix<f64>, i: usize, size: usize) -> Vec<Complex64> {
    if size == 1 {
        return vec![Complex64::new(t[(i, i)], 0.0)];
    }
    let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
    let mean = 0.5 * (a + d);
    let disc = 0.25 * (a - d).powi(2) + b * c;
    let root = Complex64::new(disc, 0.0).sqrt();
    vec![mean + root, mean - root]
}

/// Triangularize a 2x2 block with real eigenvalues by a rotation.
fn split_real_pair(q: &mut DMatrix<f64>, t: &mut DMatrix<f64>, i: usize) -> bool {
    let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
    let disc = 0.25 * (a - d).powi(2) + b * c;
    if disc < 0.0 {
        return false;
    }
    let lambda = 0.5 * (a + d) + disc.sqrt().copysign(0.5 * (a + d));
    // eigenvector of [[a, b], [c, d]] for lambda
    let (x, y) = if (lambda - a).abs() + b.abs() > (lambda - d).abs() + c.abs() { (b, lambda - a) } else { (lambda - d, c) };
    let r = x.hypot(y);
    if r == 0.0 {
        return false;
    }
    let g = DMatrix::from_row_slice(2, 2, &[x / r, -y / r, y / r, x / r]);
    apply_orthogonal(q, t, i, &g);
    t[(i + 1, i)] = 0.0;
    true
}

/// `t <- g^T t g` and `q <- q g` on rows/columns `i..i + g.nrows()`.
fn apply_orthogonal(q: &mut DMatrix<f64>, t: &mut DMatrix<f64>, i: usize, g: &DMatrix<f64>) {
    let k = g.nrows();
    let n = t.nrows();
    let rows = g.transpose() * t.view((i, 0), (k, n));
    t.view_mut((i, 0), (k, n)).copy_from(&rows);
    let cols = t.view((0, i), (n, k)) * g;
    t.view_mut((0, i), (n, k)).copy_from(&cols);
    let qc = q.view((0, i), (n, k)) * g;
    q.view_mut((0, i), (n, k)).copy_from(&qc);
}

/// Exchange adjacent diagonal blocks of sizes `p` and `r` starting at `i`:
/// solve `A X - X B = C`, then rotate onto the span of `[-X; I]`.
fn swap_blocks(q: &mut DMatrix<f64>, t: &mut DMatrix<f64>, i: usize, p: usize, r: usize) {
    let a = t.view((i, i), (p, p)).into_owned();
    let b = t.view((i + p, i + p), (r, r)).into_owned();
    let c = t.view((i, i + p), (p, r)).into_owned();
    // vec(A X - X B) = (I_r kron A - B^T kron I_p) vec(X)
    let mut k = DMatrix::zeros(p * r, p * r);
    for col in 0..r {
        for row in 0..p {
            let idx = col * p + row;
            for l in 0..p {
                k[(idx, col * p + l)] += a[(row, l)];
            }
            for l in 0..r {
                k[(idx, l * p + row)] -= b[(l, col)];
            }
        }
    }
    let rhs = DVector::from_iterator(p * r, (0..r).flat_map(|col| (0..p).map(move |row| (row, col))).map(|(row, col)| c[(row, col)]));
    let x = k.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(p * r));
    let mut basis = DMatrix::zeros(p + r, r);
    for col in 0..r {
        for row in 0..p {
            basis[(row, col)] = -x[col * p + row];
        }
        basis[(p + col, col)] = 1.0;
    }
    let qr = basis.qr();
    let g = qr.q().columns(0, r).into_owned();
    let full = complete_basis(&g);
    apply_orthogonal(q, t, i, &full);
    for row in 0..p {
        for col in 0..r {
            t[(i + r + row, i + col)] = 0.0;
        }
    }
}

/// Orthogonal matrix whose leading columns are `g`.
fn complete_basis(g: &DMatrix<f64>) -> DMatrix<f64> {
    let k = g.nrows();
    let mut aug = DMatrix::zeros(k, k + g.ncols());
    aug.columns_mut(0, g.ncols()).copy_from(g);
    aug.columns_mut(g.ncols(), k).copy_from(&DMatrix::identity(k, k));
    let q = aug.qr().q();
    let mut out = q.columns(0, k).into_owned();
    // keep the leading columns exactly equal to g (QR may flip signs)
    out.columns_mut(0, g.ncols()).copy_from(g);
    out
}

/// Ordered eigenvalues and the slow invariant subspace of dimension `m`.
pub fn slow_subspace(a: &DMatrix<f64>, m: usize) -> Result<(DMatrix<f64>, Vec<Complex64>)> {
    let (q, t, blocks) = ordered_schur(a);
    let mut spectrum = Vec::new();
    let mut start = 0;
    let mut boundaries = vec![0];
    for &b in &blocks {
        spectrum.extend(block_eigenvalues(&t, start, b));
        start += b;
        boundaries.push(start);
    }
    if m == 0 || m >= spectrum.len() {
        return Err(Error::InvalidProblem(format!("manifold dimension {m} outside 1..{}", spectrum.len())));
    }
    let (slow, fast) = (spectrum[m - 1], spectrum[m]);
    let scale = spectrum.iter().map(|l| l.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if !boundaries.contains(&m) || (slow.re - fast.re).abs() <= 1e-12 * scale {
        return Err(Error::DegenerateOrdering(fmt_eig(slow), fmt_eig(fast)));
    }
    Ok((q.columns(0, m).into_owned(), spectrum))
}

fn fmt_eig(l: Complex64) -> String {
    if l.im == 0.0 {
        format!("{}", l.re)
    } else {
        format!("{}{:+}i", l.re, l.im)
    }
}

struct Setup {
    /// Orthonormal basis of the conservation null space.
    basis: DMatrix<f64>,
    red: Reduced,
}

fn setup(spec: &IldmSpec) -> Result<Setup> {
    let m = &spec.mechanism;
    let e = m.conservation_matrix();
    let basis = if e.nrows() == 0 {
        DMatrix::identity(m.n_species(), m.n_species())
    } else {
        row_and_null_space(&e).1
    };
    let dof = basis.ncols();
    if spec.dimension == 0 || spec.dimension >= dof {
        return Err(Error::InvalidProblem(format!("manifold dimension must lie in 1..{dof}")));
    }
    if spec.fixed.len() != spec.dimension {
        return Err(Error::InvalidProblem(format!(
            "{} progress variables given for a {}-dimensional manifold",
            spec.fixed.len(),
            spec.dimension
        )));
    }
    let mut ps = ProblemSpec::new(m.clone(), CriterionKind::A);
    ps.fixed = spec.fixed.clone();
    let red = Reduced::new(&ps)?;
    Ok(Setup { basis, red })
}

/// `(I - P_slow) N^T f`, with the eigen-decomposition at `c`.
fn residual(spec: &IldmSpec, s: &Setup, c: &[f64]) -> Result<(DVector<f64>, Vec<Complex64>, f64)> {
    let f = DVector::from_vec(spec.mechanism.rhs_checked(c)?);
    let jr = s.basis.transpose() * spec.mechanism.jacobian(c) * &s.basis;
    let (q1, spectrum) = slow_subspace(&jr, spec.dimension)?;
    let fr = s.basis.transpose() * &f;
    let r = &fr - &q1 * (q1.transpose() * &fr);
    Ok((r, spectrum, f.norm()))
}

/// Damped Gauss-Newton on the ILDM equation from `guess`, which must
/// already satisfy the fixed values and conservation.
pub fn ildm_point(spec: &IldmSpec, guess: &[f64]) -> Result<IldmPoint> {
    let s = setup(spec)?;
    let n = spec.mechanism.n_species();
    if guess.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: guess.len() });
    }
    let mut w = s.red.to_z(guess);
    let back = s.red.point(&w);
    let mismatch = back.iter().zip(guess).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if mismatch > 1e-8 * s.red.scale.max(1.0) {
        return Err(Error::InvalidProblem(format!("initial guess violates fixed values or conservation by {mismatch:e}")));
    }
    let admissible = |w: &DVector<f64>| s.red.feasible(w);
    let (mut r, mut spectrum, mut fnorm) = residual(spec, &s, &s.red.point(&w))?;
    let tol = |fnorm: f64| spec.tolerance * fnorm.max(1.0);
    let mut iterations = 0;
    while r.norm() > tol(fnorm) {
        if iterations >= spec.max_iterations {
            return Err(divergence(&s, &w, r.norm()));
        }
        iterations += 1;
        let k = w.len();
        let mut jac = DMatrix::zeros(r.len(), k);
        for j in 0..k {
            let h = 1e-7 * w[j].abs().max(1e-6 * s.red.scale);
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let (col, span) = match (admissible(&wp), admissible(&wm)) {
                (true, true) => (residual(spec, &s, &s.red.point(&wp))?.0 - residual(spec, &s, &s.red.point(&wm))?.0, 2.0 * h),
                (true, false) => (residual(spec, &s, &s.red.point(&wp))?.0 - &r, h),
                (false, true) => (&r - residual(spec, &s, &s.red.point(&wm))?.0, h),
                (false, false) => return Err(divergence(&s, &w, r.norm())),
            };
            jac.set_column(j, &(col / span));
        }
        let dw = jac.svd(true, true).solve(&(-&r), 1e-14).map_err(|e| Error::NonFinite(e.to_string()))?;
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda > 1e-10 {
            let trial = &w + &dw * lambda;
            if admissible(&trial) {
                if let Ok((rt, sp, fn_)) = residual(spec, &s, &s.red.point(&trial)) {
                    if rt.norm() < r.norm() {
                        w = trial;
                        r = rt;
                        spectrum = sp;
                        fnorm = fn_;
                        improved = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            return Err(divergence(&s, &w, r.norm()));
        }
    }
    let m = spec.dimension;
    let spectral_gap = (spectrum[m - 1].re / spectrum[m].re).abs();
    Ok(IldmPoint {
        c: s.red.point(&w),
        residual: r.norm(),
        spectrum: spectrum.iter().map(|l| (l.re, l.im)).collect(),
        spectral_gap,
        iterations,
    })
}

fn divergence(s: &Setup, w: &DVector<f64>, residual: f64) -> Error {
    Error::NewtonDivergence { message: "ILDM Newton iteration stalled".into(), residual, best: s.red.point(w) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::LinearField;
    use approx::assert_relative_eq;

    fn assert_upper_quasi_triangular(t: &DMatrix<f64>, blocks: &[usize]) {
        let mut start = 0;
        for &b in blocks {
            for i in start + b..t.nrows() {
                for j in start..start + b {
                    assert!(t[(i, j)].abs() < 1e-12, "t[{i},{j}] = {}", t[(i, j)]);
                }
            }
            start += b;
        }
    }

    #[test]
    fn ordered_schur_sorts_and_reconstructs() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[-100.0, 1.0, 2.0, 0.5, 0.0, -1.0, 3.0, 1.0, 0.0, -4.0, -1.0, 2.0, 1.0, 0.0, 0.0, -10.0],
        );
        let (q, t, blocks) = ordered_schur(&a);
        assert_relative_eq!(&q * &t * q.transpose(), a, epsilon = 1e-10);
        assert_relative_eq!(q.transpose() * &q, DMatrix::identity(4, 4), epsilon = 1e-12);
        assert_upper_quasi_triangular(&t, &blocks);
        let mut start = 0;
        let mut re = Vec::new();
        for &b in &blocks {
            re.push(block_real_part(&t, start, b));
            start += b;
        }
        assert!(re.windows(2).all(|w| w[0] >= w[1]), "{re:?}");
    }

    #[test]
    fn slow_subspace_is_invariant() {
        let a = DMatrix::from_row_slice(3, 3, &[-50.0, 3.0, 0.0, 2.0, -2.0, 1.0, 0.0, 4.0, -7.0]);
        let (q1, spec) = slow_subspace(&a, 1).unwrap();
        let v = q1.column(0);
        let av = &a * v;
        assert_relative_eq!(av.clone(), v * spec[0].re, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_gap_is_reported() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, -2.0, -1.0, 0.0, 0.0, 0.0, -30.0]);
        match slow_subspace(&a, 1) {
            Err(Error::DegenerateOrdering(x, y)) => {
                assert!(x.starts_with("-1") && y.starts_with("-1"), "{x} {y}");
            }
            other => panic!("expected degenerate ordering, got {other:?}"),
        }
    }

    #[test]
    fn linear_ildm_is_slow_eigenspace() {
        // f = diag(-1, -100) c: the slow eigenspace is the c1 axis
        let diag = LinearField::diagonal(&[-1.0, -100.0]);
        let n = DMatrix::<f64>::identity(2, 2);
        let jr = n.transpose() * diag.jacobian(&[0.3, 0.2]) * &n;
        let (q1, _) = slow_subspace(&jr, 1).unwrap();
        assert!(q1[(1, 0)].abs() < 1e-14);
    }

    #[test]
    fn davis_skodje_ildm_matches_dense_scan() {
        let gamma = 6.0;
        let m = Mechanism::davis_skodje(gamma).unwrap();
        for y1 in [0.3, 0.8, 1.5] {
            let spec = IldmSpec::new(m.clone(), 1).fix(0, y1);
            let p = ildm_point(&spec, &[y1, y1 / (1.0 + y1)]).unwrap();
            assert!(p.residual <= 1e-9);
            // oracle: sign change of the fast component of f on a fine y2 scan
            let fast = |y2: f64| {
                let c = [y1, y2];
                let jac = m.jacobian(&c);
                let eig = jac.clone().complex_eigenvalues();
                let lam_slow = eig.iter().map(|l| l.re).fold(f64::MIN, f64::max);
                // slow right eigenvector of the triangular Jacobian
                let v = DVector::from_vec(vec![jac[(1, 1)] - lam_slow, -jac[(1, 0)]]);
                let v = if v.norm() > 0.0 { v.normalize() } else { DVector::from_vec(vec![1.0, 0.0]) };
                let f = DVector::from_vec(m.rhs(&c));
                v[0] * f[1] - v[1] * f[0]
            };
            let (mut lo, mut hi) = (0.0, 1.5);
            let steps = 3000;
            let mut root = None;
            for k in 0..steps {
                let a = lo + (hi - lo) * k as f64 / steps as f64;
                let b = lo + (hi - lo) * (k + 1) as f64 / steps as f64;
                if fast(a) * fast(b) <= 0.0 {
                    root = Some((a, b));
                    break;
                }
            }
            let (a, b) = root.expect("scan finds the ILDM");
            (lo, hi) = (a, b);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if fast(lo) * fast(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            assert!((p.c[1] - 0.5 * (lo + hi)).abs() < 1e-7, "y1 {y1}: {} vs {}", p.c[1], lo);
            // the ILDM is off the SIM for finite gamma
            assert!((p.c[1] - y1 / (1.0 + y1)).abs() > 1e-4);
        }
    }

    #[test]
    fn ozone_ildm_point_converges() {
        let m = Mechanism::ozone(1000.0).unwrap();
        let spec = IldmSpec::new(m.clone(), 1).fix(1, 0.3);
        let guess = [0.4 - 3e-6, 0.3, 1e-6];
        let p = ildm_point(&spec, &guess).unwrap();
        assert_eq!(p.c[1], 0.3);
        assert!(m.conservation_residual(&p.c).unwrap()[0].abs() <= 1e-10);
        assert!(p.spectral_gap < 1e-2, "{}", p.spectral_gap);
        assert_eq!(p.spectrum.len(), 2);
    }

    #[test]
    fn wrong_number_of_progress_variables() {
        let m = Mechanism::davis_skodje(6.0).unwrap();
        let spec = IldmSpec::new(m, 1);
        assert!(ildm_point(&spec, &[1.0, 0.5]).is_err());
    }
}
