//! Exact left null space of the stoichiometric matrix.

use num_rational::Ratio;
use num_traits::Zero;

type Q = Ratio<i128>;

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Integer basis of `{w : w^T S = 0}` for a stoichiometric matrix given as
/// rows of net changes per reaction (`rows[r][species]`).
///
/// Computed by Gauss–Jordan elimination over the rationals. Each basis
/// vector is scaled to coprime integers with a positive leading entry.
pub fn integer_left_null_space(rows: &[Vec<i64>], n_species: usize) -> Vec<Vec<i64>> {
    // Null space of the reaction x species matrix is exactly the left null space of S.
    let mut a: Vec<Vec<Q>> = rows
        .iter()
        .map(|r| r.iter().map(|&x| Q::from_integer(x as i128)).collect())
        .collect();
    let m = a.len();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n_species {
        if row >= m {
            break;
        }
        let Some(p) = (row..m).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(row, p);
        let inv = a[row][col].recip();
        for x in a[row].iter_mut() {
            *x *= inv;
        }
        for r in 0..m {
            if r != row && !a[r][col].is_zero() {
                let factor = a[r][col];
                for c in 0..n_species {
                    let v = a[row][c] * factor;
                    a[r][c] -= v;
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    let free: Vec<usize> = (0..n_species).filter(|c| !pivots.contains(c)).collect();
    let mut basis = Vec::with_capacity(free.len());
    for &f in &free {
        let mut v = vec![Q::zero(); n_species];
        v[f] = Q::from_integer(1);
        for (r, &p) in pivots.iter().enumerate() {
            v[p] = -a[r][f];
        }
        let lcm = v
            .iter()
            .fold(1i128, |acc, q| acc / gcd(acc, *q.denom()) * q.denom());
        let ints: Vec<i128> = v.iter().map(|q| (q * Q::from_integer(lcm)).to_integer()).collect();
        let g = ints.iter().fold(0i128, |acc, &x| gcd(acc, x)).max(1);
        let lead = ints.iter().find(|x| **x != 0).copied().unwrap_or(1);
        let sign = if lead.is_negative() { -1 } else { 1 };
        basis.push(ints.iter().map(|&x| (sign * x / g) as i64).collect());
    }
    basis
}
