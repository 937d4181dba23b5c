use nalgebra::{DMatrix, DVector};

use super::{Mechanism, MechanismKind, State};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::integrator::{integrate, IntegratorOptions, StopCondition};
use crate::linalg::{feasible_center, row_and_null_space};

const TARGET: f64 = 1e-12;

/// Equilibrium composition on the mechanism's conservation-constrained
/// subspace: a long integration from the center of the admissible polytope,
/// polished by damped Newton in null-space coordinates.
pub fn equilibrium_state(m: &Mechanism) -> Result<State> {
    if let MechanismKind::DavisSkodje { .. } = m.kind {
        return Ok(State { c: vec![0.0, 0.0], t: f64::INFINITY });
    }
    let n = m.n_species();
    let e = m.conservation_matrix();
    let b = DVector::from_vec(m.conservation_constants());
    let start = feasible_center(&e, &b, &vec![0.0; n], &vec![f64::INFINITY; n], &vec![true; n], f64::MAX.sqrt())?;
    let (_, null) = row_and_null_space(&e);

    let opts = IntegratorOptions { rtol: 1e-10, atol: 1e-16, ..Default::default() };
    let mut c = start.as_slice().to_vec();
    let mut t = 0.0;
    let mut best = c.clone();
    let mut best_norm = f_norm(m, &c);
    for horizon in [1e4, 1e8, 1e12] {
        let tr = integrate(m, &c, StopCondition::FixedHorizon { t_final: horizon }, None, &opts)?;
        c = tr.final_state().to_vec();
        t += horizon;
        match newton(m, &null, &c) {
            Ok(x) => {
                return Ok(State { c: x, t });
            }
            Err((x, r)) => {
                if r < best_norm {
                    best_norm = r;
                    best = x;
                }
            }
        }
    }
    Err(Error::NewtonDivergence {
        message: "equilibrium Newton iteration did not reach the target".into(),
        residual: best_norm,
        best,
    })
}

fn f_norm(m: &Mechanism, c: &[f64]) -> f64 {
    m.rhs(c).iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn newton(m: &Mechanism, null: &DMatrix<f64>, c0: &[f64]) -> std::result::Result<Vec<f64>, (Vec<f64>, f64)> {
    let mut c = DVector::from_column_slice(c0);
    let mut r = f_norm(m, c.as_slice());
    for _ in 0..100 {
        if r <= TARGET && c.iter().all(|&v| v >= 0.0) {
            return Ok(c.as_slice().to_vec());
        }
        let f = DVector::from_vec(m.rhs(c.as_slice()));
        let jr = null.transpose() * m.jacobian(c.as_slice()) * null;
        let Some(dz) = jr.lu().solve(&(-(null.transpose() * &f))) else {
            break;
        };
        let dc = null * dz;
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-10 {
            let trial = &c + &dc * lambda;
            if trial.iter().all(|&v| v >= 0.0) {
                let rt = f_norm(m, trial.as_slice());
                if rt < r {
                    c = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if r <= TARGET && c.iter().all(|&v| v >= 0.0) {
        Ok(c.as_slice().to_vec())
    } else {
        Err((c.as_slice().to_vec(), r))
    }
}
