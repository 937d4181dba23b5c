use rayon::prelude::*;
use serde::Serialize;

use super::{solve, ProblemSpec, SolveResult};
use crate::error::{Error, Result};

/// Progress-variable grid: one or two `(species index, values)` axes.
#[derive(Debug, Clone, Serialize)]
pub struct SweepSpec {
    pub axes: Vec<(usize, Vec<f64>)>,
    pub warm_start: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub progress: Vec<f64>,
    #[serde(serialize_with = "ser_result")]
    pub result: std::result::Result<SolveResult, String>,
}

fn ser_result<S: serde::Serializer>(r: &std::result::Result<SolveResult, String>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match r {
        Ok(v) => v.serialize(s),
        Err(e) => serde::Serialize::serialize(&serde_json::json!({ "error": e }), s),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifoldResult {
    pub indices: Vec<usize>,
    pub entries: Vec<SweepEntry>,
}

impl ManifoldResult {
    pub fn successes(&self) -> impl Iterator<Item = (&[f64], &SolveResult)> {
        self.entries.iter().filter_map(|e| e.result.as_ref().ok().map(|r| (e.progress.as_slice(), r)))
    }
}

/// Visiting order: ascending in 1-D, serpentine in 2-D.
fn nodes(sweep: &SweepSpec) -> Result<Vec<Vec<f64>>> {
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    match sweep.axes.as_slice() {
        [(_, a)] => Ok(sorted(a).into_iter().map(|x| vec![x]).collect()),
        [(i, a), (j, b)] => {
            if i == j {
                return Err(Error::InvalidProblem("sweep axes must be distinct species".into()));
            }
            let (a, b) = (sorted(a), sorted(b));
            let mut out = Vec::with_capacity(a.len() * b.len());
            for (r, &x) in a.iter().enumerate() {
                let row: Box<dyn Iterator<Item = &f64>> = if r % 2 == 0 { Box::new(b.iter()) } else { Box::new(b.iter().rev()) };
                out.extend(row.map(|&y| vec![x, y]));
            }
            Ok(out)
        }
        _ => Err(Error::InvalidProblem("sweeps take one or two progress axes".into())),
    }
}

/// Solve the reconstruction problem at every grid node. Failures are kept
/// per node; warm starts chain from the last successful node.
pub fn sweep_manifold(spec: &ProblemSpec, sweep: &SweepSpec) -> Result<ManifoldResult> {
    let indices: Vec<usize> = sweep.axes.iter().map(|(i, _)| *i).collect();
    let n = spec.mechanism.n_species();
    if let Some(&i) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::DimensionMismatch { expected: n, got: i + 1 });
    }
    let nodes = nodes(sweep)?;
    let node_spec = |p: &[f64]| {
        let mut s = spec.clone();
        for (&i, &v) in indices.iter().zip(p) {
            s.fixed.insert(i, v);
        }
        s
    };
    let entries = if sweep.warm_start {
        let mut prev: Option<Vec<f64>> = spec.initial_guess.clone();
        let mut out = Vec::with_capacity(nodes.len());
        for p in nodes {
            let s = node_spec(&p);
            let result = solve(&s, None, prev.as_deref()).map_err(|e| e.to_string());
            if let Ok(r) = &result {
                prev = Some(r.c0.clone());
            }
            out.push(SweepEntry { progress: p, result });
        }
        out
    } else {
        nodes
            .into_par_iter()
            .map(|p| {
                let s = node_spec(&p);
                let result = solve(&s, None, spec.initial_guess.as_deref()).map_err(|e| e.to_string());
                SweepEntry { progress: p, result }
            })
            .collect()
    };
    for e in &entries {
        if let Err(msg) = &e.result {
            log::warn!("sweep node {:?} failed: {msg}", e.progress);
        }
    }
    Ok(ManifoldResult { indices, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serpentine_order() {
        let s = SweepSpec { axes: vec![(0, vec![2.0, 1.0]), (1, vec![0.1, 0.2, 0.3])], warm_start: true };
        let n = nodes(&s).unwrap();
        let second: Vec<f64> = n.iter().map(|p| p[1]).collect();
        assert_eq!(n[0][0], 1.0);
        assert_eq!(second, vec![0.1, 0.2, 0.3, 0.3, 0.2, 0.1]);
    }

    #[test]
    fn rejects_three_axes() {
        let s = SweepSpec { axes: vec![(0, vec![1.0]), (1, vec![1.0]), (2, vec![1.0])], warm_start: false };
        assert!(nodes(&s).is_err());
    }
}
