use std::fs;
use std::path::Path;

use slowman_core::{CriterionKind, Mechanism};

use crate::UsageError;

/// One `--progress` flag after species lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub name: String,
    pub index: usize,
    pub min: f64,
    pub max: f64,
    pub count: Option<usize>,
}

impl Progress {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            None => vec![self.min],
            Some(1) => vec![self.min],
            Some(n) => {
                let last = (n - 1) as f64;
                let mut v: Vec<f64> = (0..n).map(|k| self.min + (self.max - self.min) * (k as f64 / last)).collect();
                v[n - 1] = self.max;
                v
            }
        }
    }

    pub fn single(&self) -> Option<f64> {
        match self.count {
            None | Some(1) if self.min == self.max => Some(self.min),
            _ => None,
        }
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn number(s: &str, what: &str) -> anyhow::Result<f64> {
    let x: f64 = s.trim().parse().map_err(|_| usage(format!("{what}: `{s}` is not a number")))?;
    if !x.is_finite() {
        return Err(usage(format!("{what}: `{s}` is not finite")));
    }
    Ok(x)
}

/// Species by exact name, or with a leading `c` stripped (`cH2O`).
pub fn species(m: &Mechanism, name: &str) -> anyhow::Result<usize> {
    if let Ok(i) = m.species_index(name) {
        return Ok(i);
    }
    if let Some(rest) = name.strip_prefix('c') {
        if let Ok(i) = m.species_index(rest) {
            return Ok(i);
        }
    }
    let known: Vec<&str> = m.species.iter().map(|s| s.name.as_str()).collect();
    Err(usage(format!("unknown species `{name}` (known: {})", known.join(", "))))
}

/// `name=value`, `name=min:max` or `name=min:max:count`.
pub fn progress(m: &Mechanism, spec: &str) -> anyhow::Result<Progress> {
    let (name, rhs) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("progress `{spec}` must look like name=value or name=min:max:count")))?;
    let index = species(m, name.trim())?;
    let parts: Vec<&str> = rhs.split(':').collect();
    let (min, max, count) = match parts.as_slice() {
        [v] => {
            let v = number(v, name)?;
            (v, v, None)
        }
        [a, b] => (number(a, name)?, number(b, name)?, None),
        [a, b, n] => {
            let n: usize = n.trim().parse().map_err(|_| usage(format!("{name}: count `{n}` is not a positive integer")))?;
            if n == 0 {
                return Err(usage(format!("{name}: count must be positive")));
            }
            (number(a, name)?, number(b, name)?, Some(n))
        }
        _ => return Err(usage(format!("progress `{spec}` has too many fields"))),
    };
    if min > max {
        return Err(usage(format!("{name}: range {min}:{max} is reversed")));
    }
    if count.is_some_and(|n| n > 1) && min == max {
        return Err(usage(format!("{name}: a multi-point range needs min < max")));
    }
    Ok(Progress { name: name.trim().to_string(), index, min, max, count })
}

/// `n1xn2`.
pub fn grid(s: &str) -> anyhow::Result<(usize, usize)> {
    let bad = || usage(format!("grid `{s}` must look like 101x101"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a < 2 || b < 2 {
        return Err(usage("grid axes need at least two points each"));
    }
    Ok((a, b))
}

pub fn criterion(s: &str) -> anyhow::Result<CriterionKind> {
    if let Some(path) = s.strip_prefix("metric:") {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read metric file `{path}`: {e}")))?;
        return CriterionKind::metric_from_json(&text).map_err(|e| usage(format!("metric file `{path}`: {e}")));
    }
    s.parse().map_err(|_| usage(format!("criterion `{s}` must be A, B, C or metric:<file>")))
}

/// Where a mechanism came from, for the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Builtin,
    File,
}

pub fn mechanism(name: &str, gamma: Option<f64>, temperature: Option<f64>, conservation: Option<&[f64]>) -> anyhow::Result<(Mechanism, Source)> {
    let builtin = slowman_core::mechanism::BUILTIN_NAMES.contains(&name);
    let (mut m, source) = if builtin {
        if gamma.is_some() && name != "davis-skodje" {
            return Err(usage("--gamma applies to davis-skodje only"));
        }
        let m = Mechanism::builtin(name, gamma, temperature).map_err(|e| usage(e.to_string()))?;
        if temperature.is_some() && name != "ozone" {
            return Err(usage(format!("--temperature does not apply to {name}")));
        }
        (m, Source::Builtin)
    } else if Path::new(name).is_file() {
        let text = fs::read_to_string(name).map_err(|e| usage(format!("cannot read `{name}`: {e}")))?;
        let mut m = Mechanism::from_json_str(&text).map_err(|e| usage(format!("{name}: {e}")))?;
        if let Some(t) = temperature {
            m = m.with_temperature(t).map_err(|e| usage(e.to_string()))?;
        }
        (m, Source::File)
    } else {
        let names = slowman_core::mechanism::BUILTIN_NAMES.join(", ");
        return Err(usage(format!("mechanism `{name}` is neither a built-in ({names}) nor a file")));
    };
    if let Some(c) = conservation {
        m = m.with_conservation_constants(c).map_err(|e| usage(e.to_string()))?;
    }
    Ok((m, source))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h2() -> Mechanism {
        Mechanism::h2_six_species().unwrap()
    }

    #[test]
    fn progress_forms() {
        let m = h2();
        let p = progress(&m, "cH2O=0.05:0.65:13").unwrap();
        assert_eq!(p.index, 2);
        let v = p.values();
        assert_eq!(v.len(), 13);
        assert_eq!(v[0], 0.05);
        assert!((v[12] - 0.65).abs() < 1e-15);
        assert!((v[1] - 0.1).abs() < 1e-15);

        let p = progress(&m, "H2O=0.3").unwrap();
        assert_eq!(p.single(), Some(0.3));
        assert_eq!(p.values(), vec![0.3]);
    }

    #[test]
    fn progress_rejects_bad_input() {
        let m = h2();
        for bad in ["H2O", "X=1", "H2O=a", "H2O=0.5:0.1:3", "H2O=0.1:0.2:0", "H2O=1:2:3:4", "H2O=inf", "H2O=0.2:0.2:5"] {
            let e = progress(&m, bad).unwrap_err();
            assert!(e.downcast_ref::<UsageError>().is_some(), "{bad}");
        }
    }

    #[test]
    fn grid_parses() {
        assert_eq!(grid("101x51").unwrap(), (101, 51));
        assert!(grid("101").is_err());
        assert!(grid("1x5").is_err());
        assert!(grid("ax5").is_err());
    }

    #[test]
    fn criterion_tokens() {
        assert_eq!(criterion("A").unwrap(), CriterionKind::A);
        assert_eq!(criterion("c").unwrap(), CriterionKind::C);
        assert!(criterion("D").is_err());
        assert!(criterion("metric:/nonexistent.json").is_err());
    }

    #[test]
    fn mechanism_lookup() {
        let (m, s) = mechanism("davis-skodje", Some(6.0), None, None).unwrap();
        assert_eq!(m.gamma(), Some(6.0));
        assert_eq!(s, Source::Builtin);
        assert!(mechanism("ozone", Some(6.0), None, None).is_err());
        assert!(mechanism("h2-6species", None, Some(900.0), None).is_err());
        assert!(mechanism("no-such-thing", None, None, None).is_err());
        let (m, _) = mechanism("h2-6species", None, None, Some(&[2.0, 1.0])).unwrap();
        assert_eq!(m.conservation_constants(), vec![2.0, 1.0]);
    }
}
