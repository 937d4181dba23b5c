use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Shortest decimal that reads back to the same binary64. Plain notation in
/// [1e-5, 1e16), exponent notation elsewhere.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = x.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Comma-separated table built row by row.
pub struct Table {
    text: String,
    width: usize,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let cols: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
        Self { text: format!("{}\n", cols.join(",")), width: cols.len() }
    }

    pub fn row(&mut self, fields: &[String]) {
        debug_assert_eq!(fields.len(), self.width);
        let _ = writeln!(self.text, "{}", fields.join(","));
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub fn columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

pub fn trajectory_csv(tr: &slowman_core::Trajectory) -> String {
    let mut header = vec!["t".to_string()];
    header.extend(columns("c", tr.dim()));
    let mut t = Table::new(&header);
    for (time, c) in tr.times.iter().zip(&tr.states) {
        let mut row = vec![num(*time)];
        row.extend(c.iter().map(|&x| num(x)));
        t.row(&row);
    }
    t.into_string()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MechanismInfo {
    pub id: String,
    pub source: String,
    pub species: Vec<String>,
    pub gamma: Option<f64>,
    pub temperature: Option<f64>,
    pub conservation_constants: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub method: String,
}

/// Everything needed to rerun a computation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub mechanism: MechanismInfo,
    pub criterion: Option<String>,
    pub tolerances: Tolerances,
    /// Stop condition per trajectory, resolved where the run fixes one.
    pub stop: Option<Value>,
    pub progress: Vec<ProgressInfo>,
    pub jobs: usize,
    pub determinism: String,
    pub wall_time_s: f64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProgressInfo {
    pub species: String,
    pub index: usize,
    pub values: Vec<f64>,
}

pub const DETERMINISM: &str = "no random seeds; results are independent of --jobs and bitwise reproducible for the same binary and arguments";

/// JSON document with the manifest as its metadata envelope.
pub fn envelope<T: Serialize>(manifest: &RunManifest, result: &T) -> anyhow::Result<String> {
    #[derive(Serialize)]
    struct Envelope<'a, T> {
        manifest: &'a RunManifest,
        result: &'a T,
    }
    Ok(serde_json::to_string_pretty(&Envelope { manifest, result })? + "\n")
}

/// Named artifacts of one run, written to a directory or stdout.
pub struct Artifacts {
    files: Vec<(String, String)>,
}

impl Artifacts {
    pub fn new() -> Self {
        Self { files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    /// With a directory: every file plus `manifest.json`. Without: the
    /// first file on stdout.
    pub fn emit(self, dir: Option<&Path>, manifest: &mut RunManifest) -> anyhow::Result<()> {
        match dir {
            Some(dir) => {
                fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
                manifest.files = self.names();
                for (name, content) in &self.files {
                    write(&dir.join(name), content)?;
                }
                write(&dir.join("manifest.json"), &(serde_json::to_string_pretty(manifest)? + "\n"))
            }
            None => {
                if let Some((_, content)) = self.files.first() {
                    let mut out = std::io::stdout().lock();
                    out.write_all(content.as_bytes())?;
                    out.flush()?;
                }
                Ok(())
            }
        }
    }
}

fn write(path: &Path, content: &str) -> anyhow::Result<()> {
    fs::write(path, content).with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, -0.0, 0.1, 1.0 / 3.0, 1e-10, 2.5e-300, 1.7976931348623157e308, 123456.789, 5e-324, 1e16, 9.999e15] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(num(0.5), "0.5");
        assert_eq!(num(1e-10), "1e-10");
        assert_eq!(num(f64::NAN), "NaN");
    }

    #[test]
    fn table_layout() {
        let mut t = Table::new(&["a", "b"]);
        t.row(&[num(1.0), num(0.25)]);
        assert_eq!(t.into_string(), "a,b\n1,0.25\n");
    }
}
