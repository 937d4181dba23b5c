use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use slowman_core::{CriterionKind, IntegratorOptions, Mechanism, ProblemSpec, StopCondition};

fn slowman(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slowman")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = slowman(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn header(text: &str) -> &str {
    text.split_inclusive('\n').next().unwrap()
}

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn lists_three_builtins() {
    let text = ok(&["list-mechanisms"]);
    let names: Vec<&str> = text.lines().map(|l| l.split(':').next().unwrap()).collect();
    assert_eq!(names, ["davis-skodje", "h2-6species", "ozone"]);
}

#[test]
fn solve_recovers_davis_skodje_sim() {
    let doc: Value = serde_json::from_str(&ok(&[
        "solve", "--mechanism", "davis-skodje", "--gamma", "10", "--criterion", "A", "--progress", "y1=1.0",
    ]))
    .unwrap();
    let c0 = floats(&doc["result"]["c0"]);
    assert_eq!(c0[0], 1.0);
    assert!((c0[1] - 0.5).abs() < 0.05, "{c0:?}");
    assert_eq!(doc["result"]["converged"], Value::Bool(true));
}

/// Rebuild the problem from the manifest alone and re-derive the result.
#[test]
fn json_result_revalidates_against_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&[
        "solve", "--mechanism", "h2-6species", "--conservation", "2,1", "--criterion", "B", "--progress", "cH2O=0.3",
        "--rtol", "1e-7", "--atol", "1e-9", "--output", out,
    ]);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(manifest["files"], serde_json::json!(["result.json", "trajectory.csv"]));
    assert_eq!(doc["manifest"]["argv"], manifest["argv"]);
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);

    let mech = &manifest["mechanism"];
    assert_eq!(mech["source"], "builtin");
    let m = Mechanism::builtin(mech["id"].as_str().unwrap(), mech["gamma"].as_f64(), mech["temperature"].as_f64())
        .unwrap()
        .with_conservation_constants(&floats(&mech["conservation_constants"]))
        .unwrap();
    let names: Vec<&str> = mech["species"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(names, ["H2", "O2", "H2O", "H", "O", "OH"]);

    let c0 = floats(&doc["result"]["c0"]);
    let p = &manifest["progress"][0];
    let index = p["index"].as_u64().unwrap() as usize;
    assert_eq!(c0[index], floats(&p["values"])[0]);
    for r in m.conservation_residual(&c0).unwrap() {
        assert!(r.abs() < 1e-12);
    }

    let tol = &manifest["tolerances"];
    let (rtol, atol) = (tol["rtol"].as_f64().unwrap(), tol["atol"].as_f64().unwrap());
    let stop: StopCondition = serde_json::from_value(manifest["stop"].clone()).unwrap();
    let criterion: CriterionKind = manifest["criterion"].as_str().unwrap().parse().unwrap();
    let mut spec = ProblemSpec::new(m, criterion).with_tolerances(rtol, atol).fix(index, c0[index]);
    // the reported objective comes from the tenfold tighter final integration
    spec.integrator = IntegratorOptions { rtol: 0.1 * rtol, atol: 0.1 * atol, ..spec.integrator };
    let again = spec.evaluate(&c0, stop).unwrap().quadrature;
    let reported = doc["result"]["objective"].as_f64().unwrap();
    assert!((again - reported).abs() <= 1e-12 * reported, "{again} vs {reported}");

    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(header(&traj), "t,c_1,c_2,c_3,c_4,c_5,c_6\n");
}

#[test]
fn csv_headers_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let read = |s: &str| fs::read_to_string(dir.path().join(s)).unwrap();

    let o = d("sweep");
    ok(&["sweep", "--mechanism", "davis-skodje", "--criterion", "B", "--progress", "y1=0.5:1.5:3", "--output", &o]);
    assert_eq!(header(&read("sweep/sweep.csv")), golden("sweep_1d_davis_skodje.csv"));
    assert_eq!(read("sweep/sweep.csv").lines().count(), 4);

    let o = d("solve");
    ok(&["solve", "--mechanism", "davis-skodje", "--progress", "y1=1", "--format", "csv", "--output", &o]);
    assert_eq!(header(&read("solve/trajectory.csv")), golden("trajectory_davis_skodje.csv"));
    assert_eq!(header(&read("solve/result.csv")), golden("sweep_1d_davis_skodje.csv"));

    let o = d("land");
    ok(&[
        "landscape", "--mechanism", "davis-skodje", "--gamma", "6", "--progress", "y1=0.2:2", "--progress", "y2=0:1.5",
        "--grid", "5x7", "--output", &o,
    ]);
    let land = read("land/landscape.csv");
    assert_eq!(header(&land), golden("landscape.csv"));
    assert_eq!(land.lines().count(), 1 + 35);
    let argmin = read("land/argmin.csv");
    assert_eq!(header(&argmin), golden("argmin.csv"));
    assert_eq!(argmin.lines().count(), 1 + 5);

    let o = d("ildm");
    ok(&["ildm", "--mechanism", "ozone", "--progress", "O2=0.2:0.3:2", "--seed", "center", "--output", &o]);
    assert_eq!(header(&read("ildm/ildm.csv")), golden("ildm_ozone.csv"));

    let o = d("cons");
    ok(&[
        "consistency", "--mechanism", "davis-skodje", "--criterion", "B", "--progress", "y1=1.5", "--t1", "0.5",
        "--format", "csv", "--output", &o,
    ]);
    assert_eq!(header(&read("cons/consistency.csv")), golden("consistency.csv"));
    assert_eq!(header(&read("cons/trajectory_second.csv")), golden("trajectory_davis_skodje.csv"));
}

#[test]
fn two_dimensional_sweep_header() {
    let text = ok(&[
        "sweep", "--mechanism", "h2-6species", "--criterion", "A", "--progress", "H2O=0.2:0.3:2", "--progress",
        "H2=0.3:0.4:2", "--tf", "1e-3",
    ]);
    assert_eq!(header(&text), golden("sweep_2d_h2.csv"));
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    // serpentine order
    assert!(rows[0].starts_with("0.2,0.3,") && rows[1].starts_with("0.2,0.4,"));
    assert!(rows[2].starts_with("0.3,0.4,") && rows[3].starts_with("0.3,0.3,"));
}

#[test]
fn identity_metric_equals_criterion_a() {
    let dir = tempfile::tempdir().unwrap();
    let metric = dir.path().join("identity.json");
    fs::write(&metric, "[[1, 0], [0, 1]]").unwrap();
    let crit = format!("metric:{}", metric.display());
    let objective = |c: &str| -> f64 {
        let doc: Value = serde_json::from_str(&ok(&[
            "solve", "--mechanism", "davis-skodje", "--criterion", c, "--progress", "y1=0.8", "--tf", "2",
        ]))
        .unwrap();
        doc["result"]["objective"].as_f64().unwrap()
    };
    let (a, m) = (objective("A"), objective(&crit));
    assert!((a - m).abs() <= 1e-8 * a, "{a} vs {m}");
}

#[test]
fn json_mechanism_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ozone.json");
    fs::write(
        &path,
        r#"{
        "name": "ozone-file",
        "temperature": 1000.0,
        "species": [
            {"name": "O", "elements": {"O": 1}},
            {"name": "O2", "elements": {"O": 2}},
            {"name": "O3", "elements": {"O": 3}}
        ],
        "reactions": [
            {"reactants": {"O": 2}, "products": {"O2": 1}, "A": 2.90e17, "b": -1.0, "Ea": 0.0,
             "third_body": {"O": 1.14, "O2": 0.40, "O3": 0.92}},
            {"reactants": {"O2": 1}, "products": {"O": 2}, "A": 6.81e18, "b": -1.0, "Ea": 496.0,
             "third_body": {"O": 1.14, "O2": 0.40, "O3": 0.92}},
            {"reactants": {"O3": 1}, "products": {"O": 1, "O2": 1}, "A": 9.50e14, "b": 0.0, "Ea": 95.0,
             "third_body": {"O": 1.14, "O2": 0.40, "O3": 0.92}},
            {"reactants": {"O": 1, "O2": 1}, "products": {"O3": 1}, "A": 3.32e13, "b": 0.0, "Ea": -4.9,
             "third_body": {"O": 1.14, "O2": 0.40, "O3": 0.92}},
            {"reactants": {"O": 1, "O3": 1}, "products": {"O2": 2}, "A": 5.20e12, "b": 0.0, "Ea": 17.4},
            {"reactants": {"O2": 2}, "products": {"O": 1, "O3": 1}, "A": 4.27e12, "b": 0.0, "Ea": 413.9}
        ]
    }"#,
    )
    .unwrap();
    let p = path.to_str().unwrap();
    let run = |mech: &str| -> Value {
        serde_json::from_str(&ok(&["solve", "--mechanism", mech, "--criterion", "B", "--progress", "O2=0.3", "--tf", "1e-9"]))
            .unwrap()
    };
    let (file, builtin) = (run(p), run("ozone"));
    assert_eq!(file["manifest"]["mechanism"]["source"], "file");
    let (a, b) = (floats(&file["result"]["c0"]), floats(&builtin["result"]["c0"]));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-8, "{a:?} vs {b:?}");
    }
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| slowman(args).status.code().unwrap();
    assert_eq!(code(&["solve", "--mechanism", "davis-skodje"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["solve", "--mechanism", "davis-skodje", "--progress", "y9=1"]), 2);
    assert_eq!(code(&["solve", "--mechanism", "methane", "--progress", "y1=1"]), 2);
    assert_eq!(code(&["solve", "--mechanism", "davis-skodje", "--progress", "y1=1", "--criterion", "Q"]), 2);
    assert_eq!(code(&["solve", "--mechanism", "davis-skodje", "--progress", "y1=1", "--tf", "1", "--epsilon", "1"]), 2);
    assert_eq!(code(&["solve", "--mechanism", "davis-skodje", "--progress", "y1=1", "--rtol", "-1"]), 2);
    assert_eq!(code(&["landscape", "--mechanism", "davis-skodje", "--progress", "y1=0.2:2", "--grid", "3"]), 2);
    assert_eq!(code(&["--jobs", "0", "list-mechanisms"]), 2);

    // the stop event can never fire: a numerical failure
    let out = slowman(&["solve", "--mechanism", "davis-skodje", "--progress", "y1=1", "--epsilon", "1e-300"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn jobs_do_not_change_results() {
    let args = |jobs: &'static str| {
        vec![
            "--jobs", jobs, "sweep", "--mechanism", "davis-skodje", "--criterion", "A", "--progress", "y1=0.4:1.6:4",
            "--no-warm-start",
        ]
    };
    assert_eq!(ok(&args("1")), ok(&args("3")));
}
