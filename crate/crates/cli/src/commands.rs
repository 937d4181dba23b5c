use std::time::Instant;

use anyhow::{anyhow, bail};
use serde::Serialize;
use slowman_core::ildm::IldmPoint;
use slowman_core::landscape::NodeStatus;
use slowman_core::simopt::{time_at_progress, Reduced, EPSILON_FRACTION, HORIZON_DECAY};
use slowman_core::*;

use crate::args::*;
use crate::output::*;
use crate::parse::{self, Progress, Source};
use crate::UsageError;

pub fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Landscape(a) => landscape(a),
        Command::Consistency(a) => consistency(a),
        Command::Ildm(a) => ildm(a),
        Command::ListMechanisms => list_mechanisms(),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Run context shared by all subcommands.
struct Run {
    started: Instant,
    manifest: RunManifest,
    format: Format,
    output: Option<std::path::PathBuf>,
}

impl Run {
    fn new(sub: &str, m: &Mechanism, source: Source, margs: &MechanismArgs, out: &OutputArgs, default: Format) -> Self {
        let mechanism = MechanismInfo {
            id: match source {
                Source::Builtin => m.name.clone(),
                Source::File => margs.mechanism.clone(),
            },
            source: match source {
                Source::Builtin => "builtin".into(),
                Source::File => "file".into(),
            },
            species: m.species.iter().map(|s| s.name.clone()).collect(),
            gamma: m.gamma(),
            temperature: match m.kind {
                MechanismKind::DavisSkodje { .. } => None,
                MechanismKind::MassAction => Some(m.temperature),
            },
            conservation_constants: m.conservation_constants(),
        };
        let defaults = IntegratorOptions::default();
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                tool: "slowman".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                subcommand: sub.into(),
                argv: std::env::args().collect(),
                mechanism,
                criterion: None,
                tolerances: Tolerances { rtol: defaults.rtol, atol: defaults.atol, method: "bdf".into() },
                stop: None,
                progress: Vec::new(),
                jobs: rayon::current_num_threads(),
                determinism: DETERMINISM.into(),
                wall_time_s: 0.0,
                files: Vec::new(),
            },
            format: out.format.unwrap_or(default),
            output: out.output.clone(),
        }
    }

    fn progress(&mut self, p: &[Progress]) {
        self.manifest.progress =
            p.iter().map(|p| ProgressInfo { species: p.name.clone(), index: p.index, values: p.values() }).collect();
    }

    fn integrator(&mut self, n: &NumericArgs) -> IntegratorOptions {
        let mut opts = IntegratorOptions::default();
        opts.rtol = n.rtol.unwrap_or(opts.rtol);
        opts.atol = n.atol.unwrap_or(opts.atol);
        opts.method = match n.method {
            MethodArg::Bdf => Method::ImplicitBdf,
            MethodArg::Radau => Method::ImplicitRk,
        };
        self.manifest.tolerances = Tolerances {
            rtol: opts.rtol,
            atol: opts.atol,
            method: match n.method {
                MethodArg::Bdf => "bdf".into(),
                MethodArg::Radau => "radau".into(),
            },
        };
        opts
    }

    fn finish(mut self, artifacts: Artifacts) -> anyhow::Result<()> {
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        self.manifest.files = artifacts.names();
        artifacts.emit(self.output.as_deref(), &mut self.manifest)
    }
}

fn load_mechanism(a: &MechanismArgs) -> anyhow::Result<(Mechanism, Source)> {
    parse::mechanism(&a.mechanism, a.gamma, a.temperature, a.conservation.as_deref())
}

fn explicit_stop(n: &NumericArgs) -> Option<StopCondition> {
    match (n.tf, n.epsilon) {
        (Some(t_final), _) => Some(StopCondition::FixedHorizon { t_final }),
        (None, Some(epsilon)) => Some(StopCondition::VelocityNorm { epsilon }),
        (None, None) => None,
    }
}

fn check_positive(n: &NumericArgs) -> anyhow::Result<()> {
    for (name, v) in [("--tf", n.tf), ("--epsilon", n.epsilon), ("--rtol", n.rtol), ("--atol", n.atol)] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(usage(format!("{name} must be positive, got {v}")));
            }
        }
    }
    Ok(())
}

/// Problem spec without progress values, plus the parsed progress flags.
fn problem(sub: &str, p: &ProblemArgs, default: Format) -> anyhow::Result<(ProblemSpec, Vec<Progress>, Run)> {
    check_positive(&p.numeric)?;
    let (m, source) = load_mechanism(&p.mechanism)?;
    let progress = p.progress.iter().map(|s| parse::progress(&m, s)).collect::<anyhow::Result<Vec<_>>>()?;
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = progress.iter().find(|q| !seen.insert(q.index)) {
        return Err(usage(format!("species `{}` given twice", dup.name)));
    }
    let criterion = parse::criterion(&p.criterion)?;
    let mut run = Run::new(sub, &m, source, &p.mechanism, &p.output, default);
    let opts = run.integrator(&p.numeric);
    let mut spec = ProblemSpec::new(m, criterion).with_tolerances(opts.rtol, opts.atol);
    spec.integrator.method = opts.method;
    if let Some(stop) = explicit_stop(&p.numeric) {
        spec = spec.with_stop(stop);
    }
    run.manifest.criterion = Some(p.criterion.clone());
    run.manifest.stop = Some(serde_json::to_value(spec.stop)?);
    run.progress(&progress);
    Ok((spec, progress, run))
}

fn fix_singles(mut spec: ProblemSpec, progress: &[Progress]) -> anyhow::Result<ProblemSpec> {
    for p in progress {
        let v = p.single().ok_or_else(|| usage(format!("`{}` needs a single value here", p.name)))?;
        spec = spec.fix(p.index, v);
    }
    Ok(spec)
}

fn result_header(progress: usize, n: usize) -> Vec<String> {
    let mut h = columns("progress", progress);
    h.extend(columns("c", n));
    h.push("objective".into());
    h.push("converged".into());
    h
}

fn result_row(progress: &[f64], r: Option<&SolveResult>, n: usize) -> Vec<String> {
    let mut row: Vec<String> = progress.iter().map(|&x| num(x)).collect();
    match r {
        Some(r) => {
            row.extend(r.c0.iter().map(|&x| num(x)));
            row.push(num(r.objective));
            row.push(r.converged.to_string());
        }
        None => {
            row.extend((0..=n).map(|_| num(f64::NAN)));
            row.push("false".into());
        }
    }
    row
}

fn solve(a: SolveArgs) -> anyhow::Result<()> {
    let (spec, progress, mut run) = problem("solve", &a.problem, Format::Json)?;
    let mut spec = fix_singles(spec, &progress)?;
    spec.initial_guess = a.guess;
    let r = reconstruct_point(&spec)?;
    run.manifest.stop = Some(serde_json::to_value(r.stop)?);
    let n = spec.mechanism.n_species();
    let mut out = Artifacts::new();
    match run.format {
        Format::Json => out.add("result.json", envelope(&run.manifest, &r)?),
        Format::Csv => {
            let mut t = Table::new(&result_header(progress.len(), n));
            let pv: Vec<f64> = progress.iter().map(|p| p.min).collect();
            t.row(&result_row(&pv, Some(&r), n));
            out.add("result.csv", t.into_string());
        }
    }
    out.add("trajectory.csv", trajectory_csv(&r.trajectory));
    run.finish(out)
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let (spec, progress, run) = problem("sweep", &a.problem, Format::Csv)?;
    if progress.len() > 2 {
        return Err(usage("sweeps take one or two --progress flags"));
    }
    let axes = progress.iter().map(|p| (p.index, p.values())).collect();
    let result = sweep_manifold(&spec, &SweepSpec { axes, warm_start: !a.no_warm_start })?;
    let n = spec.mechanism.n_species();
    let mut out = Artifacts::new();
    match run.format {
        Format::Json => out.add("sweep.json", envelope(&run.manifest, &result)?),
        Format::Csv => {
            let mut t = Table::new(&result_header(progress.len(), n));
            for e in &result.entries {
                t.row(&result_row(&e.progress, e.result.as_ref().ok(), n));
            }
            out.add("sweep.csv", t.into_string());
        }
    }
    let failed: Vec<String> = result
        .entries
        .iter()
        .filter_map(|e| e.result.as_ref().err().map(|msg| format!("{:?}: {msg}", e.progress)))
        .collect();
    run.finish(out)?;
    if !failed.is_empty() {
        bail!("{} of {} sweep nodes failed\n  {}", failed.len(), result.entries.len(), failed.join("\n  "));
    }
    Ok(())
}

#[derive(Serialize)]
struct LandscapeDoc<'a> {
    grid: &'a LandscapeGrid,
    landscape: &'a LandscapeResult,
}

fn status_label(s: &NodeStatus) -> &'static str {
    match s {
        NodeStatus::Ok => "ok",
        NodeStatus::Infeasible => "infeasible",
        NodeStatus::Failed(_) => "failed",
    }
}

fn landscape(a: LandscapeArgs) -> anyhow::Result<()> {
    check_positive(&a.numeric)?;
    let (m, source) = load_mechanism(&a.mechanism)?;
    let progress = a.progress.iter().map(|s| parse::progress(&m, s)).collect::<anyhow::Result<Vec<_>>>()?;
    let [p1, p2] = progress.as_slice() else {
        return Err(usage("landscape takes exactly two --progress axes"));
    };
    if p1.index == p2.index {
        return Err(usage("landscape axes must be distinct species"));
    }
    let counts = match &a.grid {
        Some(g) => parse::grid(g)?,
        None => (p1.count.unwrap_or(101), p2.count.unwrap_or(101)),
    };
    let logs = a.log_axis.iter().map(|s| parse::species(&m, s)).collect::<anyhow::Result<Vec<_>>>()?;
    let axis = |p: &Progress, count: usize| -> anyhow::Result<Axis> {
        if !(p.min < p.max) || count < 2 {
            return Err(usage(format!("landscape axis `{}` needs min < max and at least two points", p.name)));
        }
        let ax = if logs.contains(&p.index) {
            Axis::log(p.index, p.min, p.max, count)
        } else {
            Axis::linear(p.index, p.min, p.max, count)
        };
        ax.validate().map_err(|e| usage(e.to_string()))?;
        Ok(ax)
    };
    let axes = [axis(p1, counts.0)?, axis(p2, counts.1)?];
    let criterion = parse::criterion(&a.criterion)?;
    let stop = match explicit_stop(&a.numeric) {
        Some(s) => LandscapeStop::Absolute(s),
        None => LandscapeStop::RelativeVelocity {
            fraction: if criterion == CriterionKind::C { EPSILON_FRACTION } else { HORIZON_DECAY },
        },
    };
    let mut run = Run::new("landscape", &m, source, &a.mechanism, &a.output, Format::Csv);
    let opts = run.integrator(&a.numeric);
    let mut grid = LandscapeGrid::new(axes, criterion, stop);
    grid.criterion_options.negative_slack = 10.0 * opts.atol;
    grid.integrator = opts;
    for s in &a.pin {
        let p = parse::progress(&m, s)?;
        let v = p.single().ok_or_else(|| usage(format!("--pin `{s}` needs a single value")))?;
        grid.pinned.insert(p.index, v);
    }
    run.manifest.criterion = Some(a.criterion.clone());
    run.manifest.stop = Some(serde_json::to_value(grid.stop)?);
    run.manifest.progress = grid
        .axes
        .iter()
        .zip([p1, p2])
        .map(|(ax, p)| ProgressInfo { species: p.name.clone(), index: ax.index, values: ax.values() })
        .collect();

    let result = scan_landscape(&m, &grid)?;
    if result.failed_count() > 0 {
        log::warn!("{} landscape nodes failed to integrate", result.failed_count());
    }
    let mut out = Artifacts::new();
    match run.format {
        Format::Json => {
            let doc = LandscapeDoc { grid: &grid, landscape: &result };
            out.add("landscape.json", envelope(&run.manifest, &doc)?);
        }
        Format::Csv => {
            let mut t = Table::new(&["axis1", "axis2", "objective", "status"]);
            for (i, x) in result.axis1.iter().enumerate() {
                for (j, y) in result.axis2.iter().enumerate() {
                    t.row(&[num(*x), num(*y), num(result.values[i][j]), status_label(&result.status[i][j]).into()]);
                }
            }
            out.add("landscape.csv", t.into_string());
            let mut t = Table::new(&["axis1", "axis2", "objective"]);
            for (x, best) in result.axis1.iter().zip(&result.argmin) {
                let (y, v) = best.unwrap_or((f64::NAN, f64::NAN));
                t.row(&[num(*x), num(y), num(v)]);
            }
            out.add("argmin.csv", t.into_string());
        }
    }
    run.finish(out)
}

fn consistency(a: ConsistencyArgs) -> anyhow::Result<()> {
    let (spec, progress, mut run) = problem("consistency", &a.problem, Format::Json)?;
    let spec = fix_singles(spec, &progress)?;
    let t1 = match a.t1 {
        Some(t1) => t1,
        None => {
            let (index, fraction) = match &a.t1_progress {
                Some(s) => {
                    let p = parse::progress(&spec.mechanism, s)?;
                    let f = p.single().ok_or_else(|| usage("--t1-progress takes name=fraction"))?;
                    if !(0.0..=1.0).contains(&f) {
                        return Err(usage("--t1-progress fraction must lie in [0, 1]"));
                    }
                    (p.index, f)
                }
                None => (progress[0].index, 0.5),
            };
            let eq = equilibrium_state(&spec.mechanism)?.c;
            let first = reconstruct_point(&spec)?;
            time_at_progress(&first.trajectory, index, fraction, eq[index])
                .ok_or_else(|| anyhow!("the optimal trajectory never reaches {:.0}% progress", 100.0 * fraction))?
        }
    };
    let report = consistency_test(&spec, t1)?;
    run.manifest.stop = Some(serde_json::to_value(report.first.stop)?);
    let mut out = Artifacts::new();
    match run.format {
        Format::Json => out.add("consistency.json", envelope(&run.manifest, &report)?),
        Format::Csv => {
            let mut t = Table::new(&["t1", "objective_1", "objective_2", "initial_defect", "defect"]);
            t.row(&[
                num(report.t1),
                num(report.first.objective),
                num(report.second.objective),
                num(report.initial_defect),
                num(report.defect),
            ]);
            out.add("consistency.csv", t.into_string());
        }
    }
    out.add("trajectory_first.csv", trajectory_csv(&report.first.trajectory));
    out.add("trajectory_second.csv", trajectory_csv(&report.second.trajectory));
    run.finish(out)
}

#[derive(Serialize)]
struct IldmEntry {
    progress: Vec<f64>,
    #[serde(flatten)]
    outcome: IldmOutcome,
}

#[derive(Serialize)]
#[serde(rename_all = "lowercase")]
enum IldmOutcome {
    Point(IldmPoint),
    Error(String),
}

/// Ascending in 1-D, serpentine in 2-D, so each node continues from a neighbour.
fn grid_nodes(progress: &[Progress]) -> Vec<Vec<f64>> {
    match progress {
        [p] => p.values().into_iter().map(|x| vec![x]).collect(),
        [p, q] => {
            let b = q.values();
            let mut out = Vec::new();
            for (r, x) in p.values().into_iter().enumerate() {
                let row: Vec<f64> = if r % 2 == 0 { b.clone() } else { b.iter().rev().copied().collect() };
                out.extend(row.into_iter().map(|y| vec![x, y]));
            }
            out
        }
        _ => Vec::new(),
    }
}

fn ildm(a: IldmArgs) -> anyhow::Result<()> {
    check_positive(&a.numeric)?;
    if !(a.tolerance > 0.0) {
        return Err(usage("--tolerance must be positive"));
    }
    let (m, source) = load_mechanism(&a.mechanism)?;
    let progress = a.progress.iter().map(|s| parse::progress(&m, s)).collect::<anyhow::Result<Vec<_>>>()?;
    if !(1..=2).contains(&progress.len()) || (progress.len() == 2 && progress[0].index == progress[1].index) {
        return Err(usage("ildm takes one or two distinct --progress species"));
    }
    let seed = match a.seed.as_str() {
        "center" => None,
        s => Some(parse::criterion(s)?),
    };
    let mut run = Run::new("ildm", &m, source, &a.mechanism, &a.output, Format::Csv);
    let opts = run.integrator(&a.numeric);
    run.manifest.criterion = Some(format!("ildm (seed {})", a.seed));
    run.progress(&progress);
    let stop = explicit_stop(&a.numeric);

    let node_problem = |node: &[f64]| {
        let mut spec = ProblemSpec::new(m.clone(), seed.clone().unwrap_or(CriterionKind::B)).with_tolerances(opts.rtol, opts.atol);
        spec.integrator.method = opts.method;
        for (p, &v) in progress.iter().zip(node) {
            spec = spec.fix(p.index, v);
        }
        if let Some(s) = stop {
            spec = spec.with_stop(s);
        }
        spec
    };
    let seed_at = |node: &[f64]| -> anyhow::Result<Vec<f64>> {
        let spec = node_problem(node);
        Ok(match seed {
            None => Reduced::new(&spec)?.center(&spec)?,
            Some(_) => reconstruct_point(&spec)?.c0,
        })
    };
    // previous point moved onto the new node's constraints
    let continued = |prev: &[f64], node: &[f64]| -> anyhow::Result<Vec<f64>> {
        let red = Reduced::new(&node_problem(node))?;
        Ok(red.point(&red.to_z(prev)))
    };

    let mut entries = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    for node in grid_nodes(&progress) {
        let mut spec = IldmSpec::new(m.clone(), progress.len());
        spec.tolerance = a.tolerance;
        for (p, &v) in progress.iter().zip(&node) {
            spec = spec.fix(p.index, v);
        }
        let attempt = |guess: anyhow::Result<Vec<f64>>| guess.and_then(|g| Ok(ildm_point(&spec, &g)?));
        let result = match (&prev, a.no_warm_start) {
            (Some(c), false) => attempt(continued(c, &node)).or_else(|e| {
                log::info!("continuation failed at {node:?} ({e:#}); reseeding");
                attempt(seed_at(&node))
            }),
            _ => attempt(seed_at(&node)),
        };
        let outcome = match result {
            Ok(p) => {
                prev = Some(p.c.clone());
                IldmOutcome::Point(p)
            }
            Err(e) => IldmOutcome::Error(format!("{e:#}")),
        };
        entries.push(IldmEntry { progress: node, outcome });
    }

    let n = m.n_species();
    let reduced = n - m.conservation_constants().len();
    let mut out = Artifacts::new();
    match run.format {
        Format::Json => out.add("ildm.json", envelope(&run.manifest, &entries)?),
        Format::Csv => {
            let mut h = columns("progress", progress.len());
            h.extend(columns("c", n));
            h.extend(["residual", "spectral_gap", "iterations"].map(String::from));
            for k in 1..=reduced {
                h.push(format!("lambda_{k}_re"));
                h.push(format!("lambda_{k}_im"));
            }
            h.push("converged".into());
            let mut t = Table::new(&h);
            for e in &entries {
                let mut row: Vec<String> = e.progress.iter().map(|&x| num(x)).collect();
                match &e.outcome {
                    IldmOutcome::Point(p) => {
                        row.extend(p.c.iter().map(|&x| num(x)));
                        row.extend([num(p.residual), num(p.spectral_gap), p.iterations.to_string()]);
                        for k in 0..reduced {
                            let (re, im) = p.spectrum.get(k).copied().unwrap_or((f64::NAN, f64::NAN));
                            row.extend([num(re), num(im)]);
                        }
                        row.push("true".into());
                    }
                    IldmOutcome::Error(_) => {
                        row.extend((0..n + 3 + 2 * reduced).map(|_| num(f64::NAN)));
                        row.push("false".into());
                    }
                }
                t.row(&row);
            }
            out.add("ildm.csv", t.into_string());
        }
    }
    let failed: Vec<String> = entries
        .iter()
        .filter_map(|e| match &e.outcome {
            IldmOutcome::Error(msg) => Some(format!("{:?}: {msg}", e.progress)),
            IldmOutcome::Point(_) => None,
        })
        .collect();
    run.finish(out)?;
    if !failed.is_empty() {
        bail!("{} of {} ILDM points failed\n  {}", failed.len(), entries.len(), failed.join("\n  "));
    }
    Ok(())
}

fn list_mechanisms() -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    for name in slowman_core::mechanism::BUILTIN_NAMES {
        let m = Mechanism::builtin(name, None, None)?;
        writeln!(out, "{}", m.summary())?;
    }
    Ok(())
}
