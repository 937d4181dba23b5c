use criterion::{criterion_group, criterion_main, Criterion};
use slowman_core::*;

fn reconstruct(c: &mut Criterion) {
    let mut g = c.benchmark_group("reconstruct_point");
    g.sample_size(10);
    for kind in [CriterionKind::A, CriterionKind::B, CriterionKind::C] {
        let spec = ProblemSpec::new(Mechanism::davis_skodje(10.0).unwrap(), kind.clone()).fix(0, 1.0);
        g.bench_function(format!("davis_skodje_{}", kind.label()), |b| b.iter(|| reconstruct_point(&spec).unwrap()));
    }
    let spec = ProblemSpec::new(Mechanism::h2_six_species().unwrap(), CriterionKind::B).fix(2, 0.3);
    g.bench_function("h2_B", |b| b.iter(|| reconstruct_point(&spec).unwrap()));
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let spec = ProblemSpec::new(Mechanism::davis_skodje(10.0).unwrap(), CriterionKind::B);
    let nodes: Vec<f64> = (0..10).map(|k| 0.2 * (k + 1) as f64).collect();
    let mut g = c.benchmark_group("sweep_davis_skodje");
    g.sample_size(10);
    for warm_start in [true, false] {
        let s = SweepSpec { axes: vec![(0, nodes.clone())], warm_start };
        let name = if warm_start { "warm" } else { "cold" };
        g.bench_function(name, |b| b.iter(|| sweep_manifold(&spec, &s).unwrap()));
    }
    g.finish();
}

fn landscape(c: &mut Criterion) {
    let m = Mechanism::davis_skodje(6.0).unwrap();
    let axes = [Axis::linear(0, 0.2, 2.0, 21), Axis::linear(1, 0.0, 1.5, 21)];
    let grid = LandscapeGrid::new(axes, CriterionKind::C, LandscapeStop::RelativeVelocity { fraction: 1e-4 });
    let mut g = c.benchmark_group("landscape");
    g.sample_size(10);
    g.bench_function("davis_skodje_C_21x21", |b| b.iter(|| scan_landscape(&m, &grid).unwrap()));
    g.finish();
}

criterion_group!(benches, reconstruct, sweep, landscape);
criterion_main!(benches);
