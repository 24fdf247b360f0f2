use criterion::{criterion_group, criterion_main, Criterion};
use gridbid::dynamics::{run_baa, StepsizeSchedule, StoppingCriterion};
use gridbid::lp::{IsoPolicy, SdcopfProblem};
use gridbid::opf::solve_dcopf;
use gridbid_bench::{case, initial_bids};
use std::hint::black_box;

fn dcopf(c: &mut Criterion) {
    let case = case();
    c.bench_function("solve_dcopf/ieee9", |b| b.iter(|| solve_dcopf(black_box(&case)).unwrap()));
}

fn sdcopf(c: &mut Criterion) {
    let case = case();
    let lp = SdcopfProblem::new(&case).unwrap();
    let bids = initial_bids();
    c.bench_function("sdcopf/deterministic", |b| {
        b.iter(|| lp.solve(black_box(&bids), &IsoPolicy::Deterministic).unwrap())
    });
    c.bench_function("sdcopf/randomized", |b| {
        b.iter(|| lp.solve(black_box(&bids), &IsoPolicy::Randomized { seed: 7 }).unwrap())
    });
}

fn baa(c: &mut Criterion) {
    let case = case();
    let bids = initial_bids();
    let schedule = StepsizeSchedule::Constant { beta: 0.01 };
    let stop = StoppingCriterion::horizon(500);
    c.bench_function("run_baa/500_iterations", |b| {
        b.iter(|| run_baa(&case, &bids, &schedule, &stop, &IsoPolicy::Deterministic, 0).unwrap())
    });
}

criterion_group!(benches, dcopf, sdcopf, baa);
criterion_main!(benches);
