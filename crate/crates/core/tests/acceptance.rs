//! Acceptance harness: one pass/fail line per criterion, nonzero exit if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use gridbid::dynamics::{
    compute_b, diagnose_trace, run_baa, ultimate_bound, StepsizeSchedule, StoppingCriterion, ViolationCounts,
};
use gridbid::lp::{enumerate_vertices, is_vertex, solve_sdcopf, IsoPolicy, DEFAULT_MAX_DIMS};
use gridbid::network::{build_matrices, ieee9_modified, preset, IEEE9_AS_PRINTED};
use gridbid::opf::{efficient_bid, nash_from_duals, solve_dcopf, BidProfile};
use gridbid::runner::{run_experiment, ExperimentConfig, ExperimentOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const X_STAR: [f64; 6] = [1.4268, 0.0732, 0.2703, 2.2297, 1.8987, 1.1013];
const B_STAR: [f64; 6] = [3.8139, 3.8139, 1.2459, 1.2459, 1.4652, 1.4652];
const X_TOL: f64 = 1e-3;
const B_TOL: f64 = 1e-3;
const DUAL_AGREEMENT_TOL: f64 = 1e-6;
const PRINTED_B: f64 = 0.0101;
const PRINTED_ULTIMATE: f64 = 1.3775;
const BOUND_TOL: f64 = 5e-4;
const CONVERGENCE_RADIUS: f64 = 1.35;
const TERMINAL_TOL: f64 = 0.05;
const OBJECTIVE_TOL: f64 = 1e-9;

struct Verdict {
    passed: bool,
    detail: String,
}

fn report(results: &mut Vec<bool>, id: u32, name: &str, elapsed: Duration, limit: Option<Duration>, verdict: Verdict) {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let passed = verdict.passed && in_time;
    let time = match limit {
        Some(l) => format!("{:.3}s (limit {}s)", elapsed.as_secs_f64(), l.as_secs()),
        None => format!("{:.3}s", elapsed.as_secs_f64()),
    };
    println!(
        "[{}] {id}. {name}: {} [{time}]",
        if passed { "PASS" } else { "FAIL" },
        verdict.detail
    );
    results.push(passed);
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn run_config(json: &str) -> ExperimentOutcome {
    let config = ExperimentConfig::from_json_str(json).expect("valid config");
    run_experiment(&config).expect("experiment runs")
}

fn step_bound_violations(v: &ViolationCounts) -> usize {
    v.lower_bound + v.q_formula + v.decomposition + v.term1 + v.term2 + v.contraction + v.optimal_face
}

fn convergence_config(seed: u64) -> String {
    format!(
        r#"{{"case": "ieee9-modified", "mode": "baa", "seed": {seed},
            "initial_bids": [7.6096, 9.9313, 7.6087, 8.4827, 6.6175, 7.5254],
            "schedule": {{"kind": "constant", "beta": 0.01}},
            "stop": {{"epsilon": null, "max_iters": 5000}},
            "radius": {CONVERGENCE_RADIUS}}}"#
    )
}

fn perturbed_config(schedule: &str, seed: u64) -> String {
    format!(
        r#"{{"case": "ieee9-modified", "mode": "perturbed", "seed": {seed},
            "initial_bids": [7.6096, 9.9313, 7.6087, 8.4827, 6.6175, 7.5254],
            "schedule": {schedule},
            "disturbance": {{"kind": "stepsize_variation", "nominal_beta": 0.01}},
            "stop": {{"epsilon": null, "max_iters": 5000}}}}"#
    )
}

const COLLUSION_CONFIG: &str = r#"{"case": "ieee9-modified", "mode": "collusion", "seed": 0,
    "initial_bids": [7.6096, 9.9313, 7.6087, 8.4827, 6.6175, 7.5254],
    "schedule": {"kind": "constant", "beta": 0.01},
    "stop": {"epsilon": null, "max_iters": 5000},
    "collusion": {
        "members": [1, 3, 5],
        "strategies": [
            {"kind": "multiplicative_undercut", "rival": 2, "floor_at_equilibrium": true},
            {"kind": "multiplicative_undercut", "rival": 4, "floor_at_equilibrium": true},
            {"kind": "multiplicative_undercut", "rival": 6, "floor_at_equilibrium": true}
        ]
    },
    "umax": {"samples": 200}}"#;

fn criterion_dcopf() -> Verdict {
    let sol = solve_dcopf(&ieee9_modified()).expect("9-bus solves");
    let err = max_abs_diff(&sol.x, &X_STAR);
    Verdict {
        passed: err <= X_TOL,
        detail: format!("max |x - x*| = {err:.2e} (tol {X_TOL:e})"),
    }
}

fn criterion_efficient_bid() -> Verdict {
    let case = ieee9_modified();
    let sol = solve_dcopf(&case).expect("9-bus solves");
    let b = efficient_bid(&case, &sol).expect("all generators dispatched");
    let duals = nash_from_duals(&case, &sol);
    let err = max_abs_diff(b.as_slice(), &B_STAR);
    let agree = max_abs_diff(b.as_slice(), duals.as_slice());
    Verdict {
        passed: err <= B_TOL && agree <= DUAL_AGREEMENT_TOL,
        detail: format!(
            "max |b - b*| = {err:.2e} (tol {B_TOL:e}); dual formula agrees to {agree:.2e} (tol {DUAL_AGREEMENT_TOL:e})"
        ),
    }
}

fn criterion_bounds() -> Verdict {
    let case = ieee9_modified();
    let b = compute_b(&case, CONVERGENCE_RADIUS).unwrap();
    let ult = ultimate_bound(&case, CONVERGENCE_RADIUS).unwrap();
    let passed = (b - PRINTED_B).abs() <= BOUND_TOL && (ult - PRINTED_ULTIMATE).abs() <= BOUND_TOL;
    // Informational: the variant whose loads total 6.
    let printed = preset(IEEE9_AS_PRINTED).unwrap();
    Verdict {
        passed,
        detail: format!(
            "B(1.35) = {b:.6} (want {PRINTED_B} +- {BOUND_TOL:e}), ultimate bound = {ult:.6} (want {PRINTED_ULTIMATE} +- {BOUND_TOL:e}); \
             {IEEE9_AS_PRINTED}: B = {:.6}, ultimate = {:.6}",
            compute_b(&printed, CONVERGENCE_RADIUS).unwrap(),
            ultimate_bound(&printed, CONVERGENCE_RADIUS).unwrap()
        ),
    }
}

fn criterion_convergence() -> (Verdict, ViolationCounts) {
    let outcome = run_config(&convergence_config(0));
    let trace = outcome.trace.expect("dynamic run");
    let dists = trace.distances().expect("unique equilibrium");
    let terminal = *dists.last().unwrap();
    let increases = dists
        .windows(2)
        .filter(|w| w[0] >= CONVERGENCE_RADIUS && w[1] > w[0])
        .count();
    let verdict = Verdict {
        passed: terminal <= TERMINAL_TOL && increases == 0,
        detail: format!(
            "terminal distance {terminal:.6} (tol {TERMINAL_TOL}), {increases} increases while >= {CONVERGENCE_RADIUS}, entry at k = {:?}",
            trace.entry_index(CONVERGENCE_RADIUS)
        ),
    };
    (verdict, outcome.summary.violations)
}

fn criterion_inequalities(preset_run: ViolationCounts) -> Verdict {
    let mut total = step_bound_violations(&preset_run);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cases = common::random_equilibrium_cases(5, 20);
    for (case, _) in &cases {
        let beta = 0.5 * case.a_min();
        let b1: Vec<f64> = case.generators.iter().map(|g| g.c + rng.random_range(0.0..3.0)).collect();
        let trace = run_baa(
            case,
            &BidProfile::new(b1),
            &StepsizeSchedule::Constant { beta },
            &StoppingCriterion::horizon(500),
            &IsoPolicy::Deterministic,
            0,
        )
        .expect("random case runs");
        let (_, counts) = diagnose_trace(case, &trace, None, beta).expect("diagnostics run");
        total += step_bound_violations(&counts);
    }
    Verdict {
        passed: total == 0,
        detail: format!("{total} violations over the 9-bus run and {} random cases", cases.len()),
    }
}

fn criterion_lp_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    let mut non_vertex = 0;
    let mut checked = 0;
    while checked < 50 {
        let per_bus = rng.random_range(1..=2);
        let case = common::random_case(&mut rng, 4, 3, per_bus, true);
        if case.n_generators() + case.n_lines() > DEFAULT_MAX_DIMS {
            continue;
        }
        let bids = BidProfile::new((0..case.n_generators()).map(|_| rng.random_range(0.0..5.0)).collect());
        let sol = solve_sdcopf(&case, &bids, &IsoPolicy::Deterministic).expect("feasible case solves");
        let vertices = enumerate_vertices(&case, &bids, DEFAULT_MAX_DIMS).expect("small case enumerates");
        let best = vertices.iter().map(|v| v.objective).fold(f64::INFINITY, f64::min);
        if (sol.objective - best).abs() > OBJECTIVE_TOL * (1.0 + best.abs()) {
            mismatches += 1;
        }
        let m = build_matrices(&case).unwrap();
        if !sol.is_vertex || !is_vertex(&m, &case.limits(), &sol.x_opt, &sol.z_opt) {
            non_vertex += 1;
        }
        checked += 1;
    }
    Verdict {
        passed: mismatches == 0 && non_vertex == 0,
        detail: format!("{checked} networks: {mismatches} objective mismatches, {non_vertex} non-vertex solutions"),
    }
}

fn criterion_perturbation() -> Verdict {
    let fixed = run_config(&perturbed_config(r#"{"kind": "per_generator_random", "low": 0.001, "high": 0.1}"#, 0));
    let decaying = run_config(&perturbed_config(
        r#"{"kind": "decaying", "low": 0.001, "high": 0.1, "target": 0.01, "rate": 0.999}"#,
        0,
    ));
    let v = &fixed.summary.violations;
    let envelope = v.iss_envelope + v.perturbed_step;
    let (t_fixed, t_decay) = (
        fixed.summary.terminal_distance.unwrap_or(f64::NAN),
        decaying.summary.terminal_distance.unwrap_or(f64::NAN),
    );
    Verdict {
        passed: envelope == 0 && t_decay < t_fixed,
        detail: format!(
            "{envelope} envelope violations (theta = {:.4}, G = {:.3}); terminal distance decaying {t_decay:.6} vs fixed {t_fixed:.6}",
            fixed.summary.bounds.theta.unwrap_or(f64::NAN),
            fixed.summary.bounds.g.unwrap_or(f64::NAN)
        ),
    }
}

fn criterion_collusion() -> Verdict {
    let outcome = run_config(COLLUSION_CONFIG);
    let trace = outcome.trace.expect("dynamic run");
    let tail = trace.len() - trace.len() / 5;
    let mut details = Vec::new();
    let mut passed = true;
    for g in [0, 2, 4] {
        let gap = trace.payoff_gap(&outcome.case, g).expect("unique equilibrium");
        let nonneg = gap[tail..].iter().filter(|&&v| v >= 0.0).count();
        let worst = gap[tail..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        passed &= nonneg == 0;
        details.push(format!("generator {}: {nonneg} nonnegative gaps, max {worst:.4}", g + 1));
    }
    Verdict {
        passed,
        detail: format!("last {} iterations; {}", trace.len() - tail, details.join("; ")),
    }
}

fn criterion_determinism() -> Verdict {
    let configs = [
        convergence_config(7),
        perturbed_config(r#"{"kind": "per_generator_random", "low": 0.001, "high": 0.1}"#, 7),
        COLLUSION_CONFIG.to_string(),
    ];
    let mut identical = 0;
    for json in &configs {
        let csvs: Vec<Vec<u8>> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let mut config = ExperimentConfig::from_json_str(json).unwrap();
                config.stop.max_iters = 1000;
                config.iso_policy = gridbid::runner::IsoChoice::Randomized;
                config.output.dir = Some(dir.path().to_path_buf());
                config.output.plots = false;
                run_experiment(&config).unwrap();
                std::fs::read(dir.path().join("trace.csv")).unwrap()
            })
            .collect();
        if csvs[0] == csvs[1] && !csvs[0].is_empty() {
            identical += 1;
        }
    }
    Verdict {
        passed: identical == configs.len(),
        detail: format!("{identical}/{} experiments produced byte-identical trace.csv", configs.len()),
    }
}

fn main() -> ExitCode {
    let mut results = Vec::new();

    let (v, t) = timed(criterion_dcopf);
    report(&mut results, 1, "DC-OPF regression", t, Some(Duration::from_secs(1)), v);
    let (v, t) = timed(criterion_efficient_bid);
    report(&mut results, 2, "efficient equilibrium regression", t, None, v);
    let (v, t) = timed(criterion_bounds);
    report(&mut results, 3, "bound regression", t, None, v);
    let ((v, preset_run), t) = timed(criterion_convergence);
    report(&mut results, 4, "convergence replication", t, Some(Duration::from_secs(30)), v);
    let (v, t) = timed(|| criterion_inequalities(preset_run));
    report(&mut results, 5, "per-iteration inequalities", t, None, v);
    let (v, t) = timed(criterion_lp_oracle);
    report(&mut results, 6, "LP vertex oracle", t, None, v);
    let (v, t) = timed(criterion_perturbation);
    report(&mut results, 7, "perturbation replication", t, None, v);
    let (v, t) = timed(criterion_collusion);
    report(&mut results, 8, "collusion replication", t, None, v);
    let (v, t) = timed(criterion_determinism);
    report(&mut results, 9, "determinism", t, None, v);

    let failed = results.iter().filter(|&&p| !p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
