mod common;

use gridbid::dynamics::{bid_update, diagnose_trace, run_baa, StepsizeSchedule, StoppingCriterion};
use gridbid::lp::{solve_sdcopf, IsoPolicy};
use gridbid::network::{build_matrices, total_load, NetworkCase};
use gridbid::opf::{dual_value, efficient_bid, nash_from_duals, payoff, solve_dcopf, BidProfile};
use gridbid::runner::format_sig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn case_from(seed: u64) -> NetworkCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_bus = rng.random_range(1..=2);
    common::random_case(&mut rng, 5, 3, per_bus, true)
}

fn bids_for(case: &NetworkCase, seed: u64) -> BidProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BidProfile::new((0..case.n_generators()).map(|_| rng.random_range(0.0..6.0)).collect())
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn incidence_columns_sum_as_expected(seed in any::<u64>()) {
        let case = case_from(seed);
        let m = build_matrices(&case).unwrap();
        for e in 0..m.j1.ncols() {
            prop_assert_eq!(m.j1.column(e).sum(), 0.0);
        }
        for n in 0..m.j2.ncols() {
            prop_assert_eq!(m.j2.column(n).sum(), 1.0);
        }
        prop_assert_eq!(m, build_matrices(&case).unwrap());
    }

    #[test]
    fn dispatch_satisfies_strong_duality(seed in any::<u64>()) {
        let case = case_from(seed);
        let sol = solve_dcopf(&case).unwrap();
        let dual = dual_value(&case, &sol).unwrap();
        prop_assert!((dual - sol.objective).abs() <= 1e-7 * (1.0 + sol.objective.abs()), "{} vs {}", dual, sol.objective);
    }

    #[test]
    fn both_equilibrium_formulas_agree(seed in 0u64..1000) {
        let (case, reference) = common::random_equilibrium_cases(seed, 1).pop().unwrap();
        let sol = solve_dcopf(&case).unwrap();
        let from_x = efficient_bid(&case, &sol).unwrap();
        let from_nu = nash_from_duals(&case, &sol);
        prop_assert!(norm_diff(from_x.as_slice(), from_nu.as_slice()) < 1e-7);
        for (n, g) in case.generators.iter().enumerate() {
            prop_assert!(payoff(reference.b_star[n], reference.x_star[n], g) >= -1e-12);
        }
    }

    #[test]
    fn iso_dispatch_lies_on_the_far_side_of_the_equilibrium(seed in 0u64..1000, bid_seed in any::<u64>()) {
        let (case, reference) = common::random_equilibrium_cases(seed, 1).pop().unwrap();
        let bids = bids_for(&case, bid_seed);
        let lp = solve_sdcopf(&case, &bids, &IsoPolicy::Deterministic).unwrap();
        // <x_opt - x*, b* - b> >= 0
        let inner: f64 = lp
            .x_opt
            .iter()
            .zip(&reference.x_star)
            .zip(reference.b_star.iter().zip(bids.iter()))
            .map(|((x, xs), (bs, b))| (x - xs) * (bs - b))
            .sum();
        prop_assert!(inner >= -1e-9, "inner product {}", inner);
        prop_assert!(norm_diff(&lp.x_opt, &reference.x_star) <= 2.0 * total_load(&case) + 1e-9);
    }

    #[test]
    fn randomized_iso_finds_the_same_optimum(seed in any::<u64>(), bid_seed in any::<u64>(), pivot_seed in any::<u64>()) {
        let case = case_from(seed);
        let bids = bids_for(&case, bid_seed);
        let det = solve_sdcopf(&case, &bids, &IsoPolicy::Deterministic).unwrap();
        let rnd = solve_sdcopf(&case, &bids, &IsoPolicy::Randomized { seed: pivot_seed }).unwrap();
        prop_assert!((det.objective - rnd.objective).abs() <= 1e-9 * (1.0 + det.objective.abs()));
        prop_assert!(det.is_vertex && rnd.is_vertex);
    }

    #[test]
    fn conforming_runs_keep_bids_above_cost_and_quantities_closed_form(
        seed in 0u64..1000,
        run_seed in any::<u64>(),
        step_fraction in 0.05f64..0.99,
    ) {
        let (case, _) = common::random_equilibrium_cases(seed, 1).pop().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
        let b1: Vec<f64> = case.generators.iter().map(|g| g.c + rng.random_range(0.0..4.0)).collect();
        let high = step_fraction * 2.0 * case.a_min();
        let schedule = StepsizeSchedule::PerGeneratorRandom { low: high * 0.1, high };
        let trace = run_baa(
            &case,
            &BidProfile::new(b1),
            &schedule,
            &StoppingCriterion::horizon(200),
            &IsoPolicy::Randomized { seed: run_seed },
            run_seed,
        )
        .unwrap();
        let (_, counts) = diagnose_trace(&case, &trace, None, schedule.alpha()).unwrap();
        prop_assert_eq!(counts.lower_bound, 0);
        prop_assert_eq!(counts.q_formula, 0);
    }

    #[test]
    fn bid_update_is_nonnegative(
        b in prop::collection::vec(0.0f64..10.0, 1..8),
        x in prop::collection::vec(0.0f64..5.0, 8),
        q in prop::collection::vec(0.0f64..50.0, 8),
        beta in prop::collection::vec(0.0f64..1.0, 8),
    ) {
        let n = b.len();
        let next = bid_update(&b, &x[..n], &q[..n], &beta[..n]);
        for (i, v) in next.iter().enumerate() {
            prop_assert!(*v >= 0.0);
            prop_assert_eq!(*v, (b[i] + beta[i] * (x[i] - q[i])).max(0.0));
        }
    }

    #[test]
    fn csv_numbers_keep_ten_significant_digits(v in -1e6f64..1e6) {
        let back: f64 = format_sig(v).parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-10 * v.abs().max(1e-300) + 1e-300, "{} -> {}", v, format_sig(v));
    }
}
