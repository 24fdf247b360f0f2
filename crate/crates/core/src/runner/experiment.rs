//! Runs a configured experiment and writes its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    compute_b, diagnose_trace, min_radius_for_step, run_baa, stopping_guarantee, ultimate_bound, MarketTrace,
    Reference, StepsizeSchedule, ViolationCounts,
};
use crate::error::{Error, Result};
use crate::network::{validate_case, NetworkCase, ValidationReport};
use crate::opf::{check_kkt, dual_value, efficient_bid, nash_from_duals, solve_dcopf, BidProfile, DispatchSolution};
use crate::rng;
use crate::robustness::{
    check_perturbed, contracting_theta, deviation_unprofitable, estimate_umax, perturbed_bounds, run_collusion,
    run_deviation, run_perturbed, DisturbanceModel, Strategy,
};

use super::config::{ExperimentConfig, Mode};
use super::output::{emit_plot_data, trace_csv, PlotKind};

const KKT_TOL: f64 = 1e-8;

/// Bound values reported with a run. Absent entries did not apply.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundValues {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_of_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ultimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopping_guarantee: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ultimate_perturbed: Option<f64>,
    /// Sampled best payoff near the equilibrium, by generator id.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub umax: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub b_star: Option<Vec<f64>>,
    pub x_star: Option<Vec<f64>>,
    pub entry_iteration: Option<usize>,
    pub terminal_distance: Option<f64>,
    pub violations: ViolationCounts,
    pub bounds: BoundValues,
}

impl SummaryReport {
    pub fn passed(&self) -> bool {
        self.violations.total() == 0
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub case: NetworkCase,
    pub summary: SummaryReport,
    pub trace: Option<MarketTrace>,
    pub dispatch: Option<DispatchSolution>,
    /// Files written, in order.
    pub written: Vec<PathBuf>,
}

/// Loads the case of `config` and checks it structurally.
pub fn validate_experiment(config: &ExperimentConfig) -> Result<(NetworkCase, ValidationReport)> {
    let case = config.case.load(config.base_dir.as_deref())?;
    let report = validate_case(&case);
    Ok((case, report))
}

/// Initial bids from the config, or uniform on `[c_n, c_n + 10]`.
pub fn initial_bids(config: &ExperimentConfig, case: &NetworkCase) -> Result<BidProfile> {
    match &config.initial_bids {
        Some(b) if b.len() != case.n_generators() => Err(Error::config(
            "initial_bids",
            format!("{} bids for {} generators", b.len(), case.n_generators()),
        )),
        Some(b) => BidProfile::try_new(b.clone()),
        None => {
            let mut rng = rng::stream(config.seed, rng::INITIAL_BIDS);
            Ok(BidProfile::new(
                case.generators.iter().map(|g| rng.random_range(g.c..=g.c + 10.0)).collect(),
            ))
        }
    }
}

fn generator_index(case: &NetworkCase, id: u32, path: &str) -> Result<usize> {
    case.generators
        .iter()
        .position(|g| g.id == id)
        .ok_or_else(|| Error::config(path, format!("no generator with id {id}")))
}

/// Runs `config` and, if it names an output directory, writes `trace.csv`,
/// `summary.json` and the plot files there.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (case, report) = validate_experiment(config)?;
    if let Some(first) = report.structural_errors.first() {
        return Err(Error::Structure(first.clone()));
    }
    for w in report.warnings() {
        log::warn!("{w}");
    }

    let mut outcome = match config.mode {
        Mode::OpfOnly => run_opf(config, case)?,
        _ => run_dynamics(config, case)?,
    };
    if let Some(dir) = &config.output.dir {
        outcome.written = write_artifacts(config, &outcome, dir)?;
    }
    Ok(outcome)
}

fn run_opf(config: &ExperimentConfig, case: NetworkCase) -> Result<ExperimentOutcome> {
    let sol = solve_dcopf(&case)?;
    let mut violations = ViolationCounts::default();
    let kkt = check_kkt(&case, &sol, None)?;
    let gap = (dual_value(&case, &sol)? - sol.objective).abs();
    if !kkt.holds(KKT_TOL) || gap > KKT_TOL * (1.0 + sol.objective.abs()) {
        log::error!("KKT residual {:.3e}, duality gap {gap:.3e}", kkt.max_residual());
        violations.flag(0, |c| &mut c.kkt);
    }
    let b_star = match efficient_bid(&case, &sol) {
        Ok(b) => b,
        Err(_) => nash_from_duals(&case, &sol),
    };
    let mut bounds = BoundValues::default();
    if let Some(r) = config.radius {
        bounds.radius = Some(r);
        bounds.b_of_r = Some(compute_b(&case, r)?);
        bounds.ultimate = Some(ultimate_bound(&case, r)?);
    }
    Ok(ExperimentOutcome {
        summary: SummaryReport {
            b_star: Some(b_star.into_vec()),
            x_star: Some(sol.x.clone()),
            entry_iteration: None,
            terminal_distance: None,
            violations,
            bounds,
        },
        case,
        trace: None,
        dispatch: Some(sol),
        written: Vec::new(),
    })
}

fn run_dynamics(config: &ExperimentConfig, case: NetworkCase) -> Result<ExperimentOutcome> {
    let schedule: &StepsizeSchedule = config.schedule.as_ref().expect("checked complete");
    let b1 = initial_bids(config, &case)?;
    let policy = config.iso_policy.policy(config.seed);
    let stop = &config.stop;
    let seed = config.seed;

    // The stepsize the convergence bounds are stated for.
    let (alpha, beta_sup) = match (&config.mode, &config.disturbance) {
        (Mode::Perturbed, Some(DisturbanceModel::StepsizeVariation { nominal_beta })) => (*nominal_beta, *nominal_beta),
        _ => (schedule.alpha(), schedule.sup()),
    };
    let radius = config.radius.or_else(|| min_radius_for_step(&case, beta_sup));

    let mut bounds = BoundValues {
        radius,
        ..Default::default()
    };
    if let Some(r) = radius {
        bounds.b_of_r = Some(compute_b(&case, r)?);
        bounds.ultimate = Some(ultimate_bound(&case, r)?);
    }
    if let Some(eps) = stop.epsilon {
        bounds.stopping_guarantee = stopping_guarantee(eps, alpha, case.a_max()).ok();
    }

    let reference = Reference::compute(&case)?;
    let (trace, strategic): (MarketTrace, Vec<usize>) = match config.mode {
        Mode::Baa => (run_baa(&case, &b1, schedule, stop, &policy, seed)?, vec![]),
        Mode::Perturbed => {
            let model = config.disturbance.as_ref().expect("checked complete");
            (run_perturbed(&case, &b1, schedule, model, stop, &policy, seed)?, vec![])
        }
        Mode::Deviation => {
            let dev = config.deviation.as_ref().expect("checked complete");
            let g = generator_index(&case, dev.generator.expect("checked complete"), "deviation.generator")?;
            let strategy = dev.strategy.as_ref().expect("checked complete").build(&case, g, reference.as_ref())?;
            (run_deviation(&case, &b1, schedule, g, strategy, stop, &policy, seed)?, vec![g])
        }
        Mode::Collusion => {
            let col = config.collusion.as_ref().expect("checked complete");
            let ids = col.members.as_ref().expect("checked complete");
            let specs = col.strategies.as_ref().expect("checked complete");
            let mut strategies: Vec<(usize, Box<dyn Strategy>)> = Vec::new();
            for (id, spec) in ids.iter().zip(specs) {
                let g = generator_index(&case, *id, "collusion.members")?;
                strategies.push((g, spec.build(&case, g, reference.as_ref())?));
            }
            let members = strategies.iter().map(|(g, _)| *g).collect();
            let trace = run_collusion(&case, &b1, schedule, strategies, col.allow_uncovered_buses, stop, &policy, seed)?;
            (trace, members)
        }
        Mode::OpfOnly => unreachable!("handled by run_opf"),
    };

    let (_, mut violations) = diagnose_trace(&case, &trace, radius, alpha)?;

    if let (Mode::Perturbed, Some(r), Some(_)) = (config.mode, radius, trace.reference.as_ref()) {
        let observed = trace
            .records
            .iter()
            .filter_map(|rec| rec.disturbance.as_ref())
            .map(|d| d.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let d_max = match config.disturbance {
            Some(DisturbanceModel::Bounded { d_max }) => d_max,
            _ => observed,
        };
        let theta = match (config.theta, &config.disturbance) {
            (Some(t), _) => t,
            (None, Some(DisturbanceModel::StateProportional { theta })) => *theta,
            _ => 0.99 * contracting_theta(alpha, case.a_max()),
        };
        let pb = perturbed_bounds(&case, r, theta, d_max, alpha)?;
        bounds.theta = Some(theta);
        bounds.d_max = Some(d_max);
        bounds.g1 = Some(pb.g1);
        bounds.g2 = Some(pb.g2);
        bounds.g = Some(pb.g);
        bounds.rate_factor = Some(pb.rate_factor);
        bounds.ultimate_perturbed = Some(pb.ultimate);
        let pv = check_perturbed(&case, &trace, &pb, r, theta, alpha)?;
        violations.perturbed_step += pv.perturbed_step;
        violations.iss_envelope += pv.iss_envelope;
        violations.first_offending = match (violations.first_offending, pv.first_offending) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }

    if let (Some(reference), Some(r)) = (trace.reference.as_ref(), radius) {
        for &g in &strategic {
            let est = estimate_umax(&case, reference, r, g, config.umax.samples, seed, config.umax.exponent)?;
            bounds.umax.insert(case.generators[g].id.to_string(), est.value);
            if !deviation_unprofitable(&trace, g, est.value) {
                let k = trace.records.last().map_or(0, |r| r.k);
                violations.flag(k, |c| &mut c.deviation);
            }
        }
    }

    let summary = SummaryReport {
        b_star: trace.reference.as_ref().map(|r| r.b_star.as_slice().to_vec()),
        x_star: trace.reference.as_ref().map(|r| r.x_star.clone()),
        entry_iteration: radius.and_then(|r| trace.entry_index(r)),
        terminal_distance: trace.terminal_distance(),
        violations,
        bounds,
    };
    Ok(ExperimentOutcome {
        case,
        summary,
        trace: Some(trace),
        dispatch: None,
        written: Vec::new(),
    })
}

fn write_artifacts(config: &ExperimentConfig, outcome: &ExperimentOutcome, dir: &std::path::Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if let Some(trace) = &outcome.trace {
        let robust = matches!(config.mode, Mode::Perturbed | Mode::Deviation | Mode::Collusion);
        let path = dir.join("trace.csv");
        fs::write(&path, trace_csv(trace, robust))?;
        written.push(path);
        if config.output.plots && !trace.is_empty() {
            for kind in PlotKind::ALL {
                if trace.reference.is_none() && kind != PlotKind::BidsVsK {
                    continue;
                }
                let path = dir.join(format!("{}.csv", kind.file_stem()));
                emit_plot_data(&outcome.case, trace, kind, &path, config.output.svg)?;
                written.push(path.clone());
                if config.output.svg {
                    written.push(path.with_extension("svg"));
                }
            }
        }
    }
    if let Some(sol) = &outcome.dispatch {
        let path = dir.join("dispatch.json");
        fs::write(&path, serde_json::to_string_pretty(sol)?)?;
        written.push(path);
    }
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&outcome.summary)?)?;
    written.push(path);
    Ok(written)
}
