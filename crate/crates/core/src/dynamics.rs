//! The bid adjustment iteration and the quantities its convergence theory bounds.
//!
//! Each iteration `k` the ISO dispatches `x_opt(k)` for the bids `b(k)`, each
//! generator computes its profit-maximizing quantity `q_n(k)`, and moves its
//! bid toward the gap: `b_n(k+1) = [b_n(k) + beta_k (x_opt_n(k) - q_n(k))]^+`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{IsoPolicy, LpSolution, SdcopfProblem};
use crate::network::{total_load, NetworkCase};
use crate::rng;
use crate::opf::{best_response_quantity, distance, efficient_bid, payoff, solve_dcopf, BidProfile};

const VIOLATION_TOL: f64 = 1e-9;

/// How stepsizes are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum StepsizeSchedule {
    Constant { beta: f64 },
    /// Fresh `beta_{k,n}` uniform on `[low, high]` for every generator and iteration.
    PerGeneratorRandom { low: f64, high: f64 },
    /// Like `PerGeneratorRandom`, but both interval ends approach `target`
    /// geometrically: the interval at iteration `k` is `target + (end - target) rate^(k-1)`.
    Decaying { low: f64, high: f64, target: f64, rate: f64 },
    /// `values[k-1]` at iteration `k`, the last value repeating.
    Custom { values: Vec<f64> },
}

impl StepsizeSchedule {
    /// Smallest stepsize the schedule can produce.
    pub fn alpha(&self) -> f64 {
        match self {
            StepsizeSchedule::Constant { beta } => *beta,
            StepsizeSchedule::PerGeneratorRandom { low, .. } => *low,
            StepsizeSchedule::Decaying { low, target, .. } => low.min(*target),
            StepsizeSchedule::Custom { values } => values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// Largest stepsize the schedule can produce.
    pub fn sup(&self) -> f64 {
        match self {
            StepsizeSchedule::Constant { beta } => *beta,
            StepsizeSchedule::PerGeneratorRandom { high, .. } => *high,
            StepsizeSchedule::Decaying { high, target, .. } => high.max(*target),
            StepsizeSchedule::Custom { values } => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// True when every generator always receives the same stepsize.
    pub fn is_common(&self) -> bool {
        matches!(self, StepsizeSchedule::Constant { .. } | StepsizeSchedule::Custom { .. })
    }

    /// Checks `0 < beta < 2 a_n` for every generator.
    pub fn validate(&self, case: &NetworkCase) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match self {
            StepsizeSchedule::PerGeneratorRandom { low, high } if !(ok(*low) && low <= high) => {
                return Err(Error::Range(format!("stepsize interval [{low}, {high}] must satisfy 0 < low <= high")))
            }
            StepsizeSchedule::Decaying { low, high, target, rate } => {
                if !(ok(*low) && low <= high && ok(*target)) {
                    return Err(Error::Range(format!(
                        "stepsize interval [{low}, {high}] and target {target} must be positive with low <= high"
                    )));
                }
                if !(0.0..=1.0).contains(rate) {
                    return Err(Error::Range(format!("decay rate {rate} must lie in [0, 1]")));
                }
            }
            StepsizeSchedule::Custom { values } if values.is_empty() => {
                return Err(Error::Range("custom stepsize sequence is empty".into()))
            }
            _ => {}
        }
        if !ok(self.alpha()) {
            return Err(Error::Range(format!("stepsizes must be positive, got {}", self.alpha())));
        }
        let limit = 2.0 * case.a_min();
        if self.sup() >= limit {
            return Err(Error::Range(format!(
                "stepsize {} must stay below 2 a_min = {limit}",
                self.sup()
            )));
        }
        Ok(())
    }

    pub fn sampler(&self, n_gen: usize, rng: ChaCha8Rng) -> StepsizeSampler {
        StepsizeSampler {
            schedule: self.clone(),
            n_gen,
            rng,
        }
    }
}

/// Draws the stepsizes of successive iterations.
#[derive(Debug, Clone)]
pub struct StepsizeSampler {
    schedule: StepsizeSchedule,
    n_gen: usize,
    rng: ChaCha8Rng,
}

impl StepsizeSampler {
    /// Per-generator stepsizes for iteration `k` (1-based).
    pub fn draw(&mut self, k: usize) -> Vec<f64> {
        let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64, n: usize| -> Vec<f64> {
            (0..n).map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect()
        };
        match &self.schedule {
            StepsizeSchedule::Constant { beta } => vec![*beta; self.n_gen],
            StepsizeSchedule::PerGeneratorRandom { low, high } => uniform(&mut self.rng, *low, *high, self.n_gen),
            StepsizeSchedule::Decaying { low, high, target, rate } => {
                let shrink = rate.powi(k.saturating_sub(1).min(i32::MAX as usize) as i32);
                let lo = target + (low - target) * shrink;
                let hi = target + (high - target) * shrink;
                uniform(&mut self.rng, lo, hi, self.n_gen)
            }
            StepsizeSchedule::Custom { values } => {
                vec![values[(k - 1).min(values.len() - 1)]; self.n_gen]
            }
        }
    }
}

/// Halts when consecutive bids are within `epsilon`, or after `max_iters` dispatches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingCriterion {
    /// `None` runs the full horizon.
    pub epsilon: Option<f64>,
    pub max_iters: usize,
}

impl Default for StoppingCriterion {
    fn default() -> Self {
        StoppingCriterion {
            epsilon: Some(1e-4),
            max_iters: 10_000,
        }
    }
}

impl StoppingCriterion {
    pub fn horizon(max_iters: usize) -> Self {
        StoppingCriterion {
            epsilon: None,
            max_iters,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) {
                return Err(Error::Range(format!("stopping threshold {eps} must be > 0")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::Range("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
}

/// The efficient Nash equilibrium and dispatch, used only for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub b_star: BidProfile,
    pub x_star: Vec<f64>,
}

impl Reference {
    /// `None` (with a warning) when some generator is idle at the optimum, in
    /// which case the efficient bid is not unique.
    pub fn compute(case: &NetworkCase) -> Result<Option<Reference>> {
        let sol = solve_dcopf(case)?;
        match efficient_bid(case, &sol) {
            Ok(b_star) => Ok(Some(Reference { b_star, x_star: sol.x })),
            Err(Error::Precondition(msg)) => {
                log::warn!("diagnostics against the equilibrium are disabled: {msg}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub b: Vec<f64>,
    pub x_opt: Vec<f64>,
    pub q: Vec<f64>,
    /// Stepsize applied by each generator in the update leaving this iteration.
    pub betas: Vec<f64>,
    /// The common (or nominal) stepsize of the update.
    pub beta: f64,
    pub dist_to_bstar: Option<f64>,
    /// Additive disturbance in the update, for perturbed runs.
    pub disturbance: Option<Vec<f64>>,
    pub payoff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketTrace {
    pub records: Vec<IterationRecord>,
    /// Bids produced by the last update.
    pub final_bid: Vec<f64>,
    pub reference: Option<Reference>,
    /// Generators following the prescribed update.
    pub conforming: Vec<bool>,
    pub stop_reason: StopReason,
}

impl MarketTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_generators(&self) -> usize {
        self.final_bid.len()
    }

    pub fn has_disturbance(&self) -> bool {
        self.records.iter().any(|r| r.disturbance.is_some())
    }

    /// Bids at iteration `k + 1` for the record at position `idx`.
    pub fn next_bid(&self, idx: usize) -> &[f64] {
        self.records.get(idx + 1).map_or(&self.final_bid, |r| &r.b)
    }

    pub fn distances(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.dist_to_bstar).collect()
    }

    /// First `k` with `||b(k) - b*|| < r`.
    pub fn entry_index(&self, r: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|rec| rec.dist_to_bstar.is_some_and(|d| d < r))
            .map(|rec| rec.k)
    }

    pub fn terminal_distance(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.dist_to_bstar)
    }

    /// `u_n(b_n(k), x_opt_n(k)) - u_n(b*_n, x*_n)` for each record.
    pub fn payoff_gap(&self, case: &NetworkCase, gen: usize) -> Option<Vec<f64>> {
        let reference = self.reference.as_ref()?;
        let g = &case.generators[gen];
        let base = payoff(reference.b_star[gen], reference.x_star[gen], g);
        Some(self.records.iter().map(|r| r.payoff[gen] - base).collect())
    }
}

/// `[b_n + beta_n (x_opt_n - q_n)]^+`.
pub fn bid_update(b: &[f64], x_opt: &[f64], q: &[f64], beta: &[f64]) -> Vec<f64> {
    b.iter()
        .zip(x_opt)
        .zip(q)
        .zip(beta)
        .map(|(((b, x), q), s)| (b + s * (x - q)).max(0.0))
        .collect()
}

/// What one dispatch looks like to the bid-update rule.
pub(crate) struct StepContext<'a> {
    pub k: usize,
    pub b: &'a [f64],
    pub x_opt: &'a [f64],
    pub q: &'a [f64],
}

pub(crate) struct Step {
    pub next: Vec<f64>,
    pub betas: Vec<f64>,
    pub beta: f64,
    pub disturbance: Option<Vec<f64>>,
}

/// Shared loop: dispatch, record, update, stop test.
pub(crate) fn simulate<F>(
    case: &NetworkCase,
    b1: Vec<f64>,
    stop: &StoppingCriterion,
    policy: &IsoPolicy,
    reference: Option<Reference>,
    conforming: Vec<bool>,
    mut update: F,
) -> Result<MarketTrace>
where
    F: FnMut(&StepContext) -> Result<Step>,
{
    stop.validate()?;
    let lp = SdcopfProblem::new(case)?;
    if b1.len() != case.n_generators() {
        return Err(Error::Precondition(format!(
            "{} initial bids for {} generators",
            b1.len(),
            case.n_generators()
        )));
    }
    let mut b = b1;
    let mut records = Vec::with_capacity(stop.max_iters.min(100_000));
    let mut stop_reason = StopReason::MaxIters;
    for k in 1..=stop.max_iters {
        let bids = BidProfile::try_new(b.clone())?;
        let LpSolution { x_opt, .. } = lp.solve(&bids, policy)?;
        let q: Vec<f64> = case
            .generators
            .iter()
            .zip(&b)
            .map(|(g, &bn)| best_response_quantity(bn, g))
            .collect();
        let step = update(&StepContext {
            k,
            b: &b,
            x_opt: &x_opt,
            q: &q,
        })?;
        let payoff = case
            .generators
            .iter()
            .zip(b.iter().zip(&x_opt))
            .map(|(g, (&bn, &xn))| payoff(bn, xn, g))
            .collect();
        let moved = distance(&step.next, &b);
        records.push(IterationRecord {
            k,
            dist_to_bstar: reference.as_ref().map(|r| distance(&b, r.b_star.as_slice())),
            b: std::mem::replace(&mut b, step.next),
            x_opt,
            q,
            betas: step.betas,
            beta: step.beta,
            disturbance: step.disturbance,
            payoff,
        });
        if stop.epsilon.is_some_and(|eps| moved <= eps) {
            stop_reason = StopReason::Converged;
            break;
        }
    }
    Ok(MarketTrace {
        records,
        final_bid: b,
        reference,
        conforming,
        stop_reason,
    })
}

pub(crate) fn check_initial_bids(case: &NetworkCase, b1: &[f64], who: &[bool]) -> Result<()> {
    if b1.len() != case.n_generators() {
        return Err(Error::Precondition(format!(
            "{} initial bids for {} generators",
            b1.len(),
            case.n_generators()
        )));
    }
    for (n, (g, &b)) in case.generators.iter().zip(b1).enumerate() {
        if who[n] && !(b >= g.c) {
            return Err(Error::Precondition(format!(
                "initial bid {b} of generator #{} is below its linear cost {}",
                n + 1,
                g.c
            )));
        }
    }
    Ok(())
}

/// Runs the bid adjustment algorithm from `b1`. Random stepsizes come from
/// the `stepsizes` stream of `seed`.
pub fn run_baa(
    case: &NetworkCase,
    b1: &BidProfile,
    schedule: &StepsizeSchedule,
    stop: &StoppingCriterion,
    iso_policy: &IsoPolicy,
    seed: u64,
) -> Result<MarketTrace> {
    let n = case.n_generators();
    check_initial_bids(case, b1.as_slice(), &vec![true; n])?;
    schedule.validate(case)?;
    let reference = Reference::compute(case)?;
    let mut sampler = schedule.sampler(n, rng::stream(seed, rng::STEPSIZES));
    simulate(case, b1.as_slice().to_vec(), stop, iso_policy, reference, vec![true; n], |ctx| {
        let betas = sampler.draw(ctx.k);
        Ok(Step {
            next: bid_update(ctx.b, ctx.x_opt, ctx.q, &betas),
            beta: reference_step(&betas),
            betas,
            disturbance: None,
        })
    })
}

/// The common stepsize, or the mean when generators differ.
pub(crate) fn reference_step(betas: &[f64]) -> f64 {
    if betas.windows(2).all(|w| w[0] == w[1]) {
        betas.first().copied().unwrap_or(0.0)
    } else {
        betas.iter().sum::<f64>() / betas.len() as f64
    }
}

/// Constants of the convergence bounds for one case and radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceParams {
    pub r: f64,
    pub a_max: f64,
    pub a_min: f64,
    pub ybar: f64,
    pub b_of_r: f64,
}

impl ConvergenceParams {
    pub fn new(case: &NetworkCase, r: f64) -> Result<Self> {
        Ok(ConvergenceParams {
            r,
            a_max: case.a_max(),
            a_min: case.a_min(),
            ybar: total_load(case),
            b_of_r: compute_b(case, r)?,
        })
    }

    /// `B` at another radius.
    pub fn b_at(&self, r: f64) -> f64 {
        b_formula(self.a_max, self.a_min, self.ybar, r)
    }

    pub fn ultimate_bound(&self) -> f64 {
        (1.0 + self.b_of_r / (2.0 * self.a_max)).sqrt() * self.r
    }
}

fn b_formula(a_max: f64, a_min: f64, ybar: f64, r: f64) -> f64 {
    1.0 / (2.0 * a_max) / (1.0 / (2.0 * a_min * a_min) + 16.0 * ybar * ybar / (r * r))
}

/// Largest stepsize guaranteeing contraction outside the radius-`r` ball:
/// `B(r) = (1/(2 a_max)) (1/(2 a_min^2) + 16 ybar^2 / r^2)^-1`.
pub fn compute_b(case: &NetworkCase, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Range(format!("radius {r} must be > 0")));
    }
    Ok(b_formula(case.a_max(), case.a_min(), total_load(case), r))
}

/// Radius of the ball the bids eventually stay in: `(1 + B(r)/(2 a_max))^(1/2) r`.
pub fn ultimate_bound(case: &NetworkCase, r: f64) -> Result<f64> {
    Ok(ConvergenceParams::new(case, r)?.ultimate_bound())
}

/// Bound on `||b - b*||` once consecutive bids are within `epsilon`:
/// `epsilon (1 - (1 - alpha/(2 a_max))^(1/2))^-1`.
pub fn stopping_guarantee(epsilon: f64, alpha: f64, a_max: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 2.0 * a_max) {
        return Err(Error::Range(format!("alpha {alpha} must lie in (0, 2 a_max = {}]", 2.0 * a_max)));
    }
    Ok(epsilon / (1.0 - (1.0 - alpha / (2.0 * a_max)).sqrt()))
}

/// Smallest radius `r` with `B(r) >= beta`, or `None` if no radius qualifies.
pub fn min_radius_for_step(case: &NetworkCase, beta: f64) -> Option<f64> {
    let (a_max, a_min, ybar) = (case.a_max(), case.a_min(), total_load(case));
    let denom = 1.0 / (2.0 * a_max * beta) - 1.0 / (2.0 * a_min * a_min);
    if denom <= 0.0 {
        return None;
    }
    Some((16.0 * ybar * ybar / denom).sqrt())
}

/// Per-step checks of the convergence argument, for the step `k -> k+1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub k: usize,
    /// `b(k+1) - b_coc(k+1) - beta (x_opt(k) - x*)`, max-norm; `None` if a
    /// projection was active.
    pub decomposition_residual: Option<f64>,
    /// `<b(k+1) - b(k), b* - b(k)> - beta/(2 a_max) ||b(k) - b*||^2`.
    pub term1_slack: f64,
    /// `beta^2/(2 a_min^2) ||b(k) - b*||^2 + 8 beta^2 ybar^2 - ||b(k+1) - b(k)||^2`.
    pub term2_slack: f64,
    /// `||b(k+1) - b*|| / ||b(k) - b*||`, when `beta <= B(||b(k) - b*||)`.
    pub contraction_ratio: Option<f64>,
    /// `(1 - beta/(2 a_max))^(1/2)`.
    pub contraction_bound: f64,
    /// `<x_opt(k) - x*, b* - b(k)>`.
    pub optimal_face: f64,
}

/// Diagnostics of one step taken with a common stepsize `beta`.
pub fn iteration_diagnostics(
    case: &NetworkCase,
    record: &IterationRecord,
    b_next: &[f64],
    reference: &Reference,
    params: &ConvergenceParams,
) -> DiagnosticsReport {
    let b = &record.b;
    let beta = record.beta;
    let bs = reference.b_star.as_slice();
    let xs = &reference.x_star;
    let dist = distance(b, bs);
    let dist_sq = dist * dist;

    let projected = b
        .iter()
        .zip(&record.x_opt)
        .zip(&record.q)
        .any(|((b, x), q)| b + beta * (x - q) < 0.0);
    let decomposition_residual = (!projected).then(|| {
        case.generators
            .iter()
            .enumerate()
            .map(|(n, g)| {
                let w = beta / (2.0 * g.a);
                let coc = (1.0 - w) * b[n] + w * bs[n];
                (b_next[n] - coc - beta * (record.x_opt[n] - xs[n])).abs()
            })
            .fold(0.0, f64::max)
    });

    let step: Vec<f64> = b_next.iter().zip(b).map(|(p, q)| p - q).collect();
    let inner: f64 = step.iter().zip(bs.iter().zip(b)).map(|(s, (t, u))| s * (t - u)).sum();
    let term1_slack = inner - beta / (2.0 * params.a_max) * dist_sq;
    let step_sq: f64 = step.iter().map(|s| s * s).sum();
    let term2_slack = beta * beta / (2.0 * params.a_min * params.a_min) * dist_sq
        + 8.0 * beta * beta * params.ybar * params.ybar
        - step_sq;

    let contraction_ratio =
        (dist > 0.0 && beta <= params.b_at(dist)).then(|| distance(b_next, bs) / dist);
    let contraction_bound = (1.0 - beta / (2.0 * params.a_max)).max(0.0).sqrt();
    let optimal_face = record
        .x_opt
        .iter()
        .zip(xs)
        .zip(bs.iter().zip(b))
        .map(|((x, xs), (bs, b))| (x - xs) * (bs - b))
        .sum();

    DiagnosticsReport {
        k: record.k,
        decomposition_residual,
        term1_slack,
        term2_slack,
        contraction_ratio,
        contraction_bound,
        optimal_face,
    }
}

/// Exact violation tallies over a trace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub lower_bound: usize,
    pub q_formula: usize,
    pub decomposition: usize,
    pub term1: usize,
    pub term2: usize,
    pub contraction: usize,
    pub optimal_face: usize,
    pub containment: usize,
    pub linear_rate: usize,
    pub perturbed_step: usize,
    pub iss_envelope: usize,
    /// The dispatch failed its KKT certificate.
    pub kkt: usize,
    /// A deviating or colluding generator ended above its best equilibrium-neighbourhood payoff.
    pub deviation: usize,
    /// Iteration of the first violation of any kind.
    pub first_offending: Option<usize>,
}

impl ViolationCounts {
    pub fn total(&self) -> usize {
        self.lower_bound
            + self.q_formula
            + self.decomposition
            + self.term1
            + self.term2
            + self.contraction
            + self.optimal_face
            + self.containment
            + self.linear_rate
            + self.perturbed_step
            + self.iss_envelope
            + self.kkt
            + self.deviation
    }

    pub(crate) fn flag(&mut self, k: usize, counter: fn(&mut Self) -> &mut usize) {
        *counter(self) += 1;
        self.first_offending = Some(self.first_offending.map_or(k, |f| f.min(k)));
    }
}

fn slack_ok(slack: f64, scale: f64) -> bool {
    slack >= -VIOLATION_TOL * (1.0 + scale)
}

/// Checks every per-iteration inequality of the convergence argument that
/// applies to `trace`.
///
/// The lower bound and closed-form quantity checks cover conforming
/// generators of undisturbed runs. The per-step bound checks need every generator to
/// conform with a common stepsize; containment and the linear rate also need
/// `radius` and a schedule within `[alpha, B(radius)]`.
pub fn diagnose_trace(
    case: &NetworkCase,
    trace: &MarketTrace,
    radius: Option<f64>,
    alpha: f64,
) -> Result<(Vec<DiagnosticsReport>, ViolationCounts)> {
    let mut counts = ViolationCounts::default();
    let mut reports = Vec::new();
    let disturbed = trace.has_disturbance();

    for rec in &trace.records {
        for (n, g) in case.generators.iter().enumerate() {
            if !trace.conforming[n] || disturbed {
                continue;
            }
            if rec.betas[n] < 2.0 * g.a && rec.b[n] < g.c - VIOLATION_TOL * (1.0 + g.c) {
                counts.flag(rec.k, |c| &mut c.lower_bound);
            }
            if rec.b[n] >= g.c {
                let closed = (rec.b[n] - g.c) / (2.0 * g.a);
                if (rec.q[n] - closed).abs() > VIOLATION_TOL * (1.0 + closed.abs()) {
                    counts.flag(rec.k, |c| &mut c.q_formula);
                }
            }
        }
    }

    let Some(reference) = trace.reference.as_ref() else {
        return Ok((reports, counts));
    };
    let all_conform = trace.conforming.iter().all(|&c| c);
    let common = trace.records.iter().all(|r| r.betas.iter().all(|&b| b == r.beta));
    if !all_conform || disturbed || !common {
        return Ok((reports, counts));
    }

    let params = ConvergenceParams::new(case, radius.unwrap_or(1.0))?;
    for (idx, rec) in trace.records.iter().enumerate() {
        let b_next = trace.next_bid(idx);
        let rep = iteration_diagnostics(case, rec, b_next, reference, &params);
        let scale = rec.dist_to_bstar.unwrap_or(0.0).powi(2) + 1.0;
        if rep.decomposition_residual.is_some_and(|r| r > VIOLATION_TOL) {
            counts.flag(rec.k, |c| &mut c.decomposition);
        }
        if !slack_ok(rep.term1_slack, scale) {
            counts.flag(rec.k, |c| &mut c.term1);
        }
        if !slack_ok(rep.term2_slack, scale) {
            counts.flag(rec.k, |c| &mut c.term2);
        }
        if rep
            .contraction_ratio
            .is_some_and(|ratio| ratio > rep.contraction_bound + VIOLATION_TOL)
        {
            counts.flag(rec.k, |c| &mut c.contraction);
        }
        if !slack_ok(rep.optimal_face, scale) {
            counts.flag(rec.k, |c| &mut c.optimal_face);
        }
        reports.push(rep);
    }

    let Some(r) = radius else {
        return Ok((reports, counts));
    };
    let in_range = trace.records.iter().all(|rec| rec.beta >= alpha && rec.beta <= params.b_of_r);
    if in_range {
        let ultimate = params.ultimate_bound();
        let dists: Vec<f64> = trace.records.iter().filter_map(|r| r.dist_to_bstar).collect();
        let entry = trace.entry_index(r);
        let rate = (1.0 - alpha / (2.0 * params.a_max)).max(0.0);
        for (idx, rec) in trace.records.iter().enumerate() {
            let d = dists[idx];
            match entry {
                Some(l) if rec.k >= l => {
                    if d > ultimate * (1.0 + VIOLATION_TOL) {
                        counts.flag(rec.k, |c| &mut c.containment);
                    }
                }
                _ => {
                    let envelope = rate.powf((idx as f64) / 2.0) * dists[0];
                    if d > envelope * (1.0 + VIOLATION_TOL) + VIOLATION_TOL {
                        counts.flag(rec.k, |c| &mut c.linear_rate);
                    }
                }
            }
        }
    }
    Ok((reports, counts))
}
