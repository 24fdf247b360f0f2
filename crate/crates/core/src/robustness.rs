//! Disturbed, deviating and colluding variants of the bid adjustment dynamics.
//!
//! Non-conforming generators are driven by [`Strategy`] objects. The engine
//! hands each one a view restricted to what it may know: its own history,
//! plus the coalition's shared history for colluders. A strategy that reads a
//! same-bus rival's freshly posted bid must declare that rival up front.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    bid_update, check_initial_bids, reference_step, simulate, MarketTrace, Reference, Step, StepsizeSchedule,
    StoppingCriterion, ViolationCounts,
};
use crate::error::{Error, Result};
use crate::lp::{IsoPolicy, SdcopfProblem};
use crate::network::NetworkCase;
use crate::opf::{distance, payoff, BidProfile};
use crate::rng;

const VIOLATION_TOL: f64 = 1e-9;

/// The additive term `d(k)` in `b(k+1) = [b(k) + beta_k (x_opt(k) - q(k)) + d(k)]^+`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DisturbanceModel {
    /// Random, with `||d(k)|| <= theta ||b(k) - b*||`.
    StateProportional { theta: f64 },
    /// Random, with `||d(k)|| <= d_max`.
    Bounded { d_max: f64 },
    /// Generators step with their own `beta_{k,n}` drawn from the run's
    /// schedule while the reference step is `nominal_beta`, so that
    /// `d_n(k) = (beta_{k,n} - nominal_beta)(x_opt_n(k) - q_n(k))`.
    StepsizeVariation { nominal_beta: f64 },
    /// `values[k-1]` at iteration `k`, zero afterwards.
    Custom { values: Vec<Vec<f64>> },
}

/// A random vector with uniform direction and norm uniform on `[0, radius]`.
fn random_in_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        // Uniform direction by rejection from the cube.
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            let scale = rng.random_range(0.0..=1.0) * radius / norm;
            return v.into_iter().map(|x| x * scale).collect();
        }
    }
}

/// Runs the disturbed dynamics. With a zero disturbance the trace equals
/// [`crate::dynamics::run_baa`]'s for the same seed.
pub fn run_perturbed(
    case: &NetworkCase,
    b1: &BidProfile,
    schedule: &StepsizeSchedule,
    disturbance: &DisturbanceModel,
    stop: &StoppingCriterion,
    iso_policy: &IsoPolicy,
    seed: u64,
) -> Result<MarketTrace> {
    let n = case.n_generators();
    check_initial_bids(case, b1.as_slice(), &vec![true; n])?;
    schedule.validate(case)?;
    let reference = Reference::compute(case)?;
    match disturbance {
        DisturbanceModel::StateProportional { theta } if !(*theta > 0.0) => {
            return Err(Error::Range(format!("theta {theta} must be > 0")))
        }
        DisturbanceModel::StateProportional { .. } if reference.is_none() => {
            return Err(Error::Precondition(
                "a state-proportional disturbance needs a unique equilibrium".into(),
            ))
        }
        DisturbanceModel::Bounded { d_max } if !(*d_max >= 0.0) => {
            return Err(Error::Range(format!("d_max {d_max} must be >= 0")))
        }
        DisturbanceModel::StepsizeVariation { nominal_beta } if !(*nominal_beta > 0.0) => {
            return Err(Error::Range(format!("nominal stepsize {nominal_beta} must be > 0")))
        }
        DisturbanceModel::Custom { values } if values.iter().any(|v| v.len() != n) => {
            return Err(Error::Precondition(format!("custom disturbances must have {n} entries")))
        }
        _ => {}
    }

    let mut sampler = schedule.sampler(n, rng::stream(seed, rng::STEPSIZES));
    let mut noise = rng::stream(seed, rng::DISTURBANCE);
    let b_star = reference.as_ref().map(|r| r.b_star.as_slice().to_vec());
    simulate(case, b1.as_slice().to_vec(), stop, iso_policy, reference, vec![true; n], |ctx| {
        let betas = sampler.draw(ctx.k);
        let (base_step, beta, d) = match disturbance {
            DisturbanceModel::StepsizeVariation { nominal_beta } => {
                let d: Vec<f64> = (0..n).map(|i| (betas[i] - nominal_beta) * (ctx.x_opt[i] - ctx.q[i])).collect();
                (vec![*nominal_beta; n], *nominal_beta, d)
            }
            DisturbanceModel::StateProportional { theta } => {
                let radius = theta * distance(ctx.b, b_star.as_deref().expect("checked above"));
                let d = random_in_ball(&mut noise, n, radius);
                (betas.clone(), reference_step(&betas), d)
            }
            DisturbanceModel::Bounded { d_max } => {
                let d = random_in_ball(&mut noise, n, *d_max);
                (betas.clone(), reference_step(&betas), d)
            }
            DisturbanceModel::Custom { values } => {
                let d = values.get(ctx.k - 1).cloned().unwrap_or_else(|| vec![0.0; n]);
                (betas.clone(), reference_step(&betas), d)
            }
        };
        let next = (0..n)
            .map(|i| (ctx.b[i] + base_step[i] * (ctx.x_opt[i] - ctx.q[i]) + d[i]).max(0.0))
            .collect();
        Ok(Step {
            next,
            betas,
            beta,
            disturbance: Some(d),
        })
    })
}

/// Bound constants for the disturbed dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbedBounds {
    /// `(B(r) r^2/(2 a_max) + (2 d_max + r)^2)^(1/2)`.
    pub g1: f64,
    /// `(2 + 1/theta) d_max`.
    pub g2: f64,
    pub g: f64,
    /// `(1 - alpha/(2 a_max) + 2 theta + 4 theta^2)^(1/2)`.
    pub rate_factor: f64,
    /// `(1 + B(r)/(2 a_max) + 2 theta + 4 theta^2)^(1/2) r`.
    pub ultimate: f64,
}

impl PerturbedBounds {
    /// The rate factor is below one only when `2 theta + 4 theta^2 < alpha/(2 a_max)`.
    pub fn contracts(&self) -> bool {
        self.rate_factor < 1.0
    }
}

/// Upper end of the admissible `theta` range, `(1/6)(1 - alpha/(2 a_max))`.
pub fn theta_limit(alpha: f64, a_max: f64) -> f64 {
    (1.0 - alpha / (2.0 * a_max)) / 6.0
}

/// Largest `theta` for which the rate factor is below one: the positive
/// root of `4 theta^2 + 2 theta = alpha/(2 a_max)`.
pub fn contracting_theta(alpha: f64, a_max: f64) -> f64 {
    let s = alpha / (2.0 * a_max);
    (-2.0 + (4.0 + 16.0 * s).sqrt()) / 8.0
}

pub fn perturbed_bounds(case: &NetworkCase, r: f64, theta: f64, d_max: f64, alpha: f64) -> Result<PerturbedBounds> {
    let a_max = case.a_max();
    if !(alpha > 0.0 && alpha < 2.0 * a_max) {
        return Err(Error::Range(format!("alpha {alpha} must lie in (0, 2 a_max = {})", 2.0 * a_max)));
    }
    let limit = theta_limit(alpha, a_max);
    if !(theta > 0.0 && theta < limit) {
        return Err(Error::Range(format!("theta {theta} must lie in (0, {limit})")));
    }
    if !(d_max >= 0.0) {
        return Err(Error::Range(format!("d_max {d_max} must be >= 0")));
    }
    let b = crate::dynamics::compute_b(case, r)?;
    let g1 = (b * r * r / (2.0 * a_max) + (2.0 * d_max + r).powi(2)).sqrt();
    let g2 = (2.0 + 1.0 / theta) * d_max;
    let extra = 2.0 * theta + 4.0 * theta * theta;
    Ok(PerturbedBounds {
        g1,
        g2,
        g: g1.max(g2),
        rate_factor: (1.0 - alpha / (2.0 * a_max) + extra).sqrt(),
        ultimate: (1.0 + b / (2.0 * a_max) + extra).sqrt() * r,
    })
}

/// Tallies violations of the disturbed-dynamics guarantees along `trace`.
///
/// * `perturbed_step`: for steps with `||b(k) - b*|| >= r` and
///   `||d(k)|| <= theta ||b(k) - b*||`,
///   `||b(k+1) - b*||^2 <= rate_factor^2 ||b(k) - b*||^2`.
/// * `iss_envelope`: `||b(k) - b*|| <= rate_factor^k ||b(1) - b*|| + G`.
///
/// Both need the reference step in `[alpha, B(r)]` at every iteration;
/// otherwise nothing is checked.
pub fn check_perturbed(case: &NetworkCase, trace: &MarketTrace, bounds: &PerturbedBounds, r: f64, theta: f64, alpha: f64) -> Result<ViolationCounts> {
    let mut counts = ViolationCounts::default();
    let Some(reference) = trace.reference.as_ref() else {
        return Ok(counts);
    };
    let b_r = crate::dynamics::compute_b(case, r)?;
    if !trace
        .records
        .iter()
        .all(|rec| rec.beta >= alpha * (1.0 - 1e-12) && rec.beta <= b_r * (1.0 + 1e-12))
    {
        log::warn!("reference stepsizes leave [alpha, B(r)]; disturbed-dynamics checks skipped");
        return Ok(counts);
    }
    let bs = reference.b_star.as_slice();
    let first = distance(&trace.records[0].b, bs);
    let rho_sq = bounds.rate_factor * bounds.rate_factor;
    for (idx, rec) in trace.records.iter().enumerate() {
        let d_k = distance(&rec.b, bs);
        let envelope = bounds.rate_factor.powf(rec.k as f64) * first + bounds.g;
        if d_k > envelope * (1.0 + VIOLATION_TOL) {
            counts.flag(rec.k, |c| &mut c.iss_envelope);
        }
        let dist_norm = rec.disturbance.as_ref().map_or(0.0, |d| d.iter().map(|v| v * v).sum::<f64>().sqrt());
        if d_k >= r && dist_norm <= theta * d_k * (1.0 + 1e-12) {
            let next = distance(trace.next_bid(idx), bs);
            if next * next > rho_sq * d_k * d_k * (1.0 + VIOLATION_TOL) {
                counts.flag(rec.k, |c| &mut c.perturbed_step);
            }
        }
    }
    Ok(counts)
}

/// A generator's own history up to the current iteration.
pub struct OwnView<'a> {
    pub k: usize,
    pub generator: usize,
    pub bids: &'a [f64],
    pub x_opt: &'a [f64],
    pub q: &'a [f64],
    /// The stepsize this generator would use if it conformed.
    pub beta: f64,
}

impl OwnView<'_> {
    pub fn bid(&self) -> f64 {
        *self.bids.last().expect("history is never empty")
    }

    pub fn dispatch(&self) -> f64 {
        *self.x_opt.last().expect("history is never empty")
    }

    pub fn quantity(&self) -> f64 {
        *self.q.last().expect("history is never empty")
    }
}

#[derive(Debug, Clone, Default)]
struct History {
    bids: Vec<f64>,
    x_opt: Vec<f64>,
    q: Vec<f64>,
}

/// The coalition's shared bids and dispatches, `t <= k`, for members only.
pub struct CoalitionView<'a> {
    members: &'a BTreeSet<usize>,
    histories: &'a [History],
}

impl CoalitionView<'_> {
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    pub fn bids(&self, member: usize) -> Option<&[f64]> {
        self.members.contains(&member).then(|| self.histories[member].bids.as_slice())
    }

    pub fn dispatch(&self, member: usize) -> Option<&[f64]> {
        self.members.contains(&member).then(|| self.histories[member].x_opt.as_slice())
    }
}

/// Everything a non-conforming generator sees when choosing its next bid.
pub struct StrategyInput<'a> {
    pub own: OwnView<'a>,
    pub coalition: Option<CoalitionView<'a>>,
    /// The new bid of the rival named by [`Strategy::rival`], posted this round.
    pub rival_bid: Option<f64>,
}

pub trait Strategy {
    /// First bid, given the configured initial bid.
    fn initial_bid(&mut self, configured: f64) -> f64 {
        configured
    }

    fn next_bid(&mut self, input: &StrategyInput, rng: &mut ChaCha8Rng) -> f64;

    /// A conforming generator whose freshly updated bid this strategy reads.
    fn rival(&self) -> Option<usize> {
        None
    }
}

/// The prescribed update.
#[derive(Debug, Clone, Default)]
pub struct Conforming;

impl Strategy for Conforming {
    fn next_bid(&mut self, input: &StrategyInput, _: &mut ChaCha8Rng) -> f64 {
        let o = &input.own;
        (o.bid() + o.beta * (o.dispatch() - o.quantity())).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct ConstantBid(pub f64);

impl Strategy for ConstantBid {
    fn initial_bid(&mut self, _: f64) -> f64 {
        self.0
    }

    fn next_bid(&mut self, _: &StrategyInput, _: &mut ChaCha8Rng) -> f64 {
        self.0
    }
}

/// Bid `factor` times a rival's current bid. With a `floor`, fall back to a
/// uniform draw on `[floor, floor + width]` whenever the undercut would go
/// below it.
#[derive(Debug, Clone)]
pub struct MultiplicativeUndercut {
    pub rival: usize,
    pub factor: f64,
    pub floor: Option<f64>,
    pub width: f64,
}

impl Strategy for MultiplicativeUndercut {
    fn next_bid(&mut self, input: &StrategyInput, rng: &mut ChaCha8Rng) -> f64 {
        let rival = input.rival_bid.expect("rival bid is granted for declared rivals");
        let undercut = self.factor * rival;
        match self.floor {
            Some(floor) if undercut < floor => UniformAbove { floor, width: self.width }.draw(rng),
            _ => undercut.max(0.0),
        }
    }

    fn rival(&self) -> Option<usize> {
        Some(self.rival)
    }
}

/// A fresh uniform draw on `[floor, floor + width]` every round.
#[derive(Debug, Clone)]
pub struct UniformAbove {
    pub floor: f64,
    pub width: f64,
}

impl UniformAbove {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.width > 0.0 {
            rng.random_range(self.floor..=self.floor + self.width)
        } else {
            self.floor
        }
    }
}

impl Strategy for UniformAbove {
    fn next_bid(&mut self, _: &StrategyInput, rng: &mut ChaCha8Rng) -> f64 {
        self.draw(rng)
    }
}

/// `values[k]` as the bid for iteration `k + 1`, the last value repeating.
#[derive(Debug, Clone)]
pub struct BidSequence(pub Vec<f64>);

impl Strategy for BidSequence {
    fn initial_bid(&mut self, configured: f64) -> f64 {
        self.0.first().copied().unwrap_or(configured)
    }

    fn next_bid(&mut self, input: &StrategyInput, _: &mut ChaCha8Rng) -> f64 {
        let idx = input.own.k.min(self.0.len().saturating_sub(1));
        self.0.get(idx).copied().unwrap_or_else(|| input.own.bid())
    }
}

/// Serializable description of a built-in strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum StrategySpec {
    Conforming,
    Constant {
        bid: f64,
    },
    /// `floor` defaults to the generator's equilibrium bid when `floor_at_equilibrium` is set.
    MultiplicativeUndercut {
        /// Generator id of the rival.
        rival: u32,
        #[serde(default = "default_factor")]
        factor: f64,
        #[serde(default)]
        floor: Option<f64>,
        #[serde(default)]
        floor_at_equilibrium: bool,
        #[serde(default = "default_width")]
        width: f64,
    },
    UniformAbove {
        #[serde(default)]
        floor: Option<f64>,
        #[serde(default = "default_width")]
        width: f64,
    },
    Sequence {
        values: Vec<f64>,
    },
}

fn default_factor() -> f64 {
    0.99
}

fn default_width() -> f64 {
    1.0
}

impl StrategySpec {
    /// Instantiates the strategy for generator index `gen`. Floors left
    /// unset resolve to the equilibrium bid.
    pub fn build(&self, case: &NetworkCase, gen: usize, reference: Option<&Reference>) -> Result<Box<dyn Strategy>> {
        let equilibrium = || {
            reference.map(|r| r.b_star[gen]).ok_or_else(|| {
                Error::Precondition(format!(
                    "strategy of generator #{} needs the equilibrium bid, which is not unique for this case",
                    gen + 1
                ))
            })
        };
        Ok(match self {
            StrategySpec::Conforming => Box::new(Conforming),
            StrategySpec::Constant { bid } => Box::new(ConstantBid(*bid)),
            StrategySpec::MultiplicativeUndercut {
                rival,
                factor,
                floor,
                floor_at_equilibrium,
                width,
            } => {
                let rival_idx = case
                    .generators
                    .iter()
                    .position(|g| g.id == *rival)
                    .ok_or_else(|| Error::Precondition(format!("rival generator {rival} does not exist")))?;
                let floor = match (floor, floor_at_equilibrium) {
                    (Some(f), _) => Some(*f),
                    (None, true) => Some(equilibrium()?),
                    (None, false) => None,
                };
                Box::new(MultiplicativeUndercut {
                    rival: rival_idx,
                    factor: *factor,
                    floor,
                    width: *width,
                })
            }
            StrategySpec::UniformAbove { floor, width } => Box::new(UniformAbove {
                floor: match floor {
                    Some(f) => *f,
                    None => equilibrium()?,
                },
                width: *width,
            }),
            StrategySpec::Sequence { values } => Box::new(BidSequence(values.clone())),
        })
    }
}

/// Runs the dynamics with one generator following `strategy`.
#[allow(clippy::too_many_arguments)]
pub fn run_deviation(
    case: &NetworkCase,
    b1: &BidProfile,
    schedule: &StepsizeSchedule,
    deviant: usize,
    strategy: Box<dyn Strategy>,
    stop: &StoppingCriterion,
    iso_policy: &IsoPolicy,
    seed: u64,
) -> Result<MarketTrace> {
    if deviant >= case.n_generators() {
        return Err(Error::Precondition(format!("no generator at index {deviant}")));
    }
    run_strategic(case, b1, schedule, vec![(deviant, strategy)], false, stop, iso_policy, seed)
}

/// Runs the dynamics with the generators in `strategies` colluding: each
/// sees the whole coalition's bid and dispatch history.
///
/// Every generating bus must keep at least one conforming generator unless
/// `allow_uncovered_buses` is set, in which case a warning is logged.
#[allow(clippy::too_many_arguments)]
pub fn run_collusion(
    case: &NetworkCase,
    b1: &BidProfile,
    schedule: &StepsizeSchedule,
    strategies: Vec<(usize, Box<dyn Strategy>)>,
    allow_uncovered_buses: bool,
    stop: &StoppingCriterion,
    iso_policy: &IsoPolicy,
    seed: u64,
) -> Result<MarketTrace> {
    let members: BTreeSet<usize> = strategies.iter().map(|(n, _)| *n).collect();
    if members.len() != strategies.len() {
        return Err(Error::Precondition("a generator appears twice in the coalition".into()));
    }
    if let Some(&n) = members.iter().find(|&&n| n >= case.n_generators()) {
        return Err(Error::Precondition(format!("no generator at index {n}")));
    }
    for (bus, gens) in case.generators_at_buses().iter().enumerate() {
        if !gens.is_empty() && gens.iter().all(|g| members.contains(g)) {
            let msg = format!(
                "every generator at bus {} colludes; no conforming generator is left there",
                case.buses[bus].id
            );
            if allow_uncovered_buses {
                log::warn!("{msg}");
            } else {
                return Err(Error::Precondition(msg));
            }
        }
    }
    run_strategic(case, b1, schedule, strategies, true, stop, iso_policy, seed)
}

#[allow(clippy::too_many_arguments)]
fn run_strategic(
    case: &NetworkCase,
    b1: &BidProfile,
    schedule: &StepsizeSchedule,
    mut strategies: Vec<(usize, Box<dyn Strategy>)>,
    share_history: bool,
    stop: &StoppingCriterion,
    iso_policy: &IsoPolicy,
    seed: u64,
) -> Result<MarketTrace> {
    let n = case.n_generators();
    strategies.sort_by_key(|(g, _)| *g);
    let members: BTreeSet<usize> = strategies.iter().map(|(g, _)| *g).collect();
    let conforming: Vec<bool> = (0..n).map(|g| !members.contains(&g)).collect();
    check_initial_bids(case, b1.as_slice(), &conforming)?;
    schedule.validate(case)?;
    for (g, s) in &strategies {
        if let Some(r) = s.rival() {
            if r >= n || !conforming[r] {
                return Err(Error::Precondition(format!(
                    "generator #{} may only read the bid of a conforming rival, not #{}",
                    g + 1,
                    r + 1
                )));
            }
        }
    }

    let mut start = b1.as_slice().to_vec();
    for (g, s) in strategies.iter_mut() {
        start[*g] = s.initial_bid(start[*g]);
    }
    let reference = Reference::compute(case)?;
    let mut sampler = schedule.sampler(n, rng::stream(seed, rng::STEPSIZES));
    let mut strategy_rng = rng::stream(seed, rng::STRATEGY);
    let mut histories = vec![History::default(); n];

    simulate(case, start, stop, iso_policy, reference, conforming.clone(), |ctx| {
        let betas = sampler.draw(ctx.k);
        for g in 0..n {
            if !conforming[g] {
                let h = &mut histories[g];
                h.bids.push(ctx.b[g]);
                h.x_opt.push(ctx.x_opt[g]);
                h.q.push(ctx.q[g]);
            }
        }
        let mut next = bid_update(ctx.b, ctx.x_opt, ctx.q, &betas);
        let conformer_bids = next.clone();
        for (g, strategy) in strategies.iter_mut() {
            let g = *g;
            let h = &histories[g];
            let input = StrategyInput {
                own: OwnView {
                    k: ctx.k,
                    generator: g,
                    bids: &h.bids,
                    x_opt: &h.x_opt,
                    q: &h.q,
                    beta: betas[g],
                },
                coalition: share_history.then_some(CoalitionView {
                    members: &members,
                    histories: &histories,
                }),
                rival_bid: strategy.rival().map(|r| conformer_bids[r]),
            };
            let bid = strategy.next_bid(&input, &mut strategy_rng);
            if !bid.is_finite() {
                return Err(Error::Precondition(format!("strategy of generator #{} returned {bid}", g + 1)));
            }
            next[g] = bid.max(0.0);
        }
        Ok(Step {
            next,
            beta: reference_step(&betas),
            betas,
            disturbance: None,
        })
    })
}

/// Sampled lower estimate of the best payoff a generator can reach over bid
/// profiles near the equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UmaxEstimate {
    pub generator: usize,
    pub value: f64,
    pub samples: usize,
    pub radius: f64,
}

/// Samples bid profiles in the ball of radius `(1 + B(r)/(2 a_max))^exponent r`
/// around `b*` (uniform direction, uniform radius, clipped to nonnegative
/// bids) and maximizes the generator's payoff over the whole optimal
/// dispatch set at each sample. The centre `b*` is always included.
pub fn estimate_umax(
    case: &NetworkCase,
    reference: &Reference,
    r: f64,
    generator: usize,
    sample_count: usize,
    seed: u64,
    exponent: f64,
) -> Result<UmaxEstimate> {
    if generator >= case.n_generators() {
        return Err(Error::Precondition(format!("no generator at index {generator}")));
    }
    let params = crate::dynamics::ConvergenceParams::new(case, r)?;
    let radius = (1.0 + params.b_of_r / (2.0 * params.a_max)).powf(exponent) * r;
    let lp = SdcopfProblem::new(case)?;
    let gen = &case.generators[generator];
    let bs = reference.b_star.as_slice();
    let mut rng = rng::stream(seed, rng::UMAX);

    let best_at = |b: &[f64]| -> Result<f64> {
        let profile = BidProfile::new(b.to_vec());
        let (lo, hi) = lp.optimal_face_range(&profile, generator)?;
        let unconstrained = (b[generator] - gen.c) / (2.0 * gen.a);
        let x = unconstrained.clamp(lo.max(0.0), hi.max(lo).max(0.0));
        Ok(payoff(b[generator], x, gen))
    };

    let mut value = best_at(bs)?;
    for _ in 0..sample_count {
        let offset = random_in_ball(&mut rng, bs.len(), radius);
        let b: Vec<f64> = bs.iter().zip(&offset).map(|(c, o)| (c + o).max(0.0)).collect();
        value = value.max(best_at(&b)?);
    }
    Ok(UmaxEstimate {
        generator,
        value,
        samples: sample_count + 1,
        radius,
    })
}

/// True unless the deviant's payoff stays above `umax` from some iteration to
/// the end of the recorded horizon, i.e. unless the last recorded payoff does.
pub fn deviation_unprofitable(trace: &MarketTrace, deviant: usize, umax: f64) -> bool {
    trace
        .records
        .last()
        .is_none_or(|rec| rec.payoff[deviant] <= umax + VIOLATION_TOL * (1.0 + umax.abs()))
}
