//! Quadratic DC optimal power flow, its KKT certificate, and the bid profiles
//! built from a primal-dual optimizer.
//!
//! Multiplier conventions: with `L = f(x) + nu.(J1 z - J2 x + y) + mu.(J3 z - zbar_c) - lambda.x`,
//! stationarity reads `grad f(x) - J2^T nu - lambda = 0` and `J1^T nu + J3^T mu = 0`.
//! `nu_i` is therefore the marginal price of power at bus `i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{IsoPolicy, SdcopfProblem};
use crate::network::{build_matrices, ConstraintMatrices, Generator, NetworkCase};

/// Tolerance for treating a generation as strictly positive.
pub const POSITIVE_TOL: f64 = 1e-9;

const MAX_ACTIVE_SET_ITERS: usize = 1000;
const STEP_TOL: f64 = 1e-12;
const MULT_TOL: f64 = 1e-10;

/// One nonnegative price per generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BidProfile(Vec<f64>);

impl BidProfile {
    pub fn new(bids: Vec<f64>) -> Self {
        BidProfile(bids)
    }

    /// Like [`BidProfile::new`] but rejects negative or non-finite prices.
    pub fn try_new(bids: Vec<f64>) -> Result<Self> {
        if let Some((n, b)) = bids.iter().enumerate().find(|(_, b)| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::Precondition(format!("bid {b} of generator #{} is not >= 0", n + 1)));
        }
        Ok(BidProfile(bids))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(b, x)| b * x).sum()
    }

    /// Euclidean distance to another profile.
    pub fn distance(&self, other: &BidProfile) -> f64 {
        distance(&self.0, &other.0)
    }
}

impl std::ops::Index<usize> for BidProfile {
    type Output = f64;
    fn index(&self, n: usize) -> &f64 {
        &self.0[n]
    }
}

impl From<Vec<f64>> for BidProfile {
    fn from(v: Vec<f64>) -> Self {
        BidProfile(v)
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Primal-dual optimizer of the DC-OPF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// One per bus.
    pub nu: Vec<f64>,
    /// Upper-limit multipliers for every line, then lower-limit multipliers.
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub objective: f64,
}

/// Solves the DC-OPF by a primal active-set method started from a vertex of
/// the feasible polytope.
pub fn solve_dcopf(case: &NetworkCase) -> Result<DispatchSolution> {
    solve_dcopf_from(case, &IsoPolicy::Deterministic)
}

/// [`solve_dcopf`] with the starting vertex chosen by `start`.
pub fn solve_dcopf_from(case: &NetworkCase, start: &IsoPolicy) -> Result<DispatchSolution> {
    let lp = SdcopfProblem::new(case)?;
    let m = lp.matrices().clone();
    let costs = BidProfile::new(case.generators.iter().map(|g| g.c).collect());
    let vertex = lp.solve(&costs, start)?;
    ActiveSet::new(case, m).run(vertex.x_opt, vertex.z_opt)
}

struct ActiveSet<'a> {
    case: &'a NetworkCase,
    m: ConstraintMatrices,
    ng: usize,
    ne: usize,
    /// Independent flow-balance rows (bus indices).
    eq_rows: Vec<usize>,
    /// Inequalities `G v <= h` over `v = (x, z)`.
    g: DMatrix<f64>,
    h: DVector<f64>,
}

impl<'a> ActiveSet<'a> {
    fn new(case: &'a NetworkCase, m: ConstraintMatrices) -> Self {
        let ng = case.n_generators();
        let ne = case.n_lines();
        let dim = ng + ne;
        let n_ineq = ng + 2 * ne;
        let mut g = DMatrix::zeros(n_ineq, dim);
        let mut h = DVector::zeros(n_ineq);
        for n in 0..ng {
            g[(n, n)] = -1.0;
        }
        for e in 0..ne {
            g[(ng + e, ng + e)] = 1.0;
            g[(ng + ne + e, ng + e)] = -1.0;
            h[ng + e] = m.zbar_c[e];
            h[ng + ne + e] = m.zbar_c[e];
        }

        let a_full = Self::eq_matrix(&m, ng, ne);
        let mut eq_rows = Vec::new();
        for i in 0..a_full.nrows() {
            let mut trial = eq_rows.clone();
            trial.push(i);
            if a_full.select_rows(trial.iter()).rank(1e-10) == trial.len() {
                eq_rows = trial;
            }
        }

        ActiveSet {
            case,
            m,
            ng,
            ne,
            eq_rows,
            g,
            h,
        }
    }

    /// `[-J2, J1]`.
    fn eq_matrix(m: &ConstraintMatrices, ng: usize, ne: usize) -> DMatrix<f64> {
        let nb = m.y.len();
        DMatrix::from_fn(nb, ng + ne, |i, j| if j < ng { -m.j2[(i, j)] } else { m.j1[(i, j - ng)] })
    }

    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut grad = DVector::zeros(v.len());
        for (n, gen) in self.case.generators.iter().enumerate() {
            grad[n] = gen.marginal_cost(v[n]);
        }
        grad
    }

    fn constraint_rows(&self, working: &[usize]) -> DMatrix<f64> {
        let a = Self::eq_matrix(&self.m, self.ng, self.ne).select_rows(self.eq_rows.iter());
        let gw = self.g.select_rows(working.iter());
        let mut rows = DMatrix::zeros(a.nrows() + gw.nrows(), self.ng + self.ne);
        rows.rows_mut(0, a.nrows()).copy_from(&a);
        rows.rows_mut(a.nrows(), gw.nrows()).copy_from(&gw);
        rows
    }

    /// Solves the equality-constrained step: returns `(p, multipliers)` with
    /// `H p + grad + C^T m = 0` and `C p = 0`.
    fn eqp(&self, v: &DVector<f64>, working: &[usize]) -> Result<(DVector<f64>, DVector<f64>)> {
        let dim = self.ng + self.ne;
        let c = self.constraint_rows(working);
        let k = c.nrows();
        let mut kkt = DMatrix::zeros(dim + k, dim + k);
        for (n, gen) in self.case.generators.iter().enumerate() {
            kkt[(n, n)] = 2.0 * gen.a;
        }
        kkt.view_mut((0, dim), (dim, k)).copy_from(&c.transpose());
        kkt.view_mut((dim, 0), (k, dim)).copy_from(&c);
        let mut rhs = DVector::zeros(dim + k);
        rhs.rows_mut(0, dim).copy_from(&(-self.gradient(v)));
        let sol = kkt
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::solver(format!("KKT solve failed: {e}"), Vec::new()))?;
        Ok((sol.rows(0, dim).into_owned(), sol.rows(dim, k).into_owned()))
    }

    fn run(&self, x0: Vec<f64>, z0: Vec<f64>) -> Result<DispatchSolution> {
        let dim = self.ng + self.ne;
        let n_ineq = self.h.len();
        let mut v = DVector::from_iterator(dim, x0.into_iter().chain(z0));

        // Initial working set: active constraints at the starting vertex, kept independent.
        let mut working: Vec<usize> = Vec::new();
        for i in 0..n_ineq {
            let slack = self.h[i] - (self.g.row(i) * &v)[0];
            if slack.abs() <= 1e-9 * (1.0 + self.h[i].abs()) {
                let mut trial = working.clone();
                trial.push(i);
                let rows = self.constraint_rows(&trial);
                if rows.rank(1e-10) == rows.nrows() {
                    working = trial;
                }
            }
        }

        let mut log = Vec::new();
        let n_eq = self.eq_rows.len();
        for iter in 0..MAX_ACTIVE_SET_ITERS {
            let (p, mult) = self.eqp(&v, &working)?;
            let scale = 1.0 + v.amax();
            if p.amax() <= STEP_TOL * scale {
                let drop = working
                    .iter()
                    .enumerate()
                    .map(|(w, &i)| (w, i, mult[n_eq + w]))
                    .filter(|&(_, _, mm)| mm < -MULT_TOL)
                    .min_by(|a, b| a.2.partial_cmp(&b.2).unwrap().then(a.1.cmp(&b.1)));
                match drop {
                    None => return Ok(self.finish(&v, &working, &mult)),
                    Some((w, i, mm)) => {
                        log.push(format!("iter {iter}: drop constraint {i} (multiplier {mm:.3e})"));
                        working.remove(w);
                    }
                }
                continue;
            }

            let mut step = 1.0;
            let mut blocking = None;
            for i in 0..n_ineq {
                if working.contains(&i) {
                    continue;
                }
                let gp = (self.g.row(i) * &p)[0];
                if gp > STEP_TOL {
                    let slack = (self.h[i] - (self.g.row(i) * &v)[0]).max(0.0);
                    let t = slack / gp;
                    if t < step - 1e-15 {
                        step = t;
                        blocking = Some(i);
                    }
                }
            }
            v += &p * step;
            if let Some(i) = blocking {
                log.push(format!("iter {iter}: step {step:.3e}, add constraint {i}"));
                working.push(i);
                working.sort_unstable();
            } else {
                log.push(format!("iter {iter}: full step"));
            }
        }
        Err(Error::solver(
            format!("active set did not converge in {MAX_ACTIVE_SET_ITERS} iterations"),
            log,
        ))
    }

    fn finish(&self, v: &DVector<f64>, working: &[usize], mult: &DVector<f64>) -> DispatchSolution {
        let nb = self.m.y.len();
        let mut nu = vec![0.0; nb];
        for (k, &i) in self.eq_rows.iter().enumerate() {
            nu[i] = mult[k];
        }
        let mut lambda = vec![0.0; self.ng];
        let mut mu = vec![0.0; 2 * self.ne];
        let n_eq = self.eq_rows.len();
        for (w, &i) in working.iter().enumerate() {
            let mm = mult[n_eq + w].max(0.0);
            if i < self.ng {
                lambda[i] = mm;
            } else {
                mu[i - self.ng] = mm;
            }
        }
        let x: Vec<f64> = (0..self.ng).map(|n| v[n].max(0.0)).collect();
        let z: Vec<f64> = (0..self.ne)
            .map(|e| v[self.ng + e].clamp(-self.m.zbar_c[e], self.m.zbar_c[e]))
            .collect();
        let objective = self.case.generators.iter().zip(&x).map(|(g, &xn)| g.cost(xn)).sum();
        DispatchSolution {
            x,
            z,
            nu,
            mu,
            lambda,
            objective,
        }
    }
}

/// Residuals of the KKT system at a candidate primal-dual point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    /// `grad f(x) - J2^T nu - lambda` (or `b - J2^T nu - lambda` for bids), per generator.
    pub stationarity_x: Vec<f64>,
    /// `J1^T nu + J3^T mu`, per line.
    pub stationarity_z: Vec<f64>,
    /// `J1 z - J2 x + y`, per bus.
    pub flow_balance: Vec<f64>,
    /// Largest violation of `x >= 0` and `|z| <= zbar`.
    pub primal_infeasibility: f64,
    /// Largest violation of `mu, lambda >= 0`.
    pub dual_infeasibility: f64,
    /// Largest of `|x_n lambda_n|` and `|mu_j (J3 z - zbar_c)_j|`.
    pub complementarity: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        let amax = |v: &[f64]| v.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        amax(&self.stationarity_x)
            .max(amax(&self.stationarity_z))
            .max(amax(&self.flow_balance))
            .max(self.primal_infeasibility)
            .max(self.dual_infeasibility)
            .max(self.complementarity)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

/// Evaluates the KKT residuals of `sol`. With `bids`, the cost gradient in the
/// generator stationarity condition is replaced by the bids, which certifies
/// optimality for the bid-weighted dispatch problem.
pub fn check_kkt(case: &NetworkCase, sol: &DispatchSolution, bids: Option<&BidProfile>) -> Result<KktReport> {
    let m = build_matrices(case)?;
    let (nb, ng) = m.j2.shape();
    let ne = m.j1.ncols();
    if sol.x.len() != ng || sol.z.len() != ne || sol.nu.len() != nb || sol.mu.len() != 2 * ne || sol.lambda.len() != ng {
        return Err(Error::Precondition("solution dimensions do not match the case".into()));
    }
    if let Some(b) = bids {
        if b.len() != ng {
            return Err(Error::Precondition(format!("{} bids for {} generators", b.len(), ng)));
        }
    }
    let nu = DVector::from_column_slice(&sol.nu);
    let mu = DVector::from_column_slice(&sol.mu);
    let j2t_nu = m.j2.transpose() * &nu;
    let stationarity_x = (0..ng)
        .map(|n| {
            let slope = match bids {
                Some(b) => b[n],
                None => case.generators[n].marginal_cost(sol.x[n]),
            };
            slope - j2t_nu[n] - sol.lambda[n]
        })
        .collect();
    let stationarity_z = (m.j1.transpose() * &nu + m.j3.transpose() * &mu).iter().copied().collect();
    let flow_balance = m.flow_balance_residual(&sol.x, &sol.z).iter().copied().collect();
    let slack = m.limit_slack(&sol.z);
    let primal_infeasibility = sol
        .x
        .iter()
        .map(|&x| -x)
        .chain(slack.iter().copied())
        .fold(0.0f64, f64::max);
    let dual_infeasibility = sol.mu.iter().chain(&sol.lambda).map(|&d| -d).fold(0.0f64, f64::max);
    let complementarity = sol
        .x
        .iter()
        .zip(&sol.lambda)
        .map(|(x, l)| (x * l).abs())
        .chain(sol.mu.iter().zip(slack.iter()).map(|(mu, s)| (mu * s).abs()))
        .fold(0.0f64, f64::max);
    Ok(KktReport {
        stationarity_x,
        stationarity_z,
        flow_balance,
        primal_infeasibility,
        dual_infeasibility,
        complementarity,
    })
}

/// Value of the Lagrangian dual function at the multipliers of `sol`, assuming
/// the flow stationarity condition holds.
pub fn dual_value(case: &NetworkCase, sol: &DispatchSolution) -> Result<f64> {
    let m = build_matrices(case)?;
    let j2t_nu = m.j2.transpose() * DVector::from_column_slice(&sol.nu);
    let inner: f64 = case
        .generators
        .iter()
        .enumerate()
        .map(|(n, g)| {
            let s = g.c - j2t_nu[n] - sol.lambda[n];
            -s * s / (4.0 * g.a)
        })
        .sum();
    let nu_y: f64 = sol.nu.iter().zip(m.y.iter()).map(|(n, y)| n * y).sum();
    let mu_zbar: f64 = sol.mu.iter().zip(m.zbar_c.iter()).map(|(u, z)| u * z).sum();
    Ok(inner + nu_y - mu_zbar)
}

/// The unique efficient bid `b_n = 2 a_n x_n + c_n`. Requires every
/// generator to be dispatched; otherwise use [`nash_from_duals`].
pub fn efficient_bid(case: &NetworkCase, sol: &DispatchSolution) -> Result<BidProfile> {
    if let Some(n) = sol.x.iter().position(|&x| x <= POSITIVE_TOL) {
        return Err(Error::Precondition(format!(
            "generator #{} has zero dispatch, so the efficient bid is not unique; use nash_from_duals",
            n + 1
        )));
    }
    Ok(BidProfile(
        case.generators.iter().zip(&sol.x).map(|(g, &x)| g.marginal_cost(x)).collect(),
    ))
}

/// An efficient Nash equilibrium read off the bus prices: `nu` at buses where
/// every generator is dispatched, the zero-output marginal cost elsewhere.
pub fn nash_from_duals(case: &NetworkCase, sol: &DispatchSolution) -> BidProfile {
    let gen_bus = case.generator_buses();
    let at_bus = case.generators_at_buses();
    BidProfile(
        case.generators
            .iter()
            .enumerate()
            .map(|(n, g)| {
                let bus = gen_bus[n];
                if at_bus[bus].iter().all(|&m| sol.x[m] > POSITIVE_TOL) {
                    sol.nu[bus]
                } else {
                    g.marginal_cost(0.0)
                }
            })
            .collect(),
    )
}

/// Profit-maximizing quantity at price `bid`: `max(0, (bid - c) / (2a))`.
pub fn best_response_quantity(bid: f64, gen: &Generator) -> f64 {
    ((bid - gen.c) / (2.0 * gen.a)).max(0.0)
}

/// `bid * dispatched - f(dispatched)`.
pub fn payoff(bid: f64, dispatched: f64, gen: &Generator) -> f64 {
    bid * dispatched - gen.cost(dispatched)
}
