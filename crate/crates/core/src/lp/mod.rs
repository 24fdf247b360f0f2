//! The ISO's bid-weighted dispatch problem
//!
//! ```text
//! minimize   b . x
//! subject to J1 z - J2 x + y = 0,  -zbar <= z <= zbar,  x >= 0
//! ```
//!
//! solved to a vertex. Flows are shifted to `w = z + zbar` with a slack
//! `s` for `w + s = 2 zbar`, giving the standard form over `(x, w, s) >= 0`.

mod simplex;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{build_matrices, check_feasible, ConstraintMatrices, NetworkCase};
use crate::opf::BidProfile;
use simplex::StandardForm;

/// Default variable-count guard for [`enumerate_vertices`].
pub const DEFAULT_MAX_DIMS: usize = 12;

const FEAS_TOL: f64 = 1e-9;

/// How the ISO picks among optimal vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum IsoPolicy {
    /// Bland's rule over the natural column order from the fixed initial basis.
    Deterministic,
    /// Bland's rule over a column order shuffled by `seed`.
    Randomized { seed: u64 },
}

/// A basic variable of the standard form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisVar {
    Generation(usize),
    /// `z_e + zbar_e`.
    ShiftedFlow(usize),
    /// `zbar_e - z_e`.
    LineSlack(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x_opt: Vec<f64>,
    pub z_opt: Vec<f64>,
    pub basis: Vec<BasisVar>,
    pub objective: f64,
    pub is_vertex: bool,
}

/// The dispatch LP for one network, reusable across bid profiles.
#[derive(Debug, Clone)]
pub struct SdcopfProblem {
    n_gen: usize,
    n_lines: usize,
    zbar: Vec<f64>,
    matrices: ConstraintMatrices,
    form: StandardForm,
}

impl SdcopfProblem {
    pub fn new(case: &NetworkCase) -> Result<Self> {
        check_feasible(case)?;
        let matrices = build_matrices(case)?;
        let n_gen = case.n_generators();
        let n_lines = case.n_lines();
        let nb = case.n_buses();
        let zbar = case.limits();
        let cols = n_gen + 2 * n_lines;

        let mut a = Vec::with_capacity(nb + n_lines);
        let mut rhs = Vec::with_capacity(nb + n_lines);
        let mut slack_of_row = Vec::with_capacity(nb + n_lines);
        for i in 0..nb {
            let mut row = vec![0.0; cols];
            for n in 0..n_gen {
                row[n] = -matrices.j2[(i, n)];
            }
            let mut shift = 0.0;
            for e in 0..n_lines {
                row[n_gen + e] = matrices.j1[(i, e)];
                shift += matrices.j1[(i, e)] * zbar[e];
            }
            a.push(row);
            rhs.push(shift - matrices.y[i]);
            slack_of_row.push(None);
        }
        for e in 0..n_lines {
            let mut row = vec![0.0; cols];
            row[n_gen + e] = 1.0;
            row[n_gen + n_lines + e] = 1.0;
            a.push(row);
            rhs.push(2.0 * zbar[e]);
            slack_of_row.push(Some(n_gen + n_lines + e));
        }

        Ok(Self {
            n_gen,
            n_lines,
            zbar,
            matrices,
            form: StandardForm {
                rows: nb + n_lines,
                cols,
                a,
                rhs,
                slack_of_row,
            },
        })
    }

    pub fn matrices(&self) -> &ConstraintMatrices {
        &self.matrices
    }

    fn priority(&self, policy: &IsoPolicy) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.form.cols).collect();
        if let IsoPolicy::Randomized { seed } = policy {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
        }
        order
    }

    fn cost(&self, bids: &BidProfile) -> Result<Vec<f64>> {
        if bids.len() != self.n_gen {
            return Err(Error::Precondition(format!(
                "{} bids for {} generators",
                bids.len(),
                self.n_gen
            )));
        }
        if let Some((n, b)) = bids.iter().enumerate().find(|(_, b)| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::Precondition(format!("bid {} of generator #{} is not >= 0", b, n + 1)));
        }
        let mut cost = vec![0.0; self.form.cols];
        cost[..self.n_gen].copy_from_slice(bids.as_slice());
        Ok(cost)
    }

    fn basis_var(&self, col: usize) -> BasisVar {
        if col < self.n_gen {
            BasisVar::Generation(col)
        } else if col < self.n_gen + self.n_lines {
            BasisVar::ShiftedFlow(col - self.n_gen)
        } else {
            BasisVar::LineSlack(col - self.n_gen - self.n_lines)
        }
    }

    fn unpack(&self, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x = values[..self.n_gen].to_vec();
        let z = (0..self.n_lines)
            .map(|e| values[self.n_gen + e] - self.zbar[e])
            .collect();
        (x, z)
    }

    /// A vertex optimizer for `bids`.
    pub fn solve(&self, bids: &BidProfile, policy: &IsoPolicy) -> Result<LpSolution> {
        let cost = self.cost(bids)?;
        let out = simplex::solve(&self.form, &cost, &self.priority(policy))?;
        log::trace!("dispatch LP solved in {} pivots", out.pivots);
        let (x_opt, z_opt) = self.unpack(&out.values);
        let is_vertex = is_vertex(&self.matrices, &self.zbar, &x_opt, &z_opt);
        Ok(LpSolution {
            objective: bids.dot(&x_opt),
            basis: out.basis.iter().map(|&c| self.basis_var(c)).collect(),
            x_opt,
            z_opt,
            is_vertex,
        })
    }

    /// Range of generator `gen`'s dispatch over the set of optimizers for `bids`.
    pub fn optimal_face_range(&self, bids: &BidProfile, gen: usize) -> Result<(f64, f64)> {
        let cost = self.cost(bids)?;
        let priority = self.priority(&IsoPolicy::Deterministic);
        let best = simplex::solve(&self.form, &cost, &priority)?.objective;

        // Append b.x + t = best + tol with slack t.
        let mut face = self.form.clone();
        let t = face.cols;
        face.cols += 1;
        for row in face.a.iter_mut() {
            row.push(0.0);
        }
        let mut row = cost.clone();
        row.push(1.0);
        face.a.push(row);
        face.rhs.push(best + 1e-10 * (1.0 + best.abs()));
        face.slack_of_row.push(Some(t));
        face.rows += 1;

        let mut face_priority = priority;
        face_priority.push(t);
        let mut dir = vec![0.0; face.cols];
        dir[gen] = 1.0;
        let lo = simplex::solve(&face, &dir, &face_priority)?.values[gen];
        dir[gen] = -1.0;
        let hi = simplex::solve(&face, &dir, &face_priority)?.values[gen];
        Ok((lo, hi))
    }
}

/// Solves the dispatch LP for `bids`, returning a basic feasible optimizer.
pub fn solve_sdcopf(case: &NetworkCase, bids: &BidProfile, policy: &IsoPolicy) -> Result<LpSolution> {
    SdcopfProblem::new(case)?.solve(bids, policy)
}

/// True when the constraints active at `(x, z)` pin the point down.
pub fn is_vertex(m: &ConstraintMatrices, zbar: &[f64], x: &[f64], z: &[f64]) -> bool {
    let (nb, ng) = m.j2.shape();
    let ne = zbar.len();
    let dim = ng + ne;
    let mut rows: Vec<Vec<f64>> = (0..nb)
        .map(|i| {
            let mut r = vec![0.0; dim];
            for n in 0..ng {
                r[n] = -m.j2[(i, n)];
            }
            for e in 0..ne {
                r[ng + e] = m.j1[(i, e)];
            }
            r
        })
        .collect();
    for (n, &xn) in x.iter().enumerate() {
        if xn <= FEAS_TOL {
            let mut r = vec![0.0; dim];
            r[n] = 1.0;
            rows.push(r);
        }
    }
    for e in 0..ne {
        if (z[e].abs() - zbar[e]).abs() <= FEAS_TOL * (1.0 + zbar[e]) {
            let mut r = vec![0.0; dim];
            r[ng + e] = 1.0;
            rows.push(r);
        }
    }
    let mat = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    mat.rank(1e-9) == dim
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    Lower,
    Upper,
}

/// Every basic feasible solution of the dispatch polytope, with its objective
/// under `bids`. Brute force over bound assignments; refuses problems with more
/// than `max_dims` generation and flow variables.
pub fn enumerate_vertices(
    case: &NetworkCase,
    bids: &BidProfile,
    max_dims: usize,
) -> Result<Vec<LpSolution>> {
    let ng = case.n_generators();
    let ne = case.n_lines();
    let dim = ng + ne;
    if dim > max_dims {
        return Err(Error::TooLarge {
            variables: dim,
            limit: max_dims,
        });
    }
    if bids.len() != ng {
        return Err(Error::Precondition(format!("{} bids for {} generators", bids.len(), ng)));
    }
    let m = build_matrices(case)?;
    let zbar = case.limits();

    // Equality system over v = (x, z), reduced to independent rows.
    let nb = case.n_buses();
    let mut eq: Vec<Vec<f64>> = (0..nb)
        .map(|i| {
            let mut r = vec![0.0; dim + 1];
            for n in 0..ng {
                r[n] = -m.j2[(i, n)];
            }
            for e in 0..ne {
                r[ng + e] = m.j1[(i, e)];
            }
            r[dim] = -m.y[i];
            r
        })
        .collect();
    let rank = row_reduce(&mut eq, dim);
    if eq[rank..].iter().any(|r| r[dim].abs() > 1e-9) {
        check_feasible(case)?;
        return Ok(Vec::new());
    }
    eq.truncate(rank);

    let lower = |j: usize| if j < ng { 0.0 } else { -zbar[j - ng] };
    let upper = |j: usize| if j < ng { f64::INFINITY } else { zbar[j - ng] };

    let mut found: Vec<LpSolution> = Vec::new();
    let mut state = vec![VarState::Basic; dim];
    let choices = |j: usize| if j < ng { 2 } else { 3 };
    let mut counter = vec![0usize; dim];
    loop {
        for j in 0..dim {
            state[j] = match counter[j] {
                0 => VarState::Basic,
                1 => VarState::Lower,
                _ => VarState::Upper,
            };
        }
        let basic: Vec<usize> = (0..dim).filter(|&j| state[j] == VarState::Basic).collect();
        if basic.len() == rank {
            let mut v = vec![0.0; dim];
            for j in 0..dim {
                match state[j] {
                    VarState::Lower => v[j] = lower(j),
                    VarState::Upper => v[j] = upper(j),
                    VarState::Basic => {}
                }
            }
            let solved = if rank == 0 {
                Some(DVector::zeros(0))
            } else {
                let ab = DMatrix::from_fn(rank, rank, |i, k| eq[i][basic[k]]);
                let rhs = DVector::from_fn(rank, |i, _| {
                    eq[i][dim]
                        - (0..dim)
                            .filter(|&j| state[j] != VarState::Basic)
                            .map(|j| eq[i][j] * v[j])
                            .sum::<f64>()
                });
                let lu = ab.clone().full_piv_lu();
                if ab.rank(1e-10) == rank {
                    lu.solve(&rhs)
                } else {
                    None
                }
            };
            if let Some(vb) = solved {
                for (k, &j) in basic.iter().enumerate() {
                    v[j] = vb[k];
                }
                let feasible = (0..dim).all(|j| {
                    let tol = FEAS_TOL * (1.0 + v[j].abs());
                    v[j] >= lower(j) - tol && v[j] <= upper(j) + tol
                });
                if feasible {
                    let x: Vec<f64> = v[..ng].iter().map(|&xn| xn.max(0.0)).collect();
                    let z: Vec<f64> = (0..ne).map(|e| v[ng + e].clamp(-zbar[e], zbar[e])).collect();
                    let duplicate = found.iter().any(|s| {
                        s.x_opt.iter().chain(&s.z_opt).zip(x.iter().chain(&z)).all(|(p, q)| (p - q).abs() <= 1e-9)
                    });
                    if !duplicate {
                        let mut basis: Vec<BasisVar> = Vec::new();
                        for (n, &st) in state[..ng].iter().enumerate() {
                            if st == VarState::Basic {
                                basis.push(BasisVar::Generation(n));
                            }
                        }
                        for e in 0..ne {
                            match state[ng + e] {
                                VarState::Basic => {
                                    basis.push(BasisVar::ShiftedFlow(e));
                                    basis.push(BasisVar::LineSlack(e));
                                }
                                VarState::Lower => basis.push(BasisVar::LineSlack(e)),
                                VarState::Upper => basis.push(BasisVar::ShiftedFlow(e)),
                            }
                        }
                        found.push(LpSolution {
                            objective: bids.dot(&x),
                            x_opt: x,
                            z_opt: z,
                            basis,
                            is_vertex: true,
                        });
                    }
                }
            }
        }

        // Mixed-radix increment.
        let mut j = 0;
        loop {
            if j == dim {
                return Ok(found);
            }
            counter[j] += 1;
            if counter[j] < choices(j) {
                break;
            }
            counter[j] = 0;
            j += 1;
        }
    }
}

/// Gauss-Jordan elimination with partial pivoting on an augmented matrix
/// (`cols` coefficient columns plus rhs). Returns the rank; the first `rank`
/// rows are the independent ones.
fn row_reduce(rows: &mut [Vec<f64>], cols: usize) -> usize {
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows.len() {
            break;
        }
        let (pivot, max) = (rank..rows.len())
            .map(|r| (r, rows[r][col].abs()))
            .fold((rank, -1.0), |acc, it| if it.1 > acc.1 { it } else { acc });
        if max <= 1e-10 {
            continue;
        }
        rows.swap(rank, pivot);
        let p = rows[rank][col];
        rows[rank].iter_mut().for_each(|v| *v /= p);
        let prow = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[col] != 0.0 {
                let f = row[col];
                row.iter_mut().zip(&prow).for_each(|(v, pv)| *v -= f * pv);
            }
        }
        rank += 1;
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ieee9_modified, Bus, Generator, Line};

    fn single_bus(load: f64, n_gen: usize) -> NetworkCase {
        NetworkCase {
            buses: vec![Bus { id: 1, load }],
            lines: vec![],
            generators: (0..n_gen)
                .map(|n| Generator {
                    id: n as u32 + 1,
                    bus: 1,
                    a: 1.0,
                    c: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn cheaper_generator_takes_all() {
        let case = single_bus(2.5, 2);
        let sol = solve_sdcopf(&case, &BidProfile::new(vec![1.0, 2.0]), &IsoPolicy::Deterministic).unwrap();
        assert_eq!(sol.x_opt, vec![2.5, 0.0]);
        assert!(sol.is_vertex);
        assert_eq!(sol.objective, 2.5);
    }

    #[test]
    fn one_generator_one_vertex() {
        let v = enumerate_vertices(&single_bus(1.5, 1), &BidProfile::new(vec![3.0]), 12).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].x_opt, vec![1.5]);
    }

    #[test]
    fn equal_bids_give_two_optimal_vertices() {
        let v = enumerate_vertices(&single_bus(1.0, 2), &BidProfile::new(vec![2.0, 2.0]), 12).unwrap();
        let mut xs: Vec<Vec<f64>> = v.iter().map(|s| s.x_opt.clone()).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(xs, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(v.iter().all(|s| s.objective == 2.0));
    }

    #[test]
    fn congested_import_forces_local_generation() {
        let zbar = 0.4;
        let case = NetworkCase {
            buses: vec![Bus { id: 1, load: 0.3 }, Bus { id: 2, load: 1.0 }],
            lines: vec![Line { from_bus: 1, to_bus: 2, limit: zbar }],
            generators: vec![
                Generator { id: 1, bus: 1, a: 1.0, c: 0.0 },
                Generator { id: 2, bus: 2, a: 1.0, c: 0.0 },
            ],
        };
        let v = enumerate_vertices(&case, &BidProfile::new(vec![1.0, 1.0]), 12).unwrap();
        assert!(!v.is_empty());
        for s in &v {
            assert!(s.x_opt[1] >= 1.0 - zbar - 1e-12, "{:?}", s.x_opt);
        }
    }

    #[test]
    fn guard_refuses_large_problems() {
        let case = ieee9_modified();
        let err = enumerate_vertices(&case, &BidProfile::new(vec![1.0; 6]), 12).unwrap_err();
        assert!(matches!(err, Error::TooLarge { variables: 15, limit: 12 }));
    }

    #[test]
    fn randomized_policy_is_reproducible() {
        let case = ieee9_modified();
        let bids = BidProfile::new(vec![3.0, 3.0, 1.0, 1.0, 2.0, 2.0]);
        let p = SdcopfProblem::new(&case).unwrap();
        let a = p.solve(&bids, &IsoPolicy::Randomized { seed: 7 }).unwrap();
        let b = p.solve(&bids, &IsoPolicy::Randomized { seed: 7 }).unwrap();
        assert_eq!(a, b);
        assert!(a.is_vertex);
        let d = p.solve(&bids, &IsoPolicy::Deterministic).unwrap();
        assert!((a.objective - d.objective).abs() < 1e-9);
    }

    #[test]
    fn negative_bid_rejected() {
        let err = solve_sdcopf(&single_bus(1.0, 2), &BidProfile::new(vec![-1.0, 1.0]), &IsoPolicy::Deterministic);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn face_range_on_tie() {
        let p = SdcopfProblem::new(&single_bus(1.0, 2)).unwrap();
        let (lo, hi) = p.optimal_face_range(&BidProfile::new(vec![2.0, 2.0]), 0).unwrap();
        assert!(lo.abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
        let (lo, hi) = p.optimal_face_range(&BidProfile::new(vec![1.0, 2.0]), 0).unwrap();
        assert!((lo - 1.0).abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
    }
}
