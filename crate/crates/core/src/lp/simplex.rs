//! Dense two-phase primal simplex with Bland's rule.
//!
//! Columns are ranked by a caller-supplied priority list. Bland's rule picks
//! the best-ranked improving column to enter and, among tied ratios, the
//! best-ranked basic column to leave, so the vertex returned is a pure
//! function of the problem data and the priority list.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 50_000;

/// `A v = rhs, v >= 0`, with `A` stored row-major.
#[derive(Debug, Clone)]
pub(crate) struct StandardForm {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    /// A column with a single unit entry in this row, usable as the initial
    /// basic variable when `rhs >= 0`.
    pub slack_of_row: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub(crate) struct SimplexOutcome {
    pub values: Vec<f64>,
    /// Basic columns, one per non-redundant row.
    pub basis: Vec<usize>,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// Bland rank per column (lower is preferred).
    rank: Vec<usize>,
    width: usize,
    pivots: usize,
    log: Vec<String>,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[r][self.width]
    }

    fn pivot(&mut self, r: usize, s: usize) {
        let p = self.t[r][s];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[s];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[s] = 0.0;
            }
        }
        self.basis[r] = s;
        self.pivots += 1;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (dj, tij) in d.iter_mut().zip(&self.t[i][..self.width]) {
                    *dj -= cb * tij;
                }
            }
        }
        d
    }

    /// Runs Bland pivots until no allowed column improves `cost`.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool], phase: &str) -> Result<()> {
        let scale = 1.0 + cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::solver(
                    format!("simplex {phase} exceeded {MAX_PIVOTS} pivots"),
                    std::mem::take(&mut self.log),
                ));
            }
            let d = self.reduced_costs(cost);
            let entering = (0..self.width)
                .filter(|&j| allowed[j] && d[j] < -COST_TOL * scale && !self.basis.contains(&j))
                .min_by_key(|&j| self.rank[j]);
            let Some(s) = entering else {
                return Ok(());
            };

            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.t.len() {
                let coef = self.t[r][s];
                if coef <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / coef;
                best = match best {
                    None => Some((r, ratio)),
                    Some((br, bratio)) => {
                        let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio.abs());
                        // Strictly smaller ratio, or a tie won by the leaving variable's rank.
                        let better = if tie {
                            self.rank[self.basis[r]] < self.rank[self.basis[br]]
                        } else {
                            ratio < bratio
                        };
                        if better {
                            Some((r, ratio))
                        } else {
                            Some((br, bratio))
                        }
                    }
                };
            }
            let Some((r, ratio)) = best else {
                return Err(Error::Internal(format!(
                    "unbounded direction along column {s} in simplex {phase}"
                )));
            };
            if self.log.len() < 200 {
                self.log.push(format!(
                    "{phase}: pivot {} enter {s} leave {} step {ratio:.3e}",
                    self.pivots, self.basis[r]
                ));
            }
            self.pivot(r, s);
        }
    }
}

/// Minimizes `cost . v` over the standard form. `priority` lists all columns,
/// best-ranked first.
pub(crate) fn solve(sf: &StandardForm, cost: &[f64], priority: &[usize]) -> Result<SimplexOutcome> {
    debug_assert_eq!(cost.len(), sf.cols);
    debug_assert_eq!(priority.len(), sf.cols);

    // Rows without a usable slack get an artificial column.
    let mut row_start = Vec::with_capacity(sf.rows);
    let mut n_art = 0;
    for r in 0..sf.rows {
        match sf.slack_of_row[r] {
            Some(col) if sf.rhs[r] >= 0.0 => row_start.push(Ok(col)),
            _ => {
                row_start.push(Err(n_art));
                n_art += 1;
            }
        }
    }
    let width = sf.cols + n_art;

    let mut rank = vec![0; width];
    for k in 0..n_art {
        rank[sf.cols + k] = k;
    }
    for (pos, &j) in priority.iter().enumerate() {
        rank[j] = n_art + pos;
    }

    let mut t = Vec::with_capacity(sf.rows);
    let mut basis = Vec::with_capacity(sf.rows);
    for r in 0..sf.rows {
        let mut row = vec![0.0; width + 1];
        row[..sf.cols].copy_from_slice(&sf.a[r]);
        row[width] = sf.rhs[r];
        match row_start[r] {
            Ok(col) => basis.push(col),
            Err(k) => {
                if row[width] < 0.0 {
                    row.iter_mut().for_each(|v| *v = -*v);
                }
                row[sf.cols + k] = 1.0;
                basis.push(sf.cols + k);
            }
        }
        t.push(row);
    }

    let mut tab = Tableau {
        t,
        basis,
        rank,
        width,
        pivots: 0,
        log: Vec::new(),
    };

    if n_art > 0 {
        let mut phase1 = vec![0.0; width];
        phase1[sf.cols..].iter_mut().for_each(|c| *c = 1.0);
        let allowed = vec![true; width];
        tab.optimize(&phase1, &allowed, "phase 1")?;

        let infeas: f64 = (0..tab.t.len())
            .filter(|&r| tab.basis[r] >= sf.cols)
            .map(|r| tab.rhs(r))
            .sum();
        let rhs_scale = 1.0 + sf.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if infeas > 1e-9 * rhs_scale {
            return Err(Error::solver(
                format!("phase 1 ended with artificial mass {infeas:.3e}"),
                tab.log,
            ));
        }

        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < tab.t.len() {
            if tab.basis[r] < sf.cols {
                r += 1;
                continue;
            }
            let replacement = (0..sf.cols)
                .filter(|&j| tab.t[r][j].abs() > PIVOT_TOL && !tab.basis.contains(&j))
                .min_by_key(|&j| tab.rank[j]);
            match replacement {
                Some(j) => {
                    tab.pivot(r, j);
                    r += 1;
                }
                None => {
                    tab.t.remove(r);
                    tab.basis.remove(r);
                }
            }
        }
    }

    let mut phase2 = vec![0.0; width];
    phase2[..sf.cols].copy_from_slice(cost);
    let mut allowed = vec![true; width];
    allowed[sf.cols..].iter_mut().for_each(|a| *a = false);
    tab.optimize(&phase2, &allowed, "phase 2")?;

    let mut values = vec![0.0; sf.cols];
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < sf.cols {
            values[b] = tab.rhs(r).max(0.0);
        }
    }
    let objective = values.iter().zip(cost).map(|(v, c)| v * c).sum();
    Ok(SimplexOutcome {
        values,
        basis: tab.basis,
        objective,
        pivots: tab.pivots,
    })
}
