//! A small dense linear-programming solver.
//!
//! Problems have the form: maximize `c . x` subject to rows `a . x (<=|>=|=) b`
//! and `x >= 0`. They are solved by the two-phase tableau simplex method with
//! Bland's anti-cycling rule, which is robust and fast for the handful of
//! variables used by the benchmark protocols. Every solve also recovers the
//! dual solution and checks that the duality gap is closed.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pivot and feasibility tolerance.
pub const LP_EPS: f64 = 1e-11;

/// Accepted relative duality gap.
pub const DUALITY_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Maximize `objective . x` over nonnegative `x` subject to `constraints`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        LinearProgram {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint { coeffs, sense, rhs });
        self
    }

    pub fn le(&mut self, coeffs: Vec<f64>, rhs: f64) -> &mut Self {
        self.add(coeffs, Sense::Le, rhs)
    }

    pub fn equal(&mut self, coeffs: Vec<f64>, rhs: f64) -> &mut Self {
        self.add(coeffs, Sense::Eq, rhs)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if n == 0 {
            return Err(Error::invalid("objective", "no variables"));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(Error::invalid(
                    "constraints",
                    format!("row {i} has {} coefficients, expected {n}", c.coeffs.len()),
                ));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "constraints",
                    format!("row {i} is not finite"),
                ));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("objective", "not finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// Dual multipliers, one per constraint row.
    pub dual: Vec<f64>,
    /// Objective of the dual problem at `dual`; equals `value` at optimality.
    pub dual_bound: f64,
}

struct Tableau {
    /// `rows x (cols + 1)`; the last entry of each row is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Reduced costs `c_B B^-1 A_j - c_j` for the objective `cost`.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|j| {
                let z: f64 = self
                    .basis
                    .iter()
                    .zip(&self.t)
                    .map(|(&b, row)| cost[b] * row[j])
                    .sum();
                z - cost[j]
            })
            .collect()
    }

    /// Runs simplex iterations for `cost` over the allowed columns. Returns
    /// `false` if the objective is unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> bool {
        let rhs = self.cols;
        let max_iter = 50 * (self.cols + self.t.len()) + 100;
        for _ in 0..max_iter {
            let d = self.reduced_costs(cost);
            // Bland: lowest-index improving column.
            let Some(enter) = (0..self.cols).find(|&j| allowed[j] && d[j] < -LP_EPS) else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                let a = row[enter];
                if a > LP_EPS {
                    let ratio = row[rhs] / a;
                    let better = match leave {
                        None => true,
                        Some((l, best)) => {
                            ratio < best - LP_EPS
                                || (ratio <= best + LP_EPS && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None => return false,
            }
        }
        // Bland's rule cannot cycle; reaching here means numerical trouble.
        true
    }
}

/// Solves `lp` to optimality.
///
/// # Errors
/// [`Error::Infeasible`], [`Error::Unbounded`], or an invalid-parameter error
/// for malformed input.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();
    let m = lp.constraints.len();

    // Normalize to nonnegative right-hand sides.
    let mut flipped = vec![false; m];
    let rows: Vec<(Vec<f64>, Sense, f64)> = lp
        .constraints
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.rhs < 0.0 {
                flipped[i] = true;
                let sense = match c.sense {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
                (c.coeffs.iter().map(|v| -v).collect(), sense, -c.rhs)
            } else {
                (c.coeffs.clone(), c.sense, c.rhs)
            }
        })
        .collect();

    // Column layout: originals, then one slack or surplus per inequality,
    // then one artificial per >= or = row.
    let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let cols = n + n_slack + n_art;
    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let mut unit_col = vec![0; m];
    let mut is_art = vec![false; cols];
    let (mut s, mut a) = (n, n + n_slack);
    for (i, (coeffs, sense, rhs)) in rows.iter().enumerate() {
        t[i][..n].copy_from_slice(coeffs);
        t[i][cols] = *rhs;
        match sense {
            Sense::Le => {
                t[i][s] = 1.0;
                basis[i] = s;
                unit_col[i] = s;
                s += 1;
            }
            Sense::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][a] = 1.0;
                basis[i] = a;
                unit_col[i] = a;
                is_art[a] = true;
                a += 1;
            }
            Sense::Eq => {
                t[i][a] = 1.0;
                basis[i] = a;
                unit_col[i] = a;
                is_art[a] = true;
                a += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, cols };

    if n_art > 0 {
        let cost: Vec<f64> = is_art.iter().map(|&x| if x { -1.0 } else { 0.0 }).collect();
        tab.optimize(&cost, &vec![true; cols]);
        let infeasibility: f64 = tab
            .basis
            .iter()
            .zip(&tab.t)
            .filter(|(&b, _)| is_art[b])
            .map(|(_, row)| row[cols])
            .sum();
        let scale = 1.0 + rows.iter().map(|r| r.2).fold(0.0, f64::max);
        if infeasibility > 1e-9 * scale {
            return Err(Error::Infeasible);
        }
        // Drive artificials out of the basis where possible.
        for r in 0..m {
            if is_art[tab.basis[r]] {
                if let Some(c) = (0..cols).find(|&j| !is_art[j] && tab.t[r][j].abs() > 1e-9) {
                    tab.pivot(r, c);
                }
            }
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.objective);
    let allowed: Vec<bool> = is_art.iter().map(|&x| !x).collect();
    if !tab.optimize(&cost, &allowed) {
        return Err(Error::Unbounded);
    }

    let mut x = vec![0.0; n];
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.t[r][cols].max(0.0);
        }
    }
    let value: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();

    let d = tab.reduced_costs(&cost);
    let dual: Vec<f64> = (0..m)
        .map(|i| {
            let y = d[unit_col[i]];
            if flipped[i] {
                -y
            } else {
                y
            }
        })
        .collect();
    let dual_bound: f64 = lp
        .constraints
        .iter()
        .zip(&dual)
        .map(|(c, y)| c.rhs * y)
        .sum();
    check_duality(lp, &dual, value, dual_bound);
    Ok(LpSolution {
        x,
        value,
        dual,
        dual_bound,
    })
}

/// Spot check of the optimality certificate: the dual point must be feasible
/// and its objective must match the primal value.
fn check_duality(lp: &LinearProgram, dual: &[f64], value: f64, dual_bound: f64) {
    let scale = 1.0 + value.abs();
    assert!(
        (dual_bound - value).abs() <= DUALITY_TOLERANCE * scale,
        "duality gap: primal {value}, dual {dual_bound}"
    );
    for j in 0..lp.num_vars() {
        let lhs: f64 = lp
            .constraints
            .iter()
            .zip(dual)
            .map(|(c, y)| c.coeffs[j] * y)
            .sum();
        assert!(
            lhs >= lp.objective[j] - DUALITY_TOLERANCE * scale,
            "dual infeasible in column {j}: {lhs} < {}",
            lp.objective[j]
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_lp() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.le(vec![1.0], 1.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn face_lp() {
        let mut lp = LinearProgram::maximize(vec![1.0, 1.0]);
        lp.le(vec![1.0, 1.0], 1.0);
        assert!((solve_lp(&lp).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max x + 2y, x + y = 4, x >= 1, y <= 2.5
        let mut lp = LinearProgram::maximize(vec![1.0, 2.0]);
        lp.equal(vec![1.0, 1.0], 4.0);
        lp.add(vec![1.0, 0.0], Sense::Ge, 1.0);
        lp.le(vec![0.0, 1.0], 2.5);
        let s = solve_lp(&lp).unwrap();
        assert!((s.x[0] - 1.5).abs() < 1e-12 && (s.x[1] - 2.5).abs() < 1e-12);
        assert!((s.dual_bound - 6.5).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_row() {
        // -x <= -2 means x >= 2; minimize x via max -x.
        let mut lp = LinearProgram::maximize(vec![-1.0]);
        lp.le(vec![-1.0], -2.0);
        assert!((solve_lp(&lp).unwrap().x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.le(vec![1.0], 1.0).add(vec![1.0], Sense::Ge, 2.0);
        assert!(matches!(solve_lp(&lp), Err(Error::Infeasible)));
        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.le(vec![0.0, 1.0], 1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::Unbounded)));
    }

    #[test]
    fn degenerate_redundant_equalities() {
        let mut lp = LinearProgram::maximize(vec![1.0, 1.0]);
        lp.equal(vec![1.0, 1.0], 1.0)
            .equal(vec![2.0, 2.0], 2.0)
            .le(vec![1.0, 0.0], 0.3);
        assert!((solve_lp(&lp).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_ragged_rows() {
        let mut lp = LinearProgram::maximize(vec![1.0, 1.0]);
        lp.le(vec![1.0], 1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::InvalidParameter { .. })));
    }
}
