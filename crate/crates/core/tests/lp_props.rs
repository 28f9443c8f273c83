//! The simplex solver against brute-force vertex enumeration.

use bdrelay::lp::{solve_lp, LinearProgram, Sense};
use proptest::prelude::*;

const VARS: usize = 8;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let pivot_row = a[col].clone();
        for row in col + 1..n {
            let f = a[row][col] / pivot_row[col];
            for (dst, src) in a[row][col..n].iter_mut().zip(&pivot_row[col..n]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Every way of picking `k` items out of `0..n`.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Best objective over all basic feasible points. Rows are `(coeffs, is_eq,
/// rhs)`; equality rows are always active.
fn vertex_optimum(obj: &[f64], rows: &[(Vec<f64>, bool, f64)]) -> Option<f64> {
    let mut tight: Vec<(Vec<f64>, f64)> = Vec::new();
    let eqs: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .filter(|r| r.1)
        .map(|r| (r.0.clone(), r.2))
        .collect();
    for r in rows.iter().filter(|r| !r.1) {
        tight.push((r.0.clone(), r.2));
    }
    for j in 0..VARS {
        let mut e = vec![0.0; VARS];
        e[j] = 1.0;
        tight.push((e, 0.0));
    }
    let mut best: Option<f64> = None;
    for pick in combinations(tight.len(), VARS - eqs.len()) {
        let active: Vec<&(Vec<f64>, f64)> =
            eqs.iter().chain(pick.iter().map(|&i| &tight[i])).collect();
        let a = active.iter().map(|r| r.0.clone()).collect();
        let b = active.iter().map(|r| r.1).collect();
        let Some(x) = gauss(a, b) else { continue };
        let feasible = x.iter().all(|&v| v >= -1e-9)
            && rows.iter().all(|(c, is_eq, rhs)| {
                let lhs: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
                if *is_eq {
                    (lhs - rhs).abs() < 1e-8
                } else {
                    lhs <= rhs + 1e-8
                }
            });
        if feasible {
            let v: f64 = obj.iter().zip(&x).map(|(a, b)| a * b).sum();
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    }
    best
}

fn coeff() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), 0.1..5.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_matches_vertex_enumeration(
        obj in prop::collection::vec(-1.0..3.0f64, VARS),
        rows in prop::collection::vec((prop::collection::vec(coeff(), VARS), 1.0..10.0f64), 3),
        eq_row in prop::option::of((prop::collection::vec(0.1..2.0f64, VARS), 0.2..=1.0f64)),
    ) {
        // A budget row over all variables keeps the problem bounded.
        let mut all: Vec<(Vec<f64>, bool, f64)> = rows.into_iter().map(|(c, b)| (c, false, b)).collect();
        all.push((vec![1.0; VARS], false, 4.0));
        if let Some((c, scale)) = eq_row {
            // The point with every coordinate at 0.02 * scale satisfies all
            // inequality rows, so an equality through it keeps the problem
            // feasible.
            let rhs = c.iter().sum::<f64>() * 0.02 * scale;
            all.push((c, true, rhs));
        }
        let mut lp = LinearProgram::maximize(obj.clone());
        for (c, is_eq, b) in &all {
            lp.add(c.clone(), if *is_eq { Sense::Eq } else { Sense::Le }, *b);
        }
        let sol = solve_lp(&lp).unwrap();
        let brute = vertex_optimum(&obj, &all).expect("feasible by construction");
        prop_assert!((sol.value - brute).abs() < 1e-7 * (1.0 + brute.abs()), "simplex {} vs vertices {}", sol.value, brute);
        // Primal feasibility of the returned point.
        for (c, is_eq, b) in &all {
            let lhs: f64 = c.iter().zip(&sol.x).map(|(a, x)| a * x).sum();
            if *is_eq {
                prop_assert!((lhs - b).abs() < 1e-8);
            } else {
                prop_assert!(lhs <= b + 1e-8);
            }
        }
        prop_assert!(sol.x.iter().all(|&v| v >= -1e-12));
        // Strong duality.
        prop_assert!((sol.dual_bound - sol.value).abs() < 1e-7 * (1.0 + sol.value.abs()));
    }

    #[test]
    fn duals_certify_inequality_problems(
        obj in prop::collection::vec(0.0..3.0f64, VARS),
        rows in prop::collection::vec((prop::collection::vec(coeff(), VARS), 1.0..10.0f64), 4),
    ) {
        let mut lp = LinearProgram::maximize(obj.clone());
        for (c, b) in &rows {
            lp.le(c.clone(), *b);
        }
        lp.le(vec![1.0; VARS], 4.0);
        let sol = solve_lp(&lp).unwrap();
        // Dual feasibility: y >= 0 and A^T y >= c.
        prop_assert!(sol.dual.iter().all(|&y| y >= -1e-9));
        for (j, &cj) in obj.iter().enumerate() {
            let col: f64 = lp.constraints.iter().zip(&sol.dual).map(|(c, y)| c.coeffs[j] * y).sum();
            prop_assert!(col >= cj - 1e-8);
        }
        let by: f64 = lp.constraints.iter().zip(&sol.dual).map(|(c, y)| c.rhs * y).sum();
        prop_assert!((by - sol.value).abs() < 1e-7 * (1.0 + sol.value));
    }
}

#[test]
fn infeasible_and_unbounded_are_reported() {
    let mut lp = LinearProgram::maximize(vec![1.0, 1.0]);
    lp.le(vec![1.0, 1.0], 1.0)
        .add(vec![1.0, 1.0], Sense::Ge, 2.0);
    assert!(matches!(solve_lp(&lp), Err(bdrelay::Error::Infeasible)));
    let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
    lp.le(vec![0.0, 1.0], 1.0);
    assert!(matches!(solve_lp(&lp), Err(bdrelay::Error::Unbounded)));
}
