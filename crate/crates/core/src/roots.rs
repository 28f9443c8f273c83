//! Bracketed root finding for nondecreasing functions.
//!
//! Calibration residuals are sample averages, so they are monotone step
//! functions of the weights rather than smooth curves. The solver therefore
//! never assumes a sign change can be located exactly: it returns the narrowest
//! bracket it found together with the endpoint whose residual is smallest.

/// Result of [`solve_increasing`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    /// `Below` or `Above` when the function has no sign change on the interval
    /// and `x` is the corresponding endpoint.
    pub clamp: Clamp,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clamp {
    Interior,
    /// f(lo) >= 0: the root lies at or below the lower end.
    Below,
    /// f(hi) <= 0: the root lies at or above the upper end.
    Above,
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    /// Stop when |f| <= ftol.
    pub ftol: f64,
    /// Stop when the bracket is narrower than xtol.
    pub xtol: f64,
    pub max_evals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            ftol: 0.0,
            xtol: 1e-13,
            max_evals: 200,
        }
    }
}

/// Finds `x` in `[lo, hi]` with `f(x) = 0` for a nondecreasing `f`.
///
/// `guess` seeds the search: the bracket is grown outward from it in doubling
/// steps, which is far cheaper than evaluating both ends when a good warm
/// start is available. Inside the bracket the Illinois variant of regula falsi
/// is used, falling back to bisection whenever it stalls.
pub fn solve_increasing<F>(mut f: F, lo: f64, hi: f64, guess: Option<f64>, tol: Tolerance) -> Root
where
    F: FnMut(f64) -> f64,
{
    assert!(lo <= hi, "empty interval [{lo}, {hi}]");
    let mut evals = 0usize;
    let mut eval = |x: f64, evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    // Establish a bracket [a, b] with f(a) < 0 < f(b).
    let (mut a, mut fa, mut b, mut fb);
    match guess.filter(|g| *g > lo && *g < hi) {
        Some(g) => {
            let fg = eval(g, &mut evals);
            if fg.abs() <= tol.ftol {
                return Root {
                    x: g,
                    fx: fg,
                    clamp: Clamp::Interior,
                    evals,
                };
            }
            let mut step = ((hi - lo) * 1e-3).max(tol.xtol);
            if fg < 0.0 {
                a = g;
                fa = fg;
                loop {
                    let x = (a + step).min(hi);
                    let fx = eval(x, &mut evals);
                    if fx >= 0.0 {
                        b = x;
                        fb = fx;
                        break;
                    }
                    a = x;
                    fa = fx;
                    if x >= hi {
                        return Root {
                            x: hi,
                            fx,
                            clamp: Clamp::Above,
                            evals,
                        };
                    }
                    step *= 4.0;
                }
            } else {
                b = g;
                fb = fg;
                loop {
                    let x = (b - step).max(lo);
                    let fx = eval(x, &mut evals);
                    if fx <= 0.0 {
                        a = x;
                        fa = fx;
                        break;
                    }
                    b = x;
                    fb = fx;
                    if x <= lo {
                        return Root {
                            x: lo,
                            fx,
                            clamp: Clamp::Below,
                            evals,
                        };
                    }
                    step *= 4.0;
                }
            }
        }
        None => {
            fa = eval(lo, &mut evals);
            if fa >= 0.0 {
                return Root {
                    x: lo,
                    fx: fa,
                    clamp: Clamp::Below,
                    evals,
                };
            }
            fb = eval(hi, &mut evals);
            if fb <= 0.0 {
                return Root {
                    x: hi,
                    fx: fb,
                    clamp: Clamp::Above,
                    evals,
                };
            }
            a = lo;
            b = hi;
        }
    }
    if fa == 0.0 {
        return Root {
            x: a,
            fx: fa,
            clamp: Clamp::Interior,
            evals,
        };
    }
    if fb == 0.0 {
        return Root {
            x: b,
            fx: fb,
            clamp: Clamp::Interior,
            evals,
        };
    }

    // Illinois iterations on the bracket.
    let mut side = 0i8;
    let (mut wa, mut wb) = (fa, fb);
    while evals < tol.max_evals && b - a > tol.xtol {
        let mut x = (a * wb - b * wa) / (wb - wa);
        let width = b - a;
        if !(x > a + 0.01 * width && x < b - 0.01 * width) {
            x = 0.5 * (a + b);
        }
        let fx = eval(x, &mut evals);
        if fx.abs() <= tol.ftol || fx == 0.0 {
            return Root {
                x,
                fx,
                clamp: Clamp::Interior,
                evals,
            };
        }
        if fx < 0.0 {
            a = x;
            fa = fx;
            wa = fx;
            if side == -1 {
                wb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            fb = fx;
            wb = fx;
            if side == 1 {
                wa *= 0.5;
            }
            side = 1;
        }
    }
    let (x, fx) = if fa.abs() <= fb.abs() {
        (a, fa)
    } else {
        (b, fb)
    };
    Root {
        x,
        fx,
        clamp: Clamp::Interior,
        evals,
    }
}

/// Outcome of [`newton_box`].
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub converged: bool,
    pub evals: usize,
}

/// Damped Newton iteration for a square system `f(x) = 0` restricted to the
/// open box `(lo, hi)`.
///
/// The Jacobian is approximated by forward differences with a step of
/// `1e-3` of each box width, which is coarse enough to average over the
/// sample-level discontinuities of Monte Carlo residuals. Steps are halved
/// until the squared residual norm decreases. The iteration reports failure
/// instead of wandering when the root sits outside the box.
pub fn newton_box<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    ftol: f64,
    max_iter: usize,
) -> NewtonOutcome
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    assert!(lo.len() == n && hi.len() == n);
    let inner = |x: f64, k: usize| {
        let margin = 1e-9 * (hi[k] - lo[k]);
        x.clamp(lo[k] + margin, hi[k] - margin)
    };
    let mut x: Vec<f64> = (0..n).map(|k| inner(x0[k], k)).collect();
    let mut evals = 1;
    let mut fx = f(&x);
    let norm = |v: &[f64]| v.iter().map(|e| e * e).sum::<f64>();
    for _ in 0..max_iter {
        if fx.iter().all(|e| e.abs() <= ftol) {
            return NewtonOutcome {
                x,
                f: fx,
                converged: true,
                evals,
            };
        }
        let mut jac = vec![vec![0.0; n]; n];
        for k in 0..n {
            let w = hi[k] - lo[k];
            let mut h = 1e-3 * w;
            if x[k] + h >= hi[k] {
                h = -h;
            }
            let mut xh = x.clone();
            xh[k] += h;
            let fh = f(&xh);
            evals += 1;
            for i in 0..n {
                jac[i][k] = (fh[i] - fx[i]) / h;
            }
        }
        let rhs: Vec<f64> = fx.iter().map(|e| -e).collect();
        let Some(dx) = solve_dense(jac, rhs) else {
            break;
        };
        let base = norm(&fx);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = (0..n).map(|k| inner(x[k] + lambda * dx[k], k)).collect();
            let ft = f(&trial);
            evals += 1;
            if norm(&ft) < base {
                x = trial;
                fx = ft;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let converged = fx.iter().all(|e| e.abs() <= ftol);
    NewtonOutcome {
        x,
        f: fx,
        converged,
        evals,
    }
}

/// Gaussian elimination with partial pivoting. Returns `None` for a
/// numerically singular matrix.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let (upper, lower) = a.split_at_mut(col + 1);
        let pivot_row = &upper[col];
        for (offset, row) in lower.iter_mut().enumerate() {
            let m = row[col] / pivot_row[col];
            for (dst, src) in row[col..n].iter_mut().zip(&pivot_row[col..n]) {
                *dst -= m * src;
            }
            b[col + 1 + offset] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Outcome of [`solve_nested`].
#[derive(Debug, Clone, PartialEq)]
pub struct NestedOutcome {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    /// Clamp status of every coordinate at the final point.
    pub clamps: Vec<Clamp>,
    pub evals: usize,
}

/// Solves a square system by nested one-dimensional root finding.
///
/// Residual `k` must be nondecreasing in coordinate `k` once all inner
/// coordinates (`k + 1..`) have been solved. This holds whenever the
/// residuals are the gradient of a convex function, which is the situation
/// for the dual problems solved during calibration. `x` supplies the warm
/// start and receives the solution.
pub fn solve_nested<F>(
    mut f: F,
    lo: &[f64],
    hi: &[f64],
    x0: &[f64],
    tol: Tolerance,
) -> NestedOutcome
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut clamps = vec![Clamp::Interior; n];
    let mut evals = 0;
    let fx = nested_level(&mut f, lo, hi, &mut x, 0, tol, &mut evals, &mut clamps);
    NestedOutcome {
        x,
        f: fx,
        clamps,
        evals,
    }
}

#[allow(clippy::too_many_arguments)]
fn nested_level<F>(
    f: &mut F,
    lo: &[f64],
    hi: &[f64],
    x: &mut [f64],
    k: usize,
    tol: Tolerance,
    evals: &mut usize,
    clamps: &mut [Clamp],
) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if k == x.len() {
        *evals += 1;
        return f(x);
    }
    let guess = x[k];
    let root = solve_increasing(
        |v| {
            x[k] = v;
            nested_level(f, lo, hi, x, k + 1, tol, evals, clamps)[k]
        },
        lo[k],
        hi[k],
        Some(guess),
        tol,
    );
    x[k] = root.x;
    let fx = nested_level(f, lo, hi, x, k + 1, tol, evals, clamps);
    clamps[k] = root.clamp;
    fx
}
