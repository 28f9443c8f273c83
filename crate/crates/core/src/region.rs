//! Tracing the boundary of a protocol's achievable rate region.
//!
//! Each weight `eta` in (0, 1) yields the boundary point that maximizes
//! `eta * R12 + (1 - eta) * R21`. Sweeping `eta` gives a set of boundary
//! samples, and time sharing between them adds their upper convex hull.

use serde::{Deserialize, Serialize};

use crate::par::map_items;
use crate::{check_eta, Error, Result};

/// One boundary sample of a rate region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub eta: f64,
    pub r12: f64,
    pub r21: f64,
    pub protocol: String,
    pub residual_c1: f64,
    pub residual_c2: f64,
    pub seed: u64,
    /// Set by [`upper_hull`] for points strictly inside the hull.
    pub interior: bool,
}

impl RatePoint {
    pub fn new(eta: f64, r12: f64, r21: f64, protocol: impl Into<String>) -> Self {
        RatePoint {
            eta,
            r12,
            r21,
            protocol: protocol.into(),
            residual_c1: 0.0,
            residual_c2: 0.0,
            seed: 0,
            interior: false,
        }
    }

    pub fn weighted_sum(&self, eta: f64) -> f64 {
        eta * self.r12 + (1.0 - eta) * self.r21
    }
}

/// `n` Chebyshev nodes mapped to (0, 1). They cluster near both ends, where
/// the boundary bends towards the one-way extremes.
/// The grid is mirrored exactly about one half, and an odd count puts the
/// middle node at exactly one half.
pub fn chebyshev_eta_grid(n: usize) -> Vec<f64> {
    let mut grid = vec![0.5; n];
    for k in 0..n / 2 {
        let theta = std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
        grid[k] = 0.5 * (1.0 - theta.cos());
        grid[n - 1 - k] = 1.0 - grid[k];
    }
    grid
}

/// Default number of weights in a sweep.
pub const DEFAULT_GRID_POINTS: usize = 21;

/// Result of a sweep: the boundary samples in grid order and the weights
/// whose evaluation failed, with the reason.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionSweep {
    pub points: Vec<RatePoint>,
    pub gaps: Vec<(f64, String)>,
}

/// Evaluates `point_at` for every weight in `etas`, in parallel when the
/// `parallel` feature is on. Failures at single weights are recorded as
/// gaps and do not stop the sweep.
///
/// # Errors
/// If the grid contains a weight outside (0, 1) or is not sorted.
pub fn sweep_region<F>(etas: &[f64], point_at: F) -> Result<RegionSweep>
where
    F: Fn(f64) -> Result<RatePoint> + Sync + Send,
{
    for &eta in etas {
        check_eta(eta)?;
    }
    if etas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "eta_grid",
            "weights must be strictly increasing",
        ));
    }
    let results = map_items(etas, |&eta| point_at(eta));
    let mut sweep = RegionSweep::default();
    for (&eta, r) in etas.iter().zip(results) {
        match r {
            Ok(p) => sweep.points.push(p),
            Err(e) => sweep.gaps.push((eta, e.to_string())),
        }
    }
    Ok(sweep)
}

/// Evaluates `f` at every weight in `etas` on the active backend and returns
/// the results in grid order.
pub fn map_etas<T, F>(etas: &[f64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(f64) -> T + Sync + Send,
{
    map_items(etas, |&eta| f(eta))
}

/// Tolerance on the turn test, so that collinear points stay on the hull.
const HULL_EPS: f64 = 1e-12;

fn cross(o: &RatePoint, a: &RatePoint, b: &RatePoint) -> f64 {
    (a.r12 - o.r12) * (b.r21 - o.r21) - (a.r21 - o.r21) * (b.r12 - o.r12)
}

/// The upper-right convex hull of `points`, ordered by increasing `r12`.
///
/// Every input point is returned through `points` with `interior` set when
/// it lies strictly inside the time-sharing closure. Collinear points on
/// the boundary are kept on the hull.
pub fn upper_hull(points: &mut [RatePoint]) -> Vec<RatePoint> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .r12
            .total_cmp(&points[b].r12)
            .then(points[b].r21.total_cmp(&points[a].r21))
    });
    // Start from the highest point among those with the smallest r12 that
    // reach the maximal r21; anything to its left is dominated.
    let max_r21 = points
        .iter()
        .map(|p| p.r21)
        .fold(f64::NEG_INFINITY, f64::max);
    let start = order
        .iter()
        .position(|&i| points[i].r21 == max_r21)
        .expect("nonempty");

    let mut hull: Vec<usize> = Vec::new();
    for &i in &order[start..] {
        // Equal r12 with lower r21 is dominated by the point already kept.
        if let Some(&last) = hull.last() {
            if points[last].r12 == points[i].r12 {
                continue;
            }
        }
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if cross(&points[a], &points[b], &points[i]) > HULL_EPS {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let on_hull: Vec<bool> = {
        let mut v = vec![false; points.len()];
        for &i in &hull {
            v[i] = true;
        }
        v
    };
    for (i, p) in points.iter_mut().enumerate() {
        p.interior = !on_hull[i];
    }
    hull.iter().map(|&i| points[i].clone()).collect()
}

/// Largest shortfall, relative to the candidate's weighted sum, of the
/// region spanned by `outer` below the point `inner`, over the weights in
/// `weights`. A value of at most `tol` means `inner` lies within the
/// time-sharing closure of `outer` up to a relative tolerance `tol`.
pub fn weighted_shortfall(outer: &[RatePoint], inner: &RatePoint, weights: &[f64]) -> f64 {
    weights
        .iter()
        .map(|&w| {
            let best = outer
                .iter()
                .map(|p| p.weighted_sum(w))
                .fold(f64::NEG_INFINITY, f64::max);
            let target = inner.weighted_sum(w);
            if target > 0.0 {
                (target - best) / target
            } else {
                f64::NEG_INFINITY
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
