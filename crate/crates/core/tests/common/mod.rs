//! Independent reference computations shared by the integration tests.
//!
//! Everything here is written from the model definitions alone and does not
//! call the optimizers it is used to check.

#![allow(dead_code)]

use std::f64::consts::LN_2;

/// `log2(1 + x)`.
pub fn cap(x: f64) -> f64 {
    x.ln_1p() / LN_2
}

/// Maximizes a concave function on `[lo, hi]` by golden-section search.
/// Returns the maximizer and the value there.
pub fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    // The end points can beat the interior when the maximum sits at a bound.
    [(lo, f(lo)), (hi, f(hi)), (c, fc), (d, fd)]
        .into_iter()
        .fold(
            (lo, f64::NEG_INFINITY),
            |best, p| if p.1 > best.1 { p } else { best },
        )
}

/// Minimizes a convex function on `[lo, hi]` by ternary search and returns
/// the smallest value seen.
pub fn ternary_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let mut best = f(lo).min(f(hi));
    for _ in 0..iters {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        let (f1, f2) = (f(m1), f(m2));
        best = best.min(f1).min(f2);
        if f1 <= f2 {
            b = m2;
        } else {
            a = m1;
        }
    }
    best
}

/// Per-slot link capacities written out from their definitions. `t = 0`
/// means the relay decodes user 1 first while user 2 acts as noise.
#[derive(Debug, Clone, Copy)]
pub struct Links {
    pub c1r: f64,
    pub c2r: f64,
    pub cr: f64,
    pub cr1: f64,
    pub cr2: f64,
}

impl Links {
    pub fn new(s1: f64, s2: f64, p1: f64, p2: f64, pr: f64) -> Self {
        Links {
            c1r: cap(p1 * s1),
            c2r: cap(p2 * s2),
            cr: cap(p1 * s1 + p2 * s2),
            cr1: cap(pr * s1),
            cr2: cap(pr * s2),
        }
    }
}

/// Multiple-access rates `(user 1, user 2)` for a binary decoding order.
pub fn mac_rates(x1: f64, x2: f64, t: u8) -> (f64, f64) {
    if t == 0 {
        (cap(x1 / (1.0 + x2)), cap(x2))
    } else {
        (cap(x1), cap(x2 / (1.0 + x1)))
    }
}

/// Which of the six modes a conventional schedule may use.
pub type Allowed = [bool; 6];

/// Least total airtime in one slot that carries `r12` from user 1 to user 2
/// and `r21` back, with within-slot forwarding through the relay. Infinite
/// if the allowed modes cannot carry the pair at all.
pub fn airtime(l: &Links, allowed: &Allowed, r12: f64, r21: f64) -> f64 {
    let [m1, m2, m3, m4, m5, m6] = *allowed;
    let down = if m6 {
        (r21 / l.cr1).max(r12 / l.cr2)
    } else {
        let a = if r21 > 0.0 {
            if m4 {
                r21 / l.cr1
            } else {
                f64::INFINITY
            }
        } else {
            0.0
        };
        let b = if r12 > 0.0 {
            if m5 {
                r12 / l.cr2
            } else {
                f64::INFINITY
            }
        } else {
            0.0
        };
        a + b
    };
    if !down.is_finite() {
        return f64::INFINITY;
    }
    let up_with = |d3: f64| -> f64 {
        let mut d1 = (r12 / l.c1r - d3).max(0.0);
        let mut d2 = (r21 / l.c2r - d3).max(0.0);
        if (d1 > 0.0 && !m1) || (d2 > 0.0 && !m2) {
            return f64::INFINITY;
        }
        let deficit = r12 + r21 - d3 * l.cr - d1 * l.c1r - d2 * l.c2r;
        if deficit > 0.0 {
            // Top up with the cheaper single-user uplink.
            let use1 = m1 && (!m2 || l.c1r >= l.c2r);
            if use1 {
                d1 += deficit / l.c1r;
            } else if m2 {
                d2 += deficit / l.c2r;
            } else {
                return f64::INFINITY;
            }
        }
        d1 + d2 + d3
    };
    let up = if m3 {
        let alone = (r12 / l.c1r).max(r21 / l.c2r).max((r12 + r21) / l.cr);
        if !m1 && !m2 {
            alone
        } else {
            // Below this share a user without its own uplink mode is starved.
            let floor =
                (if m1 { 0.0 } else { r12 / l.c1r }).max(if m2 { 0.0 } else { r21 / l.c2r });
            ternary_min(up_with, floor, alone, 80)
        }
    } else {
        up_with(0.0)
    };
    up + down
}

/// Largest `r21` that fits into one slot next to `r12`, by bisection.
pub fn max_r21(l: &Links, allowed: &Allowed, r12: f64, hi: f64) -> Option<f64> {
    if airtime(l, allowed, r12, 0.0) > 1.0 {
        return None;
    }
    let (mut a, mut b) = (0.0, hi);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if airtime(l, allowed, r12, m) <= 1.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Some(a)
}

/// Best weighted sum rate of one slot by a refined grid over `r12`. The
/// value is concave in `r12` because the rate region is convex, so zooming
/// in on the best cell converges to the maximum.
pub fn grid_slot_value(l: &Links, allowed: &Allowed, eta: f64) -> f64 {
    let hi = l.c1r.max(l.c2r).max(l.cr).max(l.cr1).max(l.cr2) + 1.0;
    let value = |r12: f64| match max_r21(l, allowed, r12, hi) {
        Some(r21) => eta * r12 + (1.0 - eta) * r21,
        None => f64::NEG_INFINITY,
    };
    let (mut lo, mut top) = (0.0, hi);
    let mut best = value(0.0);
    let mut arg = 0.0;
    for _ in 0..4 {
        let n = 200;
        let h = (top - lo) / n as f64;
        for k in 0..=n {
            let x = lo + k as f64 * h;
            let v = value(x);
            if v > best {
                best = v;
                arg = x;
            }
        }
        lo = (arg - h).max(0.0);
        top = arg + h;
    }
    best
}
