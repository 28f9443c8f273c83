//! Optimal adaptive mode selection under a joint long-term power budget.
//!
//! Each slot the policy evaluates, for every mode, the power that maximises
//! that mode's Lagrangian metric (water-filling for the single-link modes, a
//! two-user water-filling for the multiple-access mode and a quadratic root
//! for the broadcast mode), then picks the mode with the largest metric among
//! the modes allowed by the selection mask. Ties that occur with positive
//! probability are broken by biased coins whose probabilities are part of the
//! calibrated weights.
//!
//! Calibration finds the selection weights and the power weight that make
//! both relay buffers balanced and spend exactly the power budget. The
//! residuals are the gradient of a convex dual function, so each coordinate
//! is a monotone function of its own weight. A damped Newton iteration solves
//! the interior case quickly and a nested bracketed search backs it up.
//!
//! Naming follows the usual convention for the two users: `mu1` weights the
//! flow of user 1's data (into and out of buffer 1), `mu2` that of user 2, and
//! `gamma` prices power.

use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::buffers::{modified_mode_powers, virtual_mode_capacities, BufferState};
use crate::channel::{ChannelState, FadingConfig, Sample, SlotCoins};
use crate::mode::{masked_argmax, FlowRates, ModeCapacities, ModeDecision, ModePowers, Residuals};
use crate::par::{map_chunks, CHUNK};
use crate::roots::{newton_box, solve_increasing, solve_nested, Clamp, Tolerance};
use crate::{check_eta, CalibrationFailure, Error, Result};

/// Relative tolerance on both flow constraints and the power budget for a
/// calibrated point to be accepted.
pub const RATE_TOLERANCE: f64 = 1e-3;
pub const POWER_TOLERANCE: f64 = 1e-3;

/// Default number of channel draws used for calibration.
pub const DEFAULT_SAMPLE_SIZE: usize = 100_000;

/// Which modes need coin flips, determined by which selection weight (if
/// any) vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JointRegion {
    /// Both weights positive. No coins.
    S0,
    /// `mu1 = 0`, `mu2` strictly inside its interval: M4 and M6 tie.
    S1Case1,
    /// `mu1 = 0`, `mu2 = eta`: M1, M4 and M6 tie.
    S1Case2,
    /// `mu2 = 0`, `mu1` strictly inside its interval: M5 and M6 tie.
    S2Case1,
    /// `mu2 = 0`, `mu1 = 1 - eta`: M2, M5 and M6 tie.
    S2Case2,
}

impl JointRegion {
    pub const SCAN_ORDER: [JointRegion; 5] = [
        JointRegion::S0,
        JointRegion::S1Case1,
        JointRegion::S1Case2,
        JointRegion::S2Case1,
        JointRegion::S2Case2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            JointRegion::S0 => "S0",
            JointRegion::S1Case1 => "S1case1",
            JointRegion::S1Case2 => "S1case2",
            JointRegion::S2Case1 => "S2case1",
            JointRegion::S2Case2 => "S2case2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::SCAN_ORDER
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for JointRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Long-term variables of the joint-power policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointWeights {
    pub mu1: f64,
    pub mu2: f64,
    pub gamma: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub region: JointRegion,
}

impl JointWeights {
    /// Weights in region S0 with all coins at their unused default of one.
    pub fn interior(mu1: f64, mu2: f64, gamma: f64) -> Self {
        JointWeights {
            mu1,
            mu2,
            gamma,
            p1: 1.0,
            p2: 1.0,
            p3: 1.0,
            p4: 1.0,
            region: JointRegion::S0,
        }
    }

    /// Checks interval bounds, coin ranges and the region constraints.
    pub fn validate(&self, eta: f64) -> Result<()> {
        check_eta(eta)?;
        let JointWeights {
            mu1, mu2, gamma, ..
        } = *self;
        if !(0.0..eta).contains(&mu1) {
            return Err(Error::invalid(
                "mu1",
                format!("{mu1} is outside [0, {eta})"),
            ));
        }
        if !(0.0..1.0 - eta).contains(&mu2) {
            return Err(Error::invalid(
                "mu2",
                format!("{mu2} is outside [0, {})", 1.0 - eta),
            ));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("{gamma} is not positive")));
        }
        if mu1 == 0.0 && mu2 == 0.0 {
            return Err(Error::invalid("mu1", "mu1 and mu2 are both zero"));
        }
        for (name, p) in [
            ("p1", self.p1),
            ("p2", self.p2),
            ("p3", self.p3),
            ("p4", self.p4),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(name, format!("{p} is outside [0, 1]")));
            }
        }
        let ok = match self.region {
            JointRegion::S0 => mu1 > 0.0 && mu2 > 0.0,
            JointRegion::S1Case1 => mu1 == 0.0 && mu2 >= eta,
            JointRegion::S1Case2 => mu1 == 0.0 && mu2 == eta,
            JointRegion::S2Case1 => mu2 == 0.0 && mu1 >= 1.0 - eta,
            JointRegion::S2Case2 => mu2 == 0.0 && mu1 == 1.0 - eta,
        };
        if !ok {
            return Err(Error::invalid(
                "region",
                format!(
                    "mu1={mu1}, mu2={mu2} do not belong to region {}",
                    self.region
                ),
            ));
        }
        Ok(())
    }

    fn multipliers(&self, eta: f64) -> Multipliers {
        Multipliers::new(eta, self.mu1, self.mu2, self.gamma * LN_2)
    }
}

/// The weights expressed as the coefficients that appear in the metrics.
/// `g` is the power weight in nats, i.e. `gamma * ln 2`.
#[derive(Debug, Clone, Copy)]
struct Multipliers {
    up1: f64,
    up2: f64,
    mu1: f64,
    mu2: f64,
    g: f64,
    t: u8,
}

impl Multipliers {
    fn new(eta: f64, mu1: f64, mu2: f64, g: f64) -> Self {
        let up1 = eta - mu1;
        let up2 = 1.0 - eta - mu2;
        Multipliers {
            up1,
            up2,
            mu1,
            mu2,
            g,
            t: if up1 <= up2 { 0 } else { 1 },
        }
    }
}

/// Water-filling level `[coef/g - 1/s]^+` of a single link.
#[inline]
fn water_fill(coef: f64, g: f64, s: f64) -> f64 {
    if coef * s > g {
        coef / g - 1.0 / s
    } else {
        0.0
    }
}

/// Stationary powers of the multiple-access mode for decoding order `t`.
///
/// The closed form is the interior stationary point of a concave objective.
/// When one of the two expressions is negative there is no interior optimum
/// and the clamped pair scores no better than the better single-user mode,
/// so the multiple-access mode is never strictly preferred in that slot.
fn mac_powers(s1: f64, s2: f64, m: &Multipliers) -> (f64, f64) {
    if s1 == 0.0 || s2 == 0.0 {
        return (
            if s1 == 0.0 {
                0.0
            } else {
                water_fill(m.up1, m.g, s1)
            },
            if s2 == 0.0 {
                0.0
            } else {
                water_fill(m.up2, m.g, s2)
            },
        );
    }
    let s2 = if s1 == s2 { s2 + 1e-12 * s1 } else { s2 };
    let d = (m.up2 - m.up1) / m.g;
    let share1 = d / (s1 / s2 - 1.0);
    let share2 = d / (1.0 - s2 / s1);
    let (p1, p2) = if m.t == 0 {
        (m.up1 / m.g - share1, share2 - 1.0 / s2)
    } else {
        (share1 - 1.0 / s1, m.up2 / m.g - share2)
    };
    (p1.max(0.0), p2.max(0.0))
}

/// Relay power of the broadcast mode: the larger root of the stationarity
/// quadratic, clamped at zero.
fn broadcast_power(s1: f64, s2: f64, mu1: f64, mu2: f64, g: f64) -> f64 {
    // With one weight at zero the broadcast metric coincides with a
    // single-downlink metric. Returning that power keeps the tie exact.
    if mu1 == 0.0 || s2 == 0.0 {
        return water_fill(mu2, g, s1);
    }
    if mu2 == 0.0 || s1 == 0.0 {
        return water_fill(mu1, g, s2);
    }
    let c = g - mu1 * s2 - mu2 * s1;
    if c >= 0.0 {
        return 0.0;
    }
    let a = g * s1 * s2;
    let b = g * (s1 + s2) - (mu1 + mu2) * s1 * s2;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let root = if b >= 0.0 { c / q } else { q / a };
    root.max(0.0)
}

/// Multiple-access decoding order. With `t = 0` the relay decodes user 1
/// first, treating user 2 as noise, so user 2 sees an interference-free link.
/// `t = 1` reverses the order.
pub fn decoding_order(w: &JointWeights, eta: f64) -> u8 {
    w.multipliers(eta).t
}

/// Candidate powers of all six modes for one slot.
pub fn mode_powers(state: &ChannelState, w: &JointWeights, eta: f64) -> ModePowers {
    let m = w.multipliers(eta);
    let (s1, s2) = (state.s1, state.s2);
    let (p1_m3, p2_m3) = mac_powers(s1, s2, &m);
    ModePowers {
        p1_m1: water_fill(m.up1, m.g, s1),
        p2_m2: water_fill(m.up2, m.g, s2),
        p1_m3,
        p2_m3,
        pr_m4: water_fill(m.mu2, m.g, s1),
        pr_m5: water_fill(m.mu1, m.g, s2),
        pr_m6: broadcast_power(s1, s2, m.mu1, m.mu2, m.g),
    }
}

/// The six selection metrics, in bits per symbol, from per-mode capacities
/// and the powers that produce them.
pub fn selection_metrics(
    w: &JointWeights,
    eta: f64,
    caps: &ModeCapacities,
    p: &ModePowers,
) -> [f64; 6] {
    let up1 = eta - w.mu1;
    let up2 = 1.0 - eta - w.mu2;
    let gamma = w.gamma;
    [
        up1 * caps.c1r_m1 - gamma * p.p1_m1,
        up2 * caps.c2r_m2 - gamma * p.p2_m2,
        up1 * caps.c12r_m3 + up2 * caps.c21r_m3 - gamma * (p.p1_m3 + p.p2_m3),
        w.mu2 * caps.cr1_m4 - gamma * p.pr_m4,
        w.mu1 * caps.cr2_m5 - gamma * p.pr_m5,
        w.mu1 * caps.cr2_m6 + w.mu2 * caps.cr1_m6 - gamma * p.pr_m6,
    ]
}

/// Which modes may be selected this slot, given the coin outcomes.
pub fn selection_mask(w: &JointWeights, coins: &SlotCoins) -> [bool; 6] {
    match w.region {
        JointRegion::S0 => [true, true, true, false, false, true],
        JointRegion::S1Case1 | JointRegion::S1Case2 => {
            let c1 = coins.flip(1, w.p1);
            let c2 = coins.flip(2, w.p2);
            [!c1, true, true, c1 && !c2, false, c1 && c2]
        }
        JointRegion::S2Case1 | JointRegion::S2Case2 => {
            let c3 = coins.flip(3, w.p3);
            let c4 = coins.flip(4, w.p4);
            [true, !c3, true, false, c3 && !c4, c3 && c4]
        }
    }
}

/// Optimal decision for one slot with unlimited buffers.
pub fn select_mode(
    state: &ChannelState,
    w: &JointWeights,
    eta: f64,
    coins: &SlotCoins,
) -> ModeDecision {
    let t = decoding_order(w, eta);
    let p = mode_powers(state, w, eta);
    let caps = ModeCapacities::evaluate(state, &p, t);
    let metrics = selection_metrics(w, eta, &caps, &p);
    let mode = masked_argmax(&metrics, &selection_mask(w, coins));
    ModeDecision::full_rate(mode, t, p.alloc(mode), &caps.links(mode))
}

/// Delay-constrained decision: capacities are clipped to what the buffers
/// can absorb or supply and the powers are reduced to exactly carry the
/// clipped rates. The metrics are then formed from these quantities.
pub fn select_mode_delay(
    state: &ChannelState,
    w: &JointWeights,
    eta: f64,
    coins: &SlotCoins,
    buf: &BufferState,
) -> ModeDecision {
    let t = decoding_order(w, eta);
    let p = mode_powers(state, w, eta);
    let caps = ModeCapacities::evaluate(state, &p, t);
    let vcaps = virtual_mode_capacities(&caps, buf);
    let vp = modified_mode_powers(state, &vcaps, t);
    let metrics = selection_metrics(w, eta, &vcaps, &vp);
    let mode = masked_argmax(&metrics, &selection_mask(w, coins));
    ModeDecision::full_rate(mode, t, vp.alloc(mode), &vcaps.links(mode))
}

// ---------------------------------------------------------------------------
// Sample evaluation
// ---------------------------------------------------------------------------

/// Per-candidate sums over the calibration sample. Capacities are kept in
/// nats until [`Tally::flows`] converts them.
///
/// The relay slot (`rl_*`) holds whichever candidate carries the downlinks in
/// the region being evaluated: M6 in S0, or the tied group of modes whose
/// members share one power level in the coin regions.
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    c1r_m1: f64,
    p_m1: f64,
    c2r_m2: f64,
    p_m2: f64,
    c12r_m3: f64,
    c21r_m3: f64,
    p_m3: f64,
    cr1_rl: f64,
    cr2_rl: f64,
    p_rl: f64,
}

impl Tally {
    fn add(&mut self, o: &Tally) {
        self.c1r_m1 += o.c1r_m1;
        self.p_m1 += o.p_m1;
        self.c2r_m2 += o.c2r_m2;
        self.p_m2 += o.p_m2;
        self.c12r_m3 += o.c12r_m3;
        self.c21r_m3 += o.c21r_m3;
        self.p_m3 += o.p_m3;
        self.cr1_rl += o.cr1_rl;
        self.cr2_rl += o.cr2_rl;
        self.p_rl += o.p_rl;
    }

    fn scaled(&self, n: usize) -> Tally {
        let c = 1.0 / (n as f64 * LN_2);
        let p = 1.0 / n as f64;
        Tally {
            c1r_m1: self.c1r_m1 * c,
            p_m1: self.p_m1 * p,
            c2r_m2: self.c2r_m2 * c,
            p_m2: self.p_m2 * p,
            c12r_m3: self.c12r_m3 * c,
            c21r_m3: self.c21r_m3 * c,
            p_m3: self.p_m3 * p,
            cr1_rl: self.cr1_rl * c,
            cr2_rl: self.cr2_rl * c,
            p_rl: self.p_rl * p,
        }
    }

    /// Long-run rates after resolving the coin probabilities that balance the
    /// buffers. Returns the rates and the coins `[p1, p2, p3, p4]`.
    fn flows(&self, region: JointRegion) -> (FlowRates, [f64; 4]) {
        let power = self.p_m1 + self.p_m2 + self.p_m3 + self.p_rl;
        let mut coins = [1.0; 4];
        let f = match region {
            JointRegion::S0 => FlowRates {
                r1r: self.c1r_m1 + self.c12r_m3,
                r2r: self.c2r_m2 + self.c21r_m3,
                rr1: self.cr1_rl,
                rr2: self.cr2_rl,
                power,
            },
            JointRegion::S1Case1 => {
                let r1r = self.c12r_m3;
                coins[1] = r1r / self.cr2_rl;
                FlowRates {
                    r1r,
                    r2r: self.c2r_m2 + self.c21r_m3,
                    rr1: self.cr1_rl,
                    rr2: coins[1] * self.cr2_rl,
                    power,
                }
            }
            JointRegion::S1Case2 => {
                let r2r = self.c2r_m2 + self.c21r_m3;
                let p1 = r2r / self.cr1_rl;
                let r1r = self.c12r_m3 + (1.0 - p1) * self.cr1_rl;
                let p2 = r1r / (p1 * self.cr2_rl);
                coins[0] = p1;
                coins[1] = p2;
                FlowRates {
                    r1r,
                    r2r,
                    rr1: p1 * self.cr1_rl,
                    rr2: p1 * p2 * self.cr2_rl,
                    power,
                }
            }
            JointRegion::S2Case1 => {
                let r2r = self.c21r_m3;
                coins[3] = r2r / self.cr1_rl;
                FlowRates {
                    r1r: self.c1r_m1 + self.c12r_m3,
                    r2r,
                    rr1: coins[3] * self.cr1_rl,
                    rr2: self.cr2_rl,
                    power,
                }
            }
            JointRegion::S2Case2 => {
                let r1r = self.c1r_m1 + self.c12r_m3;
                let p3 = r1r / self.cr2_rl;
                let r2r = self.c21r_m3 + (1.0 - p3) * self.cr2_rl;
                let p4 = r2r / (p3 * self.cr1_rl);
                coins[2] = p3;
                coins[3] = p4;
                FlowRates {
                    r1r,
                    r2r,
                    rr1: p3 * p4 * self.cr1_rl,
                    rr2: p3 * self.cr2_rl,
                    power,
                }
            }
        };
        (f, coins)
    }
}

#[derive(Clone, Copy)]
enum Winner {
    M1(f64, f64),
    M2(f64, f64),
    M3(f64, f64, f64),
    Relay(f64, f64, f64),
}

/// Single-link water-filling candidate: (power, capacity in nats, metric in
/// nats).
#[inline]
fn single(coef: f64, g: f64, s: f64) -> (f64, f64, f64) {
    if coef * s > g {
        let p = coef / g - 1.0 / s;
        let c = (coef * s / g).ln();
        (p, c, coef * c - g * p)
    } else {
        (0.0, 0.0, 0.0)
    }
}

#[inline]
fn mac_candidate(s1: f64, s2: f64, m: &Multipliers) -> (f64, f64, f64, f64) {
    let (p1, p2) = mac_powers(s1, s2, m);
    if p1 == 0.0 && p2 == 0.0 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let (x1, x2) = (p1 * s1, p2 * s2);
    let sum = (x1 + x2).ln_1p();
    let (c12, c21) = if m.t == 0 {
        let c21 = x2.ln_1p();
        ((sum - c21).max(0.0), c21)
    } else {
        let c12 = x1.ln_1p();
        (c12, (sum - c12).max(0.0))
    };
    let p = p1 + p2;
    (p, c12, c21, m.up1 * c12 + m.up2 * c21 - m.g * p)
}

#[inline]
fn broadcast_candidate(s1: f64, s2: f64, m: &Multipliers) -> (f64, f64, f64, f64) {
    let p = broadcast_power(s1, s2, m.mu1, m.mu2, m.g);
    if p == 0.0 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let c1 = (p * s1).ln_1p();
    let c2 = (p * s2).ln_1p();
    (p, c1, c2, m.mu1 * c2 + m.mu2 * c1 - m.g * p)
}

/// Winner of one slot in `region`, choosing among the candidates that the
/// region's mask can expose. Tied groups are represented once.
#[inline]
fn slot_winner(s1: f64, s2: f64, m: &Multipliers, region: JointRegion) -> Winner {
    let mut best: Option<(f64, Winner)> = None;
    let mut offer = |metric: f64, w: Winner| {
        if best.is_none_or(|(b, _)| metric > b) {
            best = Some((metric, w));
        }
    };
    // The order of `offer` calls reproduces the lowest-index tie rule.
    match region {
        JointRegion::S0 => {
            let (p, c, l) = single(m.up1, m.g, s1);
            offer(l, Winner::M1(c, p));
            let (p, c, l) = single(m.up2, m.g, s2);
            offer(l, Winner::M2(c, p));
            let (p, c12, c21, l) = mac_candidate(s1, s2, m);
            offer(l, Winner::M3(c12, c21, p));
            let (p, c1, c2, l) = broadcast_candidate(s1, s2, m);
            offer(l, Winner::Relay(c1, c2, p));
        }
        JointRegion::S1Case1 | JointRegion::S1Case2 => {
            // Group member M1 (case 2) or M4 comes first in index order.
            let (p, c1, l) = single(m.mu2, m.g, s1);
            let group = Winner::Relay(c1, (p * s2).ln_1p(), p);
            if region == JointRegion::S1Case2 {
                offer(l, group);
            }
            let (p2, c, l2) = single(m.up2, m.g, s2);
            offer(l2, Winner::M2(c, p2));
            let (p3, c12, c21, l3) = mac_candidate(s1, s2, m);
            offer(l3, Winner::M3(c12, c21, p3));
            if region == JointRegion::S1Case1 {
                offer(l, group);
            }
        }
        JointRegion::S2Case1 | JointRegion::S2Case2 => {
            let (p1, c, l1) = single(m.up1, m.g, s1);
            offer(l1, Winner::M1(c, p1));
            let (p, c2, l) = single(m.mu1, m.g, s2);
            let group = Winner::Relay((p * s1).ln_1p(), c2, p);
            if region == JointRegion::S2Case2 {
                offer(l, group);
            }
            let (p3, c12, c21, l3) = mac_candidate(s1, s2, m);
            offer(l3, Winner::M3(c12, c21, p3));
            if region == JointRegion::S2Case1 {
                offer(l, group);
            }
        }
    }
    best.expect("at least one candidate").1
}

fn evaluate(sample: &Sample, m: &Multipliers, region: JointRegion) -> Tally {
    let parts = map_chunks(sample.len(), CHUNK, |range| {
        let mut t = Tally::default();
        for i in range {
            match slot_winner(sample.s1[i], sample.s2[i], m, region) {
                Winner::M1(c, p) => {
                    t.c1r_m1 += c;
                    t.p_m1 += p;
                }
                Winner::M2(c, p) => {
                    t.c2r_m2 += c;
                    t.p_m2 += p;
                }
                Winner::M3(c12, c21, p) => {
                    t.c12r_m3 += c12;
                    t.c21r_m3 += c21;
                    t.p_m3 += p;
                }
                Winner::Relay(c1, c2, p) => {
                    t.cr1_rl += c1;
                    t.cr2_rl += c2;
                    t.p_rl += p;
                }
            }
        }
        t
    });
    let mut total = Tally::default();
    for p in &parts {
        total.add(p);
    }
    total.scaled(sample.len())
}

/// Long-run rates and consumed power of the policy `w` on `sample`, with the
/// coin flips replaced by their expectations.
pub fn expected_flows(sample: &Sample, w: &JointWeights, eta: f64) -> FlowRates {
    let m = w.multipliers(eta);
    let tally = evaluate(sample, &m, w.region);
    let f = tally.flows(w.region).0;
    // `flows` solves for the coins. Recompute the downlinks with the coins
    // actually stored in `w`.
    match w.region {
        JointRegion::S0 => f,
        JointRegion::S1Case1 | JointRegion::S1Case2 => {
            let to_m1 = if w.region == JointRegion::S1Case2 {
                1.0 - w.p1
            } else {
                0.0
            };
            FlowRates {
                r1r: tally.c12r_m3 + to_m1 * tally.cr1_rl,
                rr1: w.p1 * tally.cr1_rl,
                rr2: w.p1 * w.p2 * tally.cr2_rl,
                ..f
            }
        }
        JointRegion::S2Case1 | JointRegion::S2Case2 => {
            let to_m2 = if w.region == JointRegion::S2Case2 {
                1.0 - w.p3
            } else {
                0.0
            };
            FlowRates {
                r2r: tally.c21r_m3 + to_m2 * tally.cr2_rl,
                rr1: w.p3 * w.p4 * tally.cr1_rl,
                rr2: w.p3 * tally.cr2_rl,
                ..f
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Result of [`calibrate_joint`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointCalibration {
    pub eta: f64,
    pub total_power: f64,
    pub weights: JointWeights,
    /// Expected rates on the calibration sample.
    pub flows: FlowRates,
    pub residuals: Residuals,
    pub sample_size: usize,
    pub seed: u64,
    /// Number of full passes over the sample spent in the search.
    pub evaluations: usize,
}

/// Search range for `ln(gamma * ln 2)`.
const LOG_G_MIN: f64 = -30.0;
const LOG_G_MAX: f64 = 12.0;

/// Inner solver target: a fraction of the acceptance tolerance so that the
/// accepted point has margin.
const SOLVER_FTOL: f64 = 2e-4;

/// Signed, normalised flow residual that increases with the outflow.
fn flow_gap(inflow: f64, outflow: f64) -> f64 {
    let s = inflow + outflow;
    if s > 0.0 {
        (outflow - inflow) / s
    } else {
        0.0
    }
}

/// Lower corner of the S0 search box. Both selection weights stay a hair
/// above zero: with one of them at exactly zero the broadcast metric ties
/// with a single-user metric in every slot and the residuals jump.
fn s0_floor(eta: f64) -> [f64; 3] {
    [1e-9 * eta, 1e-9 * (1.0 - eta), LOG_G_MIN]
}

struct Calibrator<'a> {
    sample: &'a Sample,
    eta: f64,
    pt: f64,
    evals: usize,
    best: Option<(f64, Residuals)>,
    tried: Vec<String>,
}

impl<'a> Calibrator<'a> {
    fn flows(
        &mut self,
        mu1: f64,
        mu2: f64,
        log_g: f64,
        region: JointRegion,
    ) -> (FlowRates, [f64; 4]) {
        self.evals += 1;
        let m = Multipliers::new(self.eta, mu1, mu2, log_g.exp());
        evaluate(self.sample, &m, region).flows(region)
    }

    fn power_gap(&self, f: &FlowRates) -> f64 {
        (self.pt - f.power) / self.pt
    }

    /// Solves for `ln g` alone with the selection weights fixed.
    fn solve_power(&mut self, mu1: f64, mu2: f64, region: JointRegion, guess: f64) -> f64 {
        let tol = Tolerance {
            ftol: SOLVER_FTOL,
            xtol: 1e-12,
            max_evals: 120,
        };
        solve_increasing(
            |lg| {
                let (f, _) = self.flows(mu1, mu2, lg, region);
                self.power_gap(&f)
            },
            LOG_G_MIN,
            LOG_G_MAX,
            Some(guess),
            tol,
        )
        .x
    }

    /// Accepts the point if every residual and coin is in range, otherwise
    /// records it as a candidate for the failure report.
    fn accept(
        &mut self,
        mu1: f64,
        mu2: f64,
        log_g: f64,
        region: JointRegion,
    ) -> Option<JointCalibration> {
        let (flows, coins) = self.flows(mu1, mu2, log_g, region);
        let residuals = flows.residuals(Some(self.pt));
        let coins_ok = coins
            .iter()
            .all(|p| p.is_finite() && (0.0..=1.0).contains(p));
        let ok = coins_ok
            && residuals.c1 <= RATE_TOLERANCE
            && residuals.c2 <= RATE_TOLERANCE
            && residuals.power.unwrap_or(0.0) <= POWER_TOLERANCE;
        let score = if coins_ok {
            residuals.max()
        } else {
            f64::INFINITY
        };
        if self.best.is_none_or(|(b, _)| score < b) {
            self.best = Some((score, residuals));
        }
        self.tried.push(region.name().to_string());
        if !ok {
            return None;
        }
        let weights = JointWeights {
            mu1,
            mu2,
            gamma: log_g.exp() / LN_2,
            p1: coins[0],
            p2: coins[1],
            p3: coins[2],
            p4: coins[3],
            region,
        };
        weights.validate(self.eta).ok()?;
        Some(JointCalibration {
            eta: self.eta,
            total_power: self.pt,
            weights,
            flows,
            residuals,
            sample_size: self.sample.len(),
            seed: 0,
            evaluations: self.evals,
        })
    }

    fn s0_residuals(&mut self, x: &[f64]) -> Vec<f64> {
        let (f, _) = self.flows(x[0], x[1], x[2], JointRegion::S0);
        vec![
            flow_gap(f.r1r, f.rr2),
            flow_gap(f.r2r, f.rr1),
            self.power_gap(&f),
        ]
    }

    fn try_s0_newton(&mut self) -> Option<JointCalibration> {
        let eta = self.eta;
        let (mu1, mu2) = (0.5 * eta, 0.5 * (1.0 - eta));
        let lg = self.solve_power(mu1, mu2, JointRegion::S0, 0.0);
        let out = newton_box(
            |x| self.s0_residuals(x),
            &[mu1, mu2, lg],
            &s0_floor(eta),
            &[eta, 1.0 - eta, LOG_G_MAX],
            SOLVER_FTOL,
            40,
        );
        if !out.converged {
            return None;
        }
        self.accept(out.x[0], out.x[1], out.x[2], JointRegion::S0)
    }

    fn try_s0_nested(&mut self) -> Option<JointCalibration> {
        let eta = self.eta;
        let tol = Tolerance {
            ftol: SOLVER_FTOL,
            xtol: 1e-12,
            max_evals: 80,
        };
        let out = solve_nested(
            |x| self.s0_residuals(x),
            &s0_floor(eta),
            &[eta, 1.0 - eta, LOG_G_MAX],
            &[0.5 * eta, 0.5 * (1.0 - eta), 0.0],
            tol,
        );
        if out.clamps[..2].iter().any(|c| *c != Clamp::Interior) {
            return None;
        }
        self.accept(out.x[0], out.x[1], out.x[2], JointRegion::S0)
    }

    /// Case 1 of the coin regions: one selection weight pinned at zero, the
    /// other solved together with the power weight.
    fn try_case1(&mut self, region: JointRegion) -> Option<JointCalibration> {
        let eta = self.eta;
        let s1 = region == JointRegion::S1Case1;
        // Free weight interval.
        let (lo, hi) = if s1 {
            (eta, 1.0 - eta)
        } else {
            (1.0 - eta, eta)
        };
        if lo >= hi {
            return None;
        }
        let point = |w: f64| if s1 { (0.0, w) } else { (w, 0.0) };
        let mid = 0.5 * (lo + hi);
        let (a, b) = point(mid);
        let lg = self.solve_power(a, b, region, 0.0);
        let residual = |x: &[f64], cal: &mut Self| {
            let (mu1, mu2) = point(x[0]);
            let (f, _) = cal.flows(mu1, mu2, x[1], region);
            let gap = if s1 {
                flow_gap(f.r2r, f.rr1)
            } else {
                flow_gap(f.r1r, f.rr2)
            };
            vec![gap, cal.power_gap(&f)]
        };
        let out = newton_box(
            |x| residual(x, self),
            &[mid, lg],
            &[lo, LOG_G_MIN],
            &[hi, LOG_G_MAX],
            SOLVER_FTOL,
            40,
        );
        let x = if out.converged {
            out.x
        } else {
            let tol = Tolerance {
                ftol: SOLVER_FTOL,
                xtol: 1e-12,
                max_evals: 80,
            };
            let nested = solve_nested(
                |x| residual(x, self),
                &[lo, LOG_G_MIN],
                &[hi, LOG_G_MAX],
                &[mid, lg],
                tol,
            );
            if nested.clamps[0] != Clamp::Interior {
                return None;
            }
            nested.x
        };
        let (mu1, mu2) = point(x[0]);
        self.accept(mu1, mu2, x[1], region)
    }

    /// Case 2 of the coin regions: both selection weights pinned, only the
    /// power weight is searched.
    fn try_case2(&mut self, region: JointRegion) -> Option<JointCalibration> {
        let eta = self.eta;
        let (mu1, mu2) = match region {
            JointRegion::S1Case2 if eta < 0.5 => (0.0, eta),
            JointRegion::S2Case2 if eta > 0.5 => (1.0 - eta, 0.0),
            _ => return None,
        };
        let lg = self.solve_power(mu1, mu2, region, 0.0);
        self.accept(mu1, mu2, lg, region)
    }
}

/// Calibrates the joint-power policy on a fresh calibration sample of
/// `sample_size` draws.
pub fn calibrate_joint(
    config: &FadingConfig,
    eta: f64,
    total_power: f64,
    sample_size: usize,
) -> Result<JointCalibration> {
    config.validate()?;
    if sample_size == 0 {
        return Err(Error::invalid("sample_size", "must be positive"));
    }
    let sample = Sample::calibration(config, sample_size);
    let mut cal = calibrate_joint_on(&sample, eta, total_power)?;
    cal.seed = config.seed;
    Ok(cal)
}

/// Calibrates on a caller-supplied sample. The scan follows the region
/// order S0, S1 (cases 1, 2), S2 (cases 1, 2) and stops at the first valid
/// point. The exhaustive nested search for S0 runs last because it is by far
/// the most expensive step and is only needed when the Newton iteration fails.
pub fn calibrate_joint_on(sample: &Sample, eta: f64, total_power: f64) -> Result<JointCalibration> {
    check_eta(eta)?;
    if !(total_power > 0.0 && total_power.is_finite()) {
        return Err(Error::invalid(
            "total_power",
            format!("{total_power} is not positive"),
        ));
    }
    if sample.is_empty() {
        return Err(Error::invalid("sample", "calibration sample is empty"));
    }
    let mut cal = Calibrator {
        sample,
        eta,
        pt: total_power,
        evals: 0,
        best: None,
        tried: Vec::new(),
    };
    let found = cal
        .try_s0_newton()
        .or_else(|| cal.try_case1(JointRegion::S1Case1))
        .or_else(|| cal.try_case2(JointRegion::S1Case2))
        .or_else(|| cal.try_case1(JointRegion::S2Case1))
        .or_else(|| cal.try_case2(JointRegion::S2Case2))
        .or_else(|| cal.try_s0_nested());
    match found {
        Some(mut c) => {
            c.evaluations = cal.evals;
            Ok(c)
        }
        None => {
            let best = cal.best.map(|b| b.1).unwrap_or(Residuals {
                c1: f64::INFINITY,
                c2: f64::INFINITY,
                power: Some(f64::INFINITY),
            });
            cal.tried.dedup();
            Err(CalibrationFailure {
                eta,
                residual_c1: best.c1,
                residual_c2: best.c2,
                residual_power: best.power,
                tried: cal.tried,
            }
            .into())
        }
    }
}
