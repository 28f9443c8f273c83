//! Optimal adaptive mode selection with fixed node powers.
//!
//! With the powers fixed, every metric is a linear combination of link
//! capacities and the policy reduces to comparing weighted capacities. The
//! calibration problem is a two-dimensional search over the selection
//! weights. Its solution lies either in the interior of one of three
//! selection regions or on one of a handful of boundary lines and corners,
//! where modes tie with positive probability and coins split the ties. Each
//! of these cases is solved directly: one- and two-dimensional monotone root
//! finding for the free weights, closed forms for the coins.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::buffers::{virtual_capacities, BufferState};
use crate::channel::{
    link_capacities, ChannelState, FadingConfig, LinkCapacities, Sample, SlotCoins,
};
use crate::mode::{masked_argmax, FlowRates, ModeDecision, PowerAlloc, Residuals};
use crate::par::{map_chunks, CHUNK};
use crate::roots::{solve_increasing, Clamp, Tolerance};
use crate::{check_eta, CalibrationFailure, Error, Result};

/// Relative tolerance on the flow constraints for an accepted point.
pub const RATE_TOLERANCE: f64 = 1e-3;

/// Fixed transmit powers, linear scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePowers {
    pub p1: f64,
    pub p2: f64,
    pub pr: f64,
}

impl NodePowers {
    pub fn new(p1: f64, p2: f64, pr: f64) -> Result<Self> {
        let p = NodePowers { p1, p2, pr };
        p.validate()?;
        Ok(p)
    }

    pub fn equal(p: f64) -> Self {
        NodePowers {
            p1: p,
            p2: p,
            pr: p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p1", self.p1), ("p2", self.p2), ("pr", self.pr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("power {v} must be positive")));
            }
        }
        Ok(())
    }

    pub fn alloc(&self) -> PowerAlloc {
        PowerAlloc {
            p1: self.p1,
            p2: self.p2,
            pr: self.pr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FixedRegion {
    /// `eta - mu1 == 1 - eta - mu2`: the decoding order is randomised.
    S0,
    /// `eta - mu1 < 1 - eta - mu2`: user 1 is decoded first.
    S1,
    /// `eta - mu1 > 1 - eta - mu2`: user 2 is decoded first.
    S2,
}

/// Row of the case table within a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseTag {
    Case1,
    Case2a,
    Case2b,
    Case2c,
    Case2d,
}

impl FixedRegion {
    pub fn name(self) -> &'static str {
        match self {
            FixedRegion::S0 => "S0",
            FixedRegion::S1 => "S1",
            FixedRegion::S2 => "S2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [FixedRegion::S0, FixedRegion::S1, FixedRegion::S2]
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl CaseTag {
    pub fn name(self) -> &'static str {
        match self {
            CaseTag::Case1 => "Case1",
            CaseTag::Case2a => "Case2a",
            CaseTag::Case2b => "Case2b",
            CaseTag::Case2c => "Case2c",
            CaseTag::Case2d => "Case2d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            CaseTag::Case1,
            CaseTag::Case2a,
            CaseTag::Case2b,
            CaseTag::Case2c,
            CaseTag::Case2d,
        ]
        .into_iter()
        .find(|r| r.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for FixedRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for CaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Long-term variables of the fixed-power policy.
///
/// `p5` is present only in the three-coin variant of Case 2c, where the
/// fifth coin decides between the uplink and the downlink group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedWeights {
    pub mu1: f64,
    pub mu2: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub p5: Option<f64>,
    pub p6: f64,
    pub region: FixedRegion,
    pub case_tag: CaseTag,
}

/// Tolerance for classifying a weight pair onto the S0 line.
pub const S0_LINE_TOLERANCE: f64 = 1e-9;

/// Region implied by the selection weights.
pub fn classify(mu1: f64, mu2: f64, eta: f64) -> FixedRegion {
    let d = (eta - mu1) - (1.0 - eta - mu2);
    if d.abs() < S0_LINE_TOLERANCE {
        FixedRegion::S0
    } else if d < 0.0 {
        FixedRegion::S1
    } else {
        FixedRegion::S2
    }
}

impl FixedWeights {
    fn with_coins(mu1: f64, mu2: f64, region: FixedRegion, case_tag: CaseTag) -> Self {
        FixedWeights {
            mu1,
            mu2,
            p1: 1.0,
            p2: 1.0,
            p3: 1.0,
            p4: 1.0,
            p5: None,
            p6: match region {
                FixedRegion::S0 => 0.5,
                FixedRegion::S1 => 0.0,
                FixedRegion::S2 => 1.0,
            },
            region,
            case_tag,
        }
    }

    pub fn validate(&self, eta: f64) -> Result<()> {
        check_eta(eta)?;
        let (mu1, mu2) = (self.mu1, self.mu2);
        if !(0.0..=eta).contains(&mu1) {
            return Err(Error::invalid(
                "mu1",
                format!("{mu1} is outside [0, {eta}]"),
            ));
        }
        if !(0.0..=1.0 - eta).contains(&mu2) {
            return Err(Error::invalid(
                "mu2",
                format!("{mu2} is outside [0, {}]", 1.0 - eta),
            ));
        }
        if (mu1 == 0.0 && mu2 == 0.0) || (mu1 == eta && mu2 == 1.0 - eta) {
            return Err(Error::invalid(
                "mu1",
                "selection weights at an excluded corner",
            ));
        }
        let coins = [
            ("p1", Some(self.p1)),
            ("p2", Some(self.p2)),
            ("p3", Some(self.p3)),
            ("p4", Some(self.p4)),
            ("p5", self.p5),
            ("p6", Some(self.p6)),
        ];
        for (name, p) in coins {
            if let Some(p) = p {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid(name, format!("{p} is outside [0, 1]")));
                }
            }
        }
        if classify(mu1, mu2, eta) != self.region {
            return Err(Error::invalid(
                "region",
                format!(
                    "mu1={mu1}, mu2={mu2} do not belong to region {}",
                    self.region
                ),
            ));
        }
        let t_ok = match self.region {
            FixedRegion::S0 => true,
            FixedRegion::S1 => self.p6 == 0.0,
            FixedRegion::S2 => self.p6 == 1.0,
        };
        if !t_ok {
            return Err(Error::invalid(
                "p6",
                "decoding-order coin inconsistent with region",
            ));
        }
        Ok(())
    }
}

/// The six fixed-power selection metrics (weighted capacities).
pub fn selection_metrics_fixed(caps: &LinkCapacities, w: &FixedWeights, eta: f64) -> [f64; 6] {
    let up1 = eta - w.mu1;
    let up2 = 1.0 - eta - w.mu2;
    [
        up1 * caps.c1r,
        up2 * caps.c2r,
        up1 * caps.c12r + up2 * caps.c21r,
        w.mu2 * caps.cr1,
        w.mu1 * caps.cr2,
        w.mu1 * caps.cr2 + w.mu2 * caps.cr1,
    ]
}

/// Decoding order for this slot: the sixth coin.
pub fn decoding_order_fixed(w: &FixedWeights, coins: &SlotCoins) -> u8 {
    coins.flip(6, w.p6) as u8
}

/// Candidate mask from the coin outcomes.
pub fn selection_mask_fixed(w: &FixedWeights, coins: &SlotCoins) -> [bool; 6] {
    let (up, down) = match w.p5 {
        Some(p5) => {
            let c5 = coins.flip(5, p5);
            (c5, !c5)
        }
        None => (true, true),
    };
    let c1 = coins.flip(1, w.p1);
    let c2 = coins.flip(2, w.p2);
    let c3 = coins.flip(3, w.p3);
    let c4 = coins.flip(4, w.p4);
    [
        !c1 && up,
        !c2 && up,
        c1 && c2 && up,
        !c3 && down,
        !c4 && down,
        c3 && c4 && down,
    ]
}

/// Optimal decision for one slot with unlimited buffers.
pub fn select_mode_fixed(
    state: &ChannelState,
    w: &FixedWeights,
    eta: f64,
    powers: &NodePowers,
    coins: &SlotCoins,
) -> ModeDecision {
    let t = decoding_order_fixed(w, coins);
    let caps = link_capacities(state, powers.p1, powers.p2, powers.pr, t as f64);
    let metrics = selection_metrics_fixed(&caps, w, eta);
    let mode = masked_argmax(&metrics, &selection_mask_fixed(w, coins));
    ModeDecision::full_rate(mode, t, powers.alloc(), &caps)
}

/// Delay-constrained decision: the metrics use capacities clipped by the
/// buffer state. Nodes keep transmitting at their fixed power.
pub fn select_mode_fixed_delay(
    state: &ChannelState,
    w: &FixedWeights,
    eta: f64,
    powers: &NodePowers,
    coins: &SlotCoins,
    buf: &BufferState,
) -> ModeDecision {
    let t = decoding_order_fixed(w, coins);
    let caps = link_capacities(state, powers.p1, powers.p2, powers.pr, t as f64);
    let vcaps = virtual_capacities(&caps, buf);
    let metrics = selection_metrics_fixed(&vcaps, w, eta);
    let mode = masked_argmax(&metrics, &selection_mask_fixed(w, coins));
    ModeDecision::full_rate(mode, t, powers.alloc(), &vcaps)
}

// ---------------------------------------------------------------------------
// Sample evaluation
// ---------------------------------------------------------------------------

/// Per-draw capacities at the fixed powers, stored column-wise. `c12r0` is
/// user 1's rate when decoded first, `c21r1` user 2's when decoded first.
struct CapacityTable {
    c1r: Vec<f64>,
    c2r: Vec<f64>,
    cr: Vec<f64>,
    c12r0: Vec<f64>,
    c21r1: Vec<f64>,
    cr1: Vec<f64>,
    cr2: Vec<f64>,
}

impl CapacityTable {
    fn new(sample: &Sample, powers: &NodePowers) -> Self {
        let parts = map_chunks(sample.len(), CHUNK, |range| {
            range
                .map(|i| link_capacities(&sample.state(i), powers.p1, powers.p2, powers.pr, 0.0))
                .collect::<Vec<_>>()
        });
        let n = sample.len();
        let mut t = CapacityTable {
            c1r: Vec::with_capacity(n),
            c2r: Vec::with_capacity(n),
            cr: Vec::with_capacity(n),
            c12r0: Vec::with_capacity(n),
            c21r1: Vec::with_capacity(n),
            cr1: Vec::with_capacity(n),
            cr2: Vec::with_capacity(n),
        };
        for c in parts.iter().flatten() {
            t.c1r.push(c.c1r);
            t.c2r.push(c.c2r);
            t.cr.push(c.cr);
            t.c12r0.push(c.c12r);
            t.c21r1.push((c.cr - c.c1r).max(0.0));
            t.cr1.push(c.cr1);
            t.cr2.push(c.cr2);
        }
        t
    }

    fn len(&self) -> usize {
        self.c1r.len()
    }
}

/// Sample means of the capacities over the draws won by one candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Bin {
    freq: f64,
    c1r: f64,
    c2r: f64,
    cr: f64,
    c12r0: f64,
    c21r1: f64,
    cr1: f64,
    cr2: f64,
}

impl Bin {
    fn add(&mut self, o: &Bin) {
        self.freq += o.freq;
        self.c1r += o.c1r;
        self.c2r += o.c2r;
        self.cr += o.cr;
        self.c12r0 += o.c12r0;
        self.c21r1 += o.c21r1;
        self.cr1 += o.cr1;
        self.cr2 += o.cr2;
    }

    fn scale(&mut self, s: f64) {
        self.freq *= s;
        self.c1r *= s;
        self.c2r *= s;
        self.cr *= s;
        self.c12r0 *= s;
        self.c21r1 *= s;
        self.cr1 *= s;
        self.cr2 *= s;
    }

    /// User 1's multiple-access rate when the order is randomised with
    /// probability `p6` of decoding user 2 first.
    fn c12r(&self, p6: f64) -> f64 {
        p6 * self.c1r + (1.0 - p6) * self.c12r0
    }

    fn c21r(&self, p6: f64) -> f64 {
        (1.0 - p6) * self.c2r + p6 * self.c21r1
    }
}

/// Bins indexed by the representative mode of each candidate.
type Bins = [Bin; 6];

/// Tie groups are represented by one member. The representative determines
/// the metric used and the bin the draw is counted in.
const G13: usize = 0;
const G23: usize = 1;
const M3: usize = 2;
const G46: usize = 3;
const G56: usize = 4;
const M6: usize = 5;

fn evaluate(
    table: &CapacityTable,
    eta: f64,
    mu1: f64,
    mu2: f64,
    region: FixedRegion,
    cands: &[usize],
) -> Bins {
    let up1 = eta - mu1;
    let up2 = 1.0 - eta - mu2;
    let parts = map_chunks(table.len(), CHUNK, |range| {
        let mut bins: Bins = Default::default();
        for i in range {
            let metric = |k: usize| match k {
                0 => up1 * table.c1r[i],
                1 => up2 * table.c2r[i],
                2 => match region {
                    FixedRegion::S0 => up1 * table.cr[i],
                    FixedRegion::S1 => up1 * table.c12r0[i] + up2 * table.c2r[i],
                    FixedRegion::S2 => up1 * table.c1r[i] + up2 * table.c21r1[i],
                },
                3 => mu2 * table.cr1[i],
                4 => mu1 * table.cr2[i],
                _ => mu1 * table.cr2[i] + mu2 * table.cr1[i],
            };
            let mut best = cands[0];
            let mut best_m = metric(best);
            for &k in &cands[1..] {
                let m = metric(k);
                if m > best_m {
                    best = k;
                    best_m = m;
                }
            }
            let b = &mut bins[best];
            b.freq += 1.0;
            b.c1r += table.c1r[i];
            b.c2r += table.c2r[i];
            b.cr += table.cr[i];
            b.c12r0 += table.c12r0[i];
            b.c21r1 += table.c21r1[i];
            b.cr1 += table.cr1[i];
            b.cr2 += table.cr2[i];
        }
        bins
    });
    let mut total: Bins = Default::default();
    for p in &parts {
        for k in 0..6 {
            total[k].add(&p[k]);
        }
    }
    let s = 1.0 / table.len() as f64;
    for b in &mut total {
        b.scale(s);
    }
    total
}

/// Long-run rates, mode frequencies and consumed power implied by the bins
/// and the coins of `w`.
fn expected_from_bins(bins: &Bins, w: &FixedWeights, powers: &NodePowers) -> (FlowRates, [f64; 6]) {
    let p6 = w.p6;
    let mut freq = [0.0; 6];
    let mut f = FlowRates::default();
    // (bin, mode, share of the bin's draws that go to the mode)
    let mut credit = |b: &Bin, mode: usize, share: f64, f: &mut FlowRates| {
        if share == 0.0 {
            return;
        }
        freq[mode] += share * b.freq;
        match mode {
            0 => f.r1r += share * b.c1r,
            1 => f.r2r += share * b.c2r,
            2 => {
                f.r1r += share * b.c12r(p6);
                f.r2r += share * b.c21r(p6);
            }
            3 => f.rr1 += share * b.cr1,
            4 => f.rr2 += share * b.cr2,
            _ => {
                f.rr1 += share * b.cr1;
                f.rr2 += share * b.cr2;
            }
        }
    };
    match w.p5 {
        Some(p5) if w.region == FixedRegion::S1 => {
            let b = &bins[G23];
            credit(b, 1, p5 * (1.0 - w.p2), &mut f);
            credit(b, 2, p5 * w.p2, &mut f);
            credit(b, 4, (1.0 - p5) * (1.0 - w.p4), &mut f);
            credit(b, 5, (1.0 - p5) * w.p4, &mut f);
        }
        Some(p5) => {
            let b = &bins[G13];
            credit(b, 0, p5 * (1.0 - w.p1), &mut f);
            credit(b, 2, p5 * w.p1, &mut f);
            credit(b, 3, (1.0 - p5) * (1.0 - w.p3), &mut f);
            credit(b, 5, (1.0 - p5) * w.p3, &mut f);
        }
        None => {
            credit(&bins[G13], 0, 1.0 - w.p1, &mut f);
            credit(&bins[G13], 2, w.p1, &mut f);
            credit(&bins[G23], 1, 1.0 - w.p2, &mut f);
            credit(&bins[G23], 2, w.p2, &mut f);
            credit(&bins[M3], 2, 1.0, &mut f);
            credit(&bins[G46], 3, 1.0 - w.p3, &mut f);
            credit(&bins[G46], 5, w.p3, &mut f);
            credit(&bins[G56], 4, 1.0 - w.p4, &mut f);
            credit(&bins[G56], 5, w.p4, &mut f);
            credit(&bins[M6], 5, 1.0, &mut f);
        }
    }
    f.power = powers.p1 * (freq[0] + freq[2])
        + powers.p2 * (freq[1] + freq[2])
        + powers.pr * (freq[3] + freq[4] + freq[5]);
    (f, freq)
}

/// Candidate representatives competing in each case.
fn candidates(region: FixedRegion, case: CaseTag, three_coin: bool) -> &'static [usize] {
    use CaseTag::*;
    use FixedRegion::*;
    match (region, case) {
        (_, Case1) => &[M3, M6],
        (S0, Case2a) | (S1, Case2d) | (S2, Case2b) => &[M3, G46],
        (S0, Case2b) | (S1, Case2b) | (S2, Case2d) => &[M3, G56],
        (S1, Case2a) => &[G23, M6],
        (S1, Case2c) if three_coin => &[G23],
        (S1, Case2c) => &[G23, G56],
        (S2, Case2a) => &[G13, M6],
        (S2, Case2c) if three_coin => &[G13],
        (S2, Case2c) => &[G13, G46],
        (S0, _) => &[M3, M6],
    }
}

/// Long-run rates of the policy `w` on `sample`, with the coins replaced by
/// their expectations. Returns the rates and the mode frequencies.
pub fn expected_flows_fixed(
    sample: &Sample,
    w: &FixedWeights,
    eta: f64,
    powers: &NodePowers,
) -> (FlowRates, [f64; 6]) {
    let table = CapacityTable::new(sample, powers);
    let cands = candidates(w.region, w.case_tag, w.p5.is_some());
    let bins = evaluate(&table, eta, w.mu1, w.mu2, w.region, cands);
    expected_from_bins(&bins, w, powers)
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Result of [`calibrate_fixed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedCalibration {
    pub eta: f64,
    pub powers: NodePowers,
    pub weights: FixedWeights,
    pub flows: FlowRates,
    pub mode_freq: [f64; 6],
    pub residuals: Residuals,
    pub sample_size: usize,
    pub seed: u64,
    pub evaluations: usize,
}

const ROOT_TOL: Tolerance = Tolerance {
    ftol: 0.0,
    xtol: 1e-12,
    max_evals: 120,
};

/// Normalised gap that increases with `outflow`.
fn gap(inflow: f64, outflow: f64) -> f64 {
    let s = inflow + outflow;
    if s > 0.0 {
        (outflow - inflow) / s
    } else {
        0.0
    }
}

struct Calibrator<'a> {
    table: &'a CapacityTable,
    eta: f64,
    powers: NodePowers,
    evals: usize,
    best: Option<(f64, Residuals)>,
    tried: Vec<String>,
}

impl<'a> Calibrator<'a> {
    fn bins(
        &mut self,
        mu1: f64,
        mu2: f64,
        region: FixedRegion,
        case: CaseTag,
        three: bool,
    ) -> Bins {
        self.evals += 1;
        evaluate(
            self.table,
            self.eta,
            mu1,
            mu2,
            region,
            candidates(region, case, three),
        )
    }

    /// Root of `f(bins(x))` in `(lo, hi)`, where `point` maps the free weight
    /// to `(mu1, mu2)`. Returns `None` when the root is pinned to either end.
    fn root_1d<P, F>(
        &mut self,
        lo: f64,
        hi: f64,
        region: FixedRegion,
        case: CaseTag,
        point: P,
        f: F,
    ) -> Option<f64>
    where
        P: Fn(f64) -> (f64, f64),
        F: Fn(&Bins) -> f64,
    {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return None;
        }
        let r = solve_increasing(
            |x| {
                let (a, b) = point(x);
                f(&self.bins(a, b, region, case, false))
            },
            lo,
            hi,
            None,
            ROOT_TOL,
        );
        (r.clamp == Clamp::Interior).then_some(r.x)
    }

    fn accept(&mut self, w: FixedWeights, bins: &Bins) -> Option<FixedCalibration> {
        let label = format!("{}/{}", w.region, w.case_tag);
        self.tried.push(label);
        let coins = [w.p1, w.p2, w.p3, w.p4, w.p5.unwrap_or(0.5), w.p6];
        let coins_ok = coins
            .iter()
            .all(|p| p.is_finite() && (0.0..=1.0).contains(p));
        let (flows, freq) = expected_from_bins(bins, &w, &self.powers);
        let residuals = flows.residuals(None);
        let score = if coins_ok {
            residuals.max()
        } else {
            f64::INFINITY
        };
        if self.best.is_none_or(|(b, _)| score < b) {
            self.best = Some((score, residuals));
        }
        let ok = coins_ok
            && residuals.c1 <= RATE_TOLERANCE
            && residuals.c2 <= RATE_TOLERANCE
            && w.validate(self.eta).is_ok();
        ok.then(|| FixedCalibration {
            eta: self.eta,
            powers: self.powers,
            weights: w,
            flows,
            mode_freq: freq,
            residuals,
            sample_size: self.table.len(),
            seed: 0,
            evaluations: self.evals,
        })
    }

    // --- region S0: decoding order randomised -------------------------------

    fn s0_case1(&mut self) -> Option<FixedCalibration> {
        let eta = self.eta;
        let (region, case) = (FixedRegion::S0, CaseTag::Case1);
        let on_line = move |m1: f64| (m1, m1 + 1.0 - 2.0 * eta);
        let lo = (2.0 * eta - 1.0).max(0.0);
        // Sum of downlink rates minus sum of uplink rates.
        let mu1 = self.root_1d(lo, eta, region, case, on_line, |b| {
            gap(b[M3].cr, b[M6].cr1 + b[M6].cr2)
        })?;
        let (mu1, mu2) = on_line(mu1);
        let b = self.bins(mu1, mu2, region, case, false);
        let mut w = FixedWeights::with_coins(mu1, mu2, region, case);
        w.p6 = (b[M3].cr - b[M3].c2r - b[M6].cr2) / (b[M3].cr - b[M3].c1r - b[M3].c2r);
        self.accept(w, &b)
    }

    fn s0_case2a(&mut self) -> Option<FixedCalibration> {
        let eta = self.eta;
        if eta >= 0.5 {
            return None;
        }
        let (region, case) = (FixedRegion::S0, CaseTag::Case2a);
        let (mu1, mu2) = (0.0, 1.0 - 2.0 * eta);
        let b = self.bins(mu1, mu2, region, case, false);
        let mut w = FixedWeights::with_coins(mu1, mu2, region, case);
        w.p6 = (b[G46].cr1 - b[M3].c2r) / (b[M3].cr - b[M3].c1r - b[M3].c2r);
        w.p3 = b[M3].c12r(w.p6) / b[G46].cr2;
        self.accept(w, &b)
    }

    fn s0_case2b(&mut self) -> Option<FixedCalibration> {
        let eta = self.eta;
        if eta <= 0.5 {
            return None;
        }
        let (region, case) = (FixedRegion::S0, CaseTag::Case2b);
        let (mu1, mu2) = (2.0 * eta - 1.0, 0.0);
        let b = self.bins(mu1, mu2, region, case, false);
        let mut w = FixedWeights::with_coins(mu1, mu2, region, case);
        w.p6 = (b[M3].cr - b[M3].c2r - b[G56].cr2) / (b[M3].cr - b[M3].c1r - b[M3].c2r);
        w.p4 = b[M3].c21r(w.p6) / b[G56].cr1;
        self.accept(w, &b)
    }

    // --- regions S1 and S2: interior ------------------------------------------

    /// Bounds of `mu2` for a given `mu1` that keep the weights strictly on
    /// the region's side of the S0 line.
    fn case1_bounds(&self, region: FixedRegion, mu1: f64) -> (f64, f64) {
        let line = mu1 + 1.0 - 2.0 * self.eta;
        let (lo, hi) = match region {
            FixedRegion::S1 => (0.0, line.min(1.0 - self.eta)),
            _ => (line.max(0.0), 1.0 - self.eta),
        };
        // At the outer bracket ends the interval can collapse, and rounding
        // may then put `hi` a hair below `lo`.
        (lo, hi.max(lo))
    }

    /// For fixed `mu1`, balances buffer 2 by adjusting `mu2`. Returns `mu2`,
    /// whether it is interior, and the remaining buffer 1 gap.
    fn case1_inner(&mut self, region: FixedRegion, mu1: f64, guess: f64) -> (f64, bool, f64) {
        let (lo, hi) = self.case1_bounds(region, mu1);
        let s1 = region == FixedRegion::S1;
        let r = solve_increasing(
            |m2| {
                let b = self.bins(mu1, m2, region, CaseTag::Case1, false);
                let inflow = if s1 { b[M3].c2r } else { b[M3].c21r1 };
                gap(inflow, b[M6].cr1)
            },
            lo,
            hi,
            Some(guess.clamp(lo, hi)),
            ROOT_TOL,
        );
        let b = self.bins(mu1, r.x, region, CaseTag::Case1, false);
        let inflow = if s1 { b[M3].c12r0 } else { b[M3].c1r };
        (r.x, r.clamp == Clamp::Interior, gap(inflow, b[M6].cr2))
    }

    fn case1(&mut self, region: FixedRegion) -> Option<FixedCalibration> {
        let eta = self.eta;
        let case = CaseTag::Case1;
        // Raising mu1 favours the broadcast mode and drains buffer 1; for
        // each mu1 the inner search balances buffer 2 through mu2.
        let lo = match region {
            FixedRegion::S1 => (2.0 * eta - 1.0).max(0.0),
            _ => 0.0,
        };
        let mut warm = 0.5 * (1.0 - eta);
        let outer = solve_increasing(
            |m1| {
                let (m2, _, g1) = self.case1_inner(region, m1, warm);
                warm = m2;
                g1
            },
            lo,
            eta,
            None,
            ROOT_TOL,
        );
        if outer.clamp != Clamp::Interior {
            return None;
        }
        let mu1 = outer.x;
        let (mu2, interior, _) = self.case1_inner(region, mu1, warm);
        if !interior || classify(mu1, mu2, eta) != region {
            return None;
        }
        let b = self.bins(mu1, mu2, region, case, false);
        let w = FixedWeights::with_coins(mu1, mu2, region, case);
        self.accept(w, &b)
    }

    // --- region S1 boundary cases (user 1 decoded first) --------------------

    fn s1_case2a(&mut self) -> Option<FixedCalibration> {
        let eta = self.eta;
        let (region, case) = (FixedRegion::S1, CaseTag::Case2a);
        let point = move |m2: f64| (eta, m2);
        let mu2 = self.root_1d(0.0, 1.0 - eta, region, case, point, |b| {
            gap(b[G23].c2r, b[M6].cr1)
        })?;
        let b = self.bins(eta, mu2, region, case, false);
        let mut w = FixedWeights::with_coins(eta, mu2, region, case);
        w.p2 = b[M6].cr2 / b[G23].c12r0;
        self.accept(w, &b)
    }

    fn s1_case2b(&mut self) -> Option<FixedCalibration> {
        let eta = self.eta;
        let (region, case) = (FixedRegion::S1, CaseTag::Case2b);
        let point = |m1: f64| (m1, 0.0);
        let lo = (2.0 * eta - 1.0).max(0.0);
        let mu1 = self.root_1d(lo, eta, region, case, point, |b| {
            gap(b[M3].c12r0, b[G56].cr2)
        })?;
        let b = self.bins(mu1, 0.0, region, case, false);
        let mut w = FixedWeights::with_coins(mu1, 0.0, region, case);
        w.p4 = b[M3].c2r / b[G56].cr1;
        self.accept(w, &b)
    }

    fn s1_case2c(&mut self) -> Option<FixedCalibration> {
        let eta = self.eta;
        let (region, case) = (FixedRegion::S1, CaseTag::Case2c);
        let three = eta == 0.5 && self.powers.p2 == self.powers.pr;
        let b = self.bins(eta, 0.0, region, case, three);
        let mut w = FixedWeights::with_coins(eta, 0.0, region, case);
        if three {
            let g = &b[G23];
            let lower = g.cr2 / g.cr;
            let upper = g.cr1 / (g.cr1 + g.c2r);
            let p5 = 0.5 * (lower + upper);
            w.p5 = Some(p5);
            w.p2 = (1.0 - p5) / p5 * lower / (1.0 - lower);
            w.p4 = p5 / (1.0 - p5) * (1.0 - upper) / upper;
            if lower > upper {
                w.p5 = Some(f64::NAN);
            }
        } else {
            w.p2 = b[G56].cr2 / b[G23].c12r0;
            w.p4 = b[G23].c2r / b[G56].cr1;
        }
        self.accept(w, &b)
    }

    fn s1_case2d(&mut self) -> Option<FixedCalibration> {
        let eta = self.eta;
        let (region, case) = (FixedRegion::S1, CaseTag::Case2d);
        let point = |m2: f64| (0.0, m2);
        let mu2 = self.root_1d(0.0, 1.0 - 2.0 * eta, region, case, point, |b| {
            gap(b[M3].c2r, b[G46].cr1)
        })?;
        let b = self.bins(0.0, mu2, region, case, false);
        let mut w = FixedWeights::with_coins(0.0, mu2, region, case);
        // User 1's multiple-access rate with user 1 decoded first.
        w.p3 = b[M3].c12r0 / b[G46].cr2;
        self.accept(w, &b)
    }

    // --- region S2 boundary cases (user 2 decoded first) --------------------

    fn s2_case2a(&mut self) -> Option<FixedCalibration> {
        let eta = self.eta;
        let (region, case) = (FixedRegion::S2, CaseTag::Case2a);
        let point = move |m1: f64| (m1, 1.0 - eta);
        let mu1 = self.root_1d(0.0, eta, region, case, point, |b| {
            gap(b[G13].c1r, b[M6].cr2)
        })?;
        let b = self.bins(mu1, 1.0 - eta, region, case, false);
        let mut w = FixedWeights::with_coins(mu1, 1.0 - eta, region, case);
        w.p1 = b[M6].cr1 / b[G13].c21r1;
        self.accept(w, &b)
    }

    fn s2_case2b(&mut self) -> Option<FixedCalibration> {
        let eta = self.eta;
        let (region, case) = (FixedRegion::S2, CaseTag::Case2b);
        let point = |m2: f64| (0.0, m2);
        let lo = (1.0 - 2.0 * eta).max(0.0);
        let mu2 = self.root_1d(lo, 1.0 - eta, region, case, point, |b| {
            gap(b[M3].c21r1, b[G46].cr1)
        })?;
        let b = self.bins(0.0, mu2, region, case, false);
        let mut w = FixedWeights::with_coins(0.0, mu2, region, case);
        w.p3 = b[M3].c1r / b[G46].cr2;
        self.accept(w, &b)
    }

    fn s2_case2c(&mut self) -> Option<FixedCalibration> {
        let eta = self.eta;
        let (region, case) = (FixedRegion::S2, CaseTag::Case2c);
        let three = eta == 0.5 && self.powers.p1 == self.powers.pr;
        let b = self.bins(0.0, 1.0 - eta, region, case, three);
        let mut w = FixedWeights::with_coins(0.0, 1.0 - eta, region, case);
        if three {
            let g = &b[G13];
            let lower = g.cr1 / g.cr;
            let upper = g.cr2 / (g.cr2 + g.c1r);
            let p5 = 0.5 * (lower + upper);
            w.p5 = Some(p5);
            w.p1 = (1.0 - p5) / p5 * lower / (1.0 - lower);
            w.p3 = p5 / (1.0 - p5) * (1.0 - upper) / upper;
            if lower > upper {
                w.p5 = Some(f64::NAN);
            }
        } else {
            w.p1 = b[G46].cr1 / b[G13].c21r1;
            w.p3 = b[G13].c1r / b[G46].cr2;
        }
        self.accept(w, &b)
    }

    fn s2_case2d(&mut self) -> Option<FixedCalibration> {
        let eta = self.eta;
        let (region, case) = (FixedRegion::S2, CaseTag::Case2d);
        let point = |m1: f64| (m1, 0.0);
        let mu1 = self.root_1d(0.0, 2.0 * eta - 1.0, region, case, point, |b| {
            gap(b[M3].c1r, b[G56].cr2)
        })?;
        let b = self.bins(mu1, 0.0, region, case, false);
        let mut w = FixedWeights::with_coins(mu1, 0.0, region, case);
        // User 2's multiple-access rate with user 2 decoded first.
        w.p4 = b[M3].c21r1 / b[G56].cr1;
        self.accept(w, &b)
    }
}

/// Calibrates the fixed-power policy on a fresh calibration sample.
pub fn calibrate_fixed(
    config: &FadingConfig,
    powers: &NodePowers,
    eta: f64,
    sample_size: usize,
) -> Result<FixedCalibration> {
    config.validate()?;
    if sample_size == 0 {
        return Err(Error::invalid("sample_size", "must be positive"));
    }
    let sample = Sample::calibration(config, sample_size);
    let mut cal = calibrate_fixed_on(&sample, powers, eta)?;
    cal.seed = config.seed;
    Ok(cal)
}

/// Calibrates on a caller-supplied sample, scanning the cases in table order
/// and returning the first valid one.
pub fn calibrate_fixed_on(
    sample: &Sample,
    powers: &NodePowers,
    eta: f64,
) -> Result<FixedCalibration> {
    check_eta(eta)?;
    powers.validate()?;
    if sample.is_empty() {
        return Err(Error::invalid("sample", "calibration sample is empty"));
    }
    let table = CapacityTable::new(sample, powers);
    let mut cal = Calibrator {
        table: &table,
        eta,
        powers: *powers,
        evals: 0,
        best: None,
        tried: Vec::new(),
    };
    let found = cal
        .s0_case1()
        .or_else(|| cal.s0_case2a())
        .or_else(|| cal.s0_case2b())
        .or_else(|| cal.case1(FixedRegion::S1))
        .or_else(|| cal.s1_case2a())
        .or_else(|| cal.s1_case2b())
        .or_else(|| cal.s1_case2c())
        .or_else(|| cal.s1_case2d())
        .or_else(|| cal.case1(FixedRegion::S2))
        .or_else(|| cal.s2_case2a())
        .or_else(|| cal.s2_case2b())
        .or_else(|| cal.s2_case2c())
        .or_else(|| cal.s2_case2d());
    match found {
        Some(mut c) => {
            c.evaluations = cal.evals;
            Ok(c)
        }
        None => {
            let best = cal.best.map(|b| b.1).unwrap_or(Residuals {
                c1: f64::INFINITY,
                c2: f64::INFINITY,
                power: None,
            });
            Err(CalibrationFailure {
                eta,
                residual_c1: best.c1,
                residual_c2: best.c2,
                residual_power: None,
                tried: cal.tried,
            }
            .into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mode::Mode;

    #[test]
    fn s0_metric_of_mac_ignores_order() {
        let w = FixedWeights::with_coins(0.1, 0.1, FixedRegion::S0, CaseTag::Case1);
        let st = ChannelState::new(4.0, 1.0);
        for t in [0.0, 1.0] {
            let caps = link_capacities(&st, 10.0, 10.0, 10.0, t);
            let m = selection_metrics_fixed(&caps, &w, 0.5);
            assert!((m[2] - 0.4 * caps.cr).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coefficient_zeroes_uplink_metric() {
        let w = FixedWeights::with_coins(0.5, 0.2, FixedRegion::S1, CaseTag::Case2a);
        let caps = link_capacities(&ChannelState::new(1.3, 0.7), 10.0, 10.0, 10.0, 0.0);
        assert_eq!(selection_metrics_fixed(&caps, &w, 0.5)[0], 0.0);
    }

    #[test]
    fn region_fixes_decoding_order() {
        let mut coins = crate::channel::CoinStream::new(3);
        let s1 = FixedWeights::with_coins(0.1, 0.2, FixedRegion::S1, CaseTag::Case1);
        let s2 = FixedWeights::with_coins(0.2, 0.1, FixedRegion::S2, CaseTag::Case1);
        for _ in 0..1000 {
            let c = coins.next_coins();
            assert_eq!(decoding_order_fixed(&s1, &c), 0);
            assert_eq!(decoding_order_fixed(&s2, &c), 1);
        }
    }

    #[test]
    fn default_mask_exposes_only_mac_and_broadcast() {
        let w = FixedWeights::with_coins(0.2, 0.2, FixedRegion::S0, CaseTag::Case1);
        let mask = selection_mask_fixed(&w, &SlotCoins::NEUTRAL);
        assert_eq!(mask, [false, false, true, false, false, true]);
    }

    #[test]
    fn symmetric_hand_instance() {
        let w = FixedWeights::with_coins(0.25, 0.25, FixedRegion::S0, CaseTag::Case1);
        let d = select_mode_fixed(
            &ChannelState::new(2.0, 2.0),
            &w,
            0.5,
            &NodePowers::equal(10.0),
            &SlotCoins::NEUTRAL,
        );
        // Broadcast 0.25 * 2 * log2(21) = 2.196 beats the multiple-access
        // metric 0.25 * log2(41) = 1.339.
        assert_eq!(d.mode, Mode::M6);
    }

    #[test]
    fn evaluator_matches_policy_frequencies() {
        let cfg = FadingConfig::symmetric(11);
        let sample = Sample::calibration(&cfg, 4000);
        let powers = NodePowers::equal(10.0);
        let w = FixedWeights::with_coins(0.2, 0.15, FixedRegion::S1, CaseTag::Case1);
        let eta = 0.4;
        let (_, freq) = expected_flows_fixed(&sample, &w, eta, &powers);
        let mut counts = [0.0; 6];
        for i in 0..sample.len() {
            let d = select_mode_fixed(&sample.state(i), &w, eta, &powers, &SlotCoins::NEUTRAL);
            counts[d.mode.index()] += 1.0 / sample.len() as f64;
        }
        for k in 0..6 {
            assert!(
                (freq[k] - counts[k]).abs() < 1e-12,
                "{freq:?} vs {counts:?}"
            );
        }
    }
}
