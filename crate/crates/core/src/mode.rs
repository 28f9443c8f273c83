//! Transmission modes and the per-slot decision record.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::{capacity, split_sum_rate, ChannelState, LinkCapacities};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::M1, Mode::M2, Mode::M3, Mode::M4, Mode::M5, Mode::M6];

    /// Zero-based position in [`Mode::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Mode {
        Mode::ALL[i]
    }

    /// Parses `"M3"`, `"m3"` or `"3"`.
    pub fn parse(s: &str) -> Option<Mode> {
        let digits = s.trim().trim_start_matches(['M', 'm']);
        match digits.parse::<usize>() {
            Ok(k @ 1..=6) => Some(Mode::from_index(k - 1)),
            _ => None,
        }
    }

    pub fn is_uplink(self) -> bool {
        matches!(self, Mode::M1 | Mode::M2 | Mode::M3)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerAlloc {
    pub p1: f64,
    pub p2: f64,
    pub pr: f64,
}

impl PowerAlloc {
    pub fn total(&self) -> f64 {
        self.p1 + self.p2 + self.pr
    }
}

/// Outcome of one slot: the active mode, the multiple-access decoding order,
/// the transmit powers and the rates actually carried on each link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDecision {
    pub mode: Mode,
    pub t: u8,
    pub powers: PowerAlloc,
    pub r1r: f64,
    pub r2r: f64,
    pub rr1: f64,
    pub rr2: f64,
}

impl ModeDecision {
    /// A decision carrying the full capacities of `mode` in `caps`, with the
    /// powers of inactive nodes zeroed.
    pub fn full_rate(mode: Mode, t: u8, powers: PowerAlloc, caps: &LinkCapacities) -> Self {
        let mut d = ModeDecision {
            mode,
            t,
            powers: PowerAlloc::default(),
            r1r: 0.0,
            r2r: 0.0,
            rr1: 0.0,
            rr2: 0.0,
        };
        match mode {
            Mode::M1 => {
                d.r1r = caps.c1r;
                d.powers.p1 = powers.p1;
            }
            Mode::M2 => {
                d.r2r = caps.c2r;
                d.powers.p2 = powers.p2;
            }
            Mode::M3 => {
                d.r1r = caps.c12r;
                d.r2r = caps.c21r;
                d.powers.p1 = powers.p1;
                d.powers.p2 = powers.p2;
            }
            Mode::M4 => {
                d.rr1 = caps.cr1;
                d.powers.pr = powers.pr;
            }
            Mode::M5 => {
                d.rr2 = caps.cr2;
                d.powers.pr = powers.pr;
            }
            Mode::M6 => {
                d.rr1 = caps.cr1;
                d.rr2 = caps.cr2;
                d.powers.pr = powers.pr;
            }
        }
        d
    }
}

/// Candidate powers of every mode in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModePowers {
    pub p1_m1: f64,
    pub p2_m2: f64,
    pub p1_m3: f64,
    pub p2_m3: f64,
    pub pr_m4: f64,
    pub pr_m5: f64,
    pub pr_m6: f64,
}

impl ModePowers {
    pub fn uniform(p1: f64, p2: f64, pr: f64) -> Self {
        ModePowers {
            p1_m1: p1,
            p2_m2: p2,
            p1_m3: p1,
            p2_m3: p2,
            pr_m4: pr,
            pr_m5: pr,
            pr_m6: pr,
        }
    }

    pub fn alloc(&self, mode: Mode) -> PowerAlloc {
        let z = PowerAlloc::default();
        match mode {
            Mode::M1 => PowerAlloc {
                p1: self.p1_m1,
                ..z
            },
            Mode::M2 => PowerAlloc {
                p2: self.p2_m2,
                ..z
            },
            Mode::M3 => PowerAlloc {
                p1: self.p1_m3,
                p2: self.p2_m3,
                ..z
            },
            Mode::M4 => PowerAlloc {
                pr: self.pr_m4,
                ..z
            },
            Mode::M5 => PowerAlloc {
                pr: self.pr_m5,
                ..z
            },
            Mode::M6 => PowerAlloc {
                pr: self.pr_m6,
                ..z
            },
        }
    }
}

/// Capacities of every mode, each evaluated at that mode's own powers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeCapacities {
    pub c1r_m1: f64,
    pub c2r_m2: f64,
    pub c12r_m3: f64,
    pub c21r_m3: f64,
    pub cr1_m4: f64,
    pub cr2_m5: f64,
    pub cr1_m6: f64,
    pub cr2_m6: f64,
}

impl ModeCapacities {
    pub fn evaluate(state: &ChannelState, p: &ModePowers, t: u8) -> Self {
        let (c12r_m3, c21r_m3) = split_sum_rate(p.p1_m3 * state.s1, p.p2_m3 * state.s2, t as f64);
        ModeCapacities {
            c1r_m1: capacity(p.p1_m1 * state.s1),
            c2r_m2: capacity(p.p2_m2 * state.s2),
            c12r_m3,
            c21r_m3,
            cr1_m4: capacity(p.pr_m4 * state.s1),
            cr2_m5: capacity(p.pr_m5 * state.s2),
            cr1_m6: capacity(p.pr_m6 * state.s1),
            cr2_m6: capacity(p.pr_m6 * state.s2),
        }
    }

    /// Every mode sees the same link capacities, as with fixed powers.
    pub fn from_links(c: &LinkCapacities) -> Self {
        ModeCapacities {
            c1r_m1: c.c1r,
            c2r_m2: c.c2r,
            c12r_m3: c.c12r,
            c21r_m3: c.c21r,
            cr1_m4: c.cr1,
            cr2_m5: c.cr2,
            cr1_m6: c.cr1,
            cr2_m6: c.cr2,
        }
    }

    /// The link capacities that `mode` would use. Links the mode does not
    /// touch are zero.
    pub fn links(&self, mode: Mode) -> LinkCapacities {
        let z = LinkCapacities::default();
        match mode {
            Mode::M1 => LinkCapacities {
                c1r: self.c1r_m1,
                ..z
            },
            Mode::M2 => LinkCapacities {
                c2r: self.c2r_m2,
                ..z
            },
            Mode::M3 => LinkCapacities {
                c12r: self.c12r_m3,
                c21r: self.c21r_m3,
                cr: self.c12r_m3 + self.c21r_m3,
                ..z
            },
            Mode::M4 => LinkCapacities {
                cr1: self.cr1_m4,
                ..z
            },
            Mode::M5 => LinkCapacities {
                cr2: self.cr2_m5,
                ..z
            },
            Mode::M6 => LinkCapacities {
                cr1: self.cr1_m6,
                cr2: self.cr2_m6,
                ..z
            },
        }
    }
}

/// Relative constraint residuals of a calibrated operating point.
///
/// `c1` compares the inflow and outflow of the buffer holding user 1's data,
/// `c2` does the same for user 2. Both are scaled by the inflow rate. `power`
/// is the budget mismatch relative to the budget and is absent for fixed
/// powers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub c1: f64,
    pub c2: f64,
    pub power: Option<f64>,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.c1.max(self.c2).max(self.power.unwrap_or(0.0))
    }
}

/// Long-run average link rates and consumed power of a policy, in bits per
/// symbol and linear power units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowRates {
    pub r1r: f64,
    pub r2r: f64,
    pub rr1: f64,
    pub rr2: f64,
    pub power: f64,
}

impl FlowRates {
    /// Relative flow residuals, each scaled by the inflow rate of its buffer.
    pub fn residuals(&self, budget: Option<f64>) -> Residuals {
        Residuals {
            c1: relative_gap(self.r1r, self.rr2),
            c2: relative_gap(self.r2r, self.rr1),
            power: budget.map(|b| (self.power - b).abs() / b),
        }
    }
}

/// `|inflow - outflow| / inflow`, with the inflow floored at 1e-9 so that two
/// vanishing flows count as balanced.
pub fn relative_gap(inflow: f64, outflow: f64) -> f64 {
    (inflow - outflow).abs() / inflow.max(1e-9)
}

/// Index of the largest eligible metric. Ties go to the lowest mode index.
pub fn masked_argmax(metrics: &[f64; 6], eligible: &[bool; 6]) -> Mode {
    let mut best: Option<usize> = None;
    for k in 0..6 {
        if eligible[k] && best.is_none_or(|b| metrics[k] > metrics[b]) {
            best = Some(k);
        }
    }
    Mode::from_index(best.expect("selection mask excludes every mode"))
}
