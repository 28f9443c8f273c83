//! Conventional protocols with a fixed schedule of transmission modes.
//!
//! A conventional protocol shares time between a subset of the modes. In the
//! delay-constrained version the time split is re-optimized in every slot and
//! whatever reaches the relay is forwarded within the same slot. In the
//! delay-unconstrained version one split is used for the whole run and is
//! optimized for the mean capacities, which assumes unlimited buffers. Both
//! problems are linear programs for fixed node powers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::{link_capacities, ChannelState, LinkCapacities, Sample};
use crate::fixed::NodePowers;
use crate::lp::{solve_lp, LinearProgram};
use crate::mode::{Mode, PowerAlloc};
use crate::par::{map_chunks, CHUNK};
use crate::roots::{solve_increasing, Tolerance};
use crate::{check_eta, Error, Result};

/// A set of usable transmission modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeSubset {
    members: [bool; 6],
}

impl ModeSubset {
    pub const ALL: ModeSubset = ModeSubset { members: [true; 6] };
    /// Time-division broadcast: two uplinks, then a broadcast.
    pub const TDBC: ModeSubset = ModeSubset {
        members: [true, true, false, false, false, true],
    };
    /// Traditional four-phase two-way relaying.
    pub const TRADITIONAL: ModeSubset = ModeSubset {
        members: [true, true, false, true, true, false],
    };
    /// Multiple access followed by broadcast.
    pub const MABC: ModeSubset = ModeSubset {
        members: [false, false, true, false, false, true],
    };
    /// Hybrid broadcast: both uplinks and multiple access, then a broadcast.
    pub const HBC: ModeSubset = ModeSubset {
        members: [true, true, true, false, false, true],
    };
    /// The conventional protocols compared against adaptive selection.
    pub const CONVENTIONAL: [ModeSubset; 4] =
        [Self::TDBC, Self::MABC, Self::HBC, Self::TRADITIONAL];

    pub fn new(modes: &[Mode]) -> Result<Self> {
        let mut members = [false; 6];
        for m in modes {
            members[m.index()] = true;
        }
        if !members.iter().any(|&b| b) {
            return Err(Error::invalid("subset", "mode subset is empty"));
        }
        Ok(ModeSubset { members })
    }

    /// Parses a preset name (`all`, `tdbc`, `traditional`, `mabc`, `hbc`) or a
    /// comma-separated list of mode numbers such as `1,2,6`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "all" => return Ok(Self::ALL),
            "tdbc" => return Ok(Self::TDBC),
            "traditional" => return Ok(Self::TRADITIONAL),
            "mabc" => return Ok(Self::MABC),
            "hbc" => return Ok(Self::HBC),
            _ => {}
        }
        let modes = s
            .trim_matches(|c| c == '{' || c == '}')
            .split(',')
            .map(|tok| {
                Mode::parse(tok).ok_or_else(|| {
                    Error::invalid("subset", format!("unknown mode `{}`", tok.trim()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(&modes)
    }

    pub fn contains(&self, mode: Mode) -> bool {
        self.members[mode.index()]
    }

    pub fn modes(&self) -> Vec<Mode> {
        Mode::ALL
            .into_iter()
            .filter(|m| self.contains(*m))
            .collect()
    }
}

impl fmt::Display for ModeSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list: Vec<String> = self
            .modes()
            .iter()
            .map(|m| (m.index() + 1).to_string())
            .collect();
        write!(f, "{{{}}}", list.join(","))
    }
}

/// The capacities that enter the conventional problems. The decoding order
/// does not matter because time sharing between orders is covered by the
/// sum-rate constraint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScheduleCapacities {
    pub c1r: f64,
    pub c2r: f64,
    pub cr: f64,
    pub cr1: f64,
    pub cr2: f64,
}

impl From<&LinkCapacities> for ScheduleCapacities {
    fn from(c: &LinkCapacities) -> Self {
        ScheduleCapacities {
            c1r: c.c1r,
            c2r: c.c2r,
            cr: c.cr,
            cr1: c.cr1,
            cr2: c.cr2,
        }
    }
}

/// Optimal time split and rates of a conventional protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSolution {
    /// Rate from user 1 to user 2, equal to both hops' rates.
    pub r12: f64,
    /// Rate from user 2 to user 1.
    pub r21: f64,
    /// Fraction of time given to each mode.
    pub delta: [f64; 6],
    pub value: f64,
}

impl ConvSolution {
    /// Average transmit powers implied by the time split.
    pub fn consumed_power(&self, p: &NodePowers) -> PowerAlloc {
        let d = &self.delta;
        PowerAlloc {
            p1: p.p1 * (d[0] + d[2]),
            p2: p.p2 * (d[1] + d[2]),
            pr: p.pr * (d[3] + d[4] + d[5]),
        }
    }
}

/// Builds the rate-maximization LP. Variables are the two end-to-end rates
/// followed by the time fractions of the modes in `subset`.
pub fn schedule_lp(
    caps: &ScheduleCapacities,
    eta: f64,
    subset: &ModeSubset,
) -> (LinearProgram, Vec<Mode>) {
    let modes = subset.modes();
    let n = 2 + modes.len();
    let mut objective = vec![0.0; n];
    objective[0] = eta;
    objective[1] = 1.0 - eta;
    let mut lp = LinearProgram::maximize(objective);
    let row = |r12: f64, r21: f64, share: &dyn Fn(Mode) -> f64| {
        let mut v = vec![0.0; n];
        v[0] = r12;
        v[1] = r21;
        for (k, m) in modes.iter().enumerate() {
            v[2 + k] = -share(*m);
        }
        v
    };
    // Uplinks.
    lp.le(
        row(1.0, 0.0, &|m| {
            if matches!(m, Mode::M1 | Mode::M3) {
                caps.c1r
            } else {
                0.0
            }
        }),
        0.0,
    );
    lp.le(
        row(0.0, 1.0, &|m| {
            if matches!(m, Mode::M2 | Mode::M3) {
                caps.c2r
            } else {
                0.0
            }
        }),
        0.0,
    );
    if subset.contains(Mode::M3) {
        lp.le(
            row(1.0, 1.0, &|m| match m {
                Mode::M1 => caps.c1r,
                Mode::M2 => caps.c2r,
                Mode::M3 => caps.cr,
                _ => 0.0,
            }),
            0.0,
        );
    }
    // Downlinks, with each hop carrying the end-to-end rate.
    lp.le(
        row(0.0, 1.0, &|m| {
            if matches!(m, Mode::M4 | Mode::M6) {
                caps.cr1
            } else {
                0.0
            }
        }),
        0.0,
    );
    lp.le(
        row(1.0, 0.0, &|m| {
            if matches!(m, Mode::M5 | Mode::M6) {
                caps.cr2
            } else {
                0.0
            }
        }),
        0.0,
    );
    let mut total = vec![1.0; n];
    total[0] = 0.0;
    total[1] = 0.0;
    lp.equal(total, 1.0);
    (lp, modes)
}

fn solve_schedule(
    caps: &ScheduleCapacities,
    eta: f64,
    subset: &ModeSubset,
) -> Result<ConvSolution> {
    let (lp, modes) = schedule_lp(caps, eta, subset);
    let sol = solve_lp(&lp)?;
    let mut delta = [0.0; 6];
    for (k, m) in modes.iter().enumerate() {
        delta[m.index()] = sol.x[2 + k];
    }
    Ok(ConvSolution {
        r12: sol.x[0],
        r21: sol.x[1],
        delta,
        value: sol.value,
    })
}

/// Optimal time split within one slot for the delay-constrained protocol.
pub fn conv_slot_lp(
    state: &ChannelState,
    eta: f64,
    subset: &ModeSubset,
    powers: &NodePowers,
) -> Result<ConvSolution> {
    check_eta(eta)?;
    let caps = link_capacities(state, powers.p1, powers.p2, powers.pr, 0.0);
    let sol = solve_schedule(&(&caps).into(), eta, subset);
    // The all-zero point is always feasible and the objective is bounded.
    Ok(sol.expect("per-slot schedule LP must be solvable"))
}

/// Optimal constant time split for the delay-unconstrained protocol, given
/// the long-run mean capacities.
pub fn conv_longterm_lp(
    avg: &ScheduleCapacities,
    eta: f64,
    subset: &ModeSubset,
) -> Result<ConvSolution> {
    check_eta(eta)?;
    solve_schedule(avg, eta, subset)
}

/// Sample means of the schedule capacities at fixed powers.
pub fn mean_capacities(sample: &Sample, powers: &NodePowers) -> ScheduleCapacities {
    let parts = map_chunks(sample.len(), CHUNK, |range| {
        let mut acc = ScheduleCapacities::default();
        for i in range {
            let c = link_capacities(&sample.state(i), powers.p1, powers.p2, powers.pr, 0.0);
            acc.c1r += c.c1r;
            acc.c2r += c.c2r;
            acc.cr += c.cr;
            acc.cr1 += c.cr1;
            acc.cr2 += c.cr2;
        }
        acc
    });
    let mut acc = ScheduleCapacities::default();
    for p in &parts {
        acc.c1r += p.c1r;
        acc.c2r += p.c2r;
        acc.cr += p.cr;
        acc.cr1 += p.cr1;
        acc.cr2 += p.cr2;
    }
    let s = 1.0 / sample.len().max(1) as f64;
    ScheduleCapacities {
        c1r: acc.c1r * s,
        c2r: acc.c2r * s,
        cr: acc.cr * s,
        cr1: acc.cr1 * s,
        cr2: acc.cr2 * s,
    }
}

/// How a conventional protocol's time split is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Schedule {
    /// Re-optimized in every slot; no buffering across slots.
    PerSlot,
    /// One split for the whole run; unlimited buffers.
    LongTerm,
}

/// Mean rates and powers of a conventional protocol evaluated over `sample`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvAverages {
    pub r12: f64,
    pub r21: f64,
    pub delta: [f64; 6],
    pub power: PowerAlloc,
}

/// Evaluates a conventional protocol on `sample` at fixed powers.
pub fn conv_averages(
    sample: &Sample,
    eta: f64,
    subset: &ModeSubset,
    powers: &NodePowers,
    schedule: Schedule,
) -> Result<ConvAverages> {
    check_eta(eta)?;
    if sample.is_empty() {
        return Err(Error::invalid("sample", "empty sample"));
    }
    match schedule {
        Schedule::LongTerm => {
            let sol = conv_longterm_lp(&mean_capacities(sample, powers), eta, subset)?;
            Ok(ConvAverages {
                r12: sol.r12,
                r21: sol.r21,
                delta: sol.delta,
                power: sol.consumed_power(powers),
            })
        }
        Schedule::PerSlot => {
            let parts = map_chunks(sample.len(), CHUNK, |range| {
                let mut acc = [0.0; 8];
                for i in range {
                    let sol = conv_slot_lp(&sample.state(i), eta, subset, powers)
                        .expect("eta was checked");
                    acc[0] += sol.r12;
                    acc[1] += sol.r21;
                    for k in 0..6 {
                        acc[2 + k] += sol.delta[k];
                    }
                }
                acc
            });
            let mut acc = [0.0; 8];
            for p in &parts {
                for k in 0..8 {
                    acc[k] += p[k];
                }
            }
            let s = 1.0 / sample.len() as f64;
            let mut delta = [0.0; 6];
            for k in 0..6 {
                delta[k] = acc[2 + k] * s;
            }
            let sol = ConvSolution {
                r12: acc[0] * s,
                r21: acc[1] * s,
                delta,
                value: 0.0,
            };
            Ok(ConvAverages {
                r12: sol.r12,
                r21: sol.r21,
                delta,
                power: sol.consumed_power(powers),
            })
        }
    }
}

/// Relative accuracy of [`equal_power_for_budget`].
pub const BUDGET_TOLERANCE: f64 = 5e-3;

/// The common node power `P` at which a conventional protocol with
/// `P1 = P2 = Pr = P` consumes the total average budget `total_power`.
///
/// At most two nodes transmit at once, so the answer lies in
/// `[total_power / 2, total_power]`.
pub fn equal_power_for_budget(
    total_power: f64,
    sample: &Sample,
    subset: &ModeSubset,
    eta: f64,
    schedule: Schedule,
) -> Result<f64> {
    if !(total_power > 0.0 && total_power.is_finite()) {
        return Err(Error::invalid(
            "total_power",
            format!("{total_power} must be positive"),
        ));
    }
    check_eta(eta)?;
    let consumed = |p: f64| -> f64 {
        let avg = conv_averages(sample, eta, subset, &NodePowers::equal(p), schedule)
            .expect("inputs were checked");
        avg.power.total()
    };
    if !subset.contains(Mode::M3) {
        // One node transmits at any time.
        return Ok(total_power);
    }
    let root = solve_increasing(
        |p| consumed(p) - total_power,
        0.5 * total_power,
        total_power,
        Some(0.75 * total_power),
        Tolerance {
            ftol: 0.1 * BUDGET_TOLERANCE * total_power,
            xtol: 1e-9 * total_power,
            max_evals: 80,
        },
    );
    Ok(root.x)
}
