//! Slot-level Monte Carlo simulation of every protocol.
//!
//! A run draws one channel state and one set of coin uniforms per slot from
//! streams addressed by the run seed, asks the protocol for a decision,
//! updates the relay buffers and accumulates long-run averages. Runs are
//! sequential because the buffers chain the slots together. Independent runs
//! can be spread over threads with [`run_many`].

use serde::{Deserialize, Serialize};

use crate::benchmarks::{conv_longterm_lp, conv_slot_lp, ModeSubset, ScheduleCapacities};
use crate::buffers::{apply_decision, BufferState, FifoDelay};
use crate::channel::{link_capacities, ChannelStream, CoinStream, FadingConfig, STREAM_SIMULATION};
use crate::fixed::{select_mode_fixed, select_mode_fixed_delay, FixedWeights, NodePowers};
use crate::joint::{select_mode, select_mode_delay, JointWeights};
use crate::mode::{relative_gap, ModeDecision};
use crate::par::{map_chunks, map_items};
use crate::{check_eta, Error, Result};

/// Fraction of the slots at the start of a run excluded from delay
/// statistics while the buffers fill up.
pub const WARM_UP_FRACTION: f64 = 0.01;

/// Slots per work item when per-slot benchmark problems are solved in
/// parallel.
const SLOT_CHUNK: usize = 2048;

/// The decision rule of a protocol together with its calibrated parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Joint {
        eta: f64,
        weights: JointWeights,
    },
    Fixed {
        eta: f64,
        weights: FixedWeights,
        powers: NodePowers,
    },
    /// Conventional protocol re-optimized in every slot.
    ConvSlot {
        eta: f64,
        subset: ModeSubset,
        powers: NodePowers,
    },
    /// Conventional protocol with one time split for the whole run.
    ConvLongTerm {
        eta: f64,
        subset: ModeSubset,
        powers: NodePowers,
    },
}

impl Policy {
    pub fn eta(&self) -> f64 {
        match self {
            Policy::Joint { eta, .. }
            | Policy::Fixed { eta, .. }
            | Policy::ConvSlot { eta, .. }
            | Policy::ConvLongTerm { eta, .. } => *eta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolKind {
    JointAms,
    FixedAms,
    JointAmsDelayConstrained,
    FixedAmsDelayConstrained,
    ConvSlotLp,
    ConvLongTermLp,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::JointAms => "joint-ams",
            ProtocolKind::FixedAms => "fixed-ams",
            ProtocolKind::JointAmsDelayConstrained => "joint-ams-delay",
            ProtocolKind::FixedAmsDelayConstrained => "fixed-ams-delay",
            ProtocolKind::ConvSlotLp => "conv-slot",
            ProtocolKind::ConvLongTermLp => "conv-longterm",
        }
    }
}

/// A protocol ready to run: the policy and, for the delay-constrained
/// variants of the adaptive protocols, the buffer sizes `(q1max, q2max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolHandle {
    pub policy: Policy,
    pub buffers: Option<(f64, f64)>,
}

impl ProtocolHandle {
    pub fn unbounded(policy: Policy) -> Self {
        ProtocolHandle {
            policy,
            buffers: None,
        }
    }

    pub fn with_buffers(policy: Policy, q1max: f64, q2max: f64) -> Self {
        ProtocolHandle {
            policy,
            buffers: Some((q1max, q2max)),
        }
    }

    pub fn kind(&self) -> ProtocolKind {
        match (&self.policy, self.buffers.is_some()) {
            (Policy::Joint { .. }, false) => ProtocolKind::JointAms,
            (Policy::Joint { .. }, true) => ProtocolKind::JointAmsDelayConstrained,
            (Policy::Fixed { .. }, false) => ProtocolKind::FixedAms,
            (Policy::Fixed { .. }, true) => ProtocolKind::FixedAmsDelayConstrained,
            (Policy::ConvSlot { .. }, _) => ProtocolKind::ConvSlotLp,
            (Policy::ConvLongTerm { .. }, _) => ProtocolKind::ConvLongTermLp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_eta(self.policy.eta())?;
        match &self.policy {
            Policy::Joint { eta, weights } => weights.validate(*eta)?,
            Policy::Fixed {
                eta,
                weights,
                powers,
            } => {
                weights.validate(*eta)?;
                powers.validate()?;
            }
            Policy::ConvSlot { powers, .. } | Policy::ConvLongTerm { powers, .. } => {
                powers.validate()?
            }
        }
        if let Some((a, b)) = self.buffers {
            BufferState::new(a, b)?;
            if matches!(
                self.policy,
                Policy::ConvSlot { .. } | Policy::ConvLongTerm { .. }
            ) {
                return Err(Error::invalid(
                    "buffers",
                    "conventional protocols take no buffer sizes",
                ));
            }
        }
        Ok(())
    }
}

/// Long-run averages of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    /// End-to-end rate from user 1 to user 2, the outflow of buffer 1.
    pub r12: f64,
    /// End-to-end rate from user 2 to user 1, the outflow of buffer 2.
    pub r21: f64,
    pub r1r: f64,
    pub r2r: f64,
    pub rr1: f64,
    pub rr2: f64,
    pub pbar1: f64,
    pub pbar2: f64,
    pub pbarr: f64,
    pub mode_freq: [f64; 6],
    pub mean_q1: f64,
    pub mean_q2: f64,
    /// Little's-law delay of buffer 1 in slots; absent without inflow or for
    /// protocols that do not model the buffers slot by slot.
    pub delay1: Option<f64>,
    pub delay2: Option<f64>,
    /// Mean delay measured by fluid FIFO accounting.
    pub fifo_delay1: Option<f64>,
    pub fifo_delay2: Option<f64>,
    pub final_q1: f64,
    pub final_q2: f64,
    pub n_slots: u64,
}

impl SimStats {
    pub fn pbar_total(&self) -> f64 {
        self.pbar1 + self.pbar2 + self.pbarr
    }

    pub fn weighted_sum(&self, eta: f64) -> f64 {
        eta * self.r12 + (1.0 - eta) * self.r21
    }

    /// Relative imbalance of buffer 1: `|R1r - Rr2| / R1r`.
    pub fn residual_c1(&self) -> f64 {
        relative_gap(self.r1r, self.rr2)
    }

    /// Relative imbalance of buffer 2: `|R2r - Rr1| / R2r`.
    pub fn residual_c2(&self) -> f64 {
        relative_gap(self.r2r, self.rr1)
    }
}

/// Mean delay by Little's law. `None` without inflow.
pub fn littles_delay(mean_q: f64, mean_inflow_rate: f64) -> Option<f64> {
    (mean_inflow_rate > 0.0).then(|| mean_q / mean_inflow_rate)
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

#[derive(Debug, Clone, Default)]
struct Accumulators {
    r1r: Kahan,
    r2r: Kahan,
    rr1: Kahan,
    rr2: Kahan,
    p1: Kahan,
    p2: Kahan,
    pr: Kahan,
    modes: [u64; 6],
    // Post-warm-up sums for the delay statistics.
    q1: Kahan,
    q2: Kahan,
    in1: Kahan,
    in2: Kahan,
    steady_slots: u64,
}

/// Simulates `n_slots` slots of the protocol over the channel described by
/// `config`, with all randomness derived from `seed`.
pub fn run_sim(
    handle: &ProtocolHandle,
    config: &FadingConfig,
    n_slots: u64,
    seed: u64,
) -> Result<SimStats> {
    handle.validate()?;
    config.validate()?;
    if n_slots == 0 {
        return Err(Error::invalid("n_slots", "must be at least one"));
    }
    let config = config.with_seed(seed);
    match &handle.policy {
        Policy::ConvSlot {
            eta,
            subset,
            powers,
        } => Ok(run_conv_slot(&config, *eta, subset, powers, n_slots)),
        Policy::ConvLongTerm {
            eta,
            subset,
            powers,
        } => run_conv_longterm(&config, *eta, subset, powers, n_slots),
        _ => Ok(run_adaptive(handle, &config, n_slots, seed)),
    }
}

fn run_adaptive(
    handle: &ProtocolHandle,
    config: &FadingConfig,
    n_slots: u64,
    seed: u64,
) -> SimStats {
    let mut channel = ChannelStream::new(config, STREAM_SIMULATION);
    let mut coins = CoinStream::new(seed);
    let mut buf = match handle.buffers {
        Some((a, b)) => BufferState::new(a, b).expect("validated"),
        None => BufferState::unbounded(),
    };
    let bounded = handle.buffers.is_some();
    let warm_up = (WARM_UP_FRACTION * n_slots as f64).floor() as u64;
    let mut fifo1 = FifoDelay::new(warm_up);
    let mut fifo2 = FifoDelay::new(warm_up);
    let mut acc = Accumulators::default();

    for slot in 0..n_slots {
        let state = channel.next_state();
        let c = coins.next_coins();
        let mut d: ModeDecision = match (&handle.policy, bounded) {
            (Policy::Joint { eta, weights }, false) => select_mode(&state, weights, *eta, &c),
            (Policy::Joint { eta, weights }, true) => {
                select_mode_delay(&state, weights, *eta, &c, &buf)
            }
            (
                Policy::Fixed {
                    eta,
                    weights,
                    powers,
                },
                false,
            ) => select_mode_fixed(&state, weights, *eta, powers, &c),
            (
                Policy::Fixed {
                    eta,
                    weights,
                    powers,
                },
                true,
            ) => select_mode_fixed_delay(&state, weights, *eta, powers, &c, &buf),
            _ => unreachable!("conventional protocols are simulated separately"),
        };
        // The relay cannot send more than it holds.
        d.rr1 = d.rr1.min(buf.q2);
        d.rr2 = d.rr2.min(buf.q1);

        fifo1.depart(slot, d.rr2);
        fifo2.depart(slot, d.rr1);
        fifo1.arrive(slot, d.r1r);
        fifo2.arrive(slot, d.r2r);
        buf = apply_decision(&buf, &d);

        acc.r1r.add(d.r1r);
        acc.r2r.add(d.r2r);
        acc.rr1.add(d.rr1);
        acc.rr2.add(d.rr2);
        acc.p1.add(d.powers.p1);
        acc.p2.add(d.powers.p2);
        acc.pr.add(d.powers.pr);
        acc.modes[d.mode.index()] += 1;
        if slot >= warm_up {
            acc.q1.add(buf.q1);
            acc.q2.add(buf.q2);
            acc.in1.add(d.r1r);
            acc.in2.add(d.r2r);
            acc.steady_slots += 1;
        }
    }

    let n = n_slots as f64;
    let steady = acc.steady_slots as f64;
    let (mean_q1, mean_q2) = (acc.q1.value() / steady, acc.q2.value() / steady);
    let mode_freq = std::array::from_fn(|k| acc.modes[k] as f64 / n);
    SimStats {
        r12: acc.rr2.value() / n,
        r21: acc.rr1.value() / n,
        r1r: acc.r1r.value() / n,
        r2r: acc.r2r.value() / n,
        rr1: acc.rr1.value() / n,
        rr2: acc.rr2.value() / n,
        pbar1: acc.p1.value() / n,
        pbar2: acc.p2.value() / n,
        pbarr: acc.pr.value() / n,
        mode_freq,
        mean_q1,
        mean_q2,
        delay1: littles_delay(mean_q1, acc.in1.value() / steady),
        delay2: littles_delay(mean_q2, acc.in2.value() / steady),
        fifo_delay1: fifo1.mean_delay(),
        fifo_delay2: fifo2.mean_delay(),
        final_q1: buf.q1,
        final_q2: buf.q2,
        n_slots,
    }
}

/// Per-slot conventional protocol: everything received in a slot is
/// forwarded within it, so the buffers stay empty and the delay is zero.
fn run_conv_slot(
    config: &FadingConfig,
    eta: f64,
    subset: &ModeSubset,
    powers: &NodePowers,
    n_slots: u64,
) -> SimStats {
    let parts = map_chunks(n_slots as usize, SLOT_CHUNK, |range| {
        let mut channel = ChannelStream::new(config, STREAM_SIMULATION);
        channel.seek(range.start as u64);
        let mut acc = [0.0; 11];
        for _ in range {
            let sol = conv_slot_lp(&channel.next_state(), eta, subset, powers)
                .expect("eta was validated");
            let p = sol.consumed_power(powers);
            acc[0] += sol.r12;
            acc[1] += sol.r21;
            acc[2] += p.p1;
            acc[3] += p.p2;
            acc[4] += p.pr;
            for k in 0..6 {
                acc[5 + k] += sol.delta[k];
            }
        }
        acc
    });
    let mut acc = [Kahan::default(); 11];
    for part in &parts {
        for (a, v) in acc.iter_mut().zip(part) {
            a.add(*v);
        }
    }
    let n = n_slots as f64;
    let v = |k: usize| acc[k].value() / n;
    let mode_freq = std::array::from_fn(|k| v(5 + k));
    SimStats {
        r12: v(0),
        r21: v(1),
        r1r: v(0),
        r2r: v(1),
        rr1: v(1),
        rr2: v(0),
        pbar1: v(2),
        pbar2: v(3),
        pbarr: v(4),
        mode_freq,
        mean_q1: 0.0,
        mean_q2: 0.0,
        delay1: Some(0.0),
        delay2: Some(0.0),
        fifo_delay1: None,
        fifo_delay2: None,
        final_q1: 0.0,
        final_q2: 0.0,
        n_slots,
    }
}

/// Long-term conventional protocol: the time split is optimized for the
/// capacities averaged over this run's channel draws and the statistics are
/// the resulting long-run averages. Queue lengths and delays are not
/// modelled because the schedule ignores the buffer state.
fn run_conv_longterm(
    config: &FadingConfig,
    eta: f64,
    subset: &ModeSubset,
    powers: &NodePowers,
    n_slots: u64,
) -> Result<SimStats> {
    let parts = map_chunks(n_slots as usize, SLOT_CHUNK, |range| {
        let mut channel = ChannelStream::new(config, STREAM_SIMULATION);
        channel.seek(range.start as u64);
        let mut acc = [0.0; 5];
        for _ in range {
            let c = link_capacities(&channel.next_state(), powers.p1, powers.p2, powers.pr, 0.0);
            acc[0] += c.c1r;
            acc[1] += c.c2r;
            acc[2] += c.cr;
            acc[3] += c.cr1;
            acc[4] += c.cr2;
        }
        acc
    });
    let mut acc = [Kahan::default(); 5];
    for part in &parts {
        for (a, v) in acc.iter_mut().zip(part) {
            a.add(*v);
        }
    }
    let n = n_slots as f64;
    let avg = ScheduleCapacities {
        c1r: acc[0].value() / n,
        c2r: acc[1].value() / n,
        cr: acc[2].value() / n,
        cr1: acc[3].value() / n,
        cr2: acc[4].value() / n,
    };
    let sol = conv_longterm_lp(&avg, eta, subset)?;
    let p = sol.consumed_power(powers);
    Ok(SimStats {
        r12: sol.r12,
        r21: sol.r21,
        r1r: sol.r12,
        r2r: sol.r21,
        rr1: sol.r21,
        rr2: sol.r12,
        pbar1: p.p1,
        pbar2: p.p2,
        pbarr: p.pr,
        mode_freq: sol.delta,
        mean_q1: 0.0,
        mean_q2: 0.0,
        delay1: None,
        delay2: None,
        fifo_delay1: None,
        fifo_delay2: None,
        final_q1: 0.0,
        final_q2: 0.0,
        n_slots,
    })
}

/// Runs independent simulations, in parallel when the `parallel` feature
/// is on. Results are returned in input order.
pub fn run_many(
    jobs: &[(ProtocolHandle, u64)],
    config: &FadingConfig,
    n_slots: u64,
) -> Vec<Result<SimStats>> {
    map_items(jobs, |(h, seed)| run_sim(h, config, n_slots, *seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::{CaseTag, FixedRegion};

    fn fixed_handle() -> ProtocolHandle {
        let weights = FixedWeights {
            mu1: 0.15,
            mu2: 0.15,
            p1: 1.0,
            p2: 1.0,
            p3: 1.0,
            p4: 1.0,
            p5: None,
            p6: 0.5,
            region: FixedRegion::S0,
            case_tag: CaseTag::Case1,
        };
        ProtocolHandle::unbounded(Policy::Fixed {
            eta: 0.5,
            weights,
            powers: NodePowers::equal(10.0),
        })
    }

    #[test]
    fn littles_law_cases() {
        assert_eq!(littles_delay(2.0, 0.5), Some(4.0));
        assert_eq!(littles_delay(0.0, 0.5), Some(0.0));
        assert_eq!(littles_delay(1.0, 0.0), None);
    }

    #[test]
    fn single_slot_run() {
        let cfg = FadingConfig::symmetric(1);
        let s = run_sim(&fixed_handle(), &cfg, 1, 5).unwrap();
        assert_eq!(s.mode_freq.iter().sum::<f64>(), 1.0);
        // An empty relay cannot forward anything in the first slot.
        assert_eq!(s.r12 + s.r21, 0.0);
        assert!((s.final_q1 - s.r1r).abs() < 1e-12);
    }

    #[test]
    fn runs_are_deterministic_and_seeded() {
        let cfg = FadingConfig::symmetric(1);
        let a = run_sim(&fixed_handle(), &cfg, 5000, 7).unwrap();
        let b = run_sim(&fixed_handle(), &cfg, 5000, 7).unwrap();
        let c = run_sim(&fixed_handle(), &cfg, 5000, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn conservation_audit() {
        let cfg = FadingConfig::symmetric(1);
        let s = run_sim(&fixed_handle(), &cfg, 20_000, 3).unwrap();
        let n = s.n_slots as f64;
        assert!((s.final_q1 - n * (s.r1r - s.rr2)).abs() < 1e-6);
        assert!((s.final_q2 - n * (s.r2r - s.rr1)).abs() < 1e-6);
    }

    #[test]
    fn buffers_rejected_for_conventional() {
        let h = ProtocolHandle::with_buffers(
            Policy::ConvSlot {
                eta: 0.5,
                subset: ModeSubset::ALL,
                powers: NodePowers::equal(10.0),
            },
            1.0,
            1.0,
        );
        assert!(h.validate().is_err());
    }
}
