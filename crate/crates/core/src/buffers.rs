//! Relay buffer state, the capacity and power adjustments used for
//! delay-constrained operation, FIFO delay measurement and buffer sizing.
//!
//! Buffer 1 holds information sent by user 1 and destined for user 2, buffer
//! 2 the reverse. A link that fills a buffer cannot carry more than the free
//! space, and a link that drains a buffer cannot carry more than its content.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::{snr_for_rate, ChannelState, LinkCapacities};
use crate::mode::{Mode, ModeCapacities, ModeDecision, ModePowers};
use crate::{Error, Result};

/// Slack allowed when checking queue bounds after an update.
pub const QUEUE_TOLERANCE: f64 = 1e-9;

/// Content and size of the two relay buffers, in bits per symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferState {
    pub q1: f64,
    pub q2: f64,
    pub q1max: f64,
    pub q2max: f64,
}

impl BufferState {
    /// Empty buffers of unlimited size.
    pub fn unbounded() -> Self {
        BufferState {
            q1: 0.0,
            q2: 0.0,
            q1max: f64::INFINITY,
            q2max: f64::INFINITY,
        }
    }

    /// Empty buffers of the given sizes.
    pub fn new(q1max: f64, q2max: f64) -> Result<Self> {
        Self::with_content(0.0, 0.0, q1max, q2max)
    }

    pub fn with_content(q1: f64, q2: f64, q1max: f64, q2max: f64) -> Result<Self> {
        for (name, size) in [("q1max", q1max), ("q2max", q2max)] {
            if size.is_nan() || size <= 0.0 {
                return Err(Error::invalid(
                    name,
                    format!("buffer size {size} must be positive"),
                ));
            }
        }
        if !(0.0..=q1max).contains(&q1) {
            return Err(Error::invalid(
                "q1",
                format!("{q1} is outside [0, {q1max}]"),
            ));
        }
        if !(0.0..=q2max).contains(&q2) {
            return Err(Error::invalid(
                "q2",
                format!("{q2} is outside [0, {q2max}]"),
            ));
        }
        Ok(BufferState {
            q1,
            q2,
            q1max,
            q2max,
        })
    }

    pub fn is_bounded(&self) -> bool {
        self.q1max.is_finite() || self.q2max.is_finite()
    }

    pub fn space1(&self) -> f64 {
        (self.q1max - self.q1).max(0.0)
    }

    pub fn space2(&self) -> f64 {
        (self.q2max - self.q2).max(0.0)
    }
}

/// Capacities clipped to the free space (links into the relay) or to the
/// buffered content (links out of the relay). The multiple-access sum `cr`
/// is left as is, so the decomposition identity no longer holds afterwards.
pub fn virtual_capacities(caps: &LinkCapacities, buf: &BufferState) -> LinkCapacities {
    let (space1, space2) = (buf.space1(), buf.space2());
    LinkCapacities {
        c1r: caps.c1r.min(space1),
        c2r: caps.c2r.min(space2),
        cr: caps.cr,
        c12r: caps.c12r.min(space1),
        c21r: caps.c21r.min(space2),
        cr1: caps.cr1.min(buf.q2),
        cr2: caps.cr2.min(buf.q1),
    }
}

/// [`virtual_capacities`] applied to every mode's own capacities.
pub fn virtual_mode_capacities(caps: &ModeCapacities, buf: &BufferState) -> ModeCapacities {
    let (space1, space2) = (buf.space1(), buf.space2());
    ModeCapacities {
        c1r_m1: caps.c1r_m1.min(space1),
        c2r_m2: caps.c2r_m2.min(space2),
        c12r_m3: caps.c12r_m3.min(space1),
        c21r_m3: caps.c21r_m3.min(space2),
        cr1_m4: caps.cr1_m4.min(buf.q2),
        cr2_m5: caps.cr2_m5.min(buf.q1),
        cr1_m6: caps.cr1_m6.min(buf.q2),
        cr2_m6: caps.cr2_m6.min(buf.q1),
    }
}

/// Power that supports `rate` over a link with squared gain `gain`.
///
/// # Panics
/// If a positive rate is requested over a link with zero gain.
fn invert(rate: f64, gain: f64) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    assert!(
        gain > 0.0,
        "positive rate {rate} requested over a dead link"
    );
    snr_for_rate(rate) / gain
}

/// Transmit powers that exactly carry the rates `(c12r, c21r)` in the
/// multiple-access mode with decoding order `t`.
fn mac_inversion(state: &ChannelState, c12r: f64, c21r: f64, t: u8) -> (f64, f64) {
    let (snr12, snr21) = (snr_for_rate(c12r.max(0.0)), snr_for_rate(c21r.max(0.0)));
    // The user decoded first sees the other as noise.
    let (x1, x2) = if t == 0 {
        ((1.0 + snr21) * snr12, snr21)
    } else {
        (snr12, (1.0 + snr12) * snr21)
    };
    (invert_snr(x1, state.s1), invert_snr(x2, state.s2))
}

fn invert_snr(snr: f64, gain: f64) -> f64 {
    if snr <= 0.0 {
        return 0.0;
    }
    assert!(gain > 0.0, "positive rate requested over a dead link");
    snr / gain
}

/// Powers that carry the virtual rates of [`virtual_capacities`], with every
/// mode using the single link capacities `vcaps`.
pub fn modified_powers(state: &ChannelState, vcaps: &LinkCapacities, t: u8) -> ModePowers {
    modified_mode_powers(state, &ModeCapacities::from_links(vcaps), t)
}

/// Powers that carry each mode's virtual rates. The broadcast mode uses the
/// larger of the two powers its receivers need.
pub fn modified_mode_powers(state: &ChannelState, vcaps: &ModeCapacities, t: u8) -> ModePowers {
    let (p1_m3, p2_m3) = mac_inversion(state, vcaps.c12r_m3, vcaps.c21r_m3, t);
    ModePowers {
        p1_m1: invert(vcaps.c1r_m1, state.s1),
        p2_m2: invert(vcaps.c2r_m2, state.s2),
        p1_m3,
        p2_m3,
        pr_m4: invert(vcaps.cr1_m4, state.s1),
        pr_m5: invert(vcaps.cr2_m5, state.s2),
        pr_m6: invert(vcaps.cr1_m6, state.s1).max(invert(vcaps.cr2_m6, state.s2)),
    }
}

/// Queue update for one slot.
///
/// # Panics
/// If the decision would take a queue outside `[0, qmax]` by more than
/// [`QUEUE_TOLERANCE`], which means the protocol ignored the buffer state.
pub fn apply_decision(buf: &BufferState, d: &ModeDecision) -> BufferState {
    let q1 = buf.q1 + d.r1r - d.rr2;
    let q2 = buf.q2 + d.r2r - d.rr1;
    assert!(
        q1 >= -QUEUE_TOLERANCE && q1 <= buf.q1max + QUEUE_TOLERANCE,
        "buffer 1 left its bounds: {q1} after {:?}",
        d.mode
    );
    assert!(
        q2 >= -QUEUE_TOLERANCE && q2 <= buf.q2max + QUEUE_TOLERANCE,
        "buffer 2 left its bounds: {q2} after {:?}",
        d.mode
    );
    BufferState {
        q1: q1.clamp(0.0, buf.q1max),
        q2: q2.clamp(0.0, buf.q2max),
        ..*buf
    }
}

/// Whether `mode` puts information into buffer 1 or 2, as `(into1, into2)`.
pub fn fills(mode: Mode) -> (bool, bool) {
    match mode {
        Mode::M1 => (true, false),
        Mode::M2 => (false, true),
        Mode::M3 => (true, true),
        _ => (false, false),
    }
}

/// Fluid FIFO bookkeeping of one buffer. Information leaves in arrival order
/// and each departing amount is charged the number of slots since it
/// arrived. Only information that arrives at or after `start_slot` is
/// charged, which excludes a warm-up period.
#[derive(Debug, Clone, Default)]
pub struct FifoDelay {
    batches: VecDeque<(u64, f64)>,
    start_slot: u64,
    delivered: f64,
    weighted_delay: f64,
}

impl FifoDelay {
    pub fn new(start_slot: u64) -> Self {
        FifoDelay {
            start_slot,
            ..Default::default()
        }
    }

    pub fn arrive(&mut self, slot: u64, amount: f64) {
        if amount > 0.0 {
            self.batches.push_back((slot, amount));
        }
    }

    pub fn depart(&mut self, slot: u64, mut amount: f64) {
        while amount > 0.0 {
            let Some(front) = self.batches.front_mut() else {
                break;
            };
            let take = front.1.min(amount);
            if front.0 >= self.start_slot {
                self.delivered += take;
                self.weighted_delay += take * (slot - front.0) as f64;
            }
            front.1 -= take;
            amount -= take;
            if front.1 <= 0.0 {
                self.batches.pop_front();
            }
        }
    }

    /// Mean delay in slots of the charged information, if any was delivered.
    pub fn mean_delay(&self) -> Option<f64> {
        (self.delivered > 0.0).then(|| self.weighted_delay / self.delivered)
    }
}

/// Outcome of [`size_buffers_for_delay`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferSizing {
    pub kappa: f64,
    pub q1max: f64,
    pub q2max: f64,
    pub delay1: f64,
    pub delay2: f64,
    pub runs: usize,
}

/// Relative accuracy the sizing search aims for on the mean of both delays.
pub const SIZING_TOLERANCE: f64 = 0.05;

/// Smallest buffer scale the sizing search tries.
pub const MIN_KAPPA: f64 = 1.0 / 64.0;

/// Finds a common scale `kappa` such that buffers of sizes
/// `kappa * scale.0` and `kappa * scale.1` give a mean delay of
/// `target_delay` slots, averaged over both directions.
///
/// `run` simulates the delay-constrained protocol with the given buffer
/// sizes and returns the two measured delays. The delay grows with the
/// buffer size, so the search doubles `kappa` until it brackets the target
/// and then bisects in log space.
pub fn size_buffers_for_delay<F>(
    target_delay: f64,
    scale: (f64, f64),
    mut run: F,
) -> Result<BufferSizing>
where
    F: FnMut(f64, f64) -> (f64, f64),
{
    if !(target_delay > 1.0 && target_delay.is_finite()) {
        return Err(Error::invalid(
            "target_delay",
            format!("{target_delay} must exceed one slot"),
        ));
    }
    if !(scale.0 > 0.0 && scale.1 > 0.0) {
        return Err(Error::invalid("scale", "buffer scales must be positive"));
    }
    let mut runs = 0;
    let mut eval = |kappa: f64| {
        runs += 1;
        let (d1, d2) = run(kappa * scale.0, kappa * scale.1);
        (0.5 * (d1 + d2), d1, d2)
    };
    let sizing = |kappa: f64, d1: f64, d2: f64, runs: usize| BufferSizing {
        kappa,
        q1max: kappa * scale.0,
        q2max: kappa * scale.1,
        delay1: d1,
        delay2: d2,
        runs,
    };
    let close = |mean: f64| (mean - target_delay).abs() <= SIZING_TOLERANCE * target_delay;

    let (mut lo, mut hi) = (MIN_KAPPA, 1.0);
    let mut at = eval(hi);
    if at.0 > target_delay {
        let floor = eval(lo);
        if floor.0 > target_delay && !close(floor.0) {
            return Err(Error::DelayUnreachable {
                target: target_delay,
                floor: floor.0,
            });
        }
    } else {
        while at.0 < target_delay && !close(at.0) {
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::invalid(
                    "target_delay",
                    "delay does not grow with the buffer size",
                ));
            }
            at = eval(hi);
        }
    }
    let mut best = (hi, at);
    for _ in 0..60 {
        if close(best.1 .0) {
            break;
        }
        let mid = (lo * hi).sqrt();
        let m = eval(mid);
        if (m.0 - target_delay).abs() < (best.1 .0 - target_delay).abs() {
            best = (mid, m);
        }
        if m.0 < target_delay {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-9 {
            break;
        }
    }
    let (kappa, (_, d1, d2)) = best;
    Ok(sizing(kappa, d1, d2, runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::capacity;
    use crate::mode::PowerAlloc;

    fn caps() -> LinkCapacities {
        LinkCapacities {
            c1r: 2.0,
            c2r: 1.0,
            cr: 2.5,
            c12r: 1.5,
            c21r: 1.0,
            cr1: 3.0,
            cr2: 2.0,
        }
    }

    #[test]
    fn empty_buffer_starves_its_output() {
        let buf = BufferState::with_content(0.0, 5.0, 10.0, 10.0).unwrap();
        let v = virtual_capacities(&caps(), &buf);
        assert_eq!(v.cr2, 0.0);
        assert_eq!(v.cr1, 3.0);
    }

    #[test]
    fn full_buffer_blocks_its_input() {
        let buf = BufferState::with_content(4.0, 0.0, 4.0, 10.0).unwrap();
        let v = virtual_capacities(&caps(), &buf);
        assert_eq!(v.c1r, 0.0);
        assert_eq!(v.c12r, 0.0);
    }

    #[test]
    fn partial_space_clips_input() {
        let buf = BufferState::with_content(3.0, 0.0, 4.0, 10.0).unwrap();
        assert_eq!(virtual_capacities(&caps(), &buf).c1r, 1.0);
    }

    #[test]
    fn modified_power_hand_values() {
        let st = ChannelState::new(2.0, 1.0);
        let v = LinkCapacities {
            c1r: 1.0,
            ..Default::default()
        };
        assert!((modified_powers(&st, &v, 0).p1_m1 - 0.5).abs() < 1e-12);

        let st = ChannelState::new(1.0, 1.0);
        let v = ModeCapacities {
            c12r_m3: 1.0,
            c21r_m3: 1.0,
            ..Default::default()
        };
        assert!((modified_mode_powers(&st, &v, 0).p1_m3 - 2.0).abs() < 1e-12);

        let st = ChannelState::new(1.0, 3.0);
        let v = ModeCapacities {
            cr1_m6: 1.0,
            cr2_m6: 2.0,
            ..Default::default()
        };
        let p = modified_mode_powers(&st, &v, 0).pr_m6;
        assert!((p - 1.0).abs() < 1e-12);
        assert!(capacity(p * 1.0) >= 1.0 - 1e-12 && capacity(p * 3.0) >= 2.0 - 1e-12);
    }

    fn decision(mode: Mode, r: [f64; 4]) -> ModeDecision {
        ModeDecision {
            mode,
            t: 0,
            powers: PowerAlloc::default(),
            r1r: r[0],
            r2r: r[1],
            rr1: r[2],
            rr2: r[3],
        }
    }

    #[test]
    fn queue_updates() {
        let b = BufferState::unbounded();
        let b = apply_decision(&b, &decision(Mode::M1, [1.2, 0.0, 0.0, 0.0]));
        assert_eq!((b.q1, b.q2), (1.2, 0.0));
        let b = apply_decision(&b, &decision(Mode::M3, [0.3, 0.9, 0.0, 0.0]));
        assert!((b.q1 - 1.5).abs() < 1e-12 && (b.q2 - 0.9).abs() < 1e-12);
        let b = apply_decision(&b, &decision(Mode::M6, [0.0, 0.0, 0.4, 0.7]));
        assert!((b.q1 - 0.8).abs() < 1e-12 && (b.q2 - 0.5).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn overdraw_is_a_bug() {
        apply_decision(
            &BufferState::unbounded(),
            &decision(Mode::M5, [0.0, 0.0, 0.0, 0.1]),
        );
    }

    #[test]
    fn fifo_charges_waiting_slots() {
        let mut f = FifoDelay::new(0);
        f.arrive(0, 1.0);
        f.arrive(1, 1.0);
        f.depart(3, 1.5);
        f.depart(4, 0.5);
        // 1.0 waits 3 slots, 0.5 waits 2, 0.5 waits 3.
        assert!((f.mean_delay().unwrap() - (3.0 + 1.0 + 1.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn fifo_skips_warm_up_arrivals() {
        let mut f = FifoDelay::new(5);
        f.arrive(1, 1.0);
        f.arrive(6, 1.0);
        f.depart(8, 2.0);
        assert_eq!(f.mean_delay(), Some(2.0));
    }

    #[test]
    fn sizing_finds_linear_target() {
        // Delay grows like 1 + 2 kappa.
        let s = size_buffers_for_delay(10.0, (1.0, 2.0), |a, _| (1.0 + 2.0 * a, 1.0 + 2.0 * a))
            .unwrap();
        assert!((s.delay1 - 10.0).abs() <= 0.5);
        assert!((s.q2max - 2.0 * s.q1max).abs() < 1e-12);
    }

    #[test]
    fn sizing_reports_floor() {
        let r = size_buffers_for_delay(1.5, (1.0, 1.0), |_, _| (3.0, 3.0));
        match r {
            Err(Error::DelayUnreachable { floor, .. }) => assert_eq!(floor, 3.0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
