//! Block-fading channel model and instantaneous link capacities.
//!
//! Squared gains are exponential (Rayleigh amplitude). Draws come from a
//! ChaCha8 keystream addressed by slot index, so the state of slot `i` is a
//! pure function of `(seed, stream, i)`. Calibration, simulation and the coin
//! flips of the policies use separate streams; the same seed therefore gives
//! common random numbers across protocols without correlating the calibration
//! sample with an evaluation run.

use std::f64::consts::LN_2;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::par;
use crate::{Error, Result};

/// Keystream used by [`crate::sim::run_sim`] for channel states.
pub const STREAM_SIMULATION: u64 = 0;
/// Keystream used for per-slot coin flips.
pub const STREAM_COINS: u64 = 1;
/// Keystream used for calibration samples.
pub const STREAM_CALIBRATION: u64 = 2;

const WORDS_PER_STATE: u128 = 4;
/// Number of uniforms reserved per slot in the coin stream.
pub const COINS_PER_SLOT: usize = 6;
const WORDS_PER_COINS: u128 = 2 * COINS_PER_SLOT as u128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Distribution {
    /// Rayleigh amplitude, exponential power gain.
    #[default]
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingConfig {
    /// Mean of the user 1 to relay squared gain.
    pub omega1: f64,
    /// Mean of the user 2 to relay squared gain.
    pub omega2: f64,
    pub distribution: Distribution,
    pub seed: u64,
}

impl FadingConfig {
    pub fn new(omega1: f64, omega2: f64, seed: u64) -> Result<Self> {
        let cfg = FadingConfig {
            omega1,
            omega2,
            distribution: Distribution::Exponential,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn symmetric(seed: u64) -> Self {
        FadingConfig {
            omega1: 1.0,
            omega2: 1.0,
            distribution: Distribution::Exponential,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        FadingConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega1 > 0.0 && self.omega1.is_finite()) {
            return Err(Error::invalid(
                "omega1",
                format!("{} must be positive", self.omega1),
            ));
        }
        if !(self.omega2 > 0.0 && self.omega2.is_finite()) {
            return Err(Error::invalid(
                "omega2",
                format!("{} must be positive", self.omega2),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub s1: f64,
    pub s2: f64,
    pub slot: u64,
}

impl ChannelState {
    pub fn new(s1: f64, s2: f64) -> Self {
        ChannelState { s1, s2, slot: 0 }
    }
}

/// The seven capacities of one slot, in bits per symbol.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkCapacities {
    pub c1r: f64,
    pub c2r: f64,
    pub cr: f64,
    pub c12r: f64,
    pub c21r: f64,
    pub cr1: f64,
    pub cr2: f64,
}

/// `log2(1 + x)`.
///
/// # Panics
/// If `x` is negative or NaN.
#[inline]
pub fn capacity(x: f64) -> f64 {
    assert!(x >= 0.0, "capacity of negative SNR {x}");
    x.ln_1p() / LN_2
}

/// Inverse of [`capacity`]: the SNR needed to support `rate` bits per symbol.
#[inline]
pub fn snr_for_rate(rate: f64) -> f64 {
    (rate * LN_2).exp_m1()
}

/// Capacities of all links for the given powers and multiple-access decoding
/// order `t` (0 decodes user 1 first, 1 decodes user 2 first; values in
/// between time-share the two orders).
pub fn link_capacities(state: &ChannelState, p1: f64, p2: f64, pr: f64, t: f64) -> LinkCapacities {
    debug_assert!(
        (0.0..=1.0).contains(&t),
        "decoding order {t} outside [0, 1]"
    );
    let x1 = p1 * state.s1;
    let x2 = p2 * state.s2;
    let (c12r, c21r) = split_sum_rate(x1, x2, t);
    LinkCapacities {
        c1r: capacity(x1),
        c2r: capacity(x2),
        cr: capacity(x1 + x2),
        c12r,
        c21r,
        cr1: capacity(pr * state.s1),
        cr2: capacity(pr * state.s2),
    }
}

/// Splits the multiple-access sum capacity between the users for received SNRs
/// `x1`, `x2` and decoding order `t`.
#[inline]
pub fn split_sum_rate(x1: f64, x2: f64, t: f64) -> (f64, f64) {
    if t == 0.0 {
        (capacity(x1 / (1.0 + x2)), capacity(x2))
    } else if t == 1.0 {
        (capacity(x1), capacity(x2 / (1.0 + x1)))
    } else {
        let c12 = t * capacity(x1) + (1.0 - t) * capacity(x1 / (1.0 + x2));
        let c21 = (1.0 - t) * capacity(x2) + t * capacity(x2 / (1.0 + x1));
        (c12, c21)
    }
}

#[inline]
fn unit_interval(word: u64) -> f64 {
    // 53 random mantissa bits, u in [0, 1).
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn exponential(mean: f64, u: f64) -> f64 {
    -mean * (-u).ln_1p()
}

/// Slot-addressable source of channel states.
#[derive(Debug, Clone)]
pub struct ChannelStream {
    rng: ChaCha8Rng,
    omega1: f64,
    omega2: f64,
    slot: u64,
}

impl ChannelStream {
    pub fn new(config: &FadingConfig, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        ChannelStream {
            rng,
            omega1: config.omega1,
            omega2: config.omega2,
            slot: 0,
        }
    }

    /// Positions the stream so that the next draw is slot `slot`.
    pub fn seek(&mut self, slot: u64) {
        self.rng.set_word_pos(slot as u128 * WORDS_PER_STATE);
        self.slot = slot;
    }

    pub fn next_state(&mut self) -> ChannelState {
        let u1 = unit_interval(self.rng.next_u64());
        let u2 = unit_interval(self.rng.next_u64());
        let state = ChannelState {
            s1: exponential(self.omega1, u1),
            s2: exponential(self.omega2, u2),
            slot: self.slot,
        };
        self.slot += 1;
        state
    }
}

/// Draws the next block-fading realization from `rng`.
pub fn draw_block(config: &FadingConfig, rng: &mut ChannelStream) -> ChannelState {
    debug_assert!(config.validate().is_ok());
    rng.next_state()
}

/// Uniforms for the coin flips of one slot. Coin `k` (1-based) shows one when
/// `u[k - 1] < p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotCoins {
    pub u: [f64; COINS_PER_SLOT],
}

impl SlotCoins {
    /// Coins that always show one for probabilities of one and zero otherwise.
    pub const NEUTRAL: SlotCoins = SlotCoins {
        u: [0.5; COINS_PER_SLOT],
    };

    #[inline]
    pub fn flip(&self, k: usize, p: f64) -> bool {
        self.u[k - 1] < p
    }
}

#[derive(Debug, Clone)]
pub struct CoinStream {
    rng: ChaCha8Rng,
}

impl CoinStream {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_COINS);
        CoinStream { rng }
    }

    pub fn seek(&mut self, slot: u64) {
        self.rng.set_word_pos(slot as u128 * WORDS_PER_COINS);
    }

    pub fn next_coins(&mut self) -> SlotCoins {
        let mut u = [0.0; COINS_PER_SLOT];
        for v in &mut u {
            *v = unit_interval(self.rng.next_u64());
        }
        SlotCoins { u }
    }
}

/// A batch of channel states stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

impl Sample {
    /// Draws slots `0..len` of `stream`.
    pub fn draw(config: &FadingConfig, stream: u64, len: usize) -> Self {
        let parts = par::map_chunks(len, par::CHUNK, |range| {
            let mut rng = ChannelStream::new(config, stream);
            rng.seek(range.start as u64);
            range
                .map(|_| rng.next_state())
                .map(|st| (st.s1, st.s2))
                .collect::<Vec<_>>()
        });
        let mut s1 = Vec::with_capacity(len);
        let mut s2 = Vec::with_capacity(len);
        for (a, b) in parts.into_iter().flatten() {
            s1.push(a);
            s2.push(b);
        }
        Sample { s1, s2 }
    }

    /// The calibration sample of `config`.
    pub fn calibration(config: &FadingConfig, len: usize) -> Self {
        Sample::draw(config, STREAM_CALIBRATION, len)
    }

    pub fn len(&self) -> usize {
        self.s1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s1.is_empty()
    }

    pub fn state(&self, i: usize) -> ChannelState {
        ChannelState {
            s1: self.s1[i],
            s2: self.s2[i],
            slot: i as u64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_hand_values() {
        assert_eq!(capacity(0.0), 0.0);
        assert!((capacity(1.0) - 1.0).abs() < 1e-15);
        assert!((capacity(3.0) - 2.0).abs() < 1e-15);
        assert!((snr_for_rate(2.0) - 3.0).abs() < 1e-14);
    }

    #[test]
    #[should_panic]
    fn capacity_rejects_negative() {
        capacity(-1e-3);
    }

    #[test]
    fn decomposition_examples() {
        // p1*s1 = 3, p2*s2 = 1
        let st = ChannelState::new(3.0, 1.0);
        let c = link_capacities(&st, 1.0, 1.0, 0.0, 0.0);
        assert!((c.c12r - 2.5f64.log2()).abs() < 1e-14);
        assert!((c.c21r - 1.0).abs() < 1e-14);
        assert!((c.cr - 5f64.log2()).abs() < 1e-14);
        let c = link_capacities(&st, 1.0, 1.0, 0.0, 1.0);
        assert!((c.c12r - 2.0).abs() < 1e-14);
        assert!((c.c21r - 1.25f64.log2()).abs() < 1e-14);
        for t in [0.0, 0.37, 1.0] {
            let c = link_capacities(&st, 1.0, 1.0, 0.0, t);
            assert!((c.c12r + c.c21r - c.cr).abs() < 1e-12);
        }
    }

    #[test]
    fn stream_is_slot_addressable() {
        let cfg = FadingConfig::new(1.5, 0.5, 42).unwrap();
        let mut a = ChannelStream::new(&cfg, STREAM_SIMULATION);
        let seq: Vec<_> = (0..100).map(|_| a.next_state()).collect();
        let mut b = ChannelStream::new(&cfg, STREAM_SIMULATION);
        b.seek(37);
        assert_eq!(b.next_state(), seq[37]);
        assert_eq!(b.next_state(), seq[38]);
        let sample = Sample::draw(&cfg, STREAM_SIMULATION, 100);
        for (i, st) in seq.iter().enumerate() {
            assert_eq!(sample.s1[i], st.s1);
            assert_eq!(sample.s2[i], st.s2);
        }
    }

    #[test]
    fn streams_are_distinct() {
        let cfg = FadingConfig::symmetric(7);
        let a = Sample::draw(&cfg, STREAM_SIMULATION, 8);
        let b = Sample::draw(&cfg, STREAM_CALIBRATION, 8);
        assert_ne!(a, b);
    }

    #[test]
    fn invalid_means_rejected() {
        assert!(FadingConfig::new(0.0, 1.0, 1).is_err());
        assert!(FadingConfig::new(1.0, -2.0, 1).is_err());
        assert!(FadingConfig::new(1.0, f64::NAN, 1).is_err());
    }

    #[test]
    fn coins_addressable() {
        let mut a = CoinStream::new(3);
        let seq: Vec<_> = (0..10).map(|_| a.next_coins()).collect();
        let mut b = CoinStream::new(3);
        b.seek(4);
        assert_eq!(b.next_coins(), seq[4]);
        assert!(SlotCoins::NEUTRAL.flip(1, 1.0));
        assert!(!SlotCoins::NEUTRAL.flip(1, 0.0));
    }
}
