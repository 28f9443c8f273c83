//! Adaptive mode selection for the half-duplex bidirectional relay channel with
//! buffering at the relay and block fading.
//!
//! Two users exchange data through a relay that can hold information in two
//! buffers. In every slot one of six transmission modes is active:
//!
//! | mode | active links                          |
//! |------|---------------------------------------|
//! | M1   | user 1 to relay                       |
//! | M2   | user 2 to relay                       |
//! | M3   | both users to relay (multiple access) |
//! | M4   | relay to user 1                       |
//! | M5   | relay to user 2                       |
//! | M6   | relay to both users (broadcast)       |
//!
//! The crate contains the per-slot optimal selection policies for a joint
//! long-term power budget ([`joint`]) and for fixed node powers ([`fixed`]),
//! the offline calibration of their long-term weights, a delay-constrained
//! variant driven by finite buffers ([`buffers`]), a slot-level simulator
//! ([`sim`]), conventional fixed-schedule benchmarks solved as linear programs
//! ([`benchmarks`], [`lp`]) and rate-region tracing ([`region`]).
//!
//! Sample-level work runs on rayon when the default `parallel` feature is on.
//! Results are bit-identical with the feature off because every reduction is
//! performed over fixed chunks in a fixed order.

pub mod benchmarks;
pub mod buffers;
pub mod channel;
mod error;
pub mod fixed;
pub mod joint;
pub mod lp;
pub mod mode;
mod par;
pub mod region;
pub mod roots;
pub mod sim;

pub use error::{CalibrationFailure, Error, Result};

/// Converts a power ratio in decibels to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Rejects weights outside the open interval (0, 1).
pub fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("eta", format!("{eta} is outside (0, 1)")))
    }
}

/// Name of the active sample-evaluation backend.
pub fn backend() -> &'static str {
    if cfg!(feature = "parallel") {
        "rayon"
    } else {
        "sequential"
    }
}
