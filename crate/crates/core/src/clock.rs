//! Split-clock timing: a fast DAC sample clock and a slower sequencer clock
//! related by a power-of-two integer ratio.
//!
//! Every schedule in this crate is expressed in integer DAC samples. A delay
//! is split into a coarse part (whole sequencer cycles) and a fine part
//! (leftover DAC samples, always smaller than the ratio).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default DAC sample rate, 16 x 307.2 MHz.
pub const DEFAULT_DAC_RATE_HZ: u64 = 4_915_200_000;
/// Default sequencer (fabric) clock.
pub const DEFAULT_SEQ_RATE_HZ: u64 = 307_200_000;
/// Default per-pulse register-update dead time, in sequencer cycles.
pub const DEFAULT_PULSE_OVERHEAD_CYCLES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClockError {
    #[error("rates must be positive (dac {dac_rate_hz} Hz, sequencer {seq_rate_hz} Hz)")]
    ZeroRate { dac_rate_hz: u64, seq_rate_hz: u64 },
    #[error("dac rate {dac_rate_hz} Hz is not an integer multiple of sequencer rate {seq_rate_hz} Hz")]
    NonIntegerRatio { dac_rate_hz: u64, seq_rate_hz: u64 },
    #[error("clock ratio {0} is not a power of two")]
    RatioNotPowerOfTwo(u64),
    #[error("fine delay {fine} must be smaller than the clock ratio {ratio}")]
    FineOutOfRange { fine: u32, ratio: u32 },
    #[error("time must be non-negative and finite, got {0} s")]
    InvalidTime(f64),
}

/// The two clock domains and the dead time charged per triggered pulse.
///
/// Construct through [`ClockConfig::new`]; the ratio is derived, never
/// supplied, so `dac_rate_hz == seq_rate_hz * ratio` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClockConfig {
    dac_rate_hz: u64,
    seq_rate_hz: u64,
    #[serde(skip)]
    ratio: u32,
    #[serde(skip)]
    shift: u32,
    #[serde(rename = "pulse_overhead_cycles")]
    pulse_overhead: u32,
}

#[derive(Deserialize)]
struct RawClock {
    dac_rate_hz: u64,
    seq_rate_hz: u64,
    pulse_overhead_cycles: u32,
}

impl<'de> Deserialize<'de> for ClockConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawClock::deserialize(d)?;
        ClockConfig::new(raw.dac_rate_hz, raw.seq_rate_hz, raw.pulse_overhead_cycles)
            .map_err(serde::de::Error::custom)
    }
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig::new(
            DEFAULT_DAC_RATE_HZ,
            DEFAULT_SEQ_RATE_HZ,
            DEFAULT_PULSE_OVERHEAD_CYCLES,
        )
        .expect("default clock is valid")
    }
}

impl ClockConfig {
    pub fn new(dac_rate_hz: u64, seq_rate_hz: u64, pulse_overhead: u32) -> Result<Self, ClockError> {
        if dac_rate_hz == 0 || seq_rate_hz == 0 {
            return Err(ClockError::ZeroRate { dac_rate_hz, seq_rate_hz });
        }
        if !dac_rate_hz.is_multiple_of(seq_rate_hz) {
            return Err(ClockError::NonIntegerRatio { dac_rate_hz, seq_rate_hz });
        }
        let ratio = dac_rate_hz / seq_rate_hz;
        if !ratio.is_power_of_two() || ratio > u64::from(u32::MAX) {
            return Err(ClockError::RatioNotPowerOfTwo(ratio));
        }
        Ok(ClockConfig {
            dac_rate_hz,
            seq_rate_hz,
            ratio: ratio as u32,
            shift: ratio.trailing_zeros(),
            pulse_overhead,
        })
    }

    pub fn with_pulse_overhead(self, cycles: u32) -> Self {
        ClockConfig { pulse_overhead: cycles, ..self }
    }

    pub fn dac_rate_hz(&self) -> u64 {
        self.dac_rate_hz
    }

    pub fn seq_rate_hz(&self) -> u64 {
        self.seq_rate_hz
    }

    /// DAC samples per sequencer cycle.
    pub fn ratio(&self) -> u32 {
        self.ratio
    }

    pub fn pulse_overhead(&self) -> u32 {
        self.pulse_overhead
    }

    /// Dead time per pulse expressed in DAC samples.
    pub fn pulse_overhead_samples(&self) -> u64 {
        u64::from(self.pulse_overhead) << self.shift
    }

    /// Seconds per DAC sample (about 203 ps by default).
    pub fn sample_period(&self) -> f64 {
        1.0 / self.dac_rate_hz as f64
    }

    /// Seconds per sequencer cycle (about 3.26 ns by default).
    pub fn cycle_period(&self) -> f64 {
        1.0 / self.seq_rate_hz as f64
    }

    /// Split a delay in DAC samples into sequencer cycles and a sample remainder.
    ///
    /// Uses shift and mask; [`decompose_arith`] is the division/modulo form it
    /// must agree with.
    pub fn decompose(&self, delay_samples: u64) -> DelaySpec {
        DelaySpec {
            total_samples: delay_samples,
            coarse: delay_samples >> self.shift,
            fine: (delay_samples & u64::from(self.ratio - 1)) as u32,
        }
    }

    pub fn recompose(&self, spec: &DelaySpec) -> Result<u64, ClockError> {
        if spec.fine >= self.ratio {
            return Err(ClockError::FineOutOfRange { fine: spec.fine, ratio: self.ratio });
        }
        Ok((spec.coarse << self.shift) + u64::from(spec.fine))
    }

    /// Smallest multiple of the ratio that is `>= samples`.
    pub fn align_up(&self, samples: u64) -> u64 {
        let mask = u64::from(self.ratio - 1);
        (samples + mask) & !mask
    }

    pub fn is_aligned(&self, samples: u64) -> bool {
        samples & u64::from(self.ratio - 1) == 0
    }

    /// Convert a user-facing time to DAC samples under an explicit rounding mode.
    pub fn seconds_to_samples(&self, t: f64, rounding: Rounding) -> Result<Quantized, ClockError> {
        if !t.is_finite() || t < 0.0 {
            return Err(ClockError::InvalidTime(t));
        }
        let exact = t * self.dac_rate_hz as f64;
        let samples = match rounding {
            Rounding::Nearest => exact.round(),
            Rounding::Floor => exact.floor(),
            Rounding::Ceil => exact.ceil(),
        };
        Ok(Quantized {
            samples: samples as u64,
            error_s: samples / self.dac_rate_hz as f64 - t,
        })
    }

    pub fn samples_to_seconds(&self, samples: u64) -> f64 {
        samples as f64 / self.dac_rate_hz as f64
    }
}

/// Reference decomposition by integer division and modulo.
pub fn decompose_arith(delay_samples: u64, ratio: u32) -> DelaySpec {
    let r = u64::from(ratio);
    DelaySpec {
        total_samples: delay_samples,
        coarse: delay_samples / r,
        fine: (delay_samples % r) as u32,
    }
}

/// A delay split into whole sequencer cycles plus a DAC-sample remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DelaySpec {
    pub total_samples: u64,
    pub coarse: u64,
    pub fine: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    Nearest,
    Floor,
    Ceil,
}

/// Result of a seconds-to-samples conversion; `error_s` is quantized minus requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub samples: u64,
    pub error_s: f64,
}
