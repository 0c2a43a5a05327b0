//! Pulse envelopes, staggered waveform banks and the DAC channel memory budget.
//!
//! A bank holds `ratio` copies of one envelope, copy `r` delayed by `r`
//! samples. Selecting copy `r` at trigger time places the pulse `r` samples
//! after the sequencer-cycle boundary, which is how sub-cycle timing is
//! reached without a faster sequencer.

use std::f64::consts::TAU;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::ClockConfig;

/// Waveform memory per DAC channel, in samples.
pub const CHANNEL_CAPACITY: u32 = 1 << 16;
/// Symmetric 16-bit full scale.
pub const FULL_SCALE: f64 = 32767.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveformError {
    #[error("amplitude {0} outside [0, 1]")]
    AmplitudeOutOfRange(f64),
    #[error("envelope duration must be at least one sample")]
    ZeroDuration,
    #[error("I and Q lengths differ ({i} vs {q})")]
    QuadratureMismatch { i: usize, q: usize },
    #[error("bank set is empty")]
    EmptyBankSet,
    #[error("duplicate bank id `{0}`")]
    DuplicateBank(String),
    #[error("waveform budget exceeded: {requested} samples requested, capacity {capacity}, over by {overflow}")]
    BudgetExceeded { requested: u64, capacity: u32, overflow: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    #[default]
    Constant,
    /// Gaussian rise and fall over `edge_samples` at each end, flat in between.
    GaussianEdged { edge_samples: u32 },
}

/// 16-bit I/Q envelope. `phase` records the carrier phase baked into the
/// quadratures (zero for envelopes meant for NCO phase control).
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    i: Vec<i16>,
    q: Vec<i16>,
    shape: Shape,
    phase: f64,
}

impl Envelope {
    pub fn from_quadratures(i: Vec<i16>, q: Vec<i16>, shape: Shape, phase: f64) -> Result<Self, WaveformError> {
        if i.len() != q.len() {
            return Err(WaveformError::QuadratureMismatch { i: i.len(), q: q.len() });
        }
        if i.is_empty() {
            return Err(WaveformError::ZeroDuration);
        }
        Ok(Envelope { i, q, shape, phase })
    }

    pub fn i_samples(&self) -> &[i16] {
        &self.i
    }

    pub fn q_samples(&self) -> &[i16] {
        &self.q
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    fn delayed(&self, by: usize, total: usize) -> Envelope {
        let mut i = vec![0i16; total];
        let mut q = vec![0i16; total];
        i[by..by + self.len()].copy_from_slice(&self.i);
        q[by..by + self.len()].copy_from_slice(&self.q);
        Envelope { i, q, shape: self.shape, phase: self.phase }
    }
}

/// Quantize a full-scale fraction to a signed 16-bit code, rounding half away from zero.
pub fn quantize(x: f64) -> i16 {
    (x * FULL_SCALE).round().clamp(-FULL_SCALE, FULL_SCALE) as i16
}

pub fn make_envelope(duration_samples: u32, amplitude: f64, phase: f64, shape: Shape) -> Result<Envelope, WaveformError> {
    if duration_samples == 0 {
        return Err(WaveformError::ZeroDuration);
    }
    if !(0.0..=1.0).contains(&amplitude) {
        return Err(WaveformError::AmplitudeOutOfRange(amplitude));
    }
    let n = duration_samples as usize;
    let (s, c) = phase.sin_cos();
    let profile: Vec<f64> = match shape {
        Shape::Constant => vec![1.0; n],
        Shape::GaussianEdged { edge_samples } => {
            let edge = (edge_samples as usize).min(n / 2);
            let sigma = edge as f64 / 3.0;
            (0..n)
                .map(|k| {
                    let from_edge = k.min(n - 1 - k);
                    if from_edge >= edge {
                        1.0
                    } else {
                        let x = (edge - from_edge) as f64 / sigma;
                        (-0.5 * x * x).exp()
                    }
                })
                .collect()
        }
    };
    let i = profile.iter().map(|p| quantize(amplitude * p * c)).collect();
    let q = profile.iter().map(|p| quantize(amplitude * p * s)).collect();
    Ok(Envelope { i, q, shape, phase })
}

/// Envelope plus its `ratio` sample-shifted replicas, each padded to a whole
/// number of sequencer words.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformBank {
    id: String,
    base: Envelope,
    replicas: Vec<Envelope>,
    padded_length: u32,
    ratio: u32,
}

pub fn build_bank(id: impl Into<String>, base: Envelope, cfg: &ClockConfig) -> WaveformBank {
    let ratio = cfg.ratio();
    let padded = cfg.align_up(base.len() as u64 + u64::from(ratio) - 1) as usize;
    let replicas = (0..ratio as usize).map(|r| base.delayed(r, padded)).collect();
    WaveformBank {
        id: id.into(),
        base,
        replicas,
        padded_length: padded as u32,
        ratio,
    }
}

impl WaveformBank {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn base(&self) -> &Envelope {
        &self.base
    }

    pub fn replicas(&self) -> &[Envelope] {
        &self.replicas
    }

    pub fn replica(&self, r: u32) -> Option<&Envelope> {
        self.replicas.get(r as usize)
    }

    pub fn padded_length(&self) -> u32 {
        self.padded_length
    }

    pub fn ratio(&self) -> u32 {
        self.ratio
    }

    /// Memory footprint of all replicas.
    pub fn total_samples(&self) -> u64 {
        u64::from(self.ratio) * u64::from(self.padded_length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSlot {
    pub id: String,
    pub offset: u32,
    pub padded_length: u32,
    pub base_length: u32,
    pub ratio: u32,
    pub phase: f64,
}

impl BankSlot {
    /// Channel-memory address of replica `r`.
    pub fn replica_offset(&self, r: u32) -> u32 {
        self.offset + r * self.padded_length
    }
}

/// Placement of banks in one channel's waveform memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub slots: Vec<BankSlot>,
    pub used: u32,
    pub capacity: u32,
}

impl ChannelLayout {
    pub fn slot(&self, id: &str) -> Option<(usize, &BankSlot)> {
        self.slots.iter().enumerate().find(|(_, s)| s.id == id)
    }
}

pub fn allocate_channel(banks: &[WaveformBank]) -> Result<ChannelLayout, WaveformError> {
    if banks.is_empty() {
        return Err(WaveformError::EmptyBankSet);
    }
    let requested: u64 = banks.iter().map(WaveformBank::total_samples).sum();
    if requested > u64::from(CHANNEL_CAPACITY) {
        return Err(WaveformError::BudgetExceeded {
            requested,
            capacity: CHANNEL_CAPACITY,
            overflow: requested - u64::from(CHANNEL_CAPACITY),
        });
    }
    let mut slots = Vec::with_capacity(banks.len());
    let mut offset = 0u32;
    for bank in banks {
        if slots.iter().any(|s: &BankSlot| s.id == bank.id) {
            return Err(WaveformError::DuplicateBank(bank.id.clone()));
        }
        slots.push(BankSlot {
            id: bank.id.clone(),
            offset,
            padded_length: bank.padded_length,
            base_length: bank.base.len() as u32,
            ratio: bank.ratio,
            phase: bank.base.phase,
        });
        offset += bank.total_samples() as u32;
    }
    Ok(ChannelLayout { slots, used: offset, capacity: CHANNEL_CAPACITY })
}

/// Flatten banks into channel memory as laid out; unused tail is omitted.
pub fn channel_memory(layout: &ChannelLayout, banks: &[WaveformBank]) -> Vec<(i16, i16)> {
    let mut mem = vec![(0i16, 0i16); layout.used as usize];
    for slot in &layout.slots {
        let Some(bank) = banks.iter().find(|b| b.id == slot.id) else { continue };
        for (r, rep) in bank.replicas.iter().enumerate() {
            let start = slot.replica_offset(r as u32) as usize;
            for (k, (&i, &q)) in rep.i.iter().zip(&rep.q).enumerate() {
                mem[start + k] = (i, q);
            }
        }
    }
    mem
}

/// Write channel memory as little-endian interleaved I/Q 16-bit words.
pub fn write_channel_binary<W: Write>(mem: &[(i16, i16)], mut w: W) -> io::Result<()> {
    let mut buf = Vec::with_capacity(mem.len() * 4);
    for &(i, q) in mem {
        buf.extend_from_slice(&i.to_le_bytes());
        buf.extend_from_slice(&q.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Sidecar metadata for [`write_channel_binary`] output.
pub fn write_layout_sidecar<W: Write>(layout: &ChannelLayout, w: W) -> io::Result<()> {
    serde_json::to_writer_pretty(w, layout).map_err(io::Error::other)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    /// Carrier phase set through the 32-bit NCO phase register.
    #[default]
    NcoRegister,
    /// Phase baked into the I/Q envelope.
    IqEncoded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseControl {
    pub mode: PhaseMode,
    /// Phase in units of 2π / 2³².
    pub nco_phase_word: u32,
    /// Phase increment per DAC sample in units of 2π / 2³².
    pub nco_freq_word: u32,
}

const TURN: f64 = 4_294_967_296.0;

pub fn phase_to_word(radians: f64) -> u32 {
    let turns = (radians / TAU).rem_euclid(1.0);
    ((turns * TURN).round() as u64 & 0xFFFF_FFFF) as u32
}

pub fn word_to_phase(word: u32) -> f64 {
    f64::from(word) / TURN * TAU
}

/// NCO frequency word for a carrier at `freq_hz` on a DAC running at `dac_rate_hz`.
pub fn freq_to_word(freq_hz: f64, dac_rate_hz: u64) -> u32 {
    let turns = (freq_hz / dac_rate_hz as f64).rem_euclid(1.0);
    ((turns * TURN).round() as u64 & 0xFFFF_FFFF) as u32
}

/// Phase-accumulator state after `n_samples` steps of `freq_word`.
pub fn nco_phase_advance(freq_word: u32, n_samples: u64) -> u32 {
    u64::from(freq_word).wrapping_mul(n_samples) as u32
}
