//! Sample-exact playback of a compiled instruction stream.
//!
//! The DAC is modelled at one output per sample with no reconstruction
//! filtering. Each sample is the I/Q envelope rotated by the NCO carrier:
//! `out = I cos(theta) - Q sin(theta)`. The companion quadrature
//! `I sin(theta) + Q cos(theta)` is kept so envelopes can be demodulated
//! exactly.

use std::f64::consts::TAU;
use std::io::{self, Write};

use thiserror::Error;

use crate::clock::ClockConfig;
use crate::sequencer::{decode_marker, Channel, CompiledProgram, Op};
use crate::waveform::{channel_memory, nco_phase_advance, WaveformBank, FULL_SCALE};

/// Default ceiling on rendered stream length (about 13.7 ms).
pub const DEFAULT_MAX_SAMPLES: u64 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DacError {
    #[error("bank `{0}` referenced by the layout is not in the bank store")]
    UnknownBank(String),
    #[error("trigger references bank slot {0}, layout has {1}")]
    UnknownSlot(u64, usize),
    #[error("replica {replica} selected, bank has {ratio}")]
    BadReplica { replica: u64, ratio: u32 },
    #[error("marker argument {0} names no marker channel")]
    BadMarker(u64),
    #[error("stream of {0} samples exceeds the configured maximum of {1}")]
    StreamTooLong(u64, u64),
    #[error("no edges above threshold")]
    NoEdges,
    #[error("threshold {0} must lie in (0, 1)")]
    BadThreshold(f64),
}

/// Rendered DAC output plus the marker activity seen during playback.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStream {
    /// Real DAC output, in LSB units of the 16-bit full scale.
    pub samples: Vec<f64>,
    /// Quadrature companion of `samples`.
    pub quadrature: Vec<f64>,
    pub clock: ClockConfig,
    pub markers: Vec<(Channel, u64, u64)>,
}

impl SampleStream {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rate_hz(&self) -> u64 {
        self.clock.dac_rate_hz()
    }

    /// Envelope magnitude at `n` as a fraction of full scale.
    pub fn magnitude(&self, n: usize) -> f64 {
        self.samples[n].hypot(self.quadrature[n]) / FULL_SCALE
    }

    /// Carrier-frame phase of sample `n`, radians.
    pub fn phase(&self, n: usize) -> f64 {
        self.quadrature[n].atan2(self.samples[n])
    }

    /// Remove the carrier at sample `n` given the accumulated NCO phase word.
    pub fn demodulate(&self, n: usize, theta_word: u32) -> (f64, f64) {
        let theta = f64::from(theta_word) / 4_294_967_296.0 * TAU;
        let (s, c) = theta.sin_cos();
        let (re, im) = (self.samples[n], self.quadrature[n]);
        (re * c + im * s, im * c - re * s)
    }

    /// 16-bit quantized real output.
    pub fn to_i16(&self) -> Vec<i16> {
        self.samples.iter().map(|&v| v.round().clamp(-FULL_SCALE, FULL_SCALE) as i16).collect()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut buf = Vec::with_capacity(self.samples.len() * 2);
        for v in self.to_i16() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    /// `index,value` rows of the quantized output.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "index,value")?;
        for (k, v) in self.to_i16().into_iter().enumerate() {
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub max_samples: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { max_samples: DEFAULT_MAX_SAMPLES }
    }
}

pub fn render(prog: &CompiledProgram, banks: &[WaveformBank]) -> Result<SampleStream, DacError> {
    render_with(prog, banks, &RenderOptions::default())
}

/// Execute the instruction stream cycle by cycle.
pub fn render_with(prog: &CompiledProgram, banks: &[WaveformBank], opts: &RenderOptions) -> Result<SampleStream, DacError> {
    let len = prog.duration_samples;
    if len > opts.max_samples {
        return Err(DacError::StreamTooLong(len, opts.max_samples));
    }
    for slot in &prog.layout.slots {
        if !banks.iter().any(|b| b.id() == slot.id) {
            return Err(DacError::UnknownBank(slot.id.clone()));
        }
    }
    let mem = channel_memory(&prog.layout, banks);
    let clock = prog.clock;
    let ratio = u64::from(clock.ratio());
    let overhead = u64::from(clock.pulse_overhead());

    let mut re = vec![0.0; len as usize];
    let mut im = vec![0.0; len as usize];
    let mut markers = Vec::new();

    let mut cursor = 0u64;
    // NCO accumulator is continuous: acc(n) = acc_ref + freq * (n - n_ref)
    let mut freq = 0u32;
    let mut acc_ref = 0u32;
    let mut n_ref = 0u64;
    let mut phase = 0u32;
    let mut gain = FULL_SCALE;
    let mut replica = 0u64;

    for ins in &prog.instructions {
        match ins.op {
            Op::SetFreq => {
                let now = cursor * ratio;
                acc_ref = acc_ref.wrapping_add(nco_phase_advance(freq, now - n_ref));
                n_ref = now;
                freq = ins.arg as u32;
            }
            Op::SetPhase => phase = ins.arg as u32,
            Op::SetAmp => gain = ins.arg as i16 as f64,
            Op::SelectWaveform => replica = ins.arg,
            Op::WaitCoarse => cursor += ins.arg,
            Op::TriggerPulse => {
                cursor += overhead;
                let slot = prog
                    .layout
                    .slots
                    .get(ins.arg as usize)
                    .ok_or(DacError::UnknownSlot(ins.arg, prog.layout.slots.len()))?;
                if replica >= u64::from(slot.ratio) {
                    return Err(DacError::BadReplica { replica, ratio: slot.ratio });
                }
                let base = slot.replica_offset(replica as u32) as usize;
                let start = cursor * ratio;
                for k in 0..slot.padded_length as usize {
                    let (i, q) = mem[base + k];
                    if i == 0 && q == 0 {
                        continue;
                    }
                    let n = start + k as u64;
                    if n >= len {
                        return Err(DacError::StreamTooLong(n + 1, len));
                    }
                    let acc = acc_ref.wrapping_add(nco_phase_advance(freq, n - n_ref));
                    let theta = f64::from(acc.wrapping_add(phase)) / 4_294_967_296.0 * TAU;
                    let (s, c) = theta.sin_cos();
                    let scale = gain / FULL_SCALE;
                    let (i, q) = (f64::from(i) * scale, f64::from(q) * scale);
                    re[n as usize] += i * c - q * s;
                    im[n as usize] += i * s + q * c;
                }
            }
            Op::TriggerMarker => {
                cursor += overhead;
                let (channel, cycles) = decode_marker(ins.arg).ok_or(DacError::BadMarker(ins.arg))?;
                markers.push((channel, cursor * ratio, cycles * ratio));
            }
        }
    }
    Ok(SampleStream { samples: re, quadrature: im, clock, markers })
}

/// Measured microwave pulse starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeReport {
    pub measured_starts: Vec<u64>,
    /// `start mod ratio`, i.e. the replica that realised each pulse.
    pub residues: Vec<u32>,
}

impl EdgeReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "pulse,start_sample,residue")?;
        for (k, (s, r)) in self.measured_starts.iter().zip(&self.residues).enumerate() {
            writeln!(w, "{k},{s},{r}")?;
        }
        Ok(())
    }
}

pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.5;

/// Rising edges of the demodulated envelope magnitude.
pub fn measure_edges(stream: &SampleStream, threshold: f64) -> Result<EdgeReport, DacError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(DacError::BadThreshold(threshold));
    }
    let ratio = u64::from(stream.clock.ratio());
    let mut starts = Vec::new();
    let mut below = true;
    for n in 0..stream.len() {
        let above = stream.magnitude(n) >= threshold;
        if above && below {
            starts.push(n as u64);
        }
        below = !above;
    }
    if starts.is_empty() {
        return Err(DacError::NoEdges);
    }
    let residues = starts.iter().map(|s| (s % ratio) as u32).collect();
    Ok(EdgeReport { measured_starts: starts, residues })
}

/// Largest |measured - predicted| over paired edges; a count mismatch is
/// reported as `None`.
pub fn max_edge_error(predicted: &[u64], measured: &[u64]) -> Option<u64> {
    if predicted.len() != measured.len() {
        return None;
    }
    Some(predicted.iter().zip(measured).map(|(p, m)| p.abs_diff(*m)).max().unwrap_or(0))
}
