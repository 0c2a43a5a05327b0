//! Pulse-program IR, canonical experiment builders and the compiler that
//! lowers a program to a sequencer instruction stream.
//!
//! Execution model shared with [`crate::dacsim`]: the sequencer keeps a cycle
//! cursor. `WAIT-COARSE n` advances it by `n`. Each trigger first spends
//! `pulse_overhead` cycles on register updates, then fires at the cursor.
//! A microwave trigger plays the selected replica of its bank starting on
//! that cycle boundary, so the envelope appears `replica` samples later.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::ClockConfig;
use crate::waveform::{freq_to_word, phase_to_word, quantize, ChannelLayout};

/// Default microwave carrier (NV ms=0 to ms=-1 line near 365 G).
pub const DEFAULT_CARRIER_HZ: f64 = 1.845e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequenceError {
    #[error("xy8 phase cycling needs a positive multiple of 8 pulses, got {0}")]
    BadN(u32),
    #[error("tau of {tau} samples is unschedulable: gap of {gap} samples, at least {required} needed")]
    UnschedulableTau { tau: u64, gap: i64, required: u64 },
    #[error("events overlap on channel {channel:?} at sample {at}")]
    Overlap { channel: Channel, at: u64 },
    #[error("microwave pulse at sample {0} has no bank")]
    NoBank(u64),
    #[error("event at sample {0} has zero duration")]
    ZeroDuration(u64),
    #[error("sweep must be non-empty, positive and strictly increasing")]
    BadSweep,
    #[error("scaffold invalid: {0}")]
    BadScaffold(String),
    #[error("gap before sample {at} is {gap} samples, minimum is {required}")]
    GapTooSmall { at: u64, gap: i64, required: u64 },
    #[error("bank `{0}` is not in the channel layout")]
    MissingBank(String),
    #[error("pulse at sample {at} lasts {duration} samples but bank `{bank}` holds {bank_length}")]
    BankLengthMismatch { at: u64, duration: u64, bank: String, bank_length: u32 },
    #[error("marker event at sample {0} is not aligned to the sequencer clock")]
    MisalignedMarker(u64),
    #[error("assembly line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    MwPulse,
    LaserGate,
    ReadoutWindow,
}

/// Output channel an event occupies. Markers are digital and cycle-granular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Mw,
    Laser,
    Readout,
}

impl EventKind {
    pub fn channel(self) -> Channel {
        match self {
            EventKind::MwPulse => Channel::Mw,
            EventKind::LaserGate => Channel::Laser,
            EventKind::ReadoutWindow => Channel::Readout,
        }
    }
}

impl Channel {
    /// Marker channel index encoded in `TRIGGER-MARKER`.
    pub fn marker_index(self) -> Option<u64> {
        match self {
            Channel::Mw => None,
            Channel::Laser => Some(0),
            Channel::Readout => Some(1),
        }
    }

    pub fn from_marker_index(i: u64) -> Option<Channel> {
        match i {
            0 => Some(Channel::Laser),
            1 => Some(Channel::Readout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseEvent {
    pub kind: EventKind,
    pub start_samples: u64,
    pub duration_samples: u64,
    /// Intended carrier phase of the pulse, radians.
    #[serde(default)]
    pub phase: f64,
    #[serde(default = "unit_amplitude")]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank_id: Option<String>,
}

fn unit_amplitude() -> f64 {
    1.0
}

impl PulseEvent {
    pub fn mw(start: u64, duration: u64, phase: f64, bank: impl Into<String>) -> Self {
        PulseEvent {
            kind: EventKind::MwPulse,
            start_samples: start,
            duration_samples: duration,
            phase,
            amplitude: 1.0,
            bank_id: Some(bank.into()),
        }
    }

    pub fn marker(kind: EventKind, start: u64, duration: u64) -> Self {
        PulseEvent {
            kind,
            start_samples: start,
            duration_samples: duration,
            phase: 0.0,
            amplitude: 1.0,
            bank_id: None,
        }
    }

    pub fn end_samples(&self) -> u64 {
        self.start_samples + self.duration_samples
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProgramMetadata {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_variable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_value: Option<f64>,
}

/// Hardware-agnostic program: timed events on DAC-sample resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseProgram {
    pub metadata: ProgramMetadata,
    pub clock: ClockConfig,
    pub carrier_hz: f64,
    pub events: Vec<PulseEvent>,
}

impl PulseProgram {
    /// Sorts events by start and checks per-channel invariants.
    pub fn new(
        clock: ClockConfig,
        carrier_hz: f64,
        mut events: Vec<PulseEvent>,
        metadata: ProgramMetadata,
    ) -> Result<Self, SequenceError> {
        events.sort_by_key(|e| e.start_samples);
        let prog = PulseProgram { metadata, clock, carrier_hz, events };
        prog.validate()?;
        Ok(prog)
    }

    pub fn validate(&self) -> Result<(), SequenceError> {
        let mut last_end: [Option<u64>; 3] = [None; 3];
        let mut prev_start = 0;
        for e in &self.events {
            if e.start_samples < prev_start {
                return Err(SequenceError::BadSweep);
            }
            prev_start = e.start_samples;
            if e.duration_samples == 0 {
                return Err(SequenceError::ZeroDuration(e.start_samples));
            }
            if e.kind == EventKind::MwPulse && e.bank_id.is_none() {
                return Err(SequenceError::NoBank(e.start_samples));
            }
            let ch = e.kind.channel();
            let slot = &mut last_end[ch as usize];
            if slot.is_some_and(|end| e.start_samples < end) {
                return Err(SequenceError::Overlap { channel: ch, at: e.start_samples });
            }
            *slot = Some(e.end_samples());
        }
        Ok(())
    }

    pub fn mw_pulses(&self) -> impl Iterator<Item = &PulseEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::MwPulse)
    }

    pub fn duration_samples(&self) -> u64 {
        self.events.iter().map(PulseEvent::end_samples).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PhasePattern {
    /// X-Y-X-Y-Y-X-Y-X cycling of the refocusing pulses.
    #[default]
    Xy8,
    /// Meiboom-Gill: every refocusing pulse about Y.
    AllX,
}

impl PhasePattern {
    /// Phase of the `k`-th refocusing pulse (0-based).
    pub fn phase(self, k: usize) -> f64 {
        const XY8: [f64; 8] = [0.0, FRAC_PI_2, 0.0, FRAC_PI_2, FRAC_PI_2, 0.0, FRAC_PI_2, 0.0];
        match self {
            PhasePattern::Xy8 => XY8[k % 8],
            PhasePattern::AllX => FRAC_PI_2,
        }
    }
}

/// Sign of the closing pi/2 pulse (+X or -X).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutSign {
    #[default]
    Plus,
    Minus,
}

/// A bank reference together with the envelope length it holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseRef {
    pub bank: String,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpmgSpec {
    pub n_pulses: u32,
    pub tau_samples: u64,
    pub pi: PulseRef,
    pub pi2: PulseRef,
    pub phase_pattern: PhasePattern,
    #[serde(default)]
    pub readout: ReadoutSign,
}

/// Optical init/readout framing common to all builders, in sequencer cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scaffold {
    pub init_laser_cycles: u64,
    pub settle_cycles: u64,
    pub readout_laser_cycles: u64,
    /// Readout window opens this many cycles after the readout laser.
    pub readout_delay_cycles: u64,
    pub readout_window_cycles: u64,
}

impl Default for Scaffold {
    fn default() -> Self {
        // roughly 3 us init, 1 us settle, 1 us readout gate
        Scaffold {
            init_laser_cycles: 922,
            settle_cycles: 307,
            readout_laser_cycles: 307,
            readout_delay_cycles: 2,
            readout_window_cycles: 92,
        }
    }
}

impl Scaffold {
    fn check(&self, clock: &ClockConfig) -> Result<(), SequenceError> {
        if self.init_laser_cycles == 0 || self.readout_laser_cycles == 0 || self.readout_window_cycles == 0 {
            return Err(SequenceError::BadScaffold("laser and readout durations must be positive".into()));
        }
        if self.readout_delay_cycles < u64::from(clock.pulse_overhead()) {
            return Err(SequenceError::BadScaffold(format!(
                "readout delay {} cycles is below the pulse overhead {}",
                self.readout_delay_cycles,
                clock.pulse_overhead()
            )));
        }
        Ok(())
    }

    /// Program time origin; the first trigger needs a full overhead block.
    fn lead_in(&self, clock: &ClockConfig) -> u64 {
        clock.pulse_overhead_samples()
    }

    fn init_events(&self, clock: &ClockConfig) -> (Vec<PulseEvent>, u64) {
        let r = u64::from(clock.ratio());
        let start = self.lead_in(clock);
        let laser = PulseEvent::marker(EventKind::LaserGate, start, self.init_laser_cycles * r);
        let mw_start = laser.end_samples() + self.settle_cycles * r;
        (vec![laser], mw_start)
    }

    fn readout_events(&self, clock: &ClockConfig, after: u64) -> Vec<PulseEvent> {
        let r = u64::from(clock.ratio());
        let start = clock.align_up(after + clock.pulse_overhead_samples());
        vec![
            PulseEvent::marker(EventKind::LaserGate, start, self.readout_laser_cycles * r),
            PulseEvent::marker(
                EventKind::ReadoutWindow,
                start + self.readout_delay_cycles * r,
                self.readout_window_cycles * r,
            ),
        ]
    }
}

/// Start sample of a pulse of `length` whose center is `center2 / 2`.
fn start_from_center(center2: u64, length: u64) -> u64 {
    (center2 - length) / 2
}

/// CPMG: pi/2(X) . [tau . pi(pattern) . tau] x N . pi/2(+-X), tau measured
/// between pulse centers.
pub fn build_cpmg(spec: &CpmgSpec, scaffold: &Scaffold, clock: &ClockConfig, carrier_hz: f64) -> Result<PulseProgram, SequenceError> {
    if spec.n_pulses == 0 || (spec.phase_pattern == PhasePattern::Xy8 && !spec.n_pulses.is_multiple_of(8)) {
        return Err(SequenceError::BadN(spec.n_pulses));
    }
    if spec.pi.length == 0 || spec.pi2.length == 0 {
        return Err(SequenceError::ZeroDuration(0));
    }
    scaffold.check(clock)?;
    let (mut events, t0) = scaffold.init_events(clock);
    let tau = spec.tau_samples;
    let n = u64::from(spec.n_pulses);
    let required = clock.pulse_overhead_samples();

    let center0 = 2 * t0 + spec.pi2.length;
    let mut mw = Vec::with_capacity(spec.n_pulses as usize + 2);
    mw.push(PulseEvent::mw(t0, spec.pi2.length, 0.0, &spec.pi2.bank));
    for k in 1..=n {
        let start = start_from_center(center0 + 2 * (2 * k - 1) * tau, spec.pi.length);
        let phase = spec.phase_pattern.phase((k - 1) as usize);
        mw.push(PulseEvent::mw(start, spec.pi.length, phase, &spec.pi.bank));
    }
    let close_phase = match spec.readout {
        ReadoutSign::Plus => 0.0,
        ReadoutSign::Minus => PI,
    };
    let close = start_from_center(center0 + 4 * n * tau, spec.pi2.length);
    mw.push(PulseEvent::mw(close, spec.pi2.length, close_phase, &spec.pi2.bank));

    for w in mw.windows(2) {
        let gap = w[1].start_samples as i64 - w[0].end_samples() as i64;
        if gap < required as i64 {
            return Err(SequenceError::UnschedulableTau { tau, gap, required });
        }
    }
    let end = mw.last().map(PulseEvent::end_samples).unwrap_or(t0);
    events.extend(mw);
    events.extend(scaffold.readout_events(clock, end));
    let metadata = ProgramMetadata {
        label: format!("cpmg-n{}-{:?}", spec.n_pulses, spec.phase_pattern).to_lowercase(),
        sweep_variable: Some("tau_samples".into()),
        sweep_value: Some(tau as f64),
    };
    PulseProgram::new(*clock, carrier_hz, events, metadata)
}

fn check_sweep(values: &[u64], allow_zero: bool) -> Result<(), SequenceError> {
    let positive = values.iter().all(|&v| allow_zero || v > 0);
    let increasing = values.windows(2).all(|w| w[0] < w[1]);
    if values.is_empty() || !positive || !increasing {
        return Err(SequenceError::BadSweep);
    }
    Ok(())
}

/// Bank id used by [`build_rabi`] for a drive of `duration` samples.
pub fn rabi_bank_id(duration: u64) -> String {
    format!("rabi-{duration}")
}

/// One program per drive length. Each point needs its own bank, named by
/// [`rabi_bank_id`].
pub fn build_rabi(durations: &[u64], scaffold: &Scaffold, clock: &ClockConfig, carrier_hz: f64) -> Result<Vec<PulseProgram>, SequenceError> {
    check_sweep(durations, false)?;
    scaffold.check(clock)?;
    durations
        .iter()
        .map(|&d| {
            let (mut events, t0) = scaffold.init_events(clock);
            let pulse = PulseEvent::mw(t0, d, 0.0, rabi_bank_id(d));
            let end = pulse.end_samples();
            events.push(pulse);
            events.extend(scaffold.readout_events(clock, end));
            let metadata = ProgramMetadata {
                label: "rabi".into(),
                sweep_variable: Some("duration_samples".into()),
                sweep_value: Some(d as f64),
            };
            PulseProgram::new(*clock, carrier_hz, events, metadata)
        })
        .collect()
}

/// Dark relaxation: init, wait, readout. Waits are rounded up to whole cycles
/// because both ends are laser markers.
pub fn build_t1(waits: &[u64], scaffold: &Scaffold, clock: &ClockConfig, carrier_hz: f64) -> Result<Vec<PulseProgram>, SequenceError> {
    check_sweep(waits, true)?;
    scaffold.check(clock)?;
    waits
        .iter()
        .map(|&w| {
            let (mut events, _) = scaffold.init_events(clock);
            let init_end = events[0].end_samples();
            events.extend(scaffold.readout_events(clock, init_end + clock.align_up(w)));
            let metadata = ProgramMetadata {
                label: "t1".into(),
                sweep_variable: Some("wait_samples".into()),
                sweep_value: Some(w as f64),
            };
            PulseProgram::new(*clock, carrier_hz, events, metadata)
        })
        .collect()
}

/// Hahn echo, i.e. a single-refocusing-pulse CPMG.
pub fn build_hahn(
    taus: &[u64],
    pi: &PulseRef,
    pi2: &PulseRef,
    scaffold: &Scaffold,
    clock: &ClockConfig,
    carrier_hz: f64,
) -> Result<Vec<PulseProgram>, SequenceError> {
    check_sweep(taus, false)?;
    taus.iter()
        .map(|&tau| {
            let spec = CpmgSpec {
                n_pulses: 1,
                tau_samples: tau,
                pi: pi.clone(),
                pi2: pi2.clone(),
                phase_pattern: PhasePattern::AllX,
                readout: ReadoutSign::Plus,
            };
            build_cpmg(&spec, scaffold, clock, carrier_hz)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    SetFreq,
    SetPhase,
    SetAmp,
    SelectWaveform,
    WaitCoarse,
    TriggerPulse,
    TriggerMarker,
}

impl Op {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Op::SetFreq => "SET-FREQ",
            Op::SetPhase => "SET-PHASE",
            Op::SetAmp => "SET-AMP",
            Op::SelectWaveform => "SELECT-WAVEFORM",
            Op::WaitCoarse => "WAIT-COARSE",
            Op::TriggerPulse => "TRIGGER-PULSE",
            Op::TriggerMarker => "TRIGGER-MARKER",
        }
    }
}

impl FromStr for Op {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "SET-FREQ" => Op::SetFreq,
            "SET-PHASE" => Op::SetPhase,
            "SET-AMP" => Op::SetAmp,
            "SELECT-WAVEFORM" => Op::SelectWaveform,
            "WAIT-COARSE" => Op::WaitCoarse,
            "TRIGGER-PULSE" => Op::TriggerPulse,
            "TRIGGER-MARKER" => Op::TriggerMarker,
            other => return Err(format!("unknown op `{other}`")),
        })
    }
}

/// One sequencer instruction.
///
/// Argument meaning: `SET-FREQ`/`SET-PHASE` take 32-bit NCO words, `SET-AMP`
/// a Q15 gain, `SELECT-WAVEFORM` the replica index, `WAIT-COARSE` cycles,
/// `TRIGGER-PULSE` the bank slot in the channel layout and `TRIGGER-MARKER`
/// `(duration_cycles << 4) | marker_channel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub op: Op,
    pub arg: u64,
}

impl Instruction {
    pub fn new(op: Op, arg: u64) -> Self {
        Instruction { op, arg }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.op.mnemonic(), self.arg)
    }
}

pub fn encode_marker(channel: Channel, duration_cycles: u64) -> u64 {
    (duration_cycles << 4) | channel.marker_index().unwrap_or(0)
}

pub fn decode_marker(arg: u64) -> Option<(Channel, u64)> {
    Channel::from_marker_index(arg & 0xF).map(|c| (c, arg >> 4))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerEdge {
    pub channel: Channel,
    pub start_samples: u64,
    pub duration_samples: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledProgram {
    pub instructions: Vec<Instruction>,
    pub layout: ChannelLayout,
    /// Absolute DAC-sample start of every microwave pulse.
    pub predicted_edges: Vec<u64>,
    pub marker_edges: Vec<MarkerEdge>,
    pub clock: ClockConfig,
    pub duration_samples: u64,
}

impl CompiledProgram {
    /// Line-oriented assembly, one `OP ARG` per line.
    pub fn to_assembly(&self) -> String {
        assembly(&self.instructions)
    }

    /// Phase register value (radians) in effect at each microwave trigger.
    pub fn pulse_phases(&self) -> Vec<f64> {
        let mut reg = 0u32;
        let mut out = Vec::new();
        for ins in &self.instructions {
            match ins.op {
                Op::SetPhase => reg = ins.arg as u32,
                Op::TriggerPulse => out.push(crate::waveform::word_to_phase(reg)),
                _ => {}
            }
        }
        out
    }
}

pub fn assembly(instructions: &[Instruction]) -> String {
    let mut s = String::with_capacity(instructions.len() * 16);
    for ins in instructions {
        s.push_str(&ins.to_string());
        s.push('\n');
    }
    s
}

/// Parse assembly text; blank lines and `#` comments are skipped.
pub fn parse_assembly(text: &str) -> Result<Vec<Instruction>, SequenceError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| SequenceError::Parse { line: idx + 1, msg };
        let mut parts = line.split_whitespace();
        let op: Op = parts.next().unwrap_or("").parse().map_err(err)?;
        let arg = parts
            .next()
            .ok_or_else(|| err("missing argument".into()))?
            .parse::<u64>()
            .map_err(|e| err(format!("bad argument: {e}")))?;
        if parts.next().is_some() {
            return Err(err("trailing tokens".into()));
        }
        out.push(Instruction { op, arg });
    }
    Ok(out)
}

/// Lower a program to instructions using the coarse/fine decomposition.
///
/// Each trigger's position is taken relative to the previous trigger's cycle
/// boundary; the remainder selects the bank replica. Phase is written as the
/// difference between the requested phase and the phase baked into the bank,
/// so NCO-driven and I/Q-encoded banks compile through the same path.
pub fn compile(prog: &PulseProgram, layout: &ChannelLayout) -> Result<CompiledProgram, SequenceError> {
    prog.validate()?;
    let clock = prog.clock;
    let ratio = u64::from(clock.ratio());
    let overhead = u64::from(clock.pulse_overhead());
    let min_gap = clock.pulse_overhead_samples();

    let mut ins = vec![Instruction::new(Op::SetFreq, u64::from(freq_to_word(prog.carrier_hz, clock.dac_rate_hz())))];
    let mut predicted = Vec::new();
    let mut markers = Vec::new();
    let mut prev_cycle = 0u64;
    let mut prev_mw_end: Option<u64> = None;
    let mut phase_reg: Option<u32> = None;
    let mut amp_reg: Option<i16> = None;

    for e in &prog.events {
        let start = e.start_samples;
        let rel = start - prev_cycle * ratio;
        let split = clock.decompose(rel);
        if split.coarse < overhead {
            return Err(SequenceError::GapTooSmall {
                at: start,
                gap: rel as i64,
                required: min_gap,
            });
        }
        match e.kind {
            EventKind::MwPulse => {
                let bank = e.bank_id.as_deref().ok_or(SequenceError::NoBank(start))?;
                let (slot_idx, slot) = layout.slot(bank).ok_or_else(|| SequenceError::MissingBank(bank.into()))?;
                if u64::from(slot.base_length) != e.duration_samples {
                    return Err(SequenceError::BankLengthMismatch {
                        at: start,
                        duration: e.duration_samples,
                        bank: bank.into(),
                        bank_length: slot.base_length,
                    });
                }
                if let Some(end) = prev_mw_end {
                    let gap = start as i64 - end as i64;
                    if gap < min_gap as i64 {
                        return Err(SequenceError::GapTooSmall { at: start, gap, required: min_gap });
                    }
                }
                let word = phase_to_word(e.phase - slot.phase);
                if phase_reg != Some(word) {
                    ins.push(Instruction::new(Op::SetPhase, u64::from(word)));
                    phase_reg = Some(word);
                }
                let amp = quantize(e.amplitude.clamp(0.0, 1.0));
                if amp_reg != Some(amp) {
                    ins.push(Instruction::new(Op::SetAmp, amp as u64));
                    amp_reg = Some(amp);
                }
                ins.push(Instruction::new(Op::SelectWaveform, u64::from(split.fine)));
                ins.push(Instruction::new(Op::WaitCoarse, split.coarse - overhead));
                ins.push(Instruction::new(Op::TriggerPulse, slot_idx as u64));
                predicted.push(start);
                prev_mw_end = Some(e.end_samples());
            }
            EventKind::LaserGate | EventKind::ReadoutWindow => {
                if split.fine != 0 || !clock.is_aligned(e.duration_samples) {
                    return Err(SequenceError::MisalignedMarker(start));
                }
                let channel = e.kind.channel();
                ins.push(Instruction::new(Op::WaitCoarse, split.coarse - overhead));
                ins.push(Instruction::new(Op::TriggerMarker, encode_marker(channel, e.duration_samples / ratio)));
                markers.push(MarkerEdge { channel, start_samples: start, duration_samples: e.duration_samples });
            }
        }
        prev_cycle += split.coarse;
    }
    Ok(CompiledProgram {
        instructions: ins,
        layout: layout.clone(),
        predicted_edges: predicted,
        marker_edges: markers,
        clock,
        duration_samples: prog.duration_samples(),
    })
}
