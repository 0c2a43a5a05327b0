//! Experiment configuration file (TOML).
//!
//! One file describes the clock, pulse calibration, the swept sequence, the
//! spin system, readout noise and fit settings. Every section except
//! `sequence`, `system` and `noise` has defaults; commands check that the
//! sections they need are present.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{ClockConfig, Rounding};
use crate::sequencer::{
    build_cpmg, build_hahn, build_rabi, build_t1, CpmgSpec, PhasePattern, PulseProgram, PulseRef, ReadoutSign, Scaffold,
    DEFAULT_CARRIER_HZ,
};
use crate::specfit::FitConfig;
use crate::spinmodel::{
    px_multi, sample_counts, Contrast, CpmgTrace, DecoherenceModel, FieldConfig, HyperfinePair, SpinSystem,
    GAMMA_C13_HZ_PER_GAUSS,
};
use crate::waveform::{allocate_channel, build_bank, make_envelope, ChannelLayout, Shape, WaveformBank, WaveformError, CHANNEL_CAPACITY};

/// Longest sweep accepted from a config file.
pub const MAX_SWEEP_POINTS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("config is missing the [{0}] section")]
    Missing(&'static str),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error("{0}")]
    Model(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub pulses: PulsesSection,
    pub sequence: Option<SequenceSection>,
    pub system: Option<SystemSection>,
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub fit: FitSection,
}

/// Pulse calibration. Give `pi_samples`, or `rabi_mhz` to derive it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulsesSection {
    pub pi_samples: Option<u64>,
    /// Defaults to half the pi length.
    pub pi2_samples: Option<u64>,
    pub rabi_mhz: Option<f64>,
    /// Fraction of DAC full scale.
    pub amplitude: f64,
    pub shape: Shape,
    pub carrier_hz: f64,
}

impl Default for PulsesSection {
    fn default() -> Self {
        PulsesSection {
            pi_samples: Some(268),
            pi2_samples: Some(134),
            rabi_mhz: None,
            amplitude: 0.8,
            shape: Shape::Constant,
            carrier_hz: DEFAULT_CARRIER_HZ,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    Rabi,
    T1,
    Hahn,
    Cpmg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepUnit {
    Ns,
    Samples,
}

/// Swept quantity: drive length (rabi), dark wait (t1) or tau (hahn, cpmg).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub unit: SweepUnit,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    pub kind: SequenceKind,
    #[serde(default = "default_n")]
    pub n_pulses: u32,
    #[serde(default)]
    pub pattern: PhasePattern,
    #[serde(default)]
    pub readout: ReadoutSign,
    pub sweep: SweepSection,
    #[serde(default)]
    pub scaffold: Scaffold,
}

fn default_n() -> u32 {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub b_field_gauss: f64,
    #[serde(default = "default_gamma")]
    pub gamma_c13_hz_per_gauss: f64,
    /// `[A_khz, B_khz]` per nucleus.
    #[serde(default)]
    pub spins: Vec<[f64; 2]>,
    pub t1_ms: Option<f64>,
    pub t2_ms: Option<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_gamma() -> f64 {
    GAMMA_C13_HZ_PER_GAUSS
}

fn default_p() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub shots: u64,
    pub c0: f64,
    pub c1: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FitSection {
    /// Put the `[system]` T1/T2 envelope into the fit model.
    pub use_system_decoherence: bool,
    #[serde(flatten)]
    pub settings: FitConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.pulses.amplitude) {
            return invalid(format!("pulses.amplitude {} outside [0, 1]", self.pulses.amplitude));
        }
        if !(self.pulses.carrier_hz >= 0.0 && self.pulses.carrier_hz < self.clock.dac_rate_hz() as f64 / 2.0) {
            return invalid("pulses.carrier_hz must be in [0, dac_rate / 2)");
        }
        self.pulse_lengths()?;
        if let Some(s) = &self.sequence {
            s.sweep.samples(&self.clock)?;
        }
        if let Some(s) = &self.system {
            s.spin_system()?;
        }
        if let Some(n) = &self.noise {
            n.contrast()?;
        }
        self.fit.settings.validate().map_err(|e| ConfigError::Invalid(format!("fit: {e}")))?;
        Ok(())
    }

    pub fn sequence(&self) -> Result<&SequenceSection, ConfigError> {
        self.sequence.as_ref().ok_or(ConfigError::Missing("sequence"))
    }

    pub fn system(&self) -> Result<&SystemSection, ConfigError> {
        self.system.as_ref().ok_or(ConfigError::Missing("system"))
    }

    /// (pi, pi/2) lengths in samples.
    pub fn pulse_lengths(&self) -> Result<(u64, u64), ConfigError> {
        let p = &self.pulses;
        let pi = match (p.pi_samples, p.rabi_mhz) {
            (Some(n), _) => n,
            (None, Some(f)) if f > 0.0 => {
                let t = 1.0 / (2.0 * f * 1e6);
                self.clock.seconds_to_samples(t, Rounding::Nearest).map_err(|e| ConfigError::Invalid(e.to_string()))?.samples
            }
            _ => return invalid("pulses needs pi_samples or a positive rabi_mhz"),
        };
        let pi2 = p.pi2_samples.unwrap_or(pi.div_ceil(2));
        if pi == 0 || pi2 == 0 {
            return invalid("pulse lengths must be at least one sample");
        }
        Ok((pi, pi2))
    }

    /// One program per sweep point, with the swept value in samples.
    pub fn programs(&self) -> Result<Vec<(u64, PulseProgram)>, ConfigError> {
        let seq = self.sequence()?;
        let points = seq.sweep.samples(&self.clock)?;
        let (pi, pi2) = self.pulse_lengths()?;
        let pi = PulseRef { bank: "pi".into(), length: pi };
        let pi2 = PulseRef { bank: "pi2".into(), length: pi2 };
        let (clock, carrier) = (self.clock, self.pulses.carrier_hz);
        let built = match seq.kind {
            SequenceKind::Rabi => build_rabi(&points, &seq.scaffold, &clock, carrier),
            SequenceKind::T1 => build_t1(&points, &seq.scaffold, &clock, carrier),
            SequenceKind::Hahn => build_hahn(&points, &pi, &pi2, &seq.scaffold, &clock, carrier),
            SequenceKind::Cpmg => points
                .iter()
                .map(|&tau| {
                    let spec = CpmgSpec {
                        n_pulses: seq.n_pulses,
                        tau_samples: tau,
                        pi: pi.clone(),
                        pi2: pi2.clone(),
                        phase_pattern: seq.pattern,
                        readout: seq.readout,
                    };
                    build_cpmg(&spec, &seq.scaffold, &clock, carrier)
                })
                .collect(),
        }
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(points.into_iter().zip(built).collect())
    }

    /// Banks referenced by `prog`, each holding an envelope of the pulse length.
    pub fn banks_for(&self, prog: &PulseProgram) -> Result<Vec<WaveformBank>, ConfigError> {
        let mut lengths = BTreeMap::new();
        for e in prog.mw_pulses() {
            if let Some(id) = &e.bank_id {
                lengths.entry(id.clone()).or_insert(e.duration_samples);
            }
        }
        lengths
            .into_iter()
            .map(|(id, len)| {
                let len = u32::try_from(len).map_err(|_| ConfigError::Invalid(format!("pulse of {len} samples")))?;
                let env = make_envelope(len, self.pulses.amplitude, 0.0, self.pulses.shape)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(build_bank(id, env, &self.clock))
            })
            .collect()
    }

    /// Banks of `prog` and their channel layout; a program without
    /// microwave pulses gets an empty layout.
    pub fn channel(&self, prog: &PulseProgram) -> Result<(ChannelLayout, Vec<WaveformBank>), ConfigError> {
        let banks = self.banks_for(prog)?;
        if banks.is_empty() {
            return Ok((ChannelLayout { slots: Vec::new(), used: 0, capacity: CHANNEL_CAPACITY }, banks));
        }
        Ok((allocate_channel(&banks)?, banks))
    }

    /// Refocusing pulse count of the configured sequence, for the spin model.
    pub fn n_pulses(&self) -> Result<u32, ConfigError> {
        let seq = self.sequence()?;
        match seq.kind {
            SequenceKind::Cpmg => Ok(seq.n_pulses),
            SequenceKind::Hahn => Ok(1),
            SequenceKind::Rabi => Err(ConfigError::Model("the spin model covers hahn and cpmg sequences, not rabi".into())),
            SequenceKind::T1 => Err(ConfigError::Model("the spin model covers hahn and cpmg sequences, not t1".into())),
        }
    }

    /// Synthetic trace over the sweep, on the DAC sample grid. Without a
    /// `[noise]` section the trace is noise free; `seed` overrides `noise.seed`.
    pub fn simulate(&self, seed: Option<u64>) -> Result<CpmgTrace, ConfigError> {
        use rand::SeedableRng;
        use rayon::prelude::*;
        let n = self.n_pulses()?;
        let system = self.system()?.spin_system()?;
        let taus: Vec<f64> = self.sequence()?.sweep.samples(&self.clock)?.iter().map(|&s| self.clock.samples_to_seconds(s)).collect();
        let px = taus
            .par_iter()
            .map(|&t| px_multi(&system, t, n))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ConfigError::Model(e.to_string()))?;
        match &self.noise {
            Some(noise) => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.unwrap_or(noise.seed));
                sample_counts(&taus, &px, noise.shots, noise.contrast()?, &mut rng).map_err(|e| ConfigError::Model(e.to_string()))
            }
            None => Ok(CpmgTrace::from_values(&taus, &px)),
        }
    }

    /// Fit settings, with the system envelope folded in when requested.
    pub fn fit_config(&self) -> Result<FitConfig, ConfigError> {
        let mut cfg = self.fit.settings.clone();
        if self.fit.use_system_decoherence {
            cfg.envelope = self.system()?.decoherence()?;
        }
        Ok(cfg)
    }
}

impl SweepSection {
    /// Sweep points in DAC samples. Each bound is rounded to the nearest
    /// sample; the step must come out at one sample or more.
    pub fn samples(&self, clock: &ClockConfig) -> Result<Vec<u64>, ConfigError> {
        let conv = |x: f64, what: &str| -> Result<u64, ConfigError> {
            if !(x.is_finite() && x >= 0.0) {
                return invalid(format!("sweep.{what} = {x} must be finite and non-negative"));
            }
            match self.unit {
                SweepUnit::Samples if x.fract() != 0.0 => invalid(format!("sweep.{what} = {x} is not a whole sample count")),
                SweepUnit::Samples => Ok(x as u64),
                SweepUnit::Ns => clock
                    .seconds_to_samples(x * 1e-9, Rounding::Nearest)
                    .map(|q| q.samples)
                    .map_err(|e| ConfigError::Invalid(e.to_string())),
            }
        };
        let (start, stop, step) = (conv(self.start, "start")?, conv(self.stop, "stop")?, conv(self.step, "step")?);
        if step == 0 {
            return invalid(format!("sweep.step = {} is below one DAC sample", self.step));
        }
        if stop < start {
            return invalid("sweep.stop is before sweep.start");
        }
        let n = (stop - start) / step + 1;
        if n as usize > MAX_SWEEP_POINTS {
            return invalid(format!("sweep has {n} points, limit is {MAX_SWEEP_POINTS}"));
        }
        Ok((0..n).map(|i| start + i * step).collect())
    }
}

impl SystemSection {
    pub fn field(&self) -> Result<FieldConfig, ConfigError> {
        FieldConfig::with_gamma(self.b_field_gauss, self.gamma_c13_hz_per_gauss).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn decoherence(&self) -> Result<Option<DecoherenceModel>, ConfigError> {
        let ms = |v: Option<f64>| v.map_or(f64::INFINITY, |x| x * 1e-3);
        if self.t1_ms.is_none() && self.t2_ms.is_none() {
            return Ok(None);
        }
        DecoherenceModel::new(ms(self.t1_ms), ms(self.t2_ms), self.p)
            .map(Some)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn spin_system(&self) -> Result<SpinSystem, ConfigError> {
        Ok(SpinSystem {
            field: self.field()?,
            spins: self.spins.iter().map(|&[a, b]| HyperfinePair::from_khz(a, b)).collect(),
            decoherence: self.decoherence()?,
        })
    }
}

impl NoiseSection {
    pub fn contrast(&self) -> Result<Contrast, ConfigError> {
        if self.shots == 0 {
            return invalid("noise.shots must be positive");
        }
        Contrast::new(self.c0, self.c1).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
