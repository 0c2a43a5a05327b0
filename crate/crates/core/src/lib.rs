//! Sub-cycle pulse scheduling for split-clock control hardware, and CPMG
//! spectroscopy of NV-centre nuclear spin environments.
//!
//! Modules, bottom up:
//! - [`clock`]: coarse/fine delay decomposition between the sequencer and DAC clocks.
//! - [`waveform`]: envelopes, staggered waveform banks, channel memory, NCO words.
//! - [`sequencer`]: pulse-program IR, experiment builders and the compiler.
//! - [`dacsim`]: sample-exact rendering and edge measurement.
//! - [`spinmodel`]: CPMG coherence of an electron spin coupled to 13C nuclei.
//! - [`specfit`]: dip detection, harmonic grouping and hyperfine fitting.
//! - [`config`] and [`cli`]: the batch front end.

pub mod cli;
pub mod clock;
pub mod config;
pub mod dacsim;
pub mod sequencer;
pub mod specfit;
pub mod spinmodel;
pub mod waveform;
