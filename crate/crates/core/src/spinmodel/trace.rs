//! Synthetic fluorescence traces and their CSV form.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{px_multi, SpinError, SpinSystem};

pub const TRACE_COLUMNS: [&str; 5] = ["tau_s", "px_est", "px_err", "counts_signal", "counts_ref"];

/// Mean photon counts per shot for the bright (c0) and dark (c1) projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub c0: f64,
    pub c1: f64,
}

impl Contrast {
    pub fn new(c0: f64, c1: f64) -> Result<Self, SpinError> {
        if !(c1 >= 0.0 && c0 > c1 && c0.is_finite()) {
            return Err(SpinError::BadContrast { c0, c1 });
        }
        Ok(Contrast { c0, c1 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub tau_s: f64,
    pub px_est: f64,
    pub px_err: f64,
    pub counts_signal: u64,
    pub counts_ref: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CpmgTrace {
    pub points: Vec<TracePoint>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("header must be `{}`, got `{found}`", TRACE_COLUMNS.join(","))]
    Header { found: String },
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
}

impl CpmgTrace {
    /// Noise-free trace: `px_err` and counts are zero.
    pub fn from_values(taus: &[f64], px: &[f64]) -> CpmgTrace {
        CpmgTrace {
            points: taus
                .iter()
                .zip(px)
                .map(|(&tau_s, &px_est)| TracePoint { tau_s, px_est, px_err: 0.0, counts_signal: 0, counts_ref: 0 })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tau_s).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.px_est).collect()
    }

    /// Points with `lo <= tau <= hi`.
    pub fn window(&self, lo: f64, hi: f64) -> CpmgTrace {
        CpmgTrace { points: self.points.iter().filter(|p| p.tau_s >= lo && p.tau_s <= hi).copied().collect() }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TraceError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(TRACE_COLUMNS).map_err(csv_io)?;
        for p in &self.points {
            wr.write_record([
                format!("{:e}", p.tau_s),
                format!("{:e}", p.px_est),
                format!("{:e}", p.px_err),
                p.counts_signal.to_string(),
                p.counts_ref.to_string(),
            ])
            .map_err(csv_io)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<CpmgTrace, TraceError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header = rd.headers().map_err(|e| TraceError::Row { row: 1, msg: e.to_string() })?.clone();
        if header.iter().ne(TRACE_COLUMNS.iter().copied()) {
            return Err(TraceError::Header { found: header.iter().collect::<Vec<_>>().join(",") });
        }
        let mut points = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| TraceError::Row { row, msg: e.to_string() })?;
            let f = |j: usize| -> Result<f64, TraceError> {
                rec[j].parse::<f64>().map_err(|e| TraceError::Row { row, msg: format!("{}: {e}", TRACE_COLUMNS[j]) })
            };
            let u = |j: usize| -> Result<u64, TraceError> {
                rec[j].parse::<u64>().map_err(|e| TraceError::Row { row, msg: format!("{}: {e}", TRACE_COLUMNS[j]) })
            };
            let p = TracePoint { tau_s: f(0)?, px_est: f(1)?, px_err: f(2)?, counts_signal: u(3)?, counts_ref: u(4)? };
            if !(p.tau_s.is_finite() && p.px_est.is_finite() && p.px_err.is_finite() && p.px_err >= 0.0) {
                return Err(TraceError::Row { row, msg: "non-finite or negative value".into() });
            }
            if let Some(prev) = points.last().map(|q: &TracePoint| q.tau_s) {
                if p.tau_s <= prev {
                    return Err(TraceError::Row { row, msg: format!("tau {} not increasing", p.tau_s) });
                }
            }
            points.push(p);
        }
        Ok(CpmgTrace { points })
    }
}

fn csv_io(e: csv::Error) -> TraceError {
    TraceError::Io(std::io::Error::other(e))
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Shot-noise limited trace. Signal counts are Poisson with mean
/// `shots (c1 + (c0 - c1) P_x)`; the reference arm is Poisson with mean
/// `shots c0`. The estimate normalizes with the configured contrast.
pub fn sample_trace<R: Rng + ?Sized>(
    system: &SpinSystem,
    taus: &[f64],
    n_pulses: u32,
    shots: u64,
    contrast: Contrast,
    rng: &mut R,
) -> Result<CpmgTrace, SpinError> {
    let px = taus.iter().map(|&t| px_multi(system, t, n_pulses)).collect::<Result<Vec<_>, _>>()?;
    sample_counts(taus, &px, shots, contrast, rng)
}

/// Apply the readout noise model of [`sample_trace`] to given true `P_x` values.
pub fn sample_counts<R: Rng + ?Sized>(
    taus: &[f64],
    px: &[f64],
    shots: u64,
    contrast: Contrast,
    rng: &mut R,
) -> Result<CpmgTrace, SpinError> {
    let contrast = Contrast::new(contrast.c0, contrast.c1)?;
    if shots == 0 {
        return Err(SpinError::NoShots);
    }
    let shots_f = shots as f64;
    let span = contrast.c0 - contrast.c1;
    let points = taus
        .iter()
        .zip(px)
        .map(|(&tau, &p)| {
            let signal = poisson(shots_f * (contrast.c1 + span * p), rng);
            let reference = poisson(shots_f * contrast.c0, rng);
            TracePoint {
                tau_s: tau,
                px_est: (signal as f64 / shots_f - contrast.c1) / span,
                px_err: (signal.max(1) as f64).sqrt() / (shots_f * span),
                counts_signal: signal,
                counts_ref: reference,
            }
        })
        .collect();
    Ok(CpmgTrace { points })
}
