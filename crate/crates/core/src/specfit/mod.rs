//! Hyperfine parameter extraction from CPMG traces.
//!
//! The flow is dip detection, grouping of dips onto `tau_k` ladders, a
//! linear fit of each ladder for a first estimate of A, and a bounded
//! nonlinear fit of every resonance window to the single-spin model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spinmodel::DecoherenceModel;

pub mod dips;
pub mod harmonics;
pub mod linear;
pub mod lineshape;
pub mod lm;
pub mod pipeline;

pub use dips::{detect_dips, Dip, DipOptions, DipSet};
pub use harmonics::{group_harmonics, GroupOptions, HarmonicGroup};
pub use linear::{linear_fit_a, LinearEstimate};
pub use lineshape::{fit_lineshape, fit_lineshape_with_background, LineshapeFit};
pub use pipeline::{fit_pipeline, FitReport, SpinEstimate, WindowFit};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("trace has {0} points, at least 16 are needed")]
    EmptyTrace(usize),
    #[error("tau grid is not strictly increasing at point {0}")]
    NonMonotone(usize),
    #[error("group has {0} dips, a line fit needs at least 2")]
    DegenerateGroup(usize),
    #[error("fit window too narrow: {0}")]
    WindowTooNarrow(String),
    #[error("fit did not converge after {iterations} iterations (A = {a_khz:.3} kHz, B = {b_khz:.3} kHz, reduced chi2 = {chi2_red:.3})")]
    NonConvergence { iterations: usize, a_khz: f64, b_khz: f64, chi2_red: f64 },
    #[error("invalid fit setting: {0}")]
    BadConfig(String),
}

/// Every tunable of the fit pipeline. Frequencies in kHz, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Moving-average window in points.
    pub smoothing: usize,
    /// Absolute prominence floor, in units of P_x.
    pub min_prominence: f64,
    /// Prominence floor as a multiple of the per-point noise estimate.
    pub noise_factor: f64,
    /// Dips closer than this are one feature (high-N fringes).
    pub cluster_gap_s: f64,
    pub a_search_min_khz: f64,
    pub a_search_max_khz: f64,
    pub a_search_step_khz: f64,
    pub match_tol_s: f64,
    pub match_tol_rel: f64,
    /// Model bound on |A| and B, kHz.
    pub bound_khz: f64,
    pub chi2_threshold: f64,
    /// Window half-extent beyond the dip, in FWHM.
    pub window_fwhm: f64,
    /// Required clearance on each side of the dip, in FWHM.
    pub min_side_fwhm: f64,
    pub prescan_a_halfwidth_khz: f64,
    pub prescan_a_step_khz: f64,
    pub prescan_b_step_khz: f64,
    /// Upper B limit of the pre-scan; `None` scans up to the bound.
    pub prescan_b_max_khz: Option<f64>,
    /// Number of pre-scan minima used as extra starts.
    pub prescan_starts: usize,
    pub max_iterations: usize,
    /// Per-point sigma used when the trace carries no uncertainties.
    pub fallback_sigma: f64,
    /// Refits of every window with the other fitted nuclei as background.
    pub background_passes: usize,
    /// Independently measured decoherence; when set, its envelope is part of the model.
    pub envelope: Option<DecoherenceModel>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            smoothing: 5,
            min_prominence: 0.05,
            noise_factor: 2.0,
            cluster_gap_s: 20e-9,
            a_search_min_khz: -1000.0,
            a_search_max_khz: 1000.0,
            a_search_step_khz: 0.25,
            match_tol_s: 5e-9,
            match_tol_rel: 0.004,
            bound_khz: 1000.0,
            chi2_threshold: 3.0,
            window_fwhm: 1.5,
            min_side_fwhm: 1.0,
            prescan_a_halfwidth_khz: 40.0,
            prescan_a_step_khz: 1.0,
            prescan_b_step_khz: 2.0,
            prescan_b_max_khz: None,
            prescan_starts: 5,
            max_iterations: 200,
            fallback_sigma: 0.01,
            background_passes: 2,
            envelope: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::BadConfig(m.to_string()));
        if self.smoothing == 0 {
            return bad("smoothing must be at least 1 point");
        }
        if !(self.min_prominence >= 0.0 && self.noise_factor >= 0.0) {
            return bad("prominence settings must be non-negative");
        }
        if !(self.a_search_step_khz > 0.0 && self.a_search_max_khz > self.a_search_min_khz) {
            return bad("A search range must be non-empty with a positive step");
        }
        if !(self.bound_khz > 0.0 && self.chi2_threshold > 0.0) {
            return bad("bound and chi2 threshold must be positive");
        }
        if !(self.prescan_a_step_khz > 0.0 && self.prescan_b_step_khz > 0.0 && self.prescan_a_halfwidth_khz >= 0.0) {
            return bad("pre-scan steps must be positive");
        }
        if !(self.fallback_sigma > 0.0 && self.window_fwhm > 0.0) {
            return bad("fallback sigma and window size must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if let Some(d) = &self.envelope {
            DecoherenceModel::new(d.t1, d.t2, d.stretch_p).map_err(|e| FitError::BadConfig(e.to_string()))?;
        }
        Ok(())
    }

    pub fn dip_options(&self) -> DipOptions {
        DipOptions {
            smoothing: self.smoothing,
            min_prominence: self.min_prominence,
            noise_factor: self.noise_factor,
            cluster_gap_s: self.cluster_gap_s,
        }
    }

    pub fn group_options(&self) -> GroupOptions {
        GroupOptions {
            a_min_khz: self.a_search_min_khz,
            a_max_khz: self.a_search_max_khz,
            a_step_khz: self.a_search_step_khz,
            tol_s: self.match_tol_s,
            tol_rel: self.match_tol_rel,
        }
    }
}
