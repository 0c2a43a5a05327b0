//! End-to-end extraction: dips, ladders, line fit, lineshape fits, aggregation.

use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dips::{detect_dips, DipSet};
use super::harmonics::{group_harmonics, HarmonicGroup};
use super::linear::linear_fit_a;
use super::lineshape::{fit_lineshape_with_background, LineshapeFit};
use super::{FitConfig, FitError};
use crate::spinmodel::{coherence, CpmgTrace, FieldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpinStatus {
    /// At least one window fitted and accepted.
    Fitted,
    /// Every window fit exceeded the chi-square threshold.
    Rejected,
    /// No window could be fitted; only the line-fit estimate exists.
    LinearOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinEstimate {
    pub spin: usize,
    pub harmonics: Vec<u32>,
    pub dip_taus_s: Vec<f64>,
    pub linear_a_khz: f64,
    pub linear_a_err_khz: f64,
    /// Fewer than two dips; the line-fit value assumes the smallest |A|.
    pub insufficient: bool,
    pub a_khz: f64,
    pub a_err_khz: f64,
    pub b_khz: f64,
    pub b_err_khz: f64,
    pub chi2_red: f64,
    pub windows_used: usize,
    pub status: SpinStatus,
}

impl SpinEstimate {
    pub fn rejected(&self) -> bool {
        self.status == SpinStatus::Rejected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFit {
    pub spin: usize,
    pub k: u32,
    pub tau_s: f64,
    pub lo_s: f64,
    pub hi_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<LineshapeFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n_pulses: u32,
    pub b_field_gauss: f64,
    pub bound_khz: f64,
    pub chi2_threshold: f64,
    pub dips_found: usize,
    pub dips_ungrouped: usize,
    pub spins: Vec<SpinEstimate>,
    pub windows: Vec<WindowFit>,
}

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "spin",
    "a_khz",
    "a_err_khz",
    "b_khz",
    "b_err_khz",
    "linear_a_khz",
    "linear_a_err_khz",
    "chi2_red",
    "windows",
    "harmonics",
    "status",
];

impl FitReport {
    fn empty(field: &FieldConfig, n_pulses: u32, cfg: &FitConfig) -> FitReport {
        FitReport {
            n_pulses,
            b_field_gauss: field.b_field_gauss,
            bound_khz: cfg.bound_khz,
            chi2_threshold: cfg.chi2_threshold,
            dips_found: 0,
            dips_ungrouped: 0,
            spins: Vec::new(),
            windows: Vec::new(),
        }
    }

    /// Structured key-value form (TOML).
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_text(s: &str) -> Result<FitReport, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(SUMMARY_COLUMNS).map_err(std::io::Error::other)?;
        for s in &self.spins {
            let ks: Vec<String> = s.harmonics.iter().map(u32::to_string).collect();
            wr.write_record([
                s.spin.to_string(),
                format!("{:.4}", s.a_khz),
                format!("{:.4}", s.a_err_khz),
                format!("{:.4}", s.b_khz),
                format!("{:.4}", s.b_err_khz),
                format!("{:.4}", s.linear_a_khz),
                format!("{:.4}", s.linear_a_err_khz),
                format!("{:.4}", s.chi2_red),
                s.windows_used.to_string(),
                ks.join(" "),
                serde_json::to_value(s.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            ])
            .map_err(std::io::Error::other)?;
        }
        wr.flush()
    }
}

/// Fit window for dip `i`: its cluster extent widened by `window_fwhm`
/// widths, cut midway to the neighbouring dips and to the trace.
pub fn dip_window(dips: &DipSet, i: usize, t_min: f64, t_max: f64, cfg: &FitConfig) -> Result<(f64, f64), FitError> {
    let d = &dips.dips[i];
    let mut lo = d.span_lo - cfg.window_fwhm * d.width;
    let mut hi = d.span_hi + cfg.window_fwhm * d.width;
    if i > 0 {
        lo = lo.max(0.5 * (dips.dips[i - 1].span_hi + d.span_lo));
    }
    if i + 1 < dips.len() {
        hi = hi.min(0.5 * (d.span_hi + dips.dips[i + 1].span_lo));
    }
    lo = lo.max(t_min);
    hi = hi.min(t_max);
    let need = cfg.min_side_fwhm * d.width;
    if d.tau - lo < need || hi - d.tau < need {
        return Err(FitError::WindowTooNarrow(format!(
            "dip at {:.2} ns leaves {:.2}/{:.2} ns of its {:.2} ns width",
            d.tau * 1e9,
            (d.tau - lo) * 1e9,
            (hi - d.tau) * 1e9,
            d.width * 1e9
        )));
    }
    Ok((lo, hi))
}

fn linear_stage(group: &HarmonicGroup, dips: &DipSet, field: &FieldConfig) -> (f64, f64) {
    let pts: Vec<(u32, f64, f64)> = group
        .dips
        .iter()
        .zip(&group.harmonics)
        .map(|(&i, &k)| (k, dips.dips[i].tau, dips.dips[i].tau_err))
        .collect();
    match linear_fit_a(&pts, field) {
        Ok(est) => (est.a_khz, est.a_err_khz),
        Err(_) => {
            let (k, tau, err) = pts[0];
            let x = f64::from(2 * k - 1);
            let s = tau / x;
            (group.a_grid_khz, err / x / (2.0 * s * s) * 1e-3)
        }
    }
}

/// Run the whole extraction on one trace.
///
/// Stage failures inside a group (narrow windows, non-convergence) are
/// recorded against that window and do not stop the other groups. After
/// the first pass every window is refitted `background_passes` times with
/// the other nuclei's current estimates as a fixed background.
pub fn fit_pipeline(trace: &CpmgTrace, field: &FieldConfig, n_pulses: u32, cfg: &FitConfig) -> Result<FitReport, FitError> {
    cfg.validate()?;
    let mut report = FitReport::empty(field, n_pulses, cfg);
    if trace.is_empty() {
        return Ok(report);
    }
    let dips = detect_dips(trace, &cfg.dip_options())?;
    let groups = group_harmonics(&dips, field, &cfg.group_options());
    report.dips_found = dips.len();
    report.dips_ungrouped = dips.len() - groups.iter().map(HarmonicGroup::len).sum::<usize>();

    let (t_min, t_max) = (trace.points[0].tau_s, trace.points[trace.len() - 1].tau_s);
    let linear: Vec<(f64, f64)> = groups.iter().map(|g| linear_stage(g, &dips, field)).collect();
    let jobs: Vec<(usize, usize, u32)> = groups
        .iter()
        .enumerate()
        .flat_map(|(s, g)| g.dips.iter().zip(&g.harmonics).map(move |(&i, &k)| (s, i, k)))
        .collect();

    let mut estimates: Vec<SpinEstimate> = Vec::new();
    for pass in 0..=cfg.background_passes {
        if pass > 0 && estimates.iter().filter(|e| e.a_khz.is_finite()).count() < 2 {
            break;
        }
        report.windows = jobs
            .par_iter()
            .map(|&(spin, i, k)| {
                let tau = dips.dips[i].tau;
                let mut wf = WindowFit { spin, k, tau_s: tau, lo_s: f64::NAN, hi_s: f64::NAN, fit: None, error: None };
                let result = dip_window(&dips, i, t_min, t_max, cfg).and_then(|(lo, hi)| {
                    wf.lo_s = lo;
                    wf.hi_s = hi;
                    let w = trace.window(lo, hi);
                    let bg = background(&w, spin, &estimates, field, n_pulses, cfg);
                    fit_lineshape_with_background(&w, field, n_pulses, linear[spin].0, Some(&bg), cfg)
                });
                match result {
                    Ok(f) => wf.fit = Some(f),
                    Err(e) => wf.error = Some(e.to_string()),
                }
                wf
            })
            .collect();
        estimates = aggregate(&groups, &dips, &linear, &report.windows);
    }
    report.spins = estimates;
    Ok(report)
}

/// Product of the coherence factors of every other estimated nucleus and,
/// when configured, the decoherence envelope.
fn background(
    window: &CpmgTrace,
    spin: usize,
    estimates: &[SpinEstimate],
    field: &FieldConfig,
    n_pulses: u32,
    cfg: &FitConfig,
) -> Vec<f64> {
    let others: Vec<(f64, f64)> = estimates
        .iter()
        .filter(|e| e.spin != spin && e.a_khz.is_finite() && e.b_khz.is_finite())
        .map(|e| (TAU * e.a_khz * 1e3, TAU * e.b_khz * 1e3))
        .collect();
    let wl = field.omega_l();
    window
        .points
        .iter()
        .map(|p| {
            let env = cfg.envelope.map_or(1.0, |d| d.envelope(p.tau_s, n_pulses));
            env * others.iter().map(|&(a, b)| coherence(a, b, wl, p.tau_s, n_pulses)).product::<f64>()
        })
        .collect()
}

fn aggregate(groups: &[HarmonicGroup], dips: &DipSet, linear: &[(f64, f64)], windows: &[WindowFit]) -> Vec<SpinEstimate> {
    let mut out = Vec::with_capacity(groups.len());
    for (s, g) in groups.iter().enumerate() {
        let fits: Vec<&LineshapeFit> = windows.iter().filter(|w| w.spin == s).filter_map(|w| w.fit.as_ref()).collect();
        let accepted: Vec<&&LineshapeFit> =
            fits.iter().filter(|f| !f.rejected && f.a_err_khz.is_finite() && f.b_err_khz.is_finite()).collect();
        let mut est = SpinEstimate {
            spin: s,
            harmonics: g.harmonics.clone(),
            dip_taus_s: g.dips.iter().map(|&i| dips.dips[i].tau).collect(),
            linear_a_khz: linear[s].0,
            linear_a_err_khz: linear[s].1,
            insufficient: g.insufficient(),
            a_khz: f64::NAN,
            a_err_khz: f64::NAN,
            b_khz: f64::NAN,
            b_err_khz: f64::NAN,
            chi2_red: f64::NAN,
            windows_used: accepted.len(),
            status: SpinStatus::LinearOnly,
        };
        if !accepted.is_empty() {
            let (a, a_err) = weighted_mean(accepted.iter().map(|f| (f.a_khz, f.a_err_khz)));
            let (b, b_err) = weighted_mean(accepted.iter().map(|f| (f.b_khz, f.b_err_khz)));
            est.a_khz = a;
            est.a_err_khz = a_err;
            est.b_khz = b;
            est.b_err_khz = b_err;
            est.chi2_red = accepted.iter().map(|f| f.chi2_red).fold(0.0, f64::max);
            est.status = SpinStatus::Fitted;
        } else if let Some(best) = fits.iter().min_by(|x, y| x.chi2_red.total_cmp(&y.chi2_red)) {
            est.a_khz = best.a_khz;
            est.a_err_khz = best.a_err_khz;
            est.b_khz = best.b_khz;
            est.b_err_khz = best.b_err_khz;
            est.chi2_red = best.chi2_red;
            est.status = SpinStatus::Rejected;
        }
        out.push(est);
    }
    out
}

fn weighted_mean(vals: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let (mut sw, mut swx) = (0.0, 0.0);
    for (x, s) in vals {
        let w = 1.0 / (s * s).max(1e-300);
        sw += w;
        swx += w * x;
    }
    (swx / sw, 1.0 / sw.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_empty_report() {
        let f = FieldConfig::new(365.0).unwrap();
        let r = fit_pipeline(&CpmgTrace::default(), &f, 32, &FitConfig::default()).unwrap();
        assert!(r.spins.is_empty() && r.windows.is_empty());
        let back = FitReport::from_text(&r.to_text()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn flat_trace_empty_report() {
        let f = FieldConfig::new(365.0).unwrap();
        let taus: Vec<f64> = (0..100).map(|i| 1e-6 + i as f64 * 2e-9).collect();
        let t = CpmgTrace::from_values(&taus, &vec![1.0; 100]);
        let r = fit_pipeline(&t, &f, 32, &FitConfig::default()).unwrap();
        assert!(r.spins.is_empty());
        let mut buf = Vec::new();
        r.write_summary_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), SUMMARY_COLUMNS.join(","));
    }

    #[test]
    fn weighted_mean_values() {
        let (m, s) = weighted_mean([(1.0, 1.0), (3.0, 1.0)].into_iter());
        assert!((m - 2.0).abs() < 1e-15 && (s - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
