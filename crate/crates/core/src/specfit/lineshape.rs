//! Nonlinear fit of one resonance window to the single-spin model.
//!
//! The model is `y = base + scale (P(A, B) - 1)` with `P` the closed-form
//! single-nucleus signal. Starts come from a 5x5 grid around the seed plus
//! the lowest minima of a chi-square pre-scan over (A, B) in which base and
//! scale are solved linearly at every grid point.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::{minimize, LmOptions};
use super::{FitConfig, FitError};
use crate::spinmodel::{coherence, CpmgTrace, FieldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineshapeFit {
    pub a_khz: f64,
    pub a_err_khz: f64,
    pub b_khz: f64,
    pub b_err_khz: f64,
    pub base: f64,
    pub scale: f64,
    pub chi2_red: f64,
    pub points: usize,
    pub rejected: bool,
    /// A or B ended on the configured bound.
    pub at_bound: bool,
    pub iterations: usize,
}

struct Window {
    tau: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    wl: f64,
    n: u32,
    /// Coherence factor of the other nuclei at each point.
    bg: Vec<f64>,
}

impl Window {
    fn shape(&self, a_khz: f64, b_khz: f64, out: &mut [f64]) {
        let (a, b) = (TAU * a_khz * 1e3, TAU * b_khz * 1e3);
        for ((o, &t), &bg) in out.iter_mut().zip(&self.tau).zip(&self.bg) {
            *o = 0.5 * (coherence(a, b, self.wl, t, self.n) * bg - 1.0);
        }
    }

    /// Best base and non-negative scale for a fixed shape, and the resulting chi-square.
    fn project(&self, g: &[f64]) -> (f64, f64, f64) {
        let (mut sw, mut sg, mut sgg, mut sy, mut sgy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((&gi, &w), &y) in g.iter().zip(&self.w).zip(&self.y) {
            sw += w;
            sg += w * gi;
            sgg += w * gi * gi;
            sy += w * y;
            sgy += w * gi * y;
        }
        let det = sw * sgg - sg * sg;
        let (mut base, mut scale) = (sy / sw, 0.0);
        if det > 1e-300 * sw * sgg {
            let s = (sw * sgy - sg * sy) / det;
            if s > 0.0 {
                scale = s;
                base = (sy - s * sg) / sw;
            }
        }
        let chi2 = (0..g.len())
            .map(|i| {
                let r = self.y[i] - base - scale * g[i];
                self.w[i] * r * r
            })
            .sum();
        (base, scale, chi2)
    }
}

fn prescan(win: &Window, a_center: f64, cfg: &FitConfig) -> Vec<(f64, f64)> {
    let bound = cfg.bound_khz;
    let a_lo = (a_center - cfg.prescan_a_halfwidth_khz).max(-bound);
    let a_hi = (a_center + cfg.prescan_a_halfwidth_khz).min(bound);
    let na = ((a_hi - a_lo) / cfg.prescan_a_step_khz).floor() as usize + 1;
    let b_max = cfg.prescan_b_max_khz.unwrap_or(bound).min(bound);
    let nb = (b_max / cfg.prescan_b_step_khz).floor() as usize;
    if nb == 0 {
        return Vec::new();
    }
    let grid: Vec<Vec<f64>> = (0..na)
        .into_par_iter()
        .map(|i| {
            let a = a_lo + i as f64 * cfg.prescan_a_step_khz;
            let mut g = vec![0.0; win.tau.len()];
            (1..=nb)
                .map(|j| {
                    win.shape(a, j as f64 * cfg.prescan_b_step_khz, &mut g);
                    win.project(&g).2
                })
                .collect()
        })
        .collect();
    let mut minima = Vec::new();
    for i in 0..na {
        for j in 0..nb {
            let v = grid[i][j];
            let mut is_min = true;
            for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (-1, 1), (1, -1)] {
                let (ii, jj) = (i as i64 + di, j as i64 + dj);
                if ii >= 0 && jj >= 0 && (ii as usize) < na && (jj as usize) < nb && grid[ii as usize][jj as usize] < v {
                    is_min = false;
                    break;
                }
            }
            if is_min {
                minima.push((v, a_lo + i as f64 * cfg.prescan_a_step_khz, (j + 1) as f64 * cfg.prescan_b_step_khz));
            }
        }
    }
    minima.sort_by(|x, y| x.0.total_cmp(&y.0));
    minima.truncate(cfg.prescan_starts);
    minima.into_iter().map(|(_, a, b)| (a, b)).collect()
}

/// Fit one resonance window.
///
/// Equivalent to [`fit_lineshape_with_background`] with no other nuclei.
pub fn fit_lineshape(
    window: &CpmgTrace,
    field: &FieldConfig,
    n_pulses: u32,
    init_a_khz: f64,
    cfg: &FitConfig,
) -> Result<LineshapeFit, FitError> {
    fit_lineshape_with_background(window, field, n_pulses, init_a_khz, None, cfg)
}

/// Fit one resonance window, optionally against a fixed background.
///
/// `background[i]` multiplies the target coherence factor at point `i`, so
/// the model becomes `base + scale ((M bg + 1)/2 - 1)`; this carries the
/// already-fitted neighbouring nuclei through the product rule.
///
/// Point weights come from `px_err`; a trace without uncertainties uses
/// `cfg.fallback_sigma` and rescales the covariance by the reduced
/// chi-square. `rejected` is set when the best reduced chi-square exceeds
/// `cfg.chi2_threshold`; A and B never leave `[-bound, bound]`, `[0, bound]`.
pub fn fit_lineshape_with_background(
    window: &CpmgTrace,
    field: &FieldConfig,
    n_pulses: u32,
    init_a_khz: f64,
    background: Option<&[f64]>,
    cfg: &FitConfig,
) -> Result<LineshapeFit, FitError> {
    cfg.validate()?;
    let m = window.len();
    if m < 8 {
        return Err(FitError::WindowTooNarrow(format!("{m} points, at least 8 needed")));
    }
    let measured = window.points.iter().all(|p| p.px_err > 0.0);
    let w: Vec<f64> = window
        .points
        .iter()
        .map(|p| {
            let s = if measured { p.px_err } else { cfg.fallback_sigma };
            1.0 / (s * s)
        })
        .collect();
    let bg = match background {
        Some(b) if b.len() == m => b.to_vec(),
        Some(b) => return Err(FitError::BadConfig(format!("background has {} points, window has {m}", b.len()))),
        None => vec![1.0; m],
    };
    let win = Window { tau: window.taus(), y: window.values(), w, wl: field.omega_l(), n: n_pulses, bg };
    let sqrt_w: Vec<f64> = win.w.iter().map(|w| w.sqrt()).collect();
    let bound = cfg.bound_khz;
    let seed = init_a_khz.clamp(-bound, bound);
    let fl = field.larmor_khz();

    let mut starts: Vec<(f64, f64)> = Vec::new();
    let da = (cfg.prescan_a_halfwidth_khz / 4.0).max(cfg.prescan_a_step_khz);
    for ka in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        for fb in [0.02, 0.05, 0.1, 0.2, 0.4] {
            starts.push(((seed + ka * da).clamp(-bound, bound), (fb * fl).min(bound)));
        }
    }
    starts.extend(prescan(&win, seed, cfg));

    let residuals = |p: &[f64], r: &mut [f64]| {
        let (a, b) = (TAU * p[0] * 1e3, TAU * p[1] * 1e3);
        for i in 0..r.len() {
            let g = 0.5 * (coherence(a, b, win.wl, win.tau[i], win.n) * win.bg[i] - 1.0);
            r[i] = (p[2] + p[3] * g - win.y[i]) * sqrt_w[i];
        }
    };
    let lo = [-bound, 0.0, -1e3, 0.0];
    let hi = [bound, bound, 1e3, 1e3];
    let steps = [1e-4, 1e-4, 1e-6, 1e-6];
    let opts = LmOptions { max_iterations: cfg.max_iterations, ..LmOptions::default() };

    let runs: Vec<_> = starts
        .par_iter()
        .map(|&(a, b)| {
            let mut g = vec![0.0; m];
            win.shape(a, b, &mut g);
            let (base, scale, _) = win.project(&g);
            minimize(residuals, &[a, b, base, scale.max(1e-3)], &lo, &hi, &steps, m, &opts)
        })
        .collect();
    let mut best = runs
        .into_iter()
        .reduce(|x, y| if y.chi2 < x.chi2 { y } else { x })
        .expect("at least one start");
    if !best.converged {
        // slow valleys (B against scale) get a longer second pass
        let more = LmOptions { max_iterations: 4 * cfg.max_iterations, ..opts };
        best = minimize(residuals, &best.x.clone(), &lo, &hi, &steps, m, &more);
    }

    let dof = m.saturating_sub(4).max(1);
    let chi2_red = best.chi2 / dof as f64;
    if !best.converged {
        return Err(FitError::NonConvergence { iterations: best.iterations, a_khz: best.x[0], b_khz: best.x[1], chi2_red });
    }
    let inflate = if measured { 1.0 } else { chi2_red };
    let (a_err, b_err) = match &best.covariance {
        Some(c) => ((c[(0, 0)] * inflate).sqrt(), (c[(1, 1)] * inflate).sqrt()),
        None => (f64::INFINITY, f64::INFINITY),
    };
    let tol = 1e-9 * bound;
    let at_bound = best.x[0].abs() >= bound - tol || best.x[1] >= bound - tol;
    Ok(LineshapeFit {
        a_khz: best.x[0],
        a_err_khz: a_err,
        b_khz: best.x[1],
        b_err_khz: b_err,
        base: best.x[2],
        scale: best.x[3],
        chi2_red,
        points: m,
        rejected: chi2_red > cfg.chi2_threshold,
        at_bound,
        iterations: best.iterations,
    })
}
