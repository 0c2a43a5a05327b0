//! Local-minimum detection with prominence filtering and sub-grid refinement.

use serde::{Deserialize, Serialize};

use super::FitError;
use crate::spinmodel::CpmgTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipOptions {
    pub smoothing: usize,
    pub min_prominence: f64,
    pub noise_factor: f64,
    pub cluster_gap_s: f64,
}

impl Default for DipOptions {
    fn default() -> Self {
        super::FitConfig::default().dip_options()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dip {
    /// Refined minimum position, s.
    pub tau: f64,
    pub tau_err: f64,
    /// Smoothed signal value at the minimum.
    pub depth: f64,
    /// Full width at half prominence, s.
    pub width: f64,
    pub prominence: f64,
    /// Index of the grid point at the minimum.
    pub index: usize,
    /// Extent of the merged cluster this dip represents (equal to `tau` for isolated dips).
    pub span_lo: f64,
    pub span_hi: f64,
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DipSet {
    pub dips: Vec<Dip>,
    pub noise: f64,
    pub threshold: f64,
}

impl DipSet {
    pub fn len(&self) -> usize {
        self.dips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dips.is_empty()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.dips.iter().map(|d| d.tau).collect()
    }
}

/// Centered moving average; the window shrinks symmetrically at the ends.
pub fn moving_average(y: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = y.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let s: f64 = y[i - h..=i + h].iter().sum();
            s / (2 * h + 1) as f64
        })
        .collect()
}

/// Per-point noise from the median absolute second difference.
pub fn noise_estimate(y: &[f64]) -> f64 {
    if y.len() < 3 {
        return 0.0;
    }
    let mut d: Vec<f64> = y.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()).collect();
    d.sort_by(f64::total_cmp);
    let med = d[d.len() / 2];
    1.4826 * med / 6f64.sqrt()
}

fn prominence(s: &[f64], i: usize) -> (f64, usize, usize) {
    let v = s[i];
    let mut lo = i;
    let mut left_max = v;
    while lo > 0 && s[lo - 1] >= v {
        lo -= 1;
        left_max = left_max.max(s[lo]);
    }
    let mut hi = i;
    let mut right_max = v;
    while hi + 1 < s.len() && s[hi + 1] >= v {
        hi += 1;
        right_max = right_max.max(s[hi]);
    }
    (left_max.min(right_max) - v, lo, hi)
}

fn vertex(x: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d2 - d1) / (x[2] - x[0]);
    if a <= 0.0 {
        return (x[1], y[1]);
    }
    let b = d1 - a * (x[0] + x[1]);
    let xv = (-b / (2.0 * a)).clamp(x[0], x[2]);
    let yv = y[1] + d1 * (xv - x[1]) + a * (xv - x[0]) * (xv - x[1]);
    (xv, yv.min(y[1]))
}

fn crossing(t: &[f64], s: &[f64], i: usize, level: f64, step: isize, stop: usize) -> f64 {
    let mut j = i;
    loop {
        let next = j as isize + step;
        if next < 0 || next as usize >= s.len() || (step < 0 && (next as usize) < stop) || (step > 0 && next as usize > stop) {
            return t[j];
        }
        let k = next as usize;
        if s[k] >= level {
            let f = (level - s[j]) / (s[k] - s[j]);
            return t[j] + f * (t[k] - t[j]);
        }
        j = k;
    }
}

/// Find dips in a trace.
///
/// Minima of the smoothed signal whose prominence reaches
/// `max(min_prominence, noise_factor * noise)` are kept, refined by a
/// parabola through the three points around the minimum, and dips closer
/// than `cluster_gap_s` are merged into the deepest of them.
pub fn detect_dips(trace: &CpmgTrace, opts: &DipOptions) -> Result<DipSet, FitError> {
    let n = trace.len();
    if n < 16 {
        return Err(FitError::EmptyTrace(n));
    }
    let t = trace.taus();
    let y = trace.values();
    if let Some(i) = t.windows(2).position(|w| w[1] <= w[0] || !w[1].is_finite()) {
        return Err(FitError::NonMonotone(i + 1));
    }
    let s = moving_average(&y, opts.smoothing.max(1));
    let noise = noise_estimate(&y);
    let threshold = opts.min_prominence.max(opts.noise_factor * noise);
    let step = (t[n - 1] - t[0]) / (n - 1) as f64;

    let mut found = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if s[i] < s[i - 1] {
            // walk across a flat bottom
            let mut j = i;
            while j + 1 < n && s[j + 1] == s[i] {
                j += 1;
            }
            if j + 1 < n && s[j + 1] > s[i] {
                let m = (i + j) / 2;
                let (prom, lo, hi) = prominence(&s, m);
                if prom >= threshold && prom > 0.0 {
                    let (tau, depth) = vertex([t[m - 1], t[m], t[m + 1]], [s[m - 1], s[m], s[m + 1]]);
                    let level = s[m] + 0.5 * prom;
                    let left = crossing(&t, &s, m, level, -1, lo);
                    let right = crossing(&t, &s, m, level, 1, hi);
                    found.push(Dip {
                        tau,
                        tau_err: step / 12f64.sqrt(),
                        depth,
                        width: right - left,
                        prominence: prom,
                        index: m,
                        span_lo: tau,
                        span_hi: tau,
                        members: 1,
                    });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let mut dips: Vec<Dip> = Vec::with_capacity(found.len());
    for d in found {
        match dips.last_mut() {
            Some(last) if d.tau - last.span_hi < opts.cluster_gap_s => {
                let (lo, hi, members) = (last.span_lo, d.tau, last.members + 1);
                if d.depth < last.depth {
                    *last = d;
                }
                last.span_lo = lo;
                last.span_hi = hi;
                last.members = members;
            }
            _ => dips.push(d),
        }
    }
    Ok(DipSet { dips, noise, threshold })
}
