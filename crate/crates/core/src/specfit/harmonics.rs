//! Assignment of dips to resonance ladders `tau_k = (2k - 1) pi / (A + 2 wL)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::dips::DipSet;
use crate::spinmodel::FieldConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupOptions {
    pub a_min_khz: f64,
    pub a_max_khz: f64,
    pub a_step_khz: f64,
    /// Absolute matching tolerance, s.
    pub tol_s: f64,
    /// Relative matching tolerance (fraction of tau).
    pub tol_rel: f64,
}

impl Default for GroupOptions {
    fn default() -> Self {
        super::FitConfig::default().group_options()
    }
}

/// Dips attributed to one nucleus, with their harmonic labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicGroup {
    /// Indices into the dip set, ascending in tau.
    pub dips: Vec<usize>,
    pub harmonics: Vec<u32>,
    /// Grid value of A that produced the match, kHz.
    pub a_grid_khz: f64,
}

impl HarmonicGroup {
    pub fn len(&self) -> usize {
        self.dips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dips.is_empty()
    }

    /// Too few dips for a line fit.
    pub fn insufficient(&self) -> bool {
        self.dips.len() < 2
    }
}

fn omega_sum(a_khz: f64, field: &FieldConfig) -> f64 {
    2.0 * PI * a_khz * 1e3 + 2.0 * field.omega_l()
}

struct Candidate {
    a_khz: f64,
    matches: Vec<(usize, u32)>,
    cost: f64,
}

fn ladder_matches(taus: &[f64], free: &[bool], a_khz: f64, field: &FieldConfig, opts: &GroupOptions) -> Option<Candidate> {
    let den = omega_sum(a_khz, field);
    if den <= 0.0 {
        return None;
    }
    let t1 = PI / den;
    // best dip per harmonic
    let mut best: Vec<(u32, usize, f64)> = Vec::new();
    for (i, &tau) in taus.iter().enumerate() {
        if !free[i] {
            continue;
        }
        let k = ((tau / t1 + 1.0) / 2.0).round();
        if k < 1.0 || k > u32::MAX as f64 {
            continue;
        }
        let k = k as u32;
        let dev = (tau - f64::from(2 * k - 1) * t1).abs();
        let tol = opts.tol_s.max(opts.tol_rel * tau);
        if dev > tol {
            continue;
        }
        let norm = dev / tol;
        match best.iter_mut().find(|b| b.0 == k) {
            Some(b) if norm < b.2 => *b = (k, i, norm),
            Some(_) => {}
            None => best.push((k, i, norm)),
        }
    }
    if best.is_empty() {
        return None;
    }
    let cost = best.iter().map(|b| b.2).sum::<f64>() / best.len() as f64;
    let mut matches: Vec<(usize, u32)> = best.iter().map(|b| (b.1, b.0)).collect();
    matches.sort_unstable();
    Some(Candidate { a_khz, matches, cost })
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    if a.matches.len() != b.matches.len() {
        return a.matches.len() > b.matches.len();
    }
    if (a.cost - b.cost).abs() > 1e-12 {
        return a.cost < b.cost;
    }
    a.a_khz.abs() < b.a_khz.abs()
}

/// Greedily peel off the best-supported ladders.
///
/// Each round scans the A grid for the ladder matching the most free dips
/// (ties go to the smaller mean normalized deviation, then smaller |A|)
/// and assigns those dips. Rounds stop when no ladder matches two dips.
/// If that leaves no group at all, every dip becomes a group of its own
/// labelled k = 1 under the smallest in-range |A|.
pub fn group_harmonics(dips: &DipSet, field: &FieldConfig, opts: &GroupOptions) -> Vec<HarmonicGroup> {
    let taus = dips.taus();
    let mut free = vec![true; taus.len()];
    let steps = ((opts.a_max_khz - opts.a_min_khz) / opts.a_step_khz).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| opts.a_min_khz + i as f64 * opts.a_step_khz).collect();
    let mut groups = Vec::new();
    loop {
        let mut best: Option<Candidate> = None;
        for &a in &grid {
            if let Some(c) = ladder_matches(&taus, &free, a, field, opts) {
                if c.matches.len() >= 2 && best.as_ref().is_none_or(|b| better(&c, b)) {
                    best = Some(c);
                }
            }
        }
        let Some(best) = best else { break };
        for &(i, _) in &best.matches {
            free[i] = false;
        }
        groups.push(HarmonicGroup {
            dips: best.matches.iter().map(|m| m.0).collect(),
            harmonics: best.matches.iter().map(|m| m.1).collect(),
            a_grid_khz: best.a_khz,
        });
    }
    if groups.is_empty() {
        for (i, &tau) in taus.iter().enumerate() {
            let (k, a) = singleton_label(tau, field, opts);
            groups.push(HarmonicGroup { dips: vec![i], harmonics: vec![k], a_grid_khz: a });
        }
    }
    groups.sort_by(|a, b| a.a_grid_khz.total_cmp(&b.a_grid_khz));
    groups
}

/// Harmonic giving the smallest |A| for an isolated dip, and that A in kHz.
pub fn singleton_label(tau: f64, field: &FieldConfig, opts: &GroupOptions) -> (u32, f64) {
    let fl2 = 2.0 * field.omega_l() / (2.0 * PI) * 1e-3;
    let mut best = (1u32, 1.0 / (2.0 * tau) * 1e-3 - fl2);
    for k in 2..64u32 {
        let a = f64::from(2 * k - 1) / (2.0 * tau) * 1e-3 - fl2;
        if a > opts.a_max_khz {
            break;
        }
        if a.abs() < best.1.abs() {
            best = (k, a);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfit::dips::Dip;
    use crate::spinmodel::{resonance_tau, HyperfinePair};

    fn dipset(taus: &[f64]) -> DipSet {
        let mut t = taus.to_vec();
        t.sort_by(f64::total_cmp);
        DipSet {
            dips: t
                .iter()
                .enumerate()
                .map(|(i, &tau)| Dip {
                    tau,
                    tau_err: 1e-9,
                    depth: 0.5,
                    width: 30e-9,
                    prominence: 0.4,
                    index: i,
                    span_lo: tau,
                    span_hi: tau,
                    members: 1,
                })
                .collect(),
            noise: 0.0,
            threshold: 0.05,
        }
    }

    fn ladder(a_khz: f64, ks: std::ops::RangeInclusive<u32>, f: &FieldConfig) -> Vec<f64> {
        let s = HyperfinePair::from_khz(a_khz, 10.0);
        ks.map(|k| resonance_tau(k, &s, f).unwrap()).collect()
    }

    #[test]
    fn single_ladder_labels() {
        let f = FieldConfig::new(365.0).unwrap();
        let d = dipset(&ladder(35.03, 1..=5, &f));
        let g = group_harmonics(&d, &f, &GroupOptions::default());
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].harmonics, vec![1, 2, 3, 4, 5]);
        assert!((g[0].a_grid_khz - 35.03).abs() < 1.0);
    }

    #[test]
    fn interleaved_ladders_separate() {
        let f = FieldConfig::new(365.0).unwrap();
        let mut taus = ladder(-20.34, 2..=4, &f);
        taus.extend(ladder(55.18, 2..=4, &f));
        let d = dipset(&taus);
        let g = group_harmonics(&d, &f, &GroupOptions::default());
        assert_eq!(g.len(), 2);
        for (grp, truth) in g.iter().zip([-20.34, 55.18]) {
            assert_eq!(grp.harmonics, vec![2, 3, 4]);
            let members: Vec<f64> = grp.dips.iter().map(|&i| d.dips[i].tau).collect();
            assert_eq!(members, ladder(truth, 2..=4, &f));
        }
    }

    #[test]
    fn single_dip_group() {
        let f = FieldConfig::new(525.0).unwrap();
        let d = dipset(&[368.36e-9]);
        let g = group_harmonics(&d, &f, &GroupOptions::default());
        assert_eq!(g.len(), 1);
        assert!(g[0].insufficient());
        assert_eq!(g[0].harmonics, vec![1]);
        assert!((g[0].a_grid_khz - 233.4).abs() < 0.5, "{}", g[0].a_grid_khz);
        assert!(group_harmonics(&dipset(&[]), &f, &GroupOptions::default()).is_empty());
    }
}
