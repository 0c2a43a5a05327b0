use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use subcycle::specfit::*;
use subcycle::spinmodel::*;

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

fn single(a: f64, b: f64, gauss: f64) -> (SpinSystem, HyperfinePair, FieldConfig) {
    let field = FieldConfig::new(gauss).unwrap();
    let s = HyperfinePair::from_khz(a, b);
    (SpinSystem { field, spins: vec![s], decoherence: None }, s, field)
}

/// Minimum of px_analytic near `tau` by dense scan and golden refinement.
fn true_minimum(s: &HyperfinePair, f: &FieldConfig, n: u32, tau: f64, half: f64) -> f64 {
    let p = |t: f64| px_analytic(s, f, t, n).unwrap();
    let steps = 2000;
    let mut best = (f64::INFINITY, tau);
    for i in 0..=steps {
        let t = tau - half + 2.0 * half * i as f64 / steps as f64;
        if p(t) < best.0 {
            best = (p(t), t);
        }
    }
    let h = 2.0 * half / steps as f64;
    let (mut a, mut b) = (best.1 - h, best.1 + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if p(c) < p(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

#[test]
fn detected_centroids_match_true_minima() {
    let (_, s, f) = single(32.74, 28.76, 365.0);
    let step = 2e-9;
    let taus = grid(1.5e-6, 5e-6, step);
    let px: Vec<f64> = taus.iter().map(|&t| px_analytic(&s, &f, t, 32).unwrap()).collect();
    let opts = DipOptions { smoothing: 1, cluster_gap_s: 0.0, ..DipOptions::default() };
    let dips = detect_dips(&CpmgTrace::from_values(&taus, &px), &opts).unwrap();
    assert!(dips.len() >= 3);
    for d in &dips.dips {
        let truth = true_minimum(&s, &f, 32, d.tau, 2.0 * step);
        assert!((d.tau - truth).abs() <= 0.5 * step, "{} vs {}", d.tau, truth);
    }
    // the three main resonances are among them
    for k in 2..=4 {
        let tk = resonance_tau(k, &s, &f).unwrap();
        assert!(dips.dips.iter().any(|d| (d.tau - tk).abs() < 0.004 * tk && d.prominence > 0.2));
    }
}

#[test]
fn linear_fit_monte_carlo_coverage() {
    let f = FieldConfig::new(365.0).unwrap();
    let s = HyperfinePair::from_khz(55.18, 20.0);
    let truth: Vec<f64> = (1..=4).map(|k| resonance_tau(k, &s, &f).unwrap()).collect();
    let noise = Normal::new(0.0, 1e-9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut inside = 0;
    for _ in 0..500 {
        let pts: Vec<(u32, f64, f64)> = truth.iter().enumerate().map(|(i, &t)| (i as u32 + 1, t + noise.sample(&mut rng), 1e-9)).collect();
        let est = linear_fit_a(&pts, &f).unwrap();
        if (est.a_khz - 55.18).abs() <= 3.0 * est.a_err_khz {
            inside += 1;
        }
    }
    assert!(inside as f64 / 500.0 >= 0.95, "{inside}");
}

#[test]
fn estimator_calibration() {
    let (sys, s, f) = single(32.74, 28.76, 365.0);
    let t3 = resonance_tau(3, &s, &f).unwrap();
    let taus = grid(t3 - 60e-9, t3 + 60e-9, 2e-9);
    let c = Contrast::new(0.03, 0.021).unwrap();
    let cfg = FitConfig { prescan_a_halfwidth_khz: 10.0, prescan_b_max_khz: Some(100.0), ..FitConfig::default() };
    let (mut cover_a, mut cover_b) = (0, 0);
    let runs = 200;
    for seed in 0..runs {
        let tr = sample_trace(&sys, &taus, 32, 20_000_000, c, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let fit = fit_lineshape(&tr, &f, 32, 33.0, &cfg).unwrap();
        assert!(!fit.rejected, "seed {seed}: chi2 {}", fit.chi2_red);
        cover_a += usize::from((fit.a_khz - 32.74).abs() <= fit.a_err_khz);
        cover_b += usize::from((fit.b_khz - 28.76).abs() <= fit.b_err_khz);
    }
    let (fa, fb) = (cover_a as f64 / runs as f64, cover_b as f64 / runs as f64);
    eprintln!("1-sigma coverage A {fa:.3} B {fb:.3}");
    assert!((0.60..=0.75).contains(&fa), "A coverage {fa}");
    assert!((0.60..=0.75).contains(&fb), "B coverage {fb}");
}

#[test]
fn stage_consistency_weak_coupling() {
    let f = FieldConfig::new(365.0).unwrap();
    let b_khz = f.larmor_khz() / 50.0;
    let s = HyperfinePair::from_khz(40.0, b_khz);
    let taus = grid(1.0e-6, 5.2e-6, 1e-9);
    let px: Vec<f64> = taus.iter().map(|&t| px_analytic(&s, &f, t, 32).unwrap()).collect();
    let cfg = FitConfig { smoothing: 1, prescan_b_max_khz: Some(100.0), ..FitConfig::default() };
    let report = fit_pipeline(&CpmgTrace::from_values(&taus, &px), &f, 32, &cfg).unwrap();
    assert_eq!(report.spins.len(), 1, "{report:?}");
    let e = &report.spins[0];
    assert!(e.harmonics.len() >= 3);
    assert!((e.linear_a_khz - e.a_khz).abs() <= 0.5, "{} vs {}", e.linear_a_khz, e.a_khz);
    assert!((e.a_khz - 40.0).abs() < 0.01 && (e.b_khz - b_khz).abs() < 0.05);
}

#[test]
fn fits_stay_inside_bounds() {
    let f = FieldConfig::new(525.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let taus = grid(300e-9, 460e-9, 0.5e-9);
    let cfg = FitConfig { bound_khz: 300.0, prescan_b_step_khz: 5.0, ..FitConfig::default() };
    for _ in 0..5 {
        let y: Vec<f64> = taus.iter().map(|&t| 0.7 + 0.3 * (t * 3.1e7).cos() + noise.sample(&mut rng)).collect();
        let fit = fit_lineshape(&CpmgTrace::from_values(&taus, &y), &f, 320, 900.0, &cfg).unwrap();
        assert!(fit.a_khz.abs() <= 300.0 && (0.0..=300.0).contains(&fit.b_khz), "{fit:?}");
    }
}

#[test]
fn pipeline_is_deterministic() {
    let (sys, _, f) = single(-18.64, 18.36, 365.0);
    let taus = grid(1.8e-6, 3.5e-6, 2e-9);
    let c = Contrast::new(0.03, 0.021).unwrap();
    let tr = sample_trace(&sys, &taus, 32, 20_000_000, c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let cfg = FitConfig { prescan_b_max_khz: Some(100.0), ..FitConfig::default() };
    let a = fit_pipeline(&tr, &f, 32, &cfg).unwrap();
    let b = fit_pipeline(&tr, &f, 32, &cfg).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.spins.len(), 1);
    assert!((a.spins[0].a_khz + 18.64).abs() < 0.3);
}

#[test]
fn report_round_trips_through_text() {
    let (sys, _, f) = single(32.74, 28.76, 365.0);
    let taus = grid(2.9e-6, 4.4e-6, 2e-9);
    let c = Contrast::new(0.03, 0.021).unwrap();
    let tr = sample_trace(&sys, &taus, 32, 20_000_000, c, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let cfg = FitConfig { prescan_b_max_khz: Some(100.0), ..FitConfig::default() };
    let r = fit_pipeline(&tr, &f, 32, &cfg).unwrap();
    let text = r.to_text();
    let back = FitReport::from_text(&text).unwrap();
    assert_eq!(back.to_text(), text);
    let mut csv = Vec::new();
    r.write_summary_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + r.spins.len());
}
