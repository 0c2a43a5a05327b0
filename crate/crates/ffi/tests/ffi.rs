use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use subcycle_ffi::*;

fn last_error() -> String {
    let need = unsafe { sc_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; need];
    unsafe { sc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn parse(text: &str) -> *mut ScExperiment {
    let c = CString::new(text).unwrap();
    let mut exp = ptr::null_mut();
    assert_eq!(unsafe { sc_experiment_parse(c.as_ptr(), &mut exp) }, ScStatus::Ok, "{}", last_error());
    exp
}

const SHORT: &str = r#"
[sequence]
kind = "cpmg"
n_pulses = 8
[sequence.sweep]
unit = "samples"
start = 2444
stop = 2459
step = 1
[system]
b_field_gauss = 365.0
spins = [[32.74, 28.76]]
t1_ms = 1.71
t2_ms = 0.68
[noise]
shots = 20000000
c0 = 0.03
c1 = 0.021
"#;

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(sc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn clock_round_trip() {
    let mut clock = ptr::null_mut();
    assert_eq!(unsafe { sc_clock_new(4_915_200_000, 307_200_000, 2, &mut clock) }, ScStatus::Ok);
    let (mut coarse, mut fine, mut back) = (0u64, 0u32, 0u64);
    for d in [0u64, 15, 16, 2445, 1 << 40] {
        assert_eq!(unsafe { sc_clock_decompose(clock, d, &mut coarse, &mut fine) }, ScStatus::Ok);
        assert_eq!((coarse, fine), (d / 16, (d % 16) as u32));
        assert_eq!(unsafe { sc_clock_recompose(clock, coarse, fine, &mut back) }, ScStatus::Ok);
        assert_eq!(back, d);
    }
    assert_eq!(unsafe { sc_clock_recompose(clock, 1, 16, &mut back) }, ScStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    unsafe { sc_clock_free(clock) };
}

#[test]
fn bad_clock_and_null_pointers_are_reported() {
    let mut clock = ptr::null_mut();
    assert_eq!(unsafe { sc_clock_new(1000, 300, 2, &mut clock) }, ScStatus::InvalidArgument);
    assert!(clock.is_null());
    assert_eq!(unsafe { sc_clock_new(4_915_200_000, 307_200_000, 2, ptr::null_mut()) }, ScStatus::NullPointer);
    let mut n = 0usize;
    assert_eq!(unsafe { sc_trace_len(ptr::null(), &mut n) }, ScStatus::NullPointer);
    assert!(last_error().contains("trace"));
    unsafe {
        sc_clock_free(ptr::null_mut());
        sc_trace_free(ptr::null_mut());
        sc_experiment_free(ptr::null_mut());
    }
}

#[test]
fn error_message_truncates_and_reports_size() {
    let bad = CString::new("[sequence]\nkind = 4\n").unwrap();
    let mut exp = ptr::null_mut();
    assert_eq!(unsafe { sc_experiment_parse(bad.as_ptr(), &mut exp) }, ScStatus::Config);
    let full = last_error();
    assert!(full.contains("line 2"), "{full}");
    let mut small = [1 as c_char; 5];
    let need = unsafe { sc_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(need, full.len() + 1);
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_str().unwrap(), &full[..4]);
}

#[test]
fn compile_and_verify_through_handles() {
    let exp = parse(SHORT);
    let mut n = 0usize;
    assert_eq!(unsafe { sc_experiment_point_count(exp, &mut n) }, ScStatus::Ok);
    assert_eq!(n, 16);
    let mut worst = u64::MAX;
    assert_eq!(unsafe { sc_experiment_verify(exp, &mut worst) }, ScStatus::Ok, "{}", last_error());
    assert_eq!(worst, 0);

    let mut prog = ptr::null_mut();
    assert_eq!(unsafe { sc_experiment_compile(exp, 3, &mut prog) }, ScStatus::Ok);
    let mut count = 0usize;
    assert_eq!(unsafe { sc_program_predicted_edges(prog, ptr::null_mut(), 0, &mut count) }, ScStatus::Ok);
    assert_eq!(count, 10);
    let mut predicted = vec![0u64; count];
    let mut measured = vec![0u64; count];
    unsafe {
        assert_eq!(sc_program_predicted_edges(prog, predicted.as_mut_ptr(), count, &mut count), ScStatus::Ok);
        assert_eq!(sc_program_measured_edges(prog, 0.4, measured.as_mut_ptr(), count, &mut count), ScStatus::Ok);
    }
    assert_eq!(predicted, measured);
    assert_eq!(unsafe { sc_experiment_compile(exp, 16, &mut prog) }, ScStatus::OutOfRange);
    unsafe {
        sc_program_free(prog);
        sc_experiment_free(exp);
    }
}

#[test]
fn px_analytic_matches_the_library() {
    let mut p = 0.0;
    assert_eq!(unsafe { sc_px_analytic(32.74, 28.76, 365.0, 2.0e-6, 32, &mut p) }, ScStatus::Ok);
    let field = subcycle::spinmodel::FieldConfig::new(365.0).unwrap();
    let want = subcycle::spinmodel::px_analytic(&subcycle::spinmodel::HyperfinePair::from_khz(32.74, 28.76), &field, 2.0e-6, 32).unwrap();
    assert_eq!(p, want);
    assert_eq!(unsafe { sc_px_analytic(1.0, 1.0, 365.0, -1.0, 32, &mut p) }, ScStatus::InvalidArgument);
}

#[test]
fn simulate_write_read_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/fig3_cpmg.toml");
    let cfg = CString::new(cfg.to_str().unwrap()).unwrap();
    let mut exp = ptr::null_mut();
    assert_eq!(unsafe { sc_experiment_load(cfg.as_ptr(), &mut exp) }, ScStatus::Ok, "{}", last_error());

    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { sc_trace_simulate(exp, 7, &mut trace) }, ScStatus::Ok, "{}", last_error());
    let mut len = 0usize;
    assert_eq!(unsafe { sc_trace_len(trace, &mut len) }, ScStatus::Ok);
    assert_eq!(len, 1721);
    let (mut tau, mut px, mut err) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { sc_trace_point(trace, 0, &mut tau, &mut px, &mut err) }, ScStatus::Ok);
    assert!((tau - 1.5e-6).abs() < 1e-9 && err > 0.0 && (0.0..=1.2).contains(&px));
    assert_eq!(unsafe { sc_trace_point(trace, len, &mut tau, &mut px, &mut err) }, ScStatus::OutOfRange);

    let path = CString::new(dir.path().join("t.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sc_trace_write_csv(trace, path.as_ptr()) }, ScStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { sc_trace_read_csv(path.as_ptr(), &mut back) }, ScStatus::Ok);
    let mut back_len = 0usize;
    unsafe { sc_trace_len(back, &mut back_len) };
    assert_eq!(back_len, len);

    let mut report = ptr::null_mut();
    assert_eq!(unsafe { sc_fit(exp, back, &mut report) }, ScStatus::Ok, "{}", last_error());
    let mut spins = 0usize;
    assert_eq!(unsafe { sc_fit_spin_count(report, &mut spins) }, ScStatus::Ok);
    assert_eq!(spins, 3);
    let truth = [(-18.64, 18.36), (32.74, 28.76), (53.27, 34.37)];
    let mut est = ScSpinEstimate { a_khz: 0.0, a_err_khz: 0.0, b_khz: 0.0, b_err_khz: 0.0, linear_a_khz: 0.0, chi2_red: 0.0, windows_used: 0, status: ScSpinStatus::Rejected };
    for i in 0..spins {
        assert_eq!(unsafe { sc_fit_spin(report, i, &mut est) }, ScStatus::Ok);
        assert_eq!(est.status, ScSpinStatus::Fitted);
        let &(a, b) = truth.iter().min_by(|x, y| (x.0 - est.a_khz).abs().total_cmp(&(y.0 - est.a_khz).abs())).unwrap();
        assert!((est.a_khz - a).abs() < 5.0 * est.a_err_khz.max(0.05), "{est:?}");
        assert!((est.b_khz - b).abs() < 5.0 * est.b_err_khz.max(0.5), "{est:?}");
    }
    assert_eq!(unsafe { sc_fit_spin(report, spins, &mut est) }, ScStatus::OutOfRange);

    let missing = CString::new(dir.path().join("none.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sc_trace_read_csv(missing.as_ptr(), &mut back) }, ScStatus::Io);
    unsafe {
        sc_fit_free(report);
        sc_trace_free(back);
        sc_trace_free(trace);
        sc_experiment_free(exp);
    }
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/subcycle.h")).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }

    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let probe = dir.path().join("probe.c");
    std::fs::write(&probe, "#include \"subcycle.h\"\nint main(void) { return sc_version() == 0; }\n").unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    match Command::new(&cc).args(["-fsyntax-only", "-Wall", "-Werror", "-std=c11", "-I"]).arg(&include).arg(&probe).output() {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(_) => eprintln!("no C compiler found, skipping header compile check"),
    }
}
