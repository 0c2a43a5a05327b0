use std::path::Path;
use std::process::{Command, Output};

use subcycle::spinmodel::CpmgTrace;

const BIN: &str = env!("CARGO_BIN_EXE_subcycle");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

const SHORT_CPMG: &str = r#"
[sequence]
kind = "cpmg"
n_pulses = 8
pattern = "xy8"
[sequence.sweep]
unit = "samples"
start = 2444
stop = 2475
step = 1
"#;

#[test]
fn compile_writes_one_file_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/timing_sweep.toml");
    let o = run(dir.path(), &["--config", cfg.to_str().unwrap(), "--out", "asm", "compile"]);
    assert!(o.status.success(), "{}", text(&o));
    let asm = std::fs::read_dir(dir.path().join("asm")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "asm")).count();
    assert_eq!(asm, 1000);
    assert!(text(&o).contains("bank memory: 7168 of 65536"), "{}", text(&o));
    let first = std::fs::read_to_string(dir.path().join("asm/point_0000.asm")).unwrap();
    assert!(subcycle::sequencer::parse_assembly(&first).unwrap().len() > 60);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let fine = SHORT_CPMG.replace("unit = \"samples\"", "unit = \"ns\"").replace("step = 1", "step = 0.1");
    let o = run(dir.path(), &["--config", &config(dir.path(), &fine), "--out", "a", "compile"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("below one DAC sample"), "{}", text(&o));

    let o = run(dir.path(), &["--config", &config(dir.path(), &SHORT_CPMG.replace("n_pulses = 8", "n_pulses = 12")), "--out", "a", "compile"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("multiple of 8 pulses, got 12"), "{}", text(&o));

    let o = run(dir.path(), &["--config", &config(dir.path(), "[sequence]\nkind = 4\n"), "verify"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("line 2"), "{}", text(&o));

    let o = run(dir.path(), &["--config", &config(dir.path(), ""), "verify"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("[sequence]"), "{}", text(&o));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["verify"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["--jobs", "x", "verify"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["fit"]).status.code(), Some(2));
}

#[test]
fn verify_reports_zero_error_and_all_residues() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--config", &config(dir.path(), SHORT_CPMG), "--out", "v.csv", "verify"]);
    let out = text(&o);
    assert!(o.status.success(), "{out}");
    assert!(out.contains("max edge error: 0 samples"));
    for r in 0..16 {
        let line = out.lines().find(|l| l.split_whitespace().next() == Some(&r.to_string())).unwrap();
        assert!(line.ends_with("ok"), "{line}");
    }
}

#[test]
fn overhead_above_gap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("[clock]\ndac_rate_hz = 4915200000\nseq_rate_hz = 307200000\npulse_overhead_cycles = 400\n{SHORT_CPMG}[sequence.scaffold]\ninit_laser_cycles = 922\nsettle_cycles = 307\nreadout_laser_cycles = 307\nreadout_delay_cycles = 400\nreadout_window_cycles = 92\n");
    let o = run(dir.path(), &["--config", &config(dir.path(), &body), "verify"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("unschedulable"), "{}", text(&o));
}

#[test]
fn empty_system_gives_flat_trace_and_empty_fit() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[sequence]
kind = "cpmg"
n_pulses = 32
[sequence.sweep]
unit = "ns"
start = 1500.0
stop = 2500.0
step = 2.0345
[system]
b_field_gauss = 365.0
spins = []
t1_ms = 1.71
t2_ms = 0.68
[noise]
shots = 20000000
c0 = 0.03
c1 = 0.021
"#;
    let cfg = config(dir.path(), body);
    let o = run(dir.path(), &["--config", &cfg, "--out", "t.csv", "simulate"]);
    assert!(o.status.success(), "{}", text(&o));
    let trace = CpmgTrace::read_csv(std::fs::File::open(dir.path().join("t.csv")).unwrap()).unwrap();
    for p in &trace.points {
        let t = 64.0 * p.tau_s;
        let truth = 0.5 * (1.0 + (-t / 0.68e-3).exp() * (-t / 1.71e-3).exp());
        assert!((p.px_est - truth).abs() < 5.0 * p.px_err);
    }
    let o = run(dir.path(), &["--config", &cfg, "--out", "fit", "fit", "t.csv"]);
    assert!(o.status.success(), "{}", text(&o));
    let summary = std::fs::read_to_string(dir.path().join("fit/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
}

#[test]
fn malformed_trace_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let body = "[sequence]\nkind = \"cpmg\"\n[sequence.sweep]\nunit = \"samples\"\nstart = 2000\nstop = 2001\nstep = 1\n[system]\nb_field_gauss = 365.0\n";
    let cfg = config(dir.path(), body);
    std::fs::write(dir.path().join("bad.csv"), "tau_s,px_est,px_err,counts_signal,counts_ref\n1e-6,0.5,0.01,1,1\n2e-6,0.5\n").unwrap();
    let o = run(dir.path(), &["--config", &cfg, "--out", "fit", "fit", "bad.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("row 3"), "{}", text(&o));
    let o = run(dir.path(), &["--out", "p.svg", "plot", "bad.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_flag_changes_noise_only() {
    let dir = tempfile::tempdir().unwrap();
    let body = "[sequence]\nkind = \"hahn\"\n[sequence.sweep]\nunit = \"ns\"\nstart = 1000.0\nstop = 1100.0\nstep = 5.0\n[system]\nb_field_gauss = 365.0\nspins = [[32.74, 28.76]]\n[noise]\nshots = 100000\nc0 = 0.03\nc1 = 0.021\nseed = 5\n";
    let cfg = config(dir.path(), body);
    for (out, seed) in [("a.csv", "5"), ("b.csv", "5"), ("c.csv", "6")] {
        assert!(run(dir.path(), &["--config", &cfg, "--seed", seed, "--out", out, "simulate"]).status.success());
    }
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
}
