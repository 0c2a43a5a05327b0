//! Command-line front end: `compile`, `verify`, `simulate`, `fit`, `plot`.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. Every output file
//! is written to a temporary sibling and renamed into place.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{ConfigError, ExperimentConfig};
use crate::dacsim::{max_edge_error, measure_edges, render, DEFAULT_EDGE_THRESHOLD};
use crate::sequencer::compile;
use crate::specfit::{fit_pipeline, FitReport};
use crate::spinmodel::{px_multi, CpmgTrace, FieldConfig, HyperfinePair, SpinSystem};
use crate::waveform::ChannelLayout;

#[derive(Debug, Parser)]
#[command(name = "subcycle", version, about = "Sample-exact pulse compiler, DAC simulator and CPMG spectroscopy fitter")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `noise.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one instruction-stream file per sweep point into --out.
    Compile,
    /// Compile, render and check every measured pulse edge against the prediction.
    Verify,
    /// Write a synthetic CPMG trace CSV to --out.
    Simulate,
    /// Fit a trace; writes report.toml and summary.csv into --out.
    Fit { trace: PathBuf },
    /// Render a trace, optionally with a fit report overlay, to an SVG at --out.
    Plot {
        trace: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Domain(e.to_string())
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build().map_err(domain)?;
    pool.install(|| match &cli.command {
        Command::Compile => cmd_compile(cli),
        Command::Verify => cmd_verify(cli),
        Command::Simulate => cmd_simulate(cli),
        Command::Fit { trace } => cmd_fit(cli, trace),
        Command::Plot { trace, report } => cmd_plot(cli, trace, report.as_deref()),
    })
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Usage("--config is required for this command".into()))?;
    Ok(ExperimentConfig::load(path)?)
}

fn out_path(cli: &Cli) -> Result<&Path, CliError> {
    cli.out.as_deref().ok_or_else(|| CliError::Usage("--out is required for this command".into()))
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| domain(format!("{}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| domain(format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes).map_err(domain)?;
    tmp.persist(path).map_err(|e| domain(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

fn cmd_compile(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let dir = out_path(cli)?;
    let programs = cfg.programs()?;
    let digits = programs.len().to_string().len().max(4);
    let rows: Vec<CompiledPoint> = programs
        .par_iter()
        .enumerate()
        .map(|(i, (value, prog))| {
            let (layout, _) = cfg.channel(prog)?;
            let compiled = compile(prog, &layout).map_err(domain)?;
            let file = format!("point_{i:0digits$}.asm");
            write_atomic(&dir.join(&file), compiled.to_assembly().as_bytes())?;
            Ok(CompiledPoint {
                value: *value,
                file,
                pulses: compiled.predicted_edges.len(),
                duration: compiled.duration_samples,
                layout,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let mut index = String::from("point,value_samples,value_s,file,mw_pulses,duration_samples\n");
    for (i, r) in rows.iter().enumerate() {
        let t = cfg.clock.samples_to_seconds(r.value);
        let _ = writeln!(index, "{i},{},{t:e},{},{},{}", r.value, r.file, r.pulses, r.duration);
    }
    write_atomic(&dir.join("sweep.csv"), index.as_bytes())?;
    println!("compiled {} programs into {}", rows.len(), dir.display());
    if let Some(big) = rows.iter().max_by_key(|r| r.layout.used) {
        let banks: Vec<String> = big.layout.slots.iter().map(|s| format!("{} {}x{}", s.id, s.ratio, s.padded_length)).collect();
        println!("bank memory: {} of {} samples per channel ({})", big.layout.used, big.layout.capacity, banks.join(", "));
    }
    Ok(())
}

struct CompiledPoint {
    value: u64,
    file: String,
    pulses: usize,
    duration: u64,
    layout: ChannelLayout,
}

struct PointCheck {
    value: u64,
    pulses: usize,
    max_error: Option<u64>,
    markers_ok: bool,
    /// (predicted residue, |error|) per pulse
    residues: Vec<(u32, u64)>,
}

fn cmd_verify(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let programs = cfg.programs()?;
    let threshold = DEFAULT_EDGE_THRESHOLD * cfg.pulses.amplitude;
    let ratio = cfg.clock.ratio();
    let checks: Vec<PointCheck> = programs
        .par_iter()
        .map(|(value, prog)| {
            let (layout, banks) = cfg.channel(prog)?;
            let compiled = compile(prog, &layout).map_err(domain)?;
            let stream = render(&compiled, &banks).map_err(domain)?;
            let measured = if compiled.predicted_edges.is_empty() {
                Vec::new()
            } else {
                measure_edges(&stream, threshold).map_err(domain)?.measured_starts
            };
            let max_error = max_edge_error(&compiled.predicted_edges, &measured);
            let residues = match max_error {
                Some(_) => compiled.predicted_edges.iter().zip(&measured).map(|(p, m)| ((p % u64::from(ratio)) as u32, p.abs_diff(*m))).collect(),
                None => Vec::new(),
            };
            let markers_ok = stream.markers.len() == compiled.marker_edges.len()
                && stream
                    .markers
                    .iter()
                    .zip(&compiled.marker_edges)
                    .all(|(&(c, s, d), e)| c == e.channel && s == e.start_samples && d == e.duration_samples);
            Ok(PointCheck { value: *value, pulses: compiled.predicted_edges.len(), max_error, markers_ok, residues })
        })
        .collect::<Result<_, CliError>>()?;

    let mut table = String::from("residue,pulses,max_error\n");
    let mut text = String::from("residue  pulses  max_error\n");
    for r in 0..ratio {
        let errs: Vec<u64> = checks.iter().flat_map(|c| c.residues.iter().filter(|x| x.0 == r).map(|x| x.1)).collect();
        let worst = errs.iter().copied().max();
        let _ = writeln!(table, "{r},{},{}", errs.len(), worst.map_or("-".into(), |w| w.to_string()));
        let status = match worst {
            Some(0) => "ok",
            Some(_) => "FAIL",
            None => "unused",
        };
        let _ = writeln!(text, "{r:>7}  {:>6}  {:>9}  {status}", errs.len(), worst.map_or("-".into(), |w| w.to_string()));
    }
    print!("{text}");
    let mismatched = checks.iter().filter(|c| c.max_error.is_none()).count();
    let bad_markers = checks.iter().filter(|c| !c.markers_ok).count();
    let worst = checks.iter().filter_map(|c| c.max_error).max().unwrap_or(0);
    let pulses: usize = checks.iter().map(|c| c.pulses).sum();
    println!("points: {}, pulses: {pulses}", checks.len());
    println!("max edge error: {worst} samples");
    if let Some(out) = &cli.out {
        let mut csv = String::from("value_samples,pulses,max_error,markers_ok\n");
        for c in &checks {
            let _ = writeln!(csv, "{},{},{},{}", c.value, c.pulses, c.max_error.map_or("count-mismatch".into(), |e| e.to_string()), c.markers_ok);
        }
        csv.push('\n');
        csv.push_str(&table);
        write_atomic(out, csv.as_bytes())?;
    }
    if mismatched > 0 {
        return Err(domain(format!("{mismatched} programs produced a different number of edges than predicted")));
    }
    if bad_markers > 0 {
        return Err(domain(format!("{bad_markers} programs produced marker timing different from the prediction")));
    }
    if worst != 0 {
        return Err(domain(format!("edge error of {worst} samples")));
    }
    Ok(())
}

fn cmd_simulate(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let out = out_path(cli)?;
    let trace = cfg.simulate(cli.seed)?;
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).map_err(domain)?;
    write_atomic(out, &buf)?;
    println!("wrote {} points to {}", trace.len(), out.display());
    Ok(())
}

fn read_trace(path: &Path) -> Result<CpmgTrace, CliError> {
    let f = std::fs::File::open(path).map_err(|e| domain(format!("{}: {e}", path.display())))?;
    CpmgTrace::read_csv(std::io::BufReader::new(f)).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn cmd_fit(cli: &Cli, trace_path: &Path) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let dir = out_path(cli)?;
    let n = cfg.n_pulses()?;
    let field = cfg.system()?.field()?;
    let fit_cfg = cfg.fit_config()?;
    let trace = read_trace(trace_path)?;
    let report = fit_pipeline(&trace, &field, n, &fit_cfg).map_err(domain)?;
    write_atomic(&dir.join("report.toml"), report.to_text().as_bytes())?;
    let mut csv = Vec::new();
    report.write_summary_csv(&mut csv).map_err(domain)?;
    write_atomic(&dir.join("summary.csv"), &csv)?;
    println!("dips: {} found, {} ungrouped; spins: {}", report.dips_found, report.dips_ungrouped, report.spins.len());
    for s in &report.spins {
        println!(
            "spin {}: A = {:.3} +- {:.3} kHz, B = {:.3} +- {:.3} kHz, chi2_red = {:.2}, harmonics {:?}, {:?}",
            s.spin, s.a_khz, s.a_err_khz, s.b_khz, s.b_err_khz, s.chi2_red, s.harmonics, s.status
        );
    }
    Ok(())
}

fn cmd_plot(cli: &Cli, trace_path: &Path, report_path: Option<&Path>) -> Result<(), CliError> {
    let out = out_path(cli)?;
    let trace = read_trace(trace_path)?;
    let report = match report_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| domain(format!("{}: {e}", p.display())))?;
            Some(FitReport::from_text(&text).map_err(|e| domain(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let decoherence = match &cli.config {
        Some(path) => match &ExperimentConfig::load(path)?.system {
            Some(s) => s.decoherence()?,
            None => None,
        },
        None => None,
    };
    let svg = plot_svg(&trace, report.as_ref(), decoherence)?;
    write_atomic(out, svg.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Static SVG: tau in us against P_x, fitted model and dip markers.
pub fn plot_svg(trace: &CpmgTrace, report: Option<&FitReport>, decoherence: Option<crate::spinmodel::DecoherenceModel>) -> Result<String, CliError> {
    const W: f64 = 900.0;
    const H: f64 = 500.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 20.0;
    const B: f64 = 50.0;
    let taus = trace.taus();
    let ys = trace.values();
    let model = match report {
        Some(r) if !r.spins.is_empty() && !trace.is_empty() => {
            let field = FieldConfig::new(r.b_field_gauss).map_err(domain)?;
            let system = SpinSystem {
                field,
                spins: r.spins.iter().map(|s| HyperfinePair::from_khz(s.a_khz, s.b_khz)).collect(),
                decoherence,
            };
            Some(taus.iter().map(|&t| px_multi(&system, t, r.n_pulses)).collect::<Result<Vec<_>, _>>().map_err(domain)?)
        }
        _ => None,
    };
    let (x0, x1) = match (taus.first(), taus.last()) {
        (Some(&a), Some(&b)) if b > a => (a * 1e6, b * 1e6),
        (Some(&a), _) => (a * 1e6 - 0.5, a * 1e6 + 0.5),
        _ => (0.0, 1.0),
    };
    let all = ys.iter().chain(model.iter().flatten()).copied().filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let (y0, y1) = if lo.is_finite() && hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (0.0, 1.0)
    };
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| T + (y1 - y) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{L}" y="{T}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#, W - L - R, H - T - B);
    for i in 0..=5 {
        let xv = x0 + (x1 - x0) * f64::from(i) / 5.0;
        let yv = y0 + (y1 - y0) * f64::from(i) / 5.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xv:.3}</text>"#, px(xv), H - B + 18.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.3}</text>"#, L - 6.0, py(yv) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">tau (us)</text>"#, (L + W - R) / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">P_x</text>"#, (T + H - B) / 2.0, (T + H - B) / 2.0);
    if let Some(r) = report {
        for sp in &r.spins {
            for (&t, &k) in sp.dip_taus_s.iter().zip(&sp.harmonics) {
                let x = px(t * 1e6);
                let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{T}" x2="{x:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##, H - B);
                let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="10">{}:{k}</text>"#, x + 2.0, T + 12.0, sp.spin);
            }
        }
    }
    let line = |vals: &[f64]| -> String {
        taus.iter().zip(vals).map(|(&t, &v)| format!("{:.2},{:.2}", px(t * 1e6), py(v))).collect::<Vec<_>>().join(" ")
    };
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#1f4e9c" stroke-width="1" points="{}"/>"##, line(&ys));
    if let Some(m) = &model {
        let _ = writeln!(s, r##"<polyline fill="none" stroke="#c0392b" stroke-width="1.2" points="{}"/>"##, line(m));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
