//! Command-line front end: `tension flow|verify|spectrum|sweep`.
//!
//! Exit codes: 0 success, 1 failed required estimate, 2 flow reached
//! `t_max` without becoming stationary, 3 blowup, 4 invalid configuration
//! or unusable output directory, 5 internal error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{load_config, Command, RunConfig};
use crate::error::{Error, Result};
use crate::estimates::{check_flow_report, EstimateCheckResult};
use crate::flow::{gate_check, Flow, FlowReport, GateReport, Termination};
use crate::mesh::first_dirichlet_eigenvalue;
use crate::scenarios::scenario_rng;
use crate::suite::{run_suite, run_sweep, sweep_boundary, SuiteReport, SweepEntry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ESTIMATE: i32 = 1;
pub const EXIT_TIME_LIMIT: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_INVALID: i32 = 4;
pub const EXIT_INTERNAL: i32 = 5;

/// Environment variable holding the worker thread count.
pub const THREADS_VAR: &str = "TENSION_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tension", version, about = "Geodesic heat flow with a prescribed tension field, and estimate checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Run the flow and write diagnostics, checkpoints and the final map.
    Flow {
        #[command(flatten)]
        common: CommonArgs,
        /// Resume from a checkpoint file written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the estimate suite.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// First Dirichlet eigenvalue and eigenfield of the mesh.
    Spectrum {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep k/λ for V = -k·y and chart the monotonicity boundary.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub resolution: Option<usize>,
}

/// Failure with an exit code attached.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn invalid(e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_INVALID, message: e.to_string() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::UnknownEstimate(_) | Error::Checkpoint(_) => EXIT_INVALID,
            _ => EXIT_INTERNAL,
        };
        Self { code, message: e.to_string() }
    }
}

/// Parses `args` (including the program name), runs and returns the exit
/// code. Diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_INVALID;
    }
    match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| format!("{THREADS_VAR} must be a positive integer, got `{v}`"))?;
    if n == 0 {
        return Err(format!("{THREADS_VAR} must be positive"));
    }
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> std::result::Result<i32, Failure> {
    let (command, common, resume) = match cli.command {
        Sub::Flow { common, resume } => (Command::Flow, common, resume),
        Sub::Verify { common } => (Command::Verify, common, None),
        Sub::Spectrum { common } => (Command::Spectrum, common, None),
        Sub::Sweep { common } => (Command::Sweep, common, None),
    };
    let config = load_config(&common.config)?.normalize(command, common.seed, common.resolution)?;
    prepare_out(&common.out)?;
    write(&common.out.join("config.echo"), config.echo().as_bytes())?;
    match command {
        Command::Flow => flow_command(&config, &common.out, resume.as_deref()),
        Command::Verify => verify_command(&config, &common.out),
        Command::Spectrum => spectrum_command(&config, &common.out),
        Command::Sweep => sweep_command(&config, &common.out),
    }
}

fn prepare_out(out: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::invalid(format!("output directory {}: {e}", out.display())))?;
    let probe = out.join(".write-test");
    fs::write(&probe, b"")
        .and_then(|_| fs::remove_file(&probe))
        .map_err(|e| Failure::invalid(format!("output directory {} is not writable: {e}", out.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Output directory for one ladder level.
fn level_dir(out: &Path, config: &RunConfig, resolution: Option<usize>) -> Result<PathBuf> {
    let dir = match (config.resolutions.is_some(), resolution) {
        (true, Some(n)) => out.join(format!("n{n}")),
        _ => out.to_path_buf(),
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_results_csv(path: &Path, rows: &[EstimateCheckResult]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", EstimateCheckResult::CSV_HEADER)?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    w.flush()?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

// ----- flow ------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct GateSummary {
    mu: f64,
    mu_sampled: f64,
    mu_analytic: Option<f64>,
    samples: usize,
    lambda: f64,
    satisfied: bool,
}

impl From<&GateReport> for GateSummary {
    fn from(g: &GateReport) -> Self {
        Self {
            mu: g.mu.conservative(),
            mu_sampled: g.mu.sampled,
            mu_analytic: g.mu.analytic,
            samples: g.mu.samples,
            lambda: g.lambda,
            satisfied: g.satisfied,
        }
    }
}

#[derive(Debug, Serialize)]
struct FlowSummary {
    config_hash: String,
    seed: u64,
    resolution: Option<usize>,
    termination: String,
    termination_detail: Option<String>,
    steps: u64,
    time: f64,
    dt: f64,
    energy: f64,
    comparison_constant: f64,
    gate: Option<GateSummary>,
    all_required_pass: bool,
    results: Vec<EstimateCheckResult>,
}

struct FlowLevel {
    resolution: Option<usize>,
    report: FlowReport,
    failed_required: bool,
}

fn flow_command(config: &RunConfig, out: &Path, resume: Option<&Path>) -> std::result::Result<i32, Failure> {
    if resume.is_some() && config.ladder().len() > 1 {
        return Err(Failure::invalid("--resume needs a single resolution"));
    }
    let samples = config.flow.as_ref().map_or(2000, |f| f.mu_samples);
    let mut levels = Vec::new();
    for n in config.ladder() {
        let dir = level_dir(out, config, n)?;
        let fc = config.flow_config(n)?;
        let gate = if fc.initial.mesh().is_periodic() {
            None
        } else {
            let mut rng = scenario_rng(fc.seed, 1);
            let g = gate_check(&fc, samples, &mut rng)?;
            eprintln!("gate: {}", g.message());
            Some(g)
        };
        let flow = match resume {
            Some(path) => Checkpoint::load(path)?.restore(fc.clone())?,
            None => Flow::new(fc.clone())?,
        };
        let ckpt_dir = dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir).map_err(Error::from)?;
        let report = flow
            .run_with(|f| Checkpoint::capture(f).save(&ckpt_dir.join(format!("step_{:010}.json", f.state().step))))?;

        report.write_csv(create(&dir.join("diagnostics.csv"))?)?;
        report.final_state.map.write_csv(create(&dir.join("final_map.csv"))?)?;
        let results = match &gate {
            Some(g) => check_flow_report(&report, &fc, g),
            None => Vec::new(),
        };
        let failed_required = results.iter().any(EstimateCheckResult::is_failure);
        write_results_csv(&dir.join("estimates.csv"), &results)?;
        let detail = match &report.termination {
            Termination::Blowup { step, time, node, reason } => {
                Some(format!("step {step}, t = {time:e}, node {node}: {reason}"))
            }
            _ => None,
        };
        let summary = FlowSummary {
            config_hash: fc.config_hash.clone(),
            seed: fc.seed,
            resolution: n,
            termination: report.termination.label().to_string(),
            termination_detail: detail,
            steps: report.final_state.step,
            time: report.final_state.time,
            dt: report.dt,
            energy: report.rows.last().map_or(f64::NAN, |r| r.energy),
            comparison_constant: report.comparison_constant(),
            gate: gate.as_ref().map(GateSummary::from),
            all_required_pass: !failed_required,
            results,
        };
        write(&dir.join("estimates.json"), to_json(&summary).as_bytes())?;
        eprintln!(
            "flow{}: {} after {} steps (t = {:.6e})",
            n.map(|n| format!(" n={n}")).unwrap_or_default(),
            report.termination.label(),
            report.final_state.step,
            report.final_state.time
        );
        levels.push(FlowLevel { resolution: n, report, failed_required });
    }
    if levels.len() > 1 {
        write_refinement(out, &levels)?;
    }
    let code = if levels.iter().any(|l| matches!(l.report.termination, Termination::Blowup { .. })) {
        EXIT_BLOWUP
    } else if levels.iter().any(|l| l.report.termination == Termination::TimeLimit) {
        EXIT_TIME_LIMIT
    } else if levels.iter().any(|l| l.failed_required) {
        EXIT_ESTIMATE
    } else {
        EXIT_OK
    };
    Ok(code)
}

/// Sup distance between successive levels at the coarse nodes, when the
/// finer grid refines the coarser one by an integer factor.
fn level_gap(coarse: &FlowReport, fine: &FlowReport) -> Option<f64> {
    let (a, b) = (&coarse.final_state.map, &fine.final_state.map);
    let (ma, mb) = (a.mesh(), b.mesh());
    if ma.dim() != mb.dim() || ma.topology() != mb.topology() {
        return None;
    }
    let cells = |m: &crate::mesh::DomainMesh, ax: usize| m.nodes_per_axis()[ax] - usize::from(!m.is_periodic());
    let r = cells(mb, 0) / cells(ma, 0);
    if r == 0 || (0..ma.dim()).any(|ax| cells(mb, ax) != r * cells(ma, ax)) {
        return None;
    }
    let t = a.target();
    let mut gap = 0.0f64;
    for node in 0..ma.len() {
        let [i, j] = ma.grid_index(node);
        let fine = mb.node_at(i * r, j * r);
        gap = gap.max(t.dist(a.at(node), b.at(fine)));
    }
    Some(gap)
}

fn write_refinement(out: &Path, levels: &[FlowLevel]) -> Result<()> {
    let mut w = create(&out.join("refinement.csv"))?;
    writeln!(w, "resolution,h,termination,steps,energy,gap_to_next,observed_order")?;
    let gaps: Vec<Option<f64>> =
        levels.windows(2).map(|p| level_gap(&p[0].report, &p[1].report)).chain(std::iter::once(None)).collect();
    for (k, l) in levels.iter().enumerate() {
        let h = l.report.final_state.map.mesh().min_spacing();
        let order = match (gaps.get(k).copied().flatten(), gaps.get(k + 1).copied().flatten()) {
            (Some(g0), Some(g1)) if g0 > 0.0 && g1 > 0.0 => {
                let h1 = levels[k + 1].report.final_state.map.mesh().min_spacing();
                Some((g0 / g1).ln() / (h / h1).ln())
            }
            _ => None,
        };
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.17e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{:.17e},{},{},{:.17e},{},{}",
            l.resolution.map(|n| n.to_string()).unwrap_or_default(),
            h,
            l.report.termination.label(),
            l.report.final_state.step,
            l.report.rows.last().map_or(f64::NAN, |r| r.energy),
            fmt(gaps[k]),
            fmt(order)
        )?;
    }
    w.flush()?;
    Ok(())
}

// ----- verify ------------------------------------------------------------------

fn verify_command(config: &RunConfig, out: &Path) -> std::result::Result<i32, Failure> {
    let ids = config.verify.clone().unwrap_or_default().estimates;
    let mut failed = false;
    let mut ladder_rows = Vec::new();
    for n in config.ladder() {
        let n = n.expect("verify always has a resolution");
        let dir = level_dir(out, config, Some(n))?;
        let report: SuiteReport = run_suite(&ids, &config.suite_options(n))?;
        write(&dir.join("estimates.json"), (report.to_json() + "\n").as_bytes())?;
        report.write_csv(create(&dir.join("estimates.csv"))?)?;
        for f in report.failures() {
            eprintln!("FAIL {} (n={n}): lhs {:e} rhs {:e} slack {:e}", f.id, f.lhs, f.rhs, f.slack);
        }
        eprintln!(
            "verify n={n}: {} rows, {}",
            report.results.len(),
            if report.all_required_pass { "all required pass" } else { "required failures" }
        );
        failed |= !report.all_required_pass;
        ladder_rows.extend(report.results);
    }
    if config.resolutions.is_some() {
        write_results_csv(&out.join("refinement.csv"), &ladder_rows)?;
    }
    Ok(if failed { EXIT_ESTIMATE } else { EXIT_OK })
}

// ----- spectrum ----------------------------------------------------------------

#[derive(Debug, Serialize)]
struct SpectrumLevel {
    resolution: Option<usize>,
    nodes: usize,
    h: f64,
    lambda: f64,
}

fn spectrum_command(config: &RunConfig, out: &Path) -> std::result::Result<i32, Failure> {
    let mut levels = Vec::new();
    for n in config.ladder() {
        let dir = level_dir(out, config, n)?;
        let mesh = config.build_mesh_at(n)?;
        let (lambda, u) = first_dirichlet_eigenvalue(&mesh)?;
        mesh.write_csv(&[("u1", &u)], create(&dir.join("eigenfield.csv"))?)?;
        eprintln!("spectrum{}: lambda = {lambda:.12e}", n.map(|n| format!(" n={n}")).unwrap_or_default());
        levels.push(SpectrumLevel { resolution: n, nodes: mesh.len(), h: mesh.min_spacing(), lambda });
    }
    write(&out.join("spectrum.json"), to_json(&serde_json::json!({ "levels": levels })).as_bytes())?;
    Ok(EXIT_OK)
}

// ----- sweep -------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct SweepSummary {
    resolution: usize,
    gate_ratio: f64,
    last_monotone_ratio: Option<f64>,
    first_violating_ratio: Option<f64>,
    entries: Vec<SweepEntry>,
}

fn sweep_command(config: &RunConfig, out: &Path) -> std::result::Result<i32, Failure> {
    let s = config.sweep.clone().unwrap_or_default();
    let mut summaries = Vec::new();
    let mut w = create(&out.join("sweep.csv"))?;
    writeln!(w, "resolution,{}", SweepEntry::CSV_HEADER).map_err(Error::from)?;
    for n in config.ladder() {
        let n = n.expect("sweep always has a resolution");
        let entries = run_sweep(n, &s.ratios, s.t_max)?;
        for e in &entries {
            writeln!(w, "{n},{}", e.csv_line()).map_err(Error::from)?;
        }
        let (ok, fail) = sweep_boundary(&entries);
        eprintln!(
            "sweep n={n}: monotone up to k/lambda = {}, first violation at {}",
            ok.map_or("-".into(), |v| v.to_string()),
            fail.map_or("-".into(), |v| v.to_string())
        );
        summaries.push(SweepSummary {
            resolution: n,
            gate_ratio: 0.75,
            last_monotone_ratio: ok,
            first_violating_ratio: fail,
            entries,
        });
    }
    w.flush().map_err(Error::from)?;
    write(&out.join("sweep_summary.json"), to_json(&summaries).as_bytes())?;
    Ok(EXIT_OK)
}
