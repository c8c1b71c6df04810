//! Command-line front end: gain synthesis, delay-bound search, simulation,
//! and certificate verification as reproducible file-based runs.
//!
//! Every command writes into one output directory: a `config.json` echo of
//! the resolved invocation, the result artifacts (JSON/CSV), and a
//! `log.txt`. Result files carry no timestamps, so a rerun with the same
//! inputs and seeds is byte-identical; wall-clock information goes to the
//! log only.
//!
//! Exit codes: 0 = success / certified feasible, 2 = certified negative
//! (infeasible, not bracketed, failed verification), 1 = fault (bad input,
//! I/O, internal error).

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use pdgd::lmi::{evaluate_phi_at, write_sparse_text, TyingPolicy};
use pdgd::problem::{problem_digest, problem_from_json, Problem};
use pdgd::sdp::check_certificate;
use pdgd::simulate::{
    classify_stability, evaluate_lkf, simulate_augmented, simulate_standard, summarize,
    write_trace_csv, DelaySignal, LkfSeries, SimOptions, StabilityClass, CLASSIFY_TOL,
};
use pdgd::structure::ErrorSystem;
use pdgd::synthesis::{
    certificate_program, madub, synthesize, unified_system, write_madub_csv, Certificate,
    CertificateDoc, SynthesisError, SynthesisOptions,
};

const FORMAT_VERSION: u32 = 1;

// -- argument surface --------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "pdgd",
    version,
    about = "Delay-robust gain synthesis and validation for primal-dual gradient dynamics"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a delay-robust gain certificate at fixed delay bounds
    Synthesize(SynthesizeArgs),
    /// Locate the maximum allowable delay bound by bisection, sweeping ε
    Madub(MadubArgs),
    /// Integrate the delayed flow and classify the outcome
    Simulate(SimulateArgs),
    /// Re-check a certificate from first principles
    Verify(VerifyArgs),
    /// Write the assembled system matrices and LMI program to files
    Dump(DumpArgs),
}

#[derive(Args, Serialize)]
struct SynthesizeArgs {
    /// Problem description (JSON)
    problem: PathBuf,
    /// Damping / tuning parameter ε > 0
    #[arg(long)]
    eps: f64,
    /// Delay upper bound h ≥ 0 (seconds), applied to every channel
    #[arg(long, allow_negative_numbers = true)]
    h: f64,
    /// Delay rate bound d ∈ [0, 1]
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    d: f64,
    /// Tie the Lyapunov kernel matrices across delay channels
    #[arg(long)]
    tied: bool,
    /// Gain-magnitude objective weight on ‖X‖² (requires --alpha2)
    #[arg(long, requires = "alpha2")]
    alpha1: Option<f64>,
    /// Gain-magnitude objective weight on ‖P₂⁻¹‖² (requires --alpha1)
    #[arg(long, requires = "alpha1")]
    alpha2: Option<f64>,
    /// Strictness margin δ every certified block must clear
    #[arg(long, default_value_t = pdgd::lmi::DEFAULT_MARGIN)]
    margin: f64,
    /// Output directory
    #[arg(long, default_value = "pdgd-synthesize")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct MadubArgs {
    /// Problem description (JSON)
    problem: PathBuf,
    /// ε values to sweep, comma-separated
    #[arg(long = "sweep-eps", alias = "eps", value_delimiter = ',', required = true)]
    eps: Vec<f64>,
    /// Delay rate bound d ∈ [0, 1]
    #[arg(long, default_value_t = 0.0)]
    d: f64,
    /// Bracket low end (must be certifiable)
    #[arg(long = "h-lo")]
    h_lo: f64,
    /// Bracket high end (must not be certifiable)
    #[arg(long = "h-hi")]
    h_hi: f64,
    /// Bisection grid resolution (seconds)
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Tie the Lyapunov kernel matrices across delay channels
    #[arg(long)]
    tied: bool,
    /// Gain-magnitude objective weights, applied only at the final bound
    #[arg(long, requires = "alpha2")]
    alpha1: Option<f64>,
    #[arg(long, requires = "alpha1")]
    alpha2: Option<f64>,
    /// Output directory
    #[arg(long, default_value = "pdgd-madub")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Dynamics {
    /// Plain primal-dual flow with delayed coupling
    Standard,
    /// Gain-augmented flow (requires a certificate for the gain)
    Augmented,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Problem description (JSON)
    problem: PathBuf,
    #[arg(long, value_enum)]
    dynamics: Dynamics,
    /// Certificate JSON providing the gain (augmented dynamics only)
    #[arg(long)]
    cert: Option<PathBuf>,
    /// Delay signal per channel: const:T | sin:H:D | saw:H:PERIOD |
    /// rand:H:DWELL:SEED. One flag broadcasts to all channels.
    #[arg(long = "delay", required = true)]
    delays: Vec<String>,
    /// Step size (seconds)
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Horizon (seconds)
    #[arg(long = "t-final", default_value_t = 100.0)]
    t_final: f64,
    /// Initial primal state, comma-separated (default: box midpoint)
    #[arg(long)]
    x0: Option<String>,
    /// Initial dual state, comma-separated (default: zeros)
    #[arg(long)]
    lam0: Option<String>,
    /// Draw the initial state uniformly from the box instead
    #[arg(long, conflicts_with_all = ["x0", "lam0"])]
    seed: Option<u64>,
    /// Also evaluate the Lyapunov–Krasovskii functional along the run
    #[arg(long)]
    lkf: bool,
    /// Row stride for the trajectory CSV and functional sampling
    #[arg(long, default_value_t = 100)]
    stride: usize,
    /// Output directory
    #[arg(long, default_value = "pdgd-simulate")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    /// Problem description (JSON)
    problem: PathBuf,
    /// Certificate to verify
    #[arg(long)]
    cert: PathBuf,
    /// Random states sampled for the pointwise matrix check
    #[arg(long, default_value_t = 50)]
    samples: usize,
    /// RNG seed for sampled states and the simulation start
    #[arg(long, default_value_t = 2026)]
    seed: u64,
    /// Horizon of the functional-decrease simulation (seconds)
    #[arg(long = "t-final", default_value_t = 100.0)]
    t_final: f64,
    /// Skip the simulation-based functional check (matrix checks only)
    #[arg(long)]
    skip_sim: bool,
    /// Output directory
    #[arg(long, default_value = "pdgd-verify")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct DumpArgs {
    /// Problem description (JSON)
    problem: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    h: f64,
    #[arg(long, default_value_t = 0.0)]
    d: f64,
    #[arg(long)]
    tied: bool,
    /// Output directory
    #[arg(long, default_value = "pdgd-dump")]
    out: PathBuf,
}

// -- plumbing -----------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Problem(#[from] pdgd::problem::ProblemError),
    #[error(transparent)]
    Structure(#[from] pdgd::structure::StructureError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Sim(#[from] pdgd::simulate::SimError),
    #[error(transparent)]
    Lmi(#[from] pdgd::lmi::LmiError),
}

struct RunDir {
    dir: PathBuf,
    log: fs::File,
}

impl RunDir {
    fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let log = fs::File::create(dir.join("log.txt"))?;
        Ok(RunDir { dir: dir.to_path_buf(), log })
    }

    fn log(&mut self, line: &str) {
        let _ = writeln!(self.log, "{line}");
        println!("{line}");
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    /// Echo the resolved invocation so a run directory is self-describing.
    fn echo_config<T: Serialize>(&self, command: &str, args: &T) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct ConfigEcho<'a, T> {
            format_version: u32,
            command: &'a str,
            #[serde(flatten)]
            args: &'a T,
        }
        self.write_json("config.json", &ConfigEcho { format_version: FORMAT_VERSION, command, args })
    }
}

fn load_problem(path: &Path) -> Result<(Problem, String), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let digest = problem_digest(&text);
    let p = problem_from_json(&text)?;
    Ok((p, digest))
}

fn check_unit(v: f64, name: &str, lo: f64, hi: f64) -> Result<(), CliError> {
    if !v.is_finite() || v < lo || v > hi {
        return Err(CliError::Input(format!("--{name} must lie in [{lo}, {hi}], got {v}")));
    }
    Ok(())
}

fn parse_vec(text: &str, dim: usize, name: &str) -> Result<DVector<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| CliError::Input(format!("--{name}: {e}")))?;
    if vals.len() != dim {
        return Err(CliError::Input(format!(
            "--{name} has {} entries, problem needs {dim}",
            vals.len()
        )));
    }
    Ok(DVector::from_vec(vals))
}

fn options_from(tied: bool, alpha1: Option<f64>, alpha2: Option<f64>, margin: f64) -> SynthesisOptions {
    SynthesisOptions {
        tying: if tied { TyingPolicy::Tied } else { TyingPolicy::PerEdge },
        margin,
        minimize_gain: alpha1.zip(alpha2),
        ..Default::default()
    }
}

fn margins_csv(cert: &Certificate) -> String {
    let mut s = String::from("block,achieved,required\n");
    for bm in &cert.block_margins {
        s.push_str(&format!("{},{},{}\n", bm.name, bm.achieved, bm.required));
    }
    s
}

/// Deterministic initial state: x uniform in the box, duals uniform in
/// [−1, 1] (the box constrains primal coordinates only).
fn seeded_state(p: &Problem, seed: u64) -> (DVector<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = DVector::from_iterator(
        p.primal_dim(),
        (0..p.primal_dim()).map(|i| rng.gen_range(p.box_low[i]..=p.box_high[i])),
    );
    let lam0 = DVector::from_iterator(p.dual_dim(), (0..p.dual_dim()).map(|_| rng.gen_range(-1.0..=1.0)));
    (x0, lam0)
}

fn midpoint_state(p: &Problem) -> (DVector<f64>, DVector<f64>) {
    let x0 = DVector::from_iterator(
        p.primal_dim(),
        (0..p.primal_dim()).map(|i| 0.5 * (p.box_low[i] + p.box_high[i])),
    );
    (x0, DVector::zeros(p.dual_dim()))
}

/// Rebuild the error system a certificate was issued against.
fn system_for_cert(p: &Problem, doc: &CertificateDoc) -> Result<ErrorSystem, CliError> {
    let (h, d) = doc.delays.first().copied().unwrap_or((0.0, 0.0));
    Ok(unified_system(p, h, d)?)
}

// -- synthesize ---------------------------------------------------------------

fn cmd_synthesize(args: &SynthesizeArgs) -> Result<i32, CliError> {
    if !args.h.is_finite() || args.h < 0.0 {
        return Err(CliError::Input(format!("--h must be a finite bound ≥ 0, got {}", args.h)));
    }
    check_unit(args.d, "d", 0.0, 1.0)?;
    if !(args.eps > 0.0) {
        return Err(CliError::Input(format!("--eps must be positive, got {}", args.eps)));
    }
    let mut run = RunDir::create(&args.out)?;
    run.echo_config("synthesize", args)?;
    let (p, digest) = load_problem(&args.problem)?;
    let sys = unified_system(&p, args.h, args.d)?;
    let opts = options_from(args.tied, args.alpha1, args.alpha2, args.margin);
    run.log(&format!(
        "synthesize: {} agents, {} delay channel(s), eps = {}, h = {}, d = {}",
        p.num_agents(),
        sys.rho(),
        args.eps,
        args.h,
        args.d
    ));
    match synthesize(&sys, args.eps, &opts) {
        Ok(mut cert) => {
            cert.provenance.problem_sha256 = Some(digest);
            run.write_text("certificate.json", &cert.to_json())?;
            run.write_text("margins.csv", &margins_csv(&cert))?;
            let worst = cert
                .block_margins
                .iter()
                .map(|bm| bm.achieved - bm.required)
                .fold(f64::INFINITY, f64::min);
            run.log(&format!("feasible: certificate written, worst margin slack {worst:.3e}"));
            Ok(0)
        }
        Err(SynthesisError::Infeasible { eps, delays }) => {
            #[derive(Serialize)]
            struct InfeasibleRecord<'a> {
                format_version: u32,
                kind: &'a str,
                eps: f64,
                delays: Vec<(f64, f64)>,
                hint: String,
            }
            let hint = format!(
                "not certifiable at h = {}; run `pdgd madub --sweep-eps {} --d {} --h-lo 0.05 --h-hi {}` to locate the frontier",
                args.h, eps, args.d, args.h
            );
            run.write_json(
                "infeasible.json",
                &InfeasibleRecord {
                    format_version: FORMAT_VERSION,
                    kind: "infeasible",
                    eps,
                    delays,
                    hint: hint.clone(),
                },
            )?;
            run.log(&format!("infeasible: {hint}"));
            Ok(2)
        }
        Err(e) => Err(e.into()),
    }
}

// -- madub --------------------------------------------------------------------

#[derive(Serialize)]
struct SweepRow {
    eps: f64,
    status: String,
    h_bar: Option<f64>,
    probes: usize,
    hint: Option<String>,
}

fn cmd_madub(args: &MadubArgs) -> Result<i32, CliError> {
    check_unit(args.d, "d", 0.0, 1.0)?;
    if args.eps.iter().any(|&e| !(e > 0.0)) {
        return Err(CliError::Input("every swept ε must be positive".into()));
    }
    if !(args.tol > 0.0) {
        return Err(CliError::Input(format!("--tol must be positive, got {}", args.tol)));
    }
    let mut run = RunDir::create(&args.out)?;
    run.echo_config("madub", args)?;
    let (p, digest) = load_problem(&args.problem)?;
    let sys = unified_system(&p, args.h_hi.max(args.h_lo), args.d)?;
    let base = options_from(args.tied, args.alpha1, args.alpha2, pdgd::lmi::DEFAULT_MARGIN);
    let opts = SynthesisOptions { granularity: args.tol, ..base };

    let mut rows: Vec<SweepRow> = Vec::new();
    let mut any_negative = false;
    for &eps in &args.eps {
        run.log(&format!("madub: eps = {eps}, bracket [{}, {}], d = {}", args.h_lo, args.h_hi, args.d));
        match madub(&sys, args.d, eps, args.h_lo, args.h_hi, &opts) {
            Ok(res) => {
                let sub = args.out.join(format!("eps-{eps}"));
                fs::create_dir_all(&sub)?;
                let mut cert = res.certificate.clone();
                cert.provenance.problem_sha256 = Some(digest.clone());
                fs::write(sub.join("certificate.json"), cert.to_json())?;
                let mut csv = Vec::new();
                write_madub_csv(&mut csv, &res)?;
                fs::write(sub.join("trace.csv"), csv)?;
                run.log(&format!(
                    "  h_bar = {} (± {}), {} probes",
                    res.h_bar,
                    res.tolerance,
                    res.trace.len()
                ));
                rows.push(SweepRow {
                    eps,
                    status: "ok".into(),
                    h_bar: Some(res.h_bar),
                    probes: res.trace.len(),
                    hint: None,
                });
            }
            Err(SynthesisError::NotBracketed { h, expected_feasible }) => {
                any_negative = true;
                let hint = if expected_feasible {
                    format!("h_lo = {h} is not certifiable; lower --h-lo (try {})", h / 4.0)
                } else {
                    format!("h_hi = {h} is still certifiable; raise --h-hi (try {})", h * 2.0)
                };
                run.log(&format!("  not bracketed: {hint}"));
                rows.push(SweepRow { eps, status: "not_bracketed".into(), h_bar: None, probes: 0, hint: Some(hint) });
            }
            Err(e) => return Err(e.into()),
        }
    }

    #[derive(Serialize)]
    struct SweepSummary<'a> {
        format_version: u32,
        kind: &'a str,
        problem: &'a str,
        problem_sha256: &'a str,
        d: f64,
        tolerance: f64,
        rows: &'a [SweepRow],
    }
    run.write_json(
        "summary.json",
        &SweepSummary {
            format_version: FORMAT_VERSION,
            kind: "madub_sweep",
            problem: &p.name,
            problem_sha256: &digest,
            d: args.d,
            tolerance: args.tol,
            rows: &rows,
        },
    )?;
    let mut csv = String::from("eps,h_bar\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{}\n",
            r.eps,
            r.h_bar.map(|h| h.to_string()).unwrap_or_else(|| r.status.clone())
        ));
    }
    run.write_text("summary.csv", &csv)?;
    run.log("madub: sweep summary");
    run.log("  eps      h_bar");
    for r in &rows {
        match r.h_bar {
            Some(h) => run.log(&format!("  {:<8} {h}", r.eps)),
            None => run.log(&format!("  {:<8} {}", r.eps, r.status)),
        }
    }
    Ok(if any_negative { 2 } else { 0 })
}

// -- simulate -----------------------------------------------------------------

fn parse_signals(specs: &[String], channels: usize) -> Result<Vec<DelaySignal>, CliError> {
    let parsed: Result<Vec<DelaySignal>, _> = specs.iter().map(|s| s.parse()).collect();
    let parsed = parsed.map_err(CliError::Sim)?;
    if parsed.len() == channels {
        Ok(parsed)
    } else if parsed.len() == 1 {
        Ok(vec![parsed[0].clone(); channels])
    } else {
        Err(CliError::Input(format!(
            "{} delay signal(s) given but the system has {channels} channel(s)",
            parsed.len()
        )))
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    if !(args.dt > 0.0) || !(args.t_final > 0.0) {
        return Err(CliError::Input("--dt and --t-final must be positive".into()));
    }
    let mut run = RunDir::create(&args.out)?;
    run.echo_config("simulate", args)?;
    let (p, _digest) = load_problem(&args.problem)?;

    // certificate first: augmented dynamics take their gain (and channel
    // structure) from it
    let cert_doc = match (args.dynamics, &args.cert) {
        (Dynamics::Augmented, None) => {
            return Err(CliError::Input(
                "augmented dynamics need a gain: pass --cert <certificate.json>".into(),
            ))
        }
        (_, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            Some(serde_json::from_str::<CertificateDoc>(&text)?)
        }
        (Dynamics::Standard, None) => None,
    };

    let sys = match &cert_doc {
        Some(doc) => system_for_cert(&p, doc)?,
        None => {
            // channel structure only; the signals drive the actual delays
            let h0: f64 = args
                .delays
                .iter()
                .filter_map(|s| s.parse::<DelaySignal>().ok().map(|sig| sig.max_delay()))
                .fold(0.0, f64::max);
            unified_system(&p, h0, 0.0)?
        }
    };
    let signals = parse_signals(&args.delays, sys.rho())?;

    let (x0, lam0) = match args.seed {
        Some(seed) => seeded_state(&p, seed),
        None => {
            let (mx, ml) = midpoint_state(&p);
            let x0 = match &args.x0 {
                Some(t) => parse_vec(t, p.primal_dim(), "x0")?,
                None => mx,
            };
            let lam0 = match &args.lam0 {
                Some(t) => parse_vec(t, p.dual_dim(), "lam0")?,
                None => ml,
            };
            (x0, lam0)
        }
    };

    let opts = SimOptions { dt: args.dt, t_final: args.t_final, ..Default::default() };
    let (traj, cert) = match args.dynamics {
        Dynamics::Standard => (simulate_standard(&sys, &x0, &lam0, &signals, &opts)?, None),
        Dynamics::Augmented => {
            let doc = cert_doc.as_ref().expect("checked above");
            let cert = Certificate::from_doc(doc, &sys)?;
            // filter state starts at the plant state: u(0) = (x0, λ0)
            let traj =
                simulate_augmented(&sys, &cert.gain, &x0, &lam0, &x0, &lam0, &signals, &opts)?;
            (traj, Some(cert))
        }
    };

    let z_star = sys.layout.pack(&sys.kkt.x(), &sys.kkt.lambda());
    let class = classify_stability(&traj, &z_star, 0.2, CLASSIFY_TOL);
    let lkf: Option<LkfSeries> = if args.lkf {
        match &cert {
            Some(c) => Some(evaluate_lkf(&sys, &c.vars, &traj, &signals, args.stride)?),
            None => {
                return Err(CliError::Input(
                    "--lkf needs the functional's kernel matrices: run augmented dynamics with --cert".into(),
                ))
            }
        }
    } else {
        None
    };

    let mut csv = Vec::new();
    write_trace_csv(&mut csv, &traj, &signals, Some(&z_star), lkf.as_ref(), args.stride)?;
    fs::write(args.out.join("trajectory.csv"), csv)?;

    #[derive(Serialize)]
    struct LkfStats {
        samples: usize,
        first: f64,
        last: f64,
        max_rise_between_samples: f64,
    }
    #[derive(Serialize)]
    struct SimReport<'a> {
        format_version: u32,
        kind: &'a str,
        dynamics: Dynamics,
        delays: &'a [String],
        dt: f64,
        summary: pdgd::simulate::SimSummary,
        classification: StabilityClass,
        lkf: Option<LkfStats>,
    }
    let lkf_stats = lkf.as_ref().map(|s| LkfStats {
        samples: s.values.len(),
        first: s.values.first().copied().unwrap_or(f64::NAN),
        last: s.values.last().copied().unwrap_or(f64::NAN),
        max_rise_between_samples: s
            .values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max),
    });
    let summary = summarize(&traj, Some(&z_star));
    run.write_json(
        "summary.json",
        &SimReport {
            format_version: FORMAT_VERSION,
            kind: "simulation",
            dynamics: args.dynamics,
            delays: &args.delays,
            dt: args.dt,
            summary,
            classification: class,
            lkf: lkf_stats,
        },
    )?;
    run.log(&format!(
        "simulate: {:?} over {} s; final error {:.3e}; classified {:?}",
        traj.status,
        traj.t_end(),
        (traj.states.last().unwrap().rows(0, traj.z_dim) - &z_star).amax(),
        class
    ));
    Ok(0)
}

// -- verify -------------------------------------------------------------------

#[derive(Serialize)]
struct CheckResult {
    name: String,
    passed: bool,
    detail: String,
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32, CliError> {
    let mut run = RunDir::create(&args.out)?;
    run.echo_config("verify", args)?;
    let (p, digest) = load_problem(&args.problem)?;
    let cert_text = fs::read_to_string(&args.cert)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.cert.display())))?;
    let doc: CertificateDoc = serde_json::from_str(&cert_text)?;

    let mut checks: Vec<CheckResult> = Vec::new();
    let mut record = |run: &mut RunDir, name: &str, passed: bool, detail: String| {
        run.log(&format!("  [{}] {name}: {detail}", if passed { "pass" } else { "FAIL" }));
        checks.push(CheckResult { name: name.into(), passed, detail });
    };
    run.log(&format!("verify: certificate {} against {}", args.cert.display(), p.name));

    // 1. provenance: the certificate names the problem bytes it was issued for
    let stored_hash = doc.provenance.problem_sha256.clone();
    let prov_ok = match &stored_hash {
        Some(h) => h == &digest,
        None => true, // library-issued certificates may not know their file
    };
    record(
        &mut run,
        "provenance",
        prov_ok,
        if prov_ok {
            "problem digest matches".into()
        } else {
            format!(
                "certificate was issued for {}…, this file hashes to {}…",
                stored_hash.as_deref().map(|h| &h[..12.min(h.len())]).unwrap_or(""),
                &digest[..12]
            )
        },
    );

    // 2. structural reload + gain consistency (tampered documents fail here)
    let sys = system_for_cert(&p, &doc)?;
    let cert = match Certificate::from_doc(&doc, &sys) {
        Ok(c) => {
            record(&mut run, "document", true, "gain agrees with the certificate point".into());
            Some(c)
        }
        Err(SynthesisError::BadDocument(msg)) | Err(SynthesisError::SingularP2(msg)) => {
            record(&mut run, "document", false, msg);
            None
        }
        Err(e) => return Err(e.into()),
    };

    if let Some(cert) = &cert {
        // 3. margins at the stored point, recomputed from a fresh assembly
        let program = certificate_program(
            &sys,
            cert.eps,
            Some(cert.delays.clone()),
            cert.tying,
            cert.margin,
            cert.minimize_gain,
        )?;
        let fresh = check_certificate(&program, &cert.y);
        let mut worst = f64::INFINITY;
        let mut margins_ok = true;
        for (b, &a) in program.blocks.iter().zip(&fresh) {
            let req = if b.margin > 0.0 { b.margin } else { 0.0 };
            worst = worst.min(a - req);
            if a < req - 1e-9 {
                margins_ok = false;
            }
        }
        record(
            &mut run,
            "margins",
            margins_ok,
            format!("{} blocks, worst slack {worst:.3e}", program.blocks.len()),
        );

        // 4. pointwise matrix negativity at sampled states in the box
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let mut max_lam = f64::NEG_INFINITY;
        for _ in 0..args.samples {
            let x_hat = DVector::from_iterator(
                p.primal_dim(),
                (0..p.primal_dim()).map(|i| rng.gen_range(p.box_low[i]..=p.box_high[i])),
            );
            let phi = evaluate_phi_at(&sys, &cert.vars, &x_hat)?;
            let lam = nalgebra::SymmetricEigen::new(phi)
                .eigenvalues
                .iter()
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            max_lam = max_lam.max(lam);
        }
        let phi_ok = max_lam < -cert.margin / 2.0;
        let phi_detail = format!(
            "{} sampled states, max eigenvalue {max_lam:.3e} (threshold {:.3e})",
            args.samples,
            -cert.margin / 2.0
        );
        record(&mut run, "pointwise", phi_ok, phi_detail);

        // 5. functional decrease along a fresh delayed run
        if !args.skip_sim {
            let signals: Vec<DelaySignal> = cert
                .delays
                .iter()
                .map(|&(h, d)| DelaySignal::Sinusoid { h, d })
                .collect();
            let (x0, lam0) = seeded_state(&p, args.seed);
            let opts = SimOptions { t_final: args.t_final, ..Default::default() };
            let traj =
                simulate_augmented(&sys, &cert.gain, &x0, &lam0, &x0, &lam0, &signals, &opts)?;
            let series = evaluate_lkf(&sys, &cert.vars, &traj, &signals, 100)?;
            let v0 = series.values.first().copied().unwrap_or(0.0);
            let slack = 1e-3 * v0;
            let max_rise = series
                .values
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::NEG_INFINITY, f64::max);
            let lkf_ok = max_rise <= slack;
            let lkf_detail = format!(
                "{} samples over {} s, max rise {max_rise:.3e} vs slack {slack:.3e}",
                series.values.len(),
                traj.t_end()
            );
            record(&mut run, "functional", lkf_ok, lkf_detail);
        }
    }

    let passed = checks.iter().all(|c| c.passed) && cert.is_some();
    #[derive(Serialize)]
    struct VerifyReport<'a> {
        format_version: u32,
        kind: &'a str,
        certificate: String,
        passed: bool,
        checks: &'a [CheckResult],
    }
    run.write_json(
        "verify.json",
        &VerifyReport {
            format_version: FORMAT_VERSION,
            kind: "verification",
            certificate: args.cert.display().to_string(),
            passed,
            checks: &checks,
        },
    )?;
    run.log(if passed { "verify: all checks passed" } else { "verify: FAILED" });
    Ok(if passed { 0 } else { 2 })
}

// -- dump ---------------------------------------------------------------------

fn cmd_dump(args: &DumpArgs) -> Result<i32, CliError> {
    if !(args.eps > 0.0) {
        return Err(CliError::Input(format!("--eps must be positive, got {}", args.eps)));
    }
    let mut run = RunDir::create(&args.out)?;
    run.echo_config("dump", args)?;
    let (p, _digest) = load_problem(&args.problem)?;
    let sys = unified_system(&p, args.h, args.d)?;
    let sys_dir = args.out.join("system");
    fs::create_dir_all(&sys_dir)?;
    pdgd::structure::dump_matrices(&sys, &sys_dir)?;
    let tying = if args.tied { TyingPolicy::Tied } else { TyingPolicy::PerEdge };
    let program =
        certificate_program(&sys, args.eps, None, tying, pdgd::lmi::DEFAULT_MARGIN, None)?;
    run.write_text("program.sdp", &write_sparse_text(&program))?;
    run.log(&format!(
        "dump: {} blocks, {} variables, matrices under system/",
        program.blocks.len(),
        program.nvars
    ));
    Ok(0)
}

// -- entry --------------------------------------------------------------------

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    match &cli.cmd {
        Cmd::Synthesize(a) => cmd_synthesize(a),
        Cmd::Madub(a) => cmd_madub(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Dump(a) => cmd_dump(a),
    }
}

fn main() {
    // exit-code contract: 0 success, 2 certified negative, 1 any fault —
    // including bad invocations, which clap would otherwise exit 2 for
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            std::process::exit(1);
        }
        Err(e) => e.exit(), // --help / --version
    };
    match dispatch(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
