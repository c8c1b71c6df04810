//! The acceptance gate for the whole toolkit: one test per criterion, each
//! printing a single `criterion N: PASS — …` line (or failing its assert).
//!
//! The delay-bound sweep on the ten-agent benchmark is expensive, so it runs
//! once behind a `OnceLock` and every criterion that needs certificates
//! shares its artifacts. Everything is seeded; criterion 10 then holds the
//! pipeline to its own determinism claim by re-running representative steps
//! in fresh processes and comparing bytes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use pdgd::lmi::{
    evaluate_phi_at, BlockSdp, LmiMeta, MatHandle, PsdBlock, TyingPolicy, VarLayout,
    DEFAULT_MARGIN,
};
use pdgd::problem::{problem_digest, problem_from_json, solve_kkt, Problem};
use pdgd::sdp::{solve, SolveOptions, SolveStatus};
use pdgd::simulate::{
    classify_stability, evaluate_lkf, simulate_augmented, simulate_standard, DelaySignal,
    SimOptions, StabilityClass, CLASSIFY_TOL,
};
use pdgd::structure::ErrorSystem;
use pdgd::synthesis::{madub, unified_system, write_madub_csv, MadubResult, SynthesisOptions};

const EPS_SWEEP: [f64; 3] = [0.5, 1.0, 1.5];
/// Reference certified bounds for this benchmark instance at d = 0.1, one
/// per swept ε; reproduction is accepted within ±30% (solver and margin
/// policy differ from the setup that produced the references).
const REFERENCE_H_BAR: [f64; 3] = [0.712, 0.915, 1.017];
/// Certified bound of the unaugmented flow on the same instance; the
/// augmented design must beat it by a factor of at least 1.5.
const BASELINE_H_BAR: f64 = 0.372;
const SWEEP_D: f64 = 0.1;

fn problem_path() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../examples/paper10.json"))
}

fn artifacts_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

struct EpsRun {
    eps: f64,
    res: MadubResult,
    /// System rebuilt at the certified bound, for simulations and spot checks.
    sys: ErrorSystem,
    cert_path: PathBuf,
}

struct SweepArtifacts {
    problem: Problem,
    runs: Vec<EpsRun>,
    elapsed: Duration,
}

static SWEEP: OnceLock<SweepArtifacts> = OnceLock::new();

fn sweep() -> &'static SweepArtifacts {
    SWEEP.get_or_init(|| {
        let dir = artifacts_root();
        fs::create_dir_all(&dir).expect("artifact dir");
        let text = fs::read_to_string(problem_path()).expect("benchmark problem");
        let digest = problem_digest(&text);
        let problem = problem_from_json(&text).expect("benchmark parses");
        let sys = unified_system(&problem, 1.4, SWEEP_D).expect("system assembles");
        let opts = SynthesisOptions::default();

        let t0 = Instant::now();
        let mut runs = Vec::new();
        for eps in EPS_SWEEP {
            let res = madub(&sys, SWEEP_D, eps, 0.5, 1.4, &opts)
                .unwrap_or_else(|e| panic!("delay-bound search failed at eps {eps}: {e}"));
            let sub = dir.join(format!("eps-{eps}"));
            fs::create_dir_all(&sub).expect("eps dir");
            let mut cert = res.certificate.clone();
            cert.provenance.problem_sha256 = Some(digest.clone());
            let cert_path = sub.join("certificate.json");
            fs::write(&cert_path, cert.to_json()).expect("certificate file");
            let mut csv = Vec::new();
            write_madub_csv(&mut csv, &res).expect("trace");
            fs::write(sub.join("trace.csv"), csv).expect("trace file");
            let sys = unified_system(&problem, res.h_bar, SWEEP_D).expect("system at bound");
            runs.push(EpsRun { eps, res, sys, cert_path });
        }
        SweepArtifacts { problem, runs, elapsed: t0.elapsed() }
    })
}

fn ramp_start(p: &Problem) -> (DVector<f64>, DVector<f64>) {
    let n = p.primal_dim();
    let x0 = DVector::from_iterator(n, (0..n).map(|i| -9.0 + 2.0 * i as f64));
    (x0, DVector::zeros(p.dual_dim()))
}

fn box_sample(p: &Problem, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(
        p.primal_dim(),
        (0..p.primal_dim()).map(|i| rng.gen_range(p.box_low[i]..=p.box_high[i])),
    )
}

// -- criterion 1 --------------------------------------------------------------

#[test]
fn c01_stationary_point_and_undelayed_flow_agree() {
    let t0 = Instant::now();
    let text = fs::read_to_string(problem_path()).unwrap();
    let p = problem_from_json(&text).unwrap();
    let kkt = solve_kkt(&p, 1e-10, 200).unwrap();
    let sys = unified_system(&p, 0.0, 0.0).unwrap();
    let (x0, lam0) = ramp_start(&p);
    let opts = SimOptions { dt: 1e-3, t_final: 200.0, ..Default::default() };
    let signals = vec![DelaySignal::Constant(0.0); sys.rho()];
    let traj = simulate_standard(&sys, &x0, &lam0, &signals, &opts).unwrap();
    let (x_end, _) = sys.layout.unpack(&traj.states.last().unwrap().rows(0, sys.layout.r).into_owned());
    let dx = (&x_end - kkt.x()).amax();
    let elapsed = t0.elapsed();
    assert!(dx <= 1e-6, "criterion 1: FAIL — flow endpoint differs from the stationary point by {dx:.3e}");
    assert!(elapsed <= Duration::from_secs(60), "criterion 1: FAIL — took {elapsed:?}");
    println!("criterion 1: PASS — ‖Δx‖∞ = {dx:.3e} after 200 s ({elapsed:.1?})");
}

// -- criterion 2 --------------------------------------------------------------

#[test]
fn c02_equilibrium_is_preserved_by_every_synthesized_gain() {
    let sw = sweep();
    let mut worst = 0.0f64;
    for run in &sw.runs {
        let sys = &run.sys;
        let xs = sys.kkt.x();
        let ls = sys.kkt.lambda();
        let signals: Vec<DelaySignal> = run
            .res
            .certificate
            .delays
            .iter()
            .map(|&(h, d)| DelaySignal::Sinusoid { h, d })
            .collect();
        let opts = SimOptions { dt: 1e-3, t_final: 10.0, ..Default::default() };
        let traj = simulate_augmented(
            &sys,
            &run.res.certificate.gain,
            &xs,
            &ls,
            &xs,
            &ls,
            &signals,
            &opts,
        )
        .unwrap();
        let w0 = traj.states[0].clone();
        let dev = traj
            .states
            .iter()
            .map(|w| (w - &w0).amax())
            .fold(0.0f64, f64::max);
        worst = worst.max(dev);
    }
    assert!(
        worst <= 1e-10,
        "criterion 2: FAIL — equilibrium start drifted by {worst:.3e}"
    );
    println!("criterion 2: PASS — max drift from equilibrium start {worst:.3e} over 10 s × {} gains", sw.runs.len());
}

// -- criterion 3 --------------------------------------------------------------

fn empty_layout(nvars: usize) -> VarLayout {
    let dummy = MatHandle { base: 0, rows: 0, cols: 0, sym: false };
    VarLayout {
        names: (0..nvars).map(|v| format!("v{v}")).collect(),
        y11: dummy,
        y12: dummy,
        y22: dummy,
        r_k: vec![],
        q_k: vec![],
        s_k: vec![],
        s12_k: vec![],
        p2: vec![],
        x: vec![],
        omega1: vec![],
        omega2: vec![],
        omega3: vec![],
        kappa_x: None,
        kappa_p: None,
    }
}

fn scalar_meta(margin: f64) -> LmiMeta {
    LmiMeta {
        eps: 1.0,
        delays: vec![],
        agent_dims: vec![],
        n3: vec![],
        tying: TyingPolicy::PerEdge,
        margin,
    }
}

/// Symmetric matrix variable P packed as its lower triangle; blocks
/// −(AᵀP + PA) ⪰ δI and P ⪰ δI.
fn lyapunov_program(a: &DMatrix<f64>) -> BlockSdp {
    let n = a.nrows();
    let nvars = n * (n + 1) / 2;
    let var_of = |i: usize, j: usize| {
        let (p, q) = if i >= j { (i, j) } else { (j, i) };
        p * (p + 1) / 2 + q
    };
    let mut fa1: BTreeMap<usize, Vec<(u32, u32, f64)>> = BTreeMap::new();
    let mut fa2: BTreeMap<usize, Vec<(u32, u32, f64)>> = BTreeMap::new();
    for vi in 0..n {
        for vj in 0..=vi {
            let v = var_of(vi, vj);
            let mut e = DMatrix::zeros(n, n);
            e[(vi, vj)] = 1.0;
            e[(vj, vi)] = 1.0;
            let m = -(a.transpose() * &e + &e * a);
            let tri = |m: &DMatrix<f64>| {
                let mut ent = Vec::new();
                for i in 0..n {
                    for j in i..n {
                        if m[(i, j)] != 0.0 {
                            ent.push((i as u32, j as u32, m[(i, j)]));
                        }
                    }
                }
                ent
            };
            let ent = tri(&m);
            if !ent.is_empty() {
                fa1.insert(v, ent);
            }
            fa2.insert(v, tri(&e));
        }
    }
    BlockSdp {
        nvars,
        blocks: vec![
            PsdBlock { name: "decay".into(), dim: n, margin: DEFAULT_MARGIN, scale: 1.0, f0: vec![], fa: fa1 },
            PsdBlock { name: "pos".into(), dim: n, margin: DEFAULT_MARGIN, scale: 1.0, f0: vec![], fa: fa2 },
        ],
        objective: vec![0.0; nvars],
        layout: empty_layout(nvars),
        meta: scalar_meta(DEFAULT_MARGIN),
    }
}

/// min t subject to tI ⪰ M: the optimum is the largest eigenvalue of M.
fn eig_bound_program(m: &DMatrix<f64>) -> BlockSdp {
    let n = m.nrows();
    let mut f0 = Vec::new();
    for i in 0..n {
        for j in i..n {
            if m[(i, j)] != 0.0 {
                f0.push((i as u32, j as u32, -m[(i, j)]));
            }
        }
    }
    let mut fa = BTreeMap::new();
    fa.insert(0usize, (0..n).map(|i| (i as u32, i as u32, 1.0)).collect());
    BlockSdp {
        nvars: 1,
        blocks: vec![PsdBlock { name: "bound".into(), dim: n, margin: 0.0, scale: 1.0, f0, fa }],
        objective: vec![1.0],
        layout: empty_layout(1),
        meta: scalar_meta(0.0),
    }
}

/// Reconstruct the packed symmetric P from the flat point.
fn unpack_sym(y: &[f64], n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    let mut v = 0;
    for i in 0..n {
        for j in 0..=i {
            p[(i, j)] = y[v];
            p[(j, i)] = y[v];
            v += 1;
        }
    }
    p
}

#[test]
fn c03_interior_point_solver_matches_its_oracles() {
    let t0 = Instant::now();
    let opts = SolveOptions::default();

    // contracting matrix: the decay inequality must be certifiable
    let stable = DMatrix::from_diagonal_element(2, 2, -1.0);
    let sol = solve(&lyapunov_program(&stable), &opts);
    assert_eq!(sol.status, SolveStatus::Feasible, "criterion 3: FAIL — contracting case not certified");

    // expanding matrix: no certificate can exist
    let unstable = DMatrix::from_diagonal_element(2, 2, 1.0);
    let sol = solve(&lyapunov_program(&unstable), &opts);
    assert_eq!(sol.status, SolveStatus::Infeasible, "criterion 3: FAIL — expanding case not rejected");

    // eigenvalue bound with known answer 3
    let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
    let sol = solve(&eig_bound_program(&m), &opts);
    assert_eq!(sol.status, SolveStatus::Optimal);
    let err = (sol.objective - 3.0).abs();
    assert!(err <= 1e-6, "criterion 3: FAIL — eigenvalue bound off by {err:.3e}");

    // twenty seeded instances, margins re-checked through a separate
    // eigensolve of the reconstructed matrices
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst_margin = f64::INFINITY;
    for trial in 0..20 {
        let n = rng.gen_range(2..=10);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let sym = (&raw + raw.transpose()) * 0.5;
        let shift = sym.symmetric_eigen().eigenvalues.max() + 0.2;
        let a = raw - DMatrix::identity(n, n) * shift;
        let sol = solve(&lyapunov_program(&a), &opts);
        assert_eq!(sol.status, SolveStatus::Feasible, "criterion 3: FAIL — trial {trial} (dim {n})");
        let p = unpack_sym(&sol.y, n);
        let decay = -(a.transpose() * &p + &p * &a);
        let lam_decay = decay.symmetric_eigen().eigenvalues.min();
        let lam_p = p.symmetric_eigen().eigenvalues.min();
        worst_margin = worst_margin.min(lam_decay).min(lam_p);
        assert!(
            lam_decay >= DEFAULT_MARGIN - 1e-9 && lam_p >= DEFAULT_MARGIN - 1e-9,
            "criterion 3: FAIL — trial {trial}: independent margins {lam_decay:.3e}/{lam_p:.3e}"
        );
    }
    let elapsed = t0.elapsed();
    assert!(elapsed <= Duration::from_secs(60), "criterion 3: FAIL — took {elapsed:?}");
    println!("criterion 3: PASS — three oracles + 20 seeded instances, worst independent margin {worst_margin:.3e} ({elapsed:.1?})");
}

// -- criterion 4 --------------------------------------------------------------

#[test]
fn c04_delay_bound_sweep_matches_reference_within_tolerance() {
    let sw = sweep();
    assert!(
        sw.elapsed <= Duration::from_secs(1800),
        "criterion 4: FAIL — sweep took {:?}",
        sw.elapsed
    );
    let mut report = Vec::new();
    for (run, &reference) in sw.runs.iter().zip(&REFERENCE_H_BAR) {
        let h = run.res.h_bar;
        assert!(h >= 0.5, "criterion 4: FAIL — eps {}: h̄ = {h} below 0.5 s", run.eps);
        let rel = (h - reference).abs() / reference;
        assert!(
            rel <= 0.30,
            "criterion 4: FAIL — eps {}: h̄ = {h} is {:.0}% from reference {reference}",
            run.eps,
            rel * 100.0
        );
        // every certificate must survive independent re-verification
        let out = artifacts_root().join(format!("verify-eps-{}", run.eps));
        let o = Command::new(env!("CARGO_BIN_EXE_pdgd"))
            .args([
                "verify",
                problem_path().to_str().unwrap(),
                "--cert",
                run.cert_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .expect("verifier runs");
        assert_eq!(
            o.status.code(),
            Some(0),
            "criterion 4: FAIL — eps {}: verification rejected the certificate:\n{}",
            run.eps,
            String::from_utf8_lossy(&o.stdout)
        );
        report.push(format!("eps {} → {h} s ({:+.0}%)", run.eps, (h - reference) / reference * 100.0));
    }
    println!(
        "criterion 4: PASS — {} (sweep {:.0?}, all certificates re-verified)",
        report.join(", "),
        sw.elapsed
    );
}

// -- criterion 5 --------------------------------------------------------------

#[test]
fn c05_augmentation_beats_the_unaugmented_bound() {
    let sw = sweep();
    let best = sw.runs.iter().map(|r| r.res.h_bar).fold(0.0f64, f64::max);
    let factor = best / BASELINE_H_BAR;
    assert!(
        factor >= 1.5,
        "criterion 5: FAIL — best h̄ {best} is only {factor:.2}× the unaugmented bound {BASELINE_H_BAR}"
    );
    println!("criterion 5: PASS — best h̄ = {best} s is {factor:.2}× the unaugmented {BASELINE_H_BAR} s");
}

// -- criterion 6 --------------------------------------------------------------

#[test]
fn c06_certified_matrix_is_negative_at_sampled_states() {
    let sw = sweep();
    let mut max_lam = f64::NEG_INFINITY;
    for run in &sw.runs {
        let cert = &run.res.certificate;
        let mut rng = ChaCha8Rng::seed_from_u64(0xC06);
        for _ in 0..50 {
            let x_hat = box_sample(&sw.problem, &mut rng);
            let phi = evaluate_phi_at(&run.sys, &cert.vars, &x_hat).unwrap();
            let lam = phi.symmetric_eigen().eigenvalues.max();
            max_lam = max_lam.max(lam);
            assert!(
                lam < -cert.margin / 2.0,
                "criterion 6: FAIL — eps {}: λ_max = {lam:.3e} at a sampled state",
                run.eps
            );
        }
    }
    println!("criterion 6: PASS — 50 sampled states × {} certificates, max λ_max = {max_lam:.3e}", sw.runs.len());
}

// -- criterion 7 --------------------------------------------------------------

#[test]
fn c07_functional_decreases_along_delayed_runs() {
    let sw = sweep();
    let mut worst_ratio = f64::NEG_INFINITY;
    for run in &sw.runs {
        let cert = &run.res.certificate;
        let signals: Vec<DelaySignal> =
            cert.delays.iter().map(|&(h, _)| DelaySignal::Sinusoid { h, d: 0.1 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0xC07);
        let x0 = box_sample(&sw.problem, &mut rng);
        let lam0 = DVector::zeros(sw.problem.dual_dim());
        let opts = SimOptions { dt: 1e-3, t_final: 100.0, ..Default::default() };
        let traj =
            simulate_augmented(&run.sys, &cert.gain, &x0, &lam0, &x0, &lam0, &signals, &opts)
                .unwrap();
        let series = evaluate_lkf(&run.sys, &cert.vars, &traj, &signals, 100).unwrap();
        let v0 = series.values[0];
        let slack = 1e-3 * v0;
        let max_rise = series
            .values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        worst_ratio = worst_ratio.max(max_rise / v0);
        assert!(
            max_rise <= slack,
            "criterion 7: FAIL — eps {}: V rose by {max_rise:.3e} (allowed {slack:.3e})",
            run.eps
        );
    }
    println!("criterion 7: PASS — max inter-sample rise {worst_ratio:.2e}·V(t₀) across {} runs", sw.runs.len());
}

// -- criterion 8 --------------------------------------------------------------

#[test]
fn c08_seeded_stress_runs_all_converge() {
    let sw = sweep();
    let mut total = 0;
    for run in &sw.runs {
        let cert = &run.res.certificate;
        let sys = &run.sys;
        let z_star = sys.layout.pack(&sys.kkt.x(), &sys.kkt.lambda());
        // fast-varying sawtooth applies only to rate-unconstrained designs
        let mut signal_sets: Vec<Vec<DelaySignal>> = vec![cert
            .delays
            .iter()
            .map(|&(h, d)| DelaySignal::Sinusoid { h, d })
            .collect()];
        if cert.delays.iter().all(|&(_, d)| d == 1.0) {
            signal_sets.push(
                cert.delays
                    .iter()
                    .map(|&(h, _)| DelaySignal::Sawtooth { h, period: 0.05 })
                    .collect(),
            );
        }
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0xC08 + seed);
            let x0 = box_sample(&sw.problem, &mut rng);
            let lam0 = DVector::from_iterator(
                sw.problem.dual_dim(),
                (0..sw.problem.dual_dim()).map(|_| rng.gen_range(-1.0..=1.0)),
            );
            for signals in &signal_sets {
                let opts = SimOptions { dt: 1e-3, t_final: 500.0, ..Default::default() };
                let traj = simulate_augmented(
                    sys, &cert.gain, &x0, &lam0, &x0, &lam0, signals, &opts,
                )
                .unwrap();
                let class = classify_stability(&traj, &z_star, 0.1, CLASSIFY_TOL);
                assert_eq!(
                    class,
                    StabilityClass::Converged,
                    "criterion 8: FAIL — eps {} seed {seed}: classified {class:?}",
                    run.eps
                );
                total += 1;
            }
        }
    }
    println!("criterion 8: PASS — {total} seeded runs all converged");
}

// -- criterion 9 --------------------------------------------------------------

#[test]
fn c09_bisection_traces_are_monotone_on_the_exact_grid() {
    let sw = sweep();
    for run in &sw.runs {
        assert_eq!(
            run.res.tolerance, 1e-3,
            "criterion 9: FAIL — eps {}: tolerance {}",
            run.eps, run.res.tolerance
        );
        let grid = run.res.h_bar * 1e3;
        assert!(
            (grid - grid.round()).abs() < 1e-9,
            "criterion 9: FAIL — eps {}: h̄ = {} is off the millisecond grid",
            run.eps,
            run.res.h_bar
        );
        let max_feas = run
            .res
            .trace
            .iter()
            .filter(|p| p.feasible)
            .map(|p| p.h)
            .fold(f64::NEG_INFINITY, f64::max);
        let min_infeas = run
            .res
            .trace
            .iter()
            .filter(|p| !p.feasible)
            .map(|p| p.h)
            .fold(f64::INFINITY, f64::min);
        assert!(
            max_feas < min_infeas,
            "criterion 9: FAIL — eps {}: trace not monotone ({max_feas} vs {min_infeas})",
            run.eps
        );
        assert_eq!(run.res.h_bar, max_feas, "criterion 9: FAIL — reported bound is not the best feasible probe");
    }
    println!("criterion 9: PASS — {} traces monotone, bounds on the exact 1e-3 grid", sw.runs.len());
}

// -- criterion 10 -------------------------------------------------------------

#[test]
fn c10_reruns_are_byte_identical() {
    let sw = sweep();
    let dir = artifacts_root();
    let problem = problem_path();

    // fresh from-scratch synthesis at each certified bound reproduces the
    // sweep's certificate files byte for byte
    for run in &sw.runs {
        let out = dir.join(format!("rerun-syn-{}", run.eps));
        let o = Command::new(env!("CARGO_BIN_EXE_pdgd"))
            .args([
                "synthesize",
                problem.to_str().unwrap(),
                "--eps",
                &run.eps.to_string(),
                "--h",
                &run.res.h_bar.to_string(),
                "--d",
                &SWEEP_D.to_string(),
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .expect("synthesizer runs");
        assert_eq!(o.status.code(), Some(0), "criterion 10: FAIL — rerun synthesis errored");
        let a = fs::read(run.cert_path.as_path()).unwrap();
        let b = fs::read(out.join("certificate.json")).unwrap();
        assert_eq!(a, b, "criterion 10: FAIL — eps {}: certificates differ across runs", run.eps);
    }

    // a seeded simulation and a verification, each run twice in separate
    // processes, must produce identical artifacts
    let run = &sw.runs[0];
    let mut outputs: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.join(format!("rerun-sim-{tag}"));
        let o = Command::new(env!("CARGO_BIN_EXE_pdgd"))
            .args([
                "simulate",
                problem.to_str().unwrap(),
                "--dynamics",
                "augmented",
                "--cert",
                run.cert_path.to_str().unwrap(),
                "--delay",
                &format!("sin:{}:0.1", run.res.h_bar),
                "--seed",
                "11",
                "--t-final",
                "20",
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .expect("simulator runs");
        assert_eq!(o.status.code(), Some(0));
        outputs.push((
            fs::read(out.join("summary.json")).unwrap(),
            fs::read(out.join("trajectory.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "criterion 10: FAIL — simulation summaries differ");
    assert_eq!(outputs[0].1, outputs[1].1, "criterion 10: FAIL — trajectories differ");

    let mut reports: Vec<Vec<u8>> = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.join(format!("rerun-ver-{tag}"));
        let o = Command::new(env!("CARGO_BIN_EXE_pdgd"))
            .args([
                "verify",
                problem.to_str().unwrap(),
                "--cert",
                run.cert_path.to_str().unwrap(),
                "--t-final",
                "20",
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .expect("verifier runs");
        assert_eq!(o.status.code(), Some(0));
        reports.push(fs::read(out.join("verify.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1], "criterion 10: FAIL — verification reports differ");
    println!("criterion 10: PASS — certificates, simulations, and reports identical across processes");
}
