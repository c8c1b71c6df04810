//! Gain synthesis, certificate packaging, and the delay-bound bisection.
//!
//! The synthesis pipeline is: assemble the vertex LMI system for the
//! requested ε and delay bounds, hand it to the interior-point solver, and —
//! on feasibility — recover the stabilizing gain per agent block as
//!
//! ```text
//!     K_i = (P_{2,i}ᵀ)⁻¹ X_i,
//! ```
//!
//! the change of variables that made the gain enter the inequalities
//! linearly. Each P_{2,i} + P_{2,i}ᵀ carries its own positivity block, so
//! the inverse exists whenever the certificate is genuine; a singular or
//! ill-conditioned block at this point is reported as a consistency failure
//! rather than patched over.
//!
//! The maximum allowable delay upper bound is located by bisection on a
//! millisecond-quantized grid: every probe is an independent from-scratch
//! solve (no warm starts, so a probe's answer cannot depend on the path
//! taken to it), "feasible" means the certified margin clears δ, and the
//! reported bound is therefore conservative by construction. The optional
//! gain-magnitude refinement (weighted κ_X, κ_P objective) runs only once,
//! at the final certified bound — feasibility first, gain size second.
//!
//! Certificates serialize to JSON carrying the flat certificate point y
//! (every structured matrix is re-derivable from it), the recovered gain,
//! per-block margins, and provenance. Reloading re-extracts the structured
//! variables through the same layout, so a round-trip cannot drift.

use crate::lmi::{
    assemble_corollary1, assemble_remark2, AssembleOptions, BlockSdp, DecisionVars, LmiError,
    TyingPolicy, DEFAULT_MARGIN,
};
use crate::problem::Problem;
use crate::sdp::{check_certificate, solve, SdpSolution, SolveOptions, SolveStatus};
use crate::structure::{ErrorSystem, GainMatrix, StructureError};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    /// A certified negative: no certificate exists at these parameters
    /// under this margin policy. Not a fault.
    #[error("no certificate at eps = {eps} for delay bounds {delays:?}")]
    Infeasible { eps: f64, delays: Vec<(f64, f64)> },
    /// P_2 recovery failed although the positivity blocks passed — a
    /// consistency failure that should never happen on a genuine
    /// certificate.
    #[error("gain recovery failed: {0}")]
    SingularP2(String),
    /// The bisection bracket is wrong-side: feasibility at the high end or
    /// infeasibility at the low end.
    #[error("delay-bound search not bracketed at h = {h} (expected {})", if *.expected_feasible { "feasible" } else { "infeasible" })]
    NotBracketed { h: f64, expected_feasible: bool },
    #[error("bad bracket: {0}")]
    BadBracket(String),
    #[error("certificate document: {0}")]
    BadDocument(String),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Solver-affecting knobs recorded into certificate provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverStamp {
    pub max_iter: usize,
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub slack_tol: f64,
}

impl From<&SolveOptions> for SolverStamp {
    fn from(o: &SolveOptions) -> Self {
        SolverStamp {
            max_iter: o.max_iter,
            gap_tol: o.gap_tol,
            feas_tol: o.feas_tol,
            slack_tol: o.slack_tol,
        }
    }
}

/// Where a certificate came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub problem_name: String,
    pub agents: usize,
    pub primal_dim: usize,
    pub dual_dim: usize,
    /// SHA-256 of the problem file, when the caller knows it (the library
    /// works from parsed structures and cannot re-derive file bytes).
    pub problem_sha256: Option<String>,
    pub solver: SolverStamp,
}

/// Achieved vs required smallest-eigenvalue margin of one LMI block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockMargin {
    pub name: String,
    pub achieved: f64,
    pub required: f64,
}

/// A solved, re-checkable stability certificate.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub eps: f64,
    pub tying: TyingPolicy,
    /// Effective (h_k, d_k) per delay channel.
    pub delays: Vec<(f64, f64)>,
    /// (α1, α2) when the gain-magnitude objective was used.
    pub minimize_gain: Option<(f64, f64)>,
    /// Strictness margin δ the blocks were required to clear.
    pub margin: f64,
    pub vars: DecisionVars,
    pub gain: GainMatrix,
    /// Flat certificate point — the single source of truth; all structured
    /// views are extracted from it.
    pub y: Vec<f64>,
    pub block_margins: Vec<BlockMargin>,
    pub provenance: Provenance,
}

/// Synthesis configuration. `delays` overrides the bounds baked into the
/// error system (used by the bisection; `None` keeps the system's own).
#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub tying: TyingPolicy,
    pub margin: f64,
    pub minimize_gain: Option<(f64, f64)>,
    pub delays: Option<Vec<(f64, f64)>>,
    /// Bisection grid resolution (seconds).
    pub granularity: f64,
    pub solve: SolveOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            tying: TyingPolicy::PerEdge,
            margin: DEFAULT_MARGIN,
            minimize_gain: None,
            delays: None,
            granularity: 1e-3,
            solve: SolveOptions::default(),
        }
    }
}

/// Assemble the program a certificate at these parameters must satisfy —
/// shared by synthesis and by independent re-verification.
pub fn certificate_program(
    sys: &ErrorSystem,
    eps: f64,
    delays: Option<Vec<(f64, f64)>>,
    tying: TyingPolicy,
    margin: f64,
    minimize_gain: Option<(f64, f64)>,
) -> Result<BlockSdp, SynthesisError> {
    let opts = AssembleOptions { margin, tying, delays, ..Default::default() };
    let base = assemble_corollary1(sys, eps, &opts)?;
    match minimize_gain {
        None => Ok(base),
        Some((a1, a2)) => Ok(assemble_remark2(&base, a1, a2)?),
    }
}

/// Recover K_i = (P_{2,i}ᵀ)⁻¹ X_i per agent and confirm the defining
/// relation P_{2,i}ᵀ K_i = X_i holds to 1e−9.
fn recover_gain(vars: &DecisionVars) -> Result<GainMatrix, SynthesisError> {
    let mut blocks = Vec::with_capacity(vars.p2_blocks.len());
    for (i, (p2, x)) in vars.p2_blocks.iter().zip(&vars.x_blocks).enumerate() {
        let p2t = p2.transpose();
        let lu = p2t.clone().lu();
        let k = lu
            .solve(x)
            .ok_or_else(|| SynthesisError::SingularP2(format!("P2 block {i} is singular")))?;
        let resid = (&p2t * &k - x).amax();
        let scale = 1.0 + x.amax();
        if resid > 1e-9 * scale {
            return Err(SynthesisError::SingularP2(format!(
                "block {i}: ‖P2ᵀK − X‖∞ = {resid:.3e} exceeds 1e-9 (scale {scale:.3e})"
            )));
        }
        blocks.push(k);
    }
    Ok(GainMatrix { blocks })
}

fn package(
    sys: &ErrorSystem,
    program: &BlockSdp,
    sol: &SdpSolution,
    eps: f64,
    opts: &SynthesisOptions,
    delays: Vec<(f64, f64)>,
) -> Result<Certificate, SynthesisError> {
    let achieved = check_certificate(program, &sol.y);
    let mut block_margins = Vec::with_capacity(program.blocks.len());
    for (b, &a) in program.blocks.iter().zip(&achieved) {
        block_margins.push(BlockMargin { name: b.name.clone(), achieved: a, required: b.margin });
        // strict blocks must clear their margin; the ordering blocks
        // (margin 0) only need semidefiniteness to numerical tolerance
        let slack = if b.margin > 0.0 { b.margin - 1e-9 } else { -1e-9 };
        if a < slack {
            return Err(SynthesisError::Infeasible { eps, delays });
        }
    }
    let vars = program.extract_vars(&sol.y);
    let gain = recover_gain(&vars)?;
    let p = &sys.problem;
    Ok(Certificate {
        eps,
        tying: opts.tying,
        delays,
        minimize_gain: opts.minimize_gain,
        margin: opts.margin,
        vars,
        gain,
        y: sol.y.clone(),
        block_margins,
        provenance: Provenance {
            problem_name: p.name.clone(),
            agents: p.num_agents(),
            primal_dim: p.primal_dim(),
            dual_dim: p.dual_dim(),
            problem_sha256: None,
            solver: SolverStamp::from(&opts.solve),
        },
    })
}

/// Synthesize a delay-robust gain certificate at parameter ε for the delay
/// bounds carried by `sys` (or overridden in `opts`).
pub fn synthesize(
    sys: &ErrorSystem,
    eps: f64,
    opts: &SynthesisOptions,
) -> Result<Certificate, SynthesisError> {
    let program = certificate_program(
        sys,
        eps,
        opts.delays.clone(),
        opts.tying,
        opts.margin,
        opts.minimize_gain,
    )?;
    let delays = program.meta.delays.clone();
    let sol = solve(&program, &opts.solve);
    let ok = match sol.status {
        SolveStatus::Feasible | SolveStatus::Optimal => true,
        SolveStatus::Infeasible | SolveStatus::MaxIter | SolveStatus::NumericalFailure => false,
    };
    if !ok {
        return Err(SynthesisError::Infeasible { eps, delays });
    }
    package(sys, &program, &sol, eps, opts, delays)
}

/// One bisection probe.
#[derive(Debug, Clone, Serialize)]
pub struct MadubProbe {
    /// Delay bound tried (seconds, an exact multiple of the granularity).
    pub h: f64,
    pub feasible: bool,
    /// Certified slack reported by the solver (min over strict blocks of
    /// achieved − required margin).
    pub slack: f64,
    pub iterations: usize,
}

/// Result of the maximum-allowable-delay search.
#[derive(Debug)]
pub struct MadubResult {
    /// Largest certified bound (exact multiple of `tolerance`).
    pub h_bar: f64,
    /// Grid resolution of the search.
    pub tolerance: f64,
    pub certificate: Certificate,
    /// Every probe in chronological order.
    pub trace: Vec<MadubProbe>,
}

/// Locate the maximum allowable delay upper bound by bisection with the
/// unified bound h_k = h̄ on every channel and rate bound d.
///
/// `h_lo` must be feasible and `h_hi` infeasible ([`SynthesisError::NotBracketed`]
/// otherwise). The search works on an integer grid of `opts.granularity`
/// seconds, so the reported h̄ is an exact grid multiple and the bracket
/// invariant "feasible at h̄, not certified at h̄ + granularity" holds by
/// construction. Probes solve the plain feasibility program; the optional
/// gain-size objective is applied only to the final certificate.
pub fn madub(
    sys: &ErrorSystem,
    d: f64,
    eps: f64,
    h_lo: f64,
    h_hi: f64,
    opts: &SynthesisOptions,
) -> Result<MadubResult, SynthesisError> {
    let g = opts.granularity;
    if !(g > 0.0) || !(h_lo >= 0.0) || !(h_hi > h_lo) {
        return Err(SynthesisError::BadBracket(format!(
            "need 0 ≤ h_lo < h_hi and positive granularity, got [{h_lo}, {h_hi}] @ {g}"
        )));
    }
    let rho = sys.rho();
    let to_h = |n: u64| grid_value(n, g);
    let mut lo = (h_lo / g).round() as u64;
    let mut hi = (h_hi / g).round() as u64;
    if hi <= lo {
        return Err(SynthesisError::BadBracket(format!(
            "bracket [{h_lo}, {h_hi}] collapses on the {g}-second grid"
        )));
    }

    let mut trace = Vec::new();
    // plain feasibility probes: no objective, margins as configured
    let probe_opts =
        SynthesisOptions { minimize_gain: None, delays: None, ..opts.clone() };
    let mut best: Option<(u64, BlockSdp, SdpSolution)> = None;
    let probe = |n: u64,
                     trace: &mut Vec<MadubProbe>,
                     best: &mut Option<(u64, BlockSdp, SdpSolution)>|
     -> Result<bool, SynthesisError> {
        let h = to_h(n);
        let program = certificate_program(
            sys,
            eps,
            Some(vec![(h, d); rho]),
            probe_opts.tying,
            probe_opts.margin,
            None,
        )?;
        let sol = solve(&program, &probe_opts.solve);
        let feasible = matches!(sol.status, SolveStatus::Feasible);
        trace.push(MadubProbe { h, feasible, slack: sol.objective, iterations: sol.iterations });
        if feasible {
            *best = Some((n, program, sol));
        }
        Ok(feasible)
    };

    if !probe(lo, &mut trace, &mut best)? {
        return Err(SynthesisError::NotBracketed { h: to_h(lo), expected_feasible: true });
    }
    if probe(hi, &mut trace, &mut best)? {
        return Err(SynthesisError::NotBracketed { h: to_h(hi), expected_feasible: false });
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if probe(mid, &mut trace, &mut best)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let h_bar = to_h(lo);
    let final_delays = vec![(h_bar, d); rho];
    let certificate = if opts.minimize_gain.is_some() {
        // gain-size refinement at the certified bound only
        let final_opts = SynthesisOptions { delays: Some(final_delays), ..opts.clone() };
        synthesize(sys, eps, &final_opts)?
    } else {
        let (n, program, sol) = best.expect("bisection always keeps its last feasible probe");
        debug_assert_eq!(n, lo);
        let final_opts = SynthesisOptions { delays: Some(final_delays.clone()), ..opts.clone() };
        package(sys, &program, &sol, eps, &final_opts, final_delays)?
    };
    Ok(MadubResult { h_bar, tolerance: g, certificate, trace })
}

/// n-th point of the bisection grid. For power-of-ten grids the value is
/// computed by division, which is correctly rounded — `712 / 1000.0` is the
/// f64 nearest to 0.712 and prints that way, while `712 * 0.001` picks up
/// the representation error of 0.001 and prints a 17-digit tail.
fn grid_value(n: u64, g: f64) -> f64 {
    let k = (-g.log10()).round();
    if (0.0..=18.0).contains(&k) {
        let p = 10f64.powi(k as i32);
        if (g * p - 1.0).abs() < 1e-9 {
            return n as f64 / p;
        }
    }
    n as f64 * g
}

/// Write a bisection trace as CSV (h, status, margin).
pub fn write_madub_csv(out: &mut dyn Write, result: &MadubResult) -> std::io::Result<()> {
    writeln!(out, "h,status,margin")?;
    for p in &result.trace {
        writeln!(
            out,
            "{},{},{}",
            p.h,
            if p.feasible { "feasible" } else { "infeasible" },
            p.slack
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// serialization

#[derive(Serialize, Deserialize)]
pub struct MatDoc {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl MatDoc {
    fn from_matrix(m: &nalgebra::DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatDoc { rows: m.nrows(), cols: m.ncols(), data }
    }

    fn to_matrix(&self) -> Result<nalgebra::DMatrix<f64>, SynthesisError> {
        if self.data.len() != self.rows * self.cols {
            return Err(SynthesisError::BadDocument(format!(
                "matrix block claims {}×{} but carries {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// On-disk certificate document. The flat point `y` is authoritative; the
/// gain blocks are stored for tooling that does not want to re-extract.
#[derive(Serialize, Deserialize)]
pub struct CertificateDoc {
    pub format_version: u32,
    pub kind: String,
    pub eps: f64,
    pub tying: String,
    pub delays: Vec<(f64, f64)>,
    pub minimize_gain: Option<(f64, f64)>,
    pub margin: f64,
    pub provenance: Provenance,
    pub y: Vec<f64>,
    pub gain: Vec<MatDoc>,
    pub block_margins: Vec<BlockMargin>,
}

/// Certificate file format version.
pub const CERTIFICATE_FORMAT: u32 = 1;

fn tying_str(t: TyingPolicy) -> &'static str {
    match t {
        TyingPolicy::PerEdge => "per_edge",
        TyingPolicy::Tied => "tied",
    }
}

fn tying_parse(s: &str) -> Result<TyingPolicy, SynthesisError> {
    match s {
        "per_edge" => Ok(TyingPolicy::PerEdge),
        "tied" => Ok(TyingPolicy::Tied),
        other => Err(SynthesisError::BadDocument(format!("unknown tying policy `{other}`"))),
    }
}

impl Certificate {
    pub fn to_doc(&self) -> CertificateDoc {
        CertificateDoc {
            format_version: CERTIFICATE_FORMAT,
            kind: "certificate".into(),
            eps: self.eps,
            tying: tying_str(self.tying).into(),
            delays: self.delays.clone(),
            minimize_gain: self.minimize_gain,
            margin: self.margin,
            provenance: self.provenance.clone(),
            y: self.y.clone(),
            gain: self.gain.blocks.iter().map(MatDoc::from_matrix).collect(),
            block_margins: self.block_margins.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("certificate serialization")
    }

    /// Rebuild a full Certificate from a document against the system it was
    /// synthesized for: re-assembles the program, re-extracts the structured
    /// variables from y, and re-derives the gain. Structural mismatches
    /// (wrong variable count, wrong agent count) fail loudly; margin
    /// re-verification is the caller's decision, not a load-time side effect.
    pub fn from_doc(doc: &CertificateDoc, sys: &ErrorSystem) -> Result<Certificate, SynthesisError> {
        if doc.format_version != CERTIFICATE_FORMAT {
            return Err(SynthesisError::BadDocument(format!(
                "format_version {} (expected {CERTIFICATE_FORMAT})",
                doc.format_version
            )));
        }
        if doc.kind != "certificate" {
            return Err(SynthesisError::BadDocument(format!("kind `{}`", doc.kind)));
        }
        let tying = tying_parse(&doc.tying)?;
        let program = certificate_program(
            sys,
            doc.eps,
            Some(doc.delays.clone()),
            tying,
            doc.margin,
            doc.minimize_gain,
        )?;
        if doc.y.len() != program.nvars {
            return Err(SynthesisError::BadDocument(format!(
                "certificate has {} variables, program expects {}",
                doc.y.len(),
                program.nvars
            )));
        }
        let vars = program.extract_vars(&doc.y);
        let gain = recover_gain(&vars)?;
        // the stored gain is redundant with y; a disagreement means the
        // document was edited after synthesis
        if doc.gain.len() != gain.blocks.len() {
            return Err(SynthesisError::BadDocument(format!(
                "document stores {} gain blocks, system has {}",
                doc.gain.len(),
                gain.blocks.len()
            )));
        }
        for (i, (md, kb)) in doc.gain.iter().zip(&gain.blocks).enumerate() {
            let stored = md.to_matrix()?;
            if stored.shape() != kb.shape() || (stored - kb).amax() > 1e-9 * (1.0 + kb.amax()) {
                return Err(SynthesisError::BadDocument(format!(
                    "gain block {i} disagrees with the certificate point"
                )));
            }
        }
        Ok(Certificate {
            eps: doc.eps,
            tying,
            delays: doc.delays.clone(),
            minimize_gain: doc.minimize_gain,
            margin: doc.margin,
            vars,
            gain,
            y: doc.y.clone(),
            block_margins: doc.block_margins.clone(),
            provenance: doc.provenance.clone(),
        })
    }

    pub fn from_json(text: &str, sys: &ErrorSystem) -> Result<Certificate, SynthesisError> {
        let doc: CertificateDoc = serde_json::from_str(text)?;
        Certificate::from_doc(&doc, sys)
    }
}

/// Spectral norm via symmetric eigizer of MᵀM (small matrices only).
pub fn spectral_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let eig = nalgebra::SymmetricEigen::new(gram);
    eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.max(0.0))).sqrt()
}

/// Convenience used by tests and the CLI: build the error system for
/// `problem` with the unified bound (h, d) on every channel.
pub fn unified_system(
    p: &Problem,
    h: f64,
    d: f64,
) -> Result<ErrorSystem, SynthesisError> {
    Ok(crate::structure::build_error_system(
        p,
        &crate::structure::DelaySpec::Homogeneous { h, d },
    )?)
}
