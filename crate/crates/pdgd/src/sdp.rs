//! Primal-dual interior-point solver for the assembled block programs.
//!
//! The solver handles linear matrix inequalities in the dual form
//! `S = C − Σ_a y_a Â_a ⪰ 0` (block diagonal) together with simple bounds
//! `lo ≤ y ≤ hi` on every scalar variable, maximizing a linear functional
//! `bᵀy`. Both problem flavors produced by the assembly layer reduce to it:
//!
//! * **Feasibility** (all-zero objective): an auxiliary uniform-slack
//!   variable t is appended with `Â_t = I` on every matrix block, and
//!   `b = e_t`, so the solver maximizes the smallest eigenvalue margin
//!   across all blocks. `Feasible` means t exceeded the strictness margin
//!   δ of the program; `Infeasible` means the certified optimum fell short.
//!   Because every assembled block is homogeneous (zero constant part), the
//!   bare slack problem would be unbounded whenever it is strictly
//!   feasible; the variable boxes make the answer well-posed: "is there a
//!   certificate with entries below the box bound whose margin beats δ".
//!   The slack start `t₀ = min_b λ_min(F_0^b) − 1` gives an exactly
//!   dual-feasible initial point, which keeps the dual residual at zero
//!   throughout and makes every intermediate iterate a genuine certificate:
//!   the moment the true margin of the current y clears δ the solve stops
//!   early with that certificate in hand.
//!
//! * **Objective** problems (nonzero linear objective, e.g. the
//!   gain-magnitude regularization): strictness margins are folded into
//!   the constant parts and the solver minimizes the objective to a small
//!   duality gap, starting from an infeasible but well-centered point.
//!
//! The search direction is the HKM/KSH one: the Schur complement matrix
//! `H_ab = tr(Â_a S⁻¹ Â_b Z)` (plus diagonal `z/s` terms from the bounds)
//! is symmetric positive definite whenever the coefficient matrices are
//! linearly independent, and is assembled blockwise from the sparse
//! coefficient entries: for each variable the dense product `S⁻¹ Â_b Z` is
//! formed through its handful of nonzero rows, then traced against the
//! sparse `Â_a` of every partner. One Cholesky factorization of H serves
//! both the Mehrotra predictor and its corrector. Failures are repaired by
//! adding a small ridge before giving up with `NumericalFailure`.
//!
//! Everything is deterministic: fixed iteration order, no randomness, no
//! time-dependent branching, so a rerun of the same build on the same
//! input reproduces the solution bit for bit. Wall time is measured and
//! reported in memory but never serialized, keeping result files stable.

use crate::lmi::BlockSdp;
use nalgebra::DMatrix;
use serde::Serialize;
use std::time::{Duration, Instant};

/// Solver configuration.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Relative duality-gap tolerance for full convergence.
    pub gap_tol: f64,
    /// Primal (constraint) residual tolerance.
    pub feas_tol: f64,
    /// Stop when the certified slack stops moving by more than this.
    pub slack_tol: f64,
    /// Tolerance for the independent final margin check.
    pub check_tol: f64,
    /// Box half-width on every scalar variable.
    pub var_bound: f64,
    /// Upper cap on the uniform slack variable.
    pub slack_cap: f64,
    /// Allow returning as soon as the feasibility question is settled,
    /// before the slack optimum is located precisely.
    pub allow_early: bool,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 200,
            gap_tol: 1e-8,
            feas_tol: 1e-9,
            slack_tol: 1e-9,
            check_tol: 1e-6,
            var_bound: 1e5,
            slack_cap: 10.0,
            allow_early: true,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    /// Objective problem solved to the gap tolerance.
    Optimal,
    /// Feasibility problem: a certificate with margin ≥ δ was found.
    Feasible,
    /// Feasibility problem: the certified optimum margin falls short of δ.
    Infeasible,
    /// Iteration limit reached without a decision.
    MaxIter,
    /// Linear algebra broke down (singular Schur complement, lost cone).
    NumericalFailure,
}

/// Solver result. `wall_time` is intentionally excluded from the
/// serialized form so result files are reproducible byte for byte.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub y: Vec<f64>,
    /// Certified slack for feasibility problems, objective value otherwise.
    pub objective: f64,
    pub status: SolveStatus,
    /// Smallest eigenvalue of every block at the returned point (in the
    /// block's own scaled units).
    pub block_margins: Vec<f64>,
    pub iterations: usize,
    pub wall_time: Duration,
}

#[derive(Serialize)]
struct SolutionDoc<'a> {
    status: &'a SolveStatus,
    objective: f64,
    block_margins: &'a [f64],
    iterations: usize,
}

impl SdpSolution {
    /// JSON form: status, objective, per-block margins, iteration count.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SolutionDoc {
            status: &self.status,
            objective: self.objective,
            block_margins: &self.block_margins,
            iterations: self.iterations,
        })
        .expect("solution serialization cannot fail")
    }
}

/// Independent certificate check: the smallest eigenvalue of every block
/// at y, by dense symmetric eigensolves on the stored block data. Pure and
/// deliberately separate from the solver internals — this is the trust
/// anchor a certificate consumer relies on.
pub fn check_certificate(sdp: &BlockSdp, y: &[f64]) -> Vec<f64> {
    sdp.blocks
        .iter()
        .map(|b| {
            let f = b.eval(y);
            min_eig(&f)
        })
        .collect()
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

// ---------------------------------------------------------------------------
// internal problem form

/// One matrix cone block in internal form: S_b = C_b − Σ y_a Â_a.
struct MatBlock {
    dim: usize,
    /// Dense row-major constant part C_b.
    c: Vec<f64>,
    /// Sorted global variable ids with entries in this block.
    gvars: Vec<usize>,
    /// Per local variable: range into `ent`.
    ent_off: Vec<usize>,
    /// Upper-triangle entries (i ≤ j) of Â_a.
    ent: Vec<(u16, u16, f64)>,
}

impl MatBlock {
    /// tr(Â_a M) for a possibly nonsymmetric dense M (row-major).
    fn trace_against(&self, la: usize, m: &[f64]) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for &(i, j, v) in &self.ent[self.ent_off[la]..self.ent_off[la + 1]] {
            let (i, j) = (i as usize, j as usize);
            acc += v * m[j * n + i];
            if i != j {
                acc += v * m[i * n + j];
            }
        }
        acc
    }

    /// Add Σ_a y_a Â_a into dense row-major `out` (symmetric fill).
    fn add_combination(&self, y: &[f64], sign: f64, out: &mut [f64]) {
        let n = self.dim;
        for (la, &ga) in self.gvars.iter().enumerate() {
            let w = sign * y[ga];
            if w == 0.0 {
                continue;
            }
            for &(i, j, v) in &self.ent[self.ent_off[la]..self.ent_off[la + 1]] {
                let (i, j) = (i as usize, j as usize);
                out[i * n + j] += w * v;
                if i != j {
                    out[j * n + i] += w * v;
                }
            }
        }
    }
}

struct InternalProblem {
    nv: usize,
    b: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    blocks: Vec<MatBlock>,
    /// Index of the appended slack variable (feasibility mode).
    t_index: Option<usize>,
    /// Blocks whose margin is strict; the uniform slack rides only on
    /// these (non-strict blocks stay plain cone constraints).
    strict: Vec<bool>,
}

fn build_internal(sdp: &BlockSdp, opts: &SolveOptions) -> InternalProblem {
    let feasibility = sdp.is_feasibility();
    let p = sdp.nvars;
    let nv = if feasibility { p + 1 } else { p };
    let t_index = feasibility.then_some(p);

    // Margins are folded into the constant parts in both modes, so the
    // feasibility decision is simply "slack optimum ≥ 0". If no block is
    // strict the slack rides on all of them (plain cone feasibility).
    let any_strict = sdp.blocks.iter().any(|b| b.margin > 0.0);
    let strict: Vec<bool> =
        sdp.blocks.iter().map(|b| !any_strict || b.margin > 0.0).collect();

    let mut blocks = Vec::with_capacity(sdp.blocks.len());
    for (bi, pb) in sdp.blocks.iter().enumerate() {
        let n = pb.dim;
        let mut c = vec![0.0; n * n];
        for &(i, j, v) in &pb.f0 {
            let (i, j) = (i as usize, j as usize);
            c[i * n + j] = v;
            c[j * n + i] = v;
        }
        for i in 0..n {
            c[i * n + i] -= pb.margin;
        }
        let mut gvars = Vec::with_capacity(pb.fa.len() + 1);
        let mut ent_off = vec![0usize];
        let mut ent = Vec::new();
        for (&a, entries) in &pb.fa {
            gvars.push(a);
            // Â_a = −F_a
            for &(i, j, v) in entries {
                ent.push((i as u16, j as u16, -v));
            }
            ent_off.push(ent.len());
        }
        if let Some(t) = t_index {
            if strict[bi] {
                // S_b = F_b(y) − margin_b·I − t·I  ⇒  Â_t = +I
                gvars.push(t);
                for i in 0..n {
                    ent.push((i as u16, i as u16, 1.0));
                }
                ent_off.push(ent.len());
            }
        }
        blocks.push(MatBlock { dim: n, c, gvars, ent_off, ent });
    }

    let mut b = vec![0.0; nv];
    let mut lo = vec![-opts.var_bound; nv];
    let mut hi = vec![opts.var_bound; nv];
    if let Some(t) = t_index {
        b[t] = 1.0;
        lo[t] = -1e6;
        hi[t] = opts.slack_cap;
    } else {
        // maximize −objective = minimize the objective
        for (a, &cst) in sdp.objective.iter().enumerate() {
            b[a] = -cst;
        }
    }

    InternalProblem { nv, b, lo, hi, blocks, t_index, strict }
}

// ---------------------------------------------------------------------------
// dense helpers on row-major flat buffers

fn mat_from_flat(n: usize, m: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| m[i * n + j])
}

fn flat_from_mat(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = m[(i, j)];
        }
    }
    out
}

/// tr(A·B) for square row-major buffers.
fn trace_prod(n: usize, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += a[i * n + j] * b[j * n + i];
        }
    }
    acc
}

/// Largest step α ∈ (0, 1] with M + α·ΔM ⪰ 0, given the Cholesky factor of
/// M ≻ 0: α = min(1, −1/λ_min(L⁻¹ ΔM L⁻ᵀ)) when that eigenvalue is negative.
fn max_step(chol_l: &DMatrix<f64>, dm: &DMatrix<f64>) -> f64 {
    let t1 = chol_l
        .solve_lower_triangular(dm)
        .expect("triangular solve with positive diagonal");
    let w = chol_l
        .solve_lower_triangular(&t1.transpose())
        .expect("triangular solve with positive diagonal");
    let lmin = min_eig(&((&w + w.transpose()) * 0.5));
    if lmin >= 0.0 {
        1.0
    } else {
        (-1.0 / lmin).min(1.0)
    }
}

// ---------------------------------------------------------------------------
// solver

struct BlockState {
    s: DMatrix<f64>,
    z: DMatrix<f64>,
    s_chol_l: DMatrix<f64>,
    s_inv: Vec<f64>,
    z_flat: Vec<f64>,
}

/// Solve the block program. Feasibility problems (zero objective) answer
/// the margin question via the uniform slack; objective problems minimize
/// the stored linear objective subject to the blocks with their margins.
pub fn solve(sdp: &BlockSdp, opts: &SolveOptions) -> SdpSolution {
    let start = Instant::now();
    let prob = build_internal(sdp, opts);
    let nv = prob.nv;
    let feasibility = prob.t_index.is_some();

    // --- initial point
    let mut y = vec![0.0; nv];
    if let Some(t) = prob.t_index {
        // choosing t below the worst slack-carrying block makes those
        // blocks exactly dual feasible at the start
        let mut worst = f64::INFINITY;
        for (bi, mb) in prob.blocks.iter().enumerate() {
            if prob.strict[bi] {
                worst = worst.min(min_eig(&mat_from_flat(mb.dim, &mb.c)));
            }
        }
        y[t] = if worst.is_finite() { worst - 1.0 } else { -1.0 };
    }

    // Scale the primal start so the slack-variable constraint
    // Σ_b tr(Z_b) ≈ 1 is roughly satisfied from the outset.
    let total_dim: usize = prob.blocks.iter().map(|b| b.dim).sum();
    let znu = if feasibility { 1.0 / total_dim as f64 } else { 1.0 };

    let mut states: Vec<BlockState> = prob
        .blocks
        .iter()
        .enumerate()
        .map(|(bi, mb)| {
            let n = mb.dim;
            let mut s_flat = mb.c.clone();
            mb.add_combination(&y, -1.0, &mut s_flat);
            let s0 = mat_from_flat(n, &s_flat);
            let s = if feasibility && prob.strict[bi] {
                // exactly dual feasible by construction
                s0
            } else {
                // centered start, shifted into the cone if necessary
                let lift = (1.0 - min_eig(&s0)).max(0.0);
                s0 + DMatrix::identity(n, n) * lift
            };
            BlockState {
                s,
                z: DMatrix::identity(n, n) * znu,
                s_chol_l: DMatrix::zeros(n, n),
                s_inv: vec![0.0; n * n],
                z_flat: vec![0.0; n * n],
            }
        })
        .collect();

    // bound slacks are derived from y (always exact); duals are variables
    let mut zlo: Vec<f64> =
        (0..nv).map(|a| (znu).min(1.0 / (y[a] - prob.lo[a]).max(1.0))).collect();
    let mut zhi: Vec<f64> =
        (0..nv).map(|a| (znu).min(1.0 / (prob.hi[a] - y[a]).max(1.0))).collect();

    let degree: f64 = prob.blocks.iter().map(|b| b.dim as f64).sum::<f64>() + 2.0 * nv as f64;

    let mut best_y = y.clone();
    let mut best_slack = f64::NEG_INFINITY;
    let mut prev_slack = f64::NEG_INFINITY;
    // best certified upper bound on the slack optimum (weak duality)
    let mut upper_bound = f64::INFINITY;
    let mut status = SolveStatus::MaxIter;
    let mut fail_msg: Option<&'static str> = None;
    let mut iterations = 0;
    let mut stall_count = 0usize;
    let mut last_gap = f64::INFINITY;
    let mut last_improve = 0usize;

    // Certified answer slack of a point: the worst strict-block margin
    // surplus, provided non-strict blocks hold to numerical tolerance.
    let certified_slack = |yy: &[f64]| -> f64 {
        let mut slack = f64::INFINITY;
        for (bi, b) in sdp.blocks.iter().enumerate() {
            let lead = min_eig(&b.eval(&yy[..sdp.nvars]));
            if prob.strict[bi] {
                slack = slack.min(lead - b.margin);
            } else if lead < -1e-9 {
                return f64::NEG_INFINITY;
            }
        }
        slack
    };

    let mut h = DMatrix::<f64>::zeros(nv, nv);

    'outer: for iter in 0..opts.max_iter {
        iterations = iter + 1;

        // --- factor the cone states
        let mut lost_cone = false;
        for st in states.iter_mut() {
            let chol = match st.s.clone().cholesky() {
                Some(c) => c,
                None => {
                    lost_cone = true;
                    break;
                }
            };
            st.s_chol_l = chol.l();
            st.s_inv = flat_from_mat(&chol.inverse());
            st.z_flat = flat_from_mat(&st.z);
        }
        if lost_cone {
            status = SolveStatus::NumericalFailure;
            fail_msg = Some("slack matrix lost positive definiteness");
            break 'outer;
        }

        // --- residuals
        // r_p,a = b_a − Σ_b tr(Â_a Z_b) − zhi_a + zlo_a
        let mut rp = prob.b.clone();
        for (mb, st) in prob.blocks.iter().zip(&states) {
            for (la, &ga) in mb.gvars.iter().enumerate() {
                rp[ga] -= mb.trace_against(la, &st.z_flat);
            }
        }
        for a in 0..nv {
            rp[a] -= zhi[a] - zlo[a];
        }
        // R_d,b = C_b − Σ y Â − S_b  (zero for feasibility mode)
        let rd: Vec<Vec<f64>> = prob
            .blocks
            .iter()
            .zip(&states)
            .map(|(mb, st)| {
                let n = mb.dim;
                let mut r = mb.c.clone();
                mb.add_combination(&y, -1.0, &mut r);
                let s = flat_from_mat(&st.s);
                for k in 0..n * n {
                    r[k] -= s[k];
                }
                r
            })
            .collect();

        let mut mu = 0.0;
        for st in &states {
            mu += trace_prod(st.z.nrows(), &flat_from_mat(&st.s), &st.z_flat);
        }
        let slo: Vec<f64> = (0..nv).map(|a| y[a] - prob.lo[a]).collect();
        let shi: Vec<f64> = (0..nv).map(|a| prob.hi[a] - y[a]).collect();
        for a in 0..nv {
            mu += slo[a] * zlo[a] + shi[a] * zhi[a];
        }
        mu /= degree;

        let pinfeas = rp.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
            / (1.0 + prob.b.iter().fold(0.0f64, |m, &v| m.max(v.abs())));
        let dinfeas = rd
            .iter()
            .map(|r| r.iter().fold(0.0f64, |m, &v| m.max(v.abs())))
            .fold(0.0f64, f64::max);

        // --- bookkeeping: certified slack of the current original point
        let slack_now = if feasibility { certified_slack(&y) } else { f64::NAN };
        if feasibility && slack_now > best_slack {
            if slack_now > best_slack + opts.slack_tol {
                last_improve = iter;
            }
            best_slack = slack_now;
            best_y.copy_from_slice(&y);
        }

        // primal and dual objective values
        let mut pobj = 0.0;
        for (mb, st) in prob.blocks.iter().zip(&states) {
            pobj += trace_prod(mb.dim, &mb.c, &st.z_flat);
        }
        for a in 0..nv {
            pobj += prob.hi[a] * zhi[a] - prob.lo[a] * zlo[a];
        }
        let dobj: f64 = prob.b.iter().zip(&y).map(|(b, y)| b * y).sum();
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

        if opts.verbose {
            eprintln!(
                "it {iter:3}  mu {mu:9.2e}  gap {gap:9.2e}  pinf {pinfeas:8.1e}  dinf {dinfeas:8.1e}  slack {slack_now:10.3e}"
            );
        }

        // --- termination
        if feasibility {
            // weak duality: pobj bounds the slack optimum from above once
            // the constraint violation (charged against the box radii) is
            // accounted for
            let slop: f64 = rp
                .iter()
                .enumerate()
                .map(|(a, v)| v.abs() * prob.hi[a].abs().max(prob.lo[a].abs()))
                .sum();
            upper_bound = upper_bound.min(pobj + slop);

            if opts.allow_early && slack_now >= 0.0 {
                status = SolveStatus::Feasible;
                break 'outer;
            }
            if opts.allow_early && iter > 3 && upper_bound < -1e-9 {
                status = SolveStatus::Infeasible;
                break 'outer;
            }
            let settled = gap < opts.gap_tol && pinfeas < opts.feas_tol && dinfeas < opts.feas_tol;
            // Once the barrier parameter has collapsed and the answer slack
            // no longer moves, the optimum has been located to working
            // precision even if the primal residual plateaus at the noise
            // floor of the extreme-mu linear algebra.
            let flat = (slack_now - prev_slack).abs() < opts.slack_tol
                && gap < 1e-6
                && (pinfeas < 1e-5 || mu < 1e-10);
            stall_count = if flat { stall_count + 1 } else { 0 };
            let exhausted = gap < 1e-5 && iter >= last_improve + 6;
            if settled || (iter > 5 && (stall_count >= 2 || exhausted)) {
                status = if best_slack >= 0.0 { SolveStatus::Feasible } else { SolveStatus::Infeasible };
                break 'outer;
            }
            prev_slack = slack_now;
            last_gap = gap;
        } else {
            let settled =
                gap < opts.gap_tol && pinfeas < opts.feas_tol && dinfeas < opts.feas_tol * 1e3;
            if settled {
                status = SolveStatus::Optimal;
                best_y.copy_from_slice(&y);
                break 'outer;
            }
            if pobj < -1e10 {
                status = SolveStatus::Infeasible;
                break 'outer;
            }
            best_y.copy_from_slice(&y);
        }

        // --- Schur complement H = Σ_b tr(Â S⁻¹ Â Z) + bound diagonal
        h.fill(0.0);
        for (mb, st) in prob.blocks.iter().zip(&states) {
            let n = mb.dim;
            let sinv = &st.s_inv;
            let zf = &st.z_flat;
            let mut tbuf = vec![0.0; n * n];
            let mut mbuf = vec![0.0; n * n];
            let mut rows: Vec<usize> = Vec::with_capacity(16);
            for (lb, &gb) in mb.gvars.iter().enumerate() {
                // T = Â_b Z through its nonzero rows
                rows.clear();
                for &(i, j, v) in &mb.ent[mb.ent_off[lb]..mb.ent_off[lb + 1]] {
                    let (i, j) = (i as usize, j as usize);
                    if !rows.contains(&i) {
                        rows.push(i);
                        tbuf[i * n..(i + 1) * n].fill(0.0);
                    }
                    if i != j && !rows.contains(&j) {
                        rows.push(j);
                        tbuf[j * n..(j + 1) * n].fill(0.0);
                    }
                    for k in 0..n {
                        tbuf[i * n + k] += v * zf[j * n + k];
                    }
                    if i != j {
                        for k in 0..n {
                            tbuf[j * n + k] += v * zf[i * n + k];
                        }
                    }
                }
                // M = S⁻¹ T, accumulated per nonzero row of T
                mbuf.fill(0.0);
                for &r in &rows {
                    let trow = &tbuf[r * n..(r + 1) * n];
                    for i in 0..n {
                        let w = sinv[r * n + i]; // S⁻¹ symmetric: (i,r) = (r,i)
                        if w == 0.0 {
                            continue;
                        }
                        let mrow = &mut mbuf[i * n..(i + 1) * n];
                        for k in 0..n {
                            mrow[k] += w * trow[k];
                        }
                    }
                }
                // H[ga, gb] += tr(Â_a M) for all a ≤ b in this block
                for (la, &ga) in mb.gvars.iter().enumerate().take(lb + 1) {
                    h[(ga, gb)] += mb.trace_against(la, &mbuf);
                }
            }
        }
        for a in 0..nv {
            h[(a, a)] += zlo[a] / slo[a] + zhi[a] / shi[a];
        }
        // the block loop fills the upper triangle; mirror it
        for i in 0..nv {
            for j in 0..i {
                h[(i, j)] = h[(j, i)];
            }
        }

        // --- factor H with ridge repair
        let mut chol_h = None;
        let mut ridge = 0.0;
        for attempt in 0..4 {
            let mut htry = h.clone();
            if attempt > 0 {
                ridge = if ridge == 0.0 { 1e-12 * (h.trace() / nv as f64).max(1.0) } else { ridge * 100.0 };
                for a in 0..nv {
                    htry[(a, a)] += ridge;
                }
            }
            if let Some(c) = htry.cholesky() {
                chol_h = Some(c);
                break;
            }
        }
        let chol_h = match chol_h {
            Some(c) => c,
            None => {
                status = SolveStatus::NumericalFailure;
                fail_msg = Some("singular Schur complement");
                break 'outer;
            }
        };

        // --- predictor (affine direction)
        // rhs_a = r_p,a + tr(Â_a Z) + tr(Â_a S⁻¹ R_d Z) + zhi_a − zlo_a
        let mut rhs = rp.clone();
        for (bi, (mb, st)) in prob.blocks.iter().zip(&states).enumerate() {
            let n = mb.dim;
            // G = S⁻¹ R_d Z
            let g = {
                let rdm = &rd[bi];
                let mut t = vec![0.0; n * n];
                for i in 0..n {
                    for k in 0..n {
                        let v = rdm[i * n + k];
                        if v != 0.0 {
                            for jj in 0..n {
                                t[i * n + jj] += v * st.z_flat[k * n + jj];
                            }
                        }
                    }
                }
                let mut g = vec![0.0; n * n];
                for i in 0..n {
                    for k in 0..n {
                        let v = st.s_inv[i * n + k];
                        if v != 0.0 {
                            for jj in 0..n {
                                g[i * n + jj] += v * t[k * n + jj];
                            }
                        }
                    }
                }
                g
            };
            for (la, &ga) in mb.gvars.iter().enumerate() {
                rhs[ga] += mb.trace_against(la, &st.z_flat) + mb.trace_against(la, &g);
            }
        }
        for a in 0..nv {
            rhs[a] += zhi[a] - zlo[a];
        }

        let solve_dirs = |dy: &nalgebra::DVector<f64>,
                          sigma_mu: f64,
                          corr: Option<&[(DMatrix<f64>, DMatrix<f64>)]>,
                          corr_box: Option<(&[f64], &[f64], &[f64], &[f64])>|
         -> (Vec<(DMatrix<f64>, DMatrix<f64>)>, Vec<f64>, Vec<f64>) {
            // matrix directions
            let mut dirs = Vec::with_capacity(prob.blocks.len());
            for (bi, (mb, st)) in prob.blocks.iter().zip(&states).enumerate() {
                let n = mb.dim;
                // ΔS = R_d − Σ Δy Â
                let mut ds_flat = rd[bi].clone();
                for (la, &ga) in mb.gvars.iter().enumerate() {
                    let w = -dy[ga];
                    if w == 0.0 {
                        continue;
                    }
                    for &(i, j, v) in &mb.ent[mb.ent_off[la]..mb.ent_off[la + 1]] {
                        let (i, j) = (i as usize, j as usize);
                        ds_flat[i * n + j] += w * v;
                        if i != j {
                            ds_flat[j * n + i] += w * v;
                        }
                    }
                }
                let ds = mat_from_flat(n, &ds_flat);
                // R_c = σμ I − S Z (− ΔS_aff ΔZ_aff for the corrector)
                let s = &st.s;
                let z = &st.z;
                let mut rc = DMatrix::identity(n, n) * sigma_mu - s * z;
                if let Some(affs) = corr {
                    let (dsa, dza) = &affs[bi];
                    rc -= dsa * dza;
                }
                // ΔZ = S⁻¹ (R_c − ΔS Z), symmetrized
                let sinv_m = mat_from_flat(n, &st.s_inv);
                let dz_raw = &sinv_m * (rc - &ds * z);
                let dz = (&dz_raw + dz_raw.transpose()) * 0.5;
                dirs.push((ds, dz));
            }
            // bound dual directions
            let mut dzlo = vec![0.0; nv];
            let mut dzhi = vec![0.0; nv];
            for a in 0..nv {
                let (rclo, rchi) = match corr_box {
                    None => (sigma_mu - slo[a] * zlo[a], sigma_mu - shi[a] * zhi[a]),
                    Some((dslo, dzlo_aff, dshi, dzhi_aff)) => (
                        sigma_mu - slo[a] * zlo[a] - dslo[a] * dzlo_aff[a],
                        sigma_mu - shi[a] * zhi[a] - dshi[a] * dzhi_aff[a],
                    ),
                };
                // Δs_lo = +Δy, Δs_hi = −Δy
                dzlo[a] = (rclo - zlo[a] * dy[a]) / slo[a];
                dzhi[a] = (rchi + zhi[a] * dy[a]) / shi[a];
            }
            (dirs, dzlo, dzhi)
        };

        let step_lengths = |dirs: &[(DMatrix<f64>, DMatrix<f64>)],
                            dzlo: &[f64],
                            dzhi: &[f64],
                            dy: &nalgebra::DVector<f64>|
         -> (f64, f64) {
            let mut ad = 1.0f64; // dual side: S and bound slacks (move with y)
            let mut ap = 1.0f64; // primal side: Z and bound duals
            for (st, (ds, dz)) in states.iter().zip(dirs) {
                ad = ad.min(max_step(&st.s_chol_l, ds));
                let zchol = st.z.clone().cholesky();
                if let Some(zc) = zchol {
                    ap = ap.min(max_step(&zc.l(), dz));
                } else {
                    ap = 0.0;
                }
            }
            for a in 0..nv {
                // slo + α·Δy > 0, shi − α·Δy > 0
                if dy[a] < 0.0 {
                    ad = ad.min(-slo[a] / dy[a]);
                }
                if dy[a] > 0.0 {
                    ad = ad.min(shi[a] / dy[a]);
                }
                if dzlo[a] < 0.0 {
                    ap = ap.min(-zlo[a] / dzlo[a]);
                }
                if dzhi[a] < 0.0 {
                    ap = ap.min(-zhi[a] / dzhi[a]);
                }
            }
            (ad, ap)
        };

        let rhs_v = nalgebra::DVector::from_vec(rhs);
        let dy_aff = chol_h.solve(&rhs_v);
        let (dirs_aff, dzlo_aff, dzhi_aff) = solve_dirs(&dy_aff, 0.0, None, None);
        let (ad_aff, ap_aff) = step_lengths(&dirs_aff, &dzlo_aff, &dzhi_aff, &dy_aff);

        // Mehrotra centering weight
        let mut mu_aff = 0.0;
        for (st, (ds, dz)) in states.iter().zip(&dirs_aff) {
            let strial = &st.s + ds * ad_aff;
            let ztrial = &st.z + dz * ap_aff;
            mu_aff += (strial * ztrial).trace();
        }
        for a in 0..nv {
            mu_aff += (slo[a] + ad_aff * dy_aff[a]) * (zlo[a] + ap_aff * dzlo_aff[a]);
            mu_aff += (shi[a] - ad_aff * dy_aff[a]) * (zhi[a] + ap_aff * dzhi_aff[a]);
        }
        mu_aff /= degree;
        let sigma = ((mu_aff / mu).powi(3)).clamp(1e-8, 0.9999);

        // --- corrector
        // rhs gains the σμ and second-order terms:
        // rhs_a = r_p + tr(Â(Z − σμ S⁻¹ + S⁻¹ΔSΔZ)) + tr(ÂS⁻¹R_dZ) + box terms
        let mut rhs_c = rp.clone();
        for (bi, (mb, st)) in prob.blocks.iter().zip(&states).enumerate() {
            let n = mb.dim;
            let (dsa, dza) = &dirs_aff[bi];
            // G2 = S⁻¹ (R_d Z + ΔS_aff ΔZ_aff) − σμ S⁻¹
            let rdm = &rd[bi];
            let z = &st.z;
            let rdz = mat_from_flat(n, rdm) * z;
            let soc = dsa * dza;
            let sinv_m = mat_from_flat(n, &st.s_inv);
            let g2 = &sinv_m * (rdz + soc) - sinv_m * sigma * mu;
            let g2f = flat_from_mat(&g2);
            for (la, &ga) in mb.gvars.iter().enumerate() {
                rhs_c[ga] += mb.trace_against(la, &st.z_flat) + mb.trace_against(la, &g2f);
            }
        }
        let dslo_aff: Vec<f64> = (0..nv).map(|a| dy_aff[a]).collect();
        let dshi_aff: Vec<f64> = (0..nv).map(|a| -dy_aff[a]).collect();
        for a in 0..nv {
            let rclo = sigma * mu - slo[a] * zlo[a] - dslo_aff[a] * dzlo_aff[a];
            let rchi = sigma * mu - shi[a] * zhi[a] - dshi_aff[a] * dzhi_aff[a];
            rhs_c[a] += rclo / slo[a] - rchi / shi[a];
        }

        let rhs_cv = nalgebra::DVector::from_vec(rhs_c);
        let dy = chol_h.solve(&rhs_cv);
        let (dirs, dzlo_d, dzhi_d) = solve_dirs(
            &dy,
            sigma * mu,
            Some(&dirs_aff),
            Some((&dslo_aff, &dzlo_aff, &dshi_aff, &dzhi_aff)),
        );
        let (ad_raw, ap_raw) = step_lengths(&dirs, &dzlo_d, &dzhi_d, &dy);
        let gamma = if mu < 1e-5 { 0.99 } else { 0.98 };
        let ad = (gamma * ad_raw).min(1.0);
        let ap = (gamma * ap_raw).min(1.0);

        if ad < 1e-10 && ap < 1e-10 {
            status = SolveStatus::NumericalFailure;
            fail_msg = Some("vanishing step length");
            break 'outer;
        }

        // --- update
        for a in 0..nv {
            y[a] += ad * dy[a];
            zlo[a] += ap * dzlo_d[a];
            zhi[a] += ap * dzhi_d[a];
            // keep strictly interior
            zlo[a] = zlo[a].max(1e-300);
            zhi[a] = zhi[a].max(1e-300);
        }
        for (st, (ds, dz)) in states.iter_mut().zip(&dirs) {
            st.s += ds * ad;
            st.z += dz * ap;
            // symmetry repair against roundoff drift
            st.s = (&st.s + st.s.transpose()) * 0.5;
            st.z = (&st.z + st.z.transpose()) * 0.5;
        }
    }

    // --- final report from the best certified point
    if let Some(msg) = fail_msg {
        if opts.verbose {
            eprintln!("solver stopped: {msg}");
        }
    }
    let final_y = best_y;
    let margins = check_certificate(sdp, &final_y[..sdp.nvars]);
    let objective = if feasibility {
        certified_slack(&final_y)
    } else {
        sdp.objective
            .iter()
            .zip(&final_y[..sdp.nvars])
            .map(|(c, y)| c * y)
            .sum()
    };
    if feasibility
        && matches!(status, SolveStatus::MaxIter | SolveStatus::NumericalFailure)
    {
        // the answer may already be settled even if the iteration wasn't
        if best_slack >= 0.0 {
            status = SolveStatus::Feasible;
        } else if upper_bound < -1e-9 {
            status = SolveStatus::Infeasible;
        } else if last_gap < 1e-4 && best_slack.is_finite() {
            // The duality gap had already closed when the iteration died,
            // so the located optimum is authoritative — and it is negative.
            status = SolveStatus::Infeasible;
        }
    }

    SdpSolution {
        y: final_y[..sdp.nvars].to_vec(),
        objective,
        status,
        block_margins: margins,
        iterations,
        wall_time: start.elapsed(),
    }
}
