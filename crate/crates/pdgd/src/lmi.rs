//! Affine block-SDP assembly of the delay-robust stability conditions.
//!
//! Three inequality systems are assembled over one structured variable set:
//!
//! 1. the state-dependent condition Φ(x̂) ≺ 0 together with the ordering
//!    constraints `[R_k S12_k; * R_k] ⪰ 0` and `[Y11 Y12; * Y22] ≻ 0`
//!    (exposed numerically through [`evaluate_phi_at`] for spot checks);
//! 2. its state-independent vertex relaxation: one block per Hessian-vertex
//!    combination,
//!
//!    ```text
//!        Ξ^(j) = [ Φ̃^(j)   Θ                  ]
//!                [   *    −diag(Ω1, Ω2, Ω3)   ]  ≺ 0,
//!    ```
//!
//!    where Φ̃^(j) replaces A(x̂) by the vertex matrix Ã^(j), adds
//!    Ψ1 = blkdiag(−2μ_i w11_i I, Ω1_i) into the z̃-diagonal and
//!    Ψ2 = blkdiag(Ω2_i, Ω3_i) into the ż̃-diagonal for bounded-Hessian
//!    agents, and Θ carries the coupling columns ℓ_i W12_i, εℓ_i w11_i I,
//!    εℓ_i W12_i (those agents only);
//! 3. the gain-magnitude regularization: two Schur blocks bounding ‖X‖² by
//!    κ_X and ‖(P2 + P2ᵀ)/2‖⁻¹ by κ_P, with objective α1 κ_X + α2 κ_P.
//!
//! Sign note: the bottom-right corner of Ξ must carry −diag(Ω); with a
//! positive corner the inequality Ξ ≺ 0 would be vacuously infeasible, and
//! the Schur-complement step it encodes (moving the three Young-inequality
//! quadratic terms into the border) produces the negated corner. The
//! assembled programs were validated end to end against an independent
//! convex solver on the ten-agent reference instance, reproducing its
//! published delay margins to well under the bisection granularity.
//!
//! Every block is affine in the flat variable vector y: F(y) = F_0 + Σ y_a
//! F_a with each F_a symmetric. Strict inequalities are encoded by the
//! per-block `margin` (F(y) ⪰ margin·I), and each block's data is scaled so
//! its largest coefficient is ≈ 1 (margins are expressed in scaled units;
//! the factor is recorded in [`PsdBlock::scale`]).

use crate::structure::ErrorSystem;
use nalgebra::DMatrix;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Default strictness margin δ for ≻ 0 / ≺ 0 constraints, in scaled units.
pub const DEFAULT_MARGIN: f64 = 1e-6;

/// Margin imposed on the Lyapunov matrix block. The assembled program is
/// homogeneous — any strictly feasible point stays feasible under positive
/// scaling — so one block must pin the certificate's scale for the
/// feasibility question to have a numerically crisp answer. Requiring the
/// Lyapunov matrix to clear the identity (rather than δ·I) is equivalent on
/// the cone and gives infeasible instances a genuinely negative optimal
/// slack instead of a hairline one.
pub const ANCHOR_MARGIN: f64 = 1.0;

/// Whether per-edge Lyapunov matrices are independent or shared across
/// delay channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TyingPolicy {
    /// Independent R_k, Q_k, S_k, S12_k per delay channel.
    PerEdge,
    /// One shared R, Q, S, S12 for all channels (smaller program,
    /// more conservative).
    Tied,
}

/// Solved structured decision variables (dense).
#[derive(Debug, Clone)]
pub struct DecisionVars {
    /// Fixed descriptor parameter ε > 0.
    pub eps: f64,
    pub y11: DMatrix<f64>,
    pub y12: DMatrix<f64>,
    pub y22: DMatrix<f64>,
    /// Per delay channel k.
    pub r_k: Vec<DMatrix<f64>>,
    /// `None` for channels declared fast-varying (d_k = 1).
    pub q_k: Vec<Option<DMatrix<f64>>>,
    pub s_k: Vec<DMatrix<f64>>,
    pub s12_k: Vec<DMatrix<f64>>,
    /// Per agent, r_i×r_i.
    pub p2_blocks: Vec<DMatrix<f64>>,
    pub x_blocks: Vec<DMatrix<f64>>,
    /// Per bounded-Hessian agent (parallel to the class list), m_i×m_i,
    /// n_i×n_i, m_i×m_i.
    pub omega1: Vec<DMatrix<f64>>,
    pub omega2: Vec<DMatrix<f64>>,
    pub omega3: Vec<DMatrix<f64>>,
    /// Gain-regularization scalars when assembled with the objective.
    pub kappa_x: Option<f64>,
    pub kappa_p: Option<f64>,
}

impl DecisionVars {
    /// Dense blkdiag(P_{2,i}).
    pub fn p2_full(&self, sys: &ErrorSystem) -> DMatrix<f64> {
        blkdiag_agents(sys, &self.p2_blocks)
    }

    /// Dense blkdiag(X_i).
    pub fn x_full(&self, sys: &ErrorSystem) -> DMatrix<f64> {
        blkdiag_agents(sys, &self.x_blocks)
    }
}

fn blkdiag_agents(sys: &ErrorSystem, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let r = sys.layout.r;
    let mut m = DMatrix::zeros(r, r);
    for (b, blk) in sys.layout.blocks.iter().zip(blocks) {
        m.view_mut((b.z_off, b.z_off), (b.r(), b.r())).copy_from(blk);
    }
    m
}

/// Handle to a matrix variable inside the flat vector: symmetric matrices
/// store the lower triangle row-major, full matrices all entries row-major.
#[derive(Debug, Clone, Copy)]
pub struct MatHandle {
    pub base: usize,
    pub rows: usize,
    pub cols: usize,
    pub sym: bool,
}

impl MatHandle {
    pub fn len(&self) -> usize {
        if self.sym {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    pub fn var_of(&self, i: usize, j: usize) -> usize {
        if self.sym {
            let (a, b) = if i >= j { (i, j) } else { (j, i) };
            self.base + a * (a + 1) / 2 + b
        } else {
            self.base + i * self.cols + j
        }
    }

    fn lin(&self) -> LinMat {
        let mut terms = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                terms.push((i as u32, j as u32, self.var_of(i, j), 1.0));
            }
        }
        LinMat { rows: self.rows, cols: self.cols, terms }
    }

    pub fn extract(&self, y: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| y[self.var_of(i, j)])
    }
}

/// P_{2,i} handle: plain full block, or the structured form
/// `[w11·I, W12; W21, W22]` required for bounded-Hessian agents.
#[derive(Debug, Clone)]
pub enum P2Handle {
    Full(MatHandle),
    Structured { w11: usize, w12: MatHandle, w21: MatHandle, w22: MatHandle, n: usize, m: usize },
}

impl P2Handle {
    fn dim(&self) -> usize {
        match self {
            P2Handle::Full(h) => h.rows,
            P2Handle::Structured { n, m, .. } => n + m,
        }
    }

    fn lin(&self) -> LinMat {
        match self {
            P2Handle::Full(h) => h.lin(),
            P2Handle::Structured { w11, w12, w21, w22, n, m } => {
                let mut terms = Vec::new();
                for i in 0..*n {
                    terms.push((i as u32, i as u32, *w11, 1.0));
                }
                for i in 0..*n {
                    for j in 0..*m {
                        terms.push((i as u32, (n + j) as u32, w12.var_of(i, j), 1.0));
                    }
                }
                for i in 0..*m {
                    for j in 0..*n {
                        terms.push(((n + i) as u32, j as u32, w21.var_of(i, j), 1.0));
                    }
                }
                for i in 0..*m {
                    for j in 0..*m {
                        terms.push(((n + i) as u32, (n + j) as u32, w22.var_of(i, j), 1.0));
                    }
                }
                LinMat { rows: n + m, cols: n + m, terms }
            }
        }
    }

    fn extract(&self, y: &[f64]) -> DMatrix<f64> {
        match self {
            P2Handle::Full(h) => h.extract(y),
            P2Handle::Structured { w11, w12, w21, w22, n, m } => {
                let r = n + m;
                let mut p = DMatrix::zeros(r, r);
                for i in 0..*n {
                    p[(i, i)] = y[*w11];
                }
                p.view_mut((0, *n), (*n, *m)).copy_from(&w12.extract(y));
                p.view_mut((*n, 0), (*m, *n)).copy_from(&w21.extract(y));
                p.view_mut((*n, *n), (*m, *m)).copy_from(&w22.extract(y));
                p
            }
        }
    }
}

/// A matrix whose entries are single scalar variables (with coefficients):
/// the unit of symbolic assembly.
#[derive(Debug, Clone)]
struct LinMat {
    rows: usize,
    cols: usize,
    /// (row, col, flat variable index, coefficient)
    terms: Vec<(u32, u32, usize, f64)>,
}

impl LinMat {
    /// c·I with a single scalar variable on the diagonal.
    fn scalar_eye(var: usize, dim: usize) -> LinMat {
        LinMat {
            rows: dim,
            cols: dim,
            terms: (0..dim).map(|i| (i as u32, i as u32, var, 1.0)).collect(),
        }
    }

    /// Union of per-agent blocks embedded at their z offsets (rows = cols = r).
    fn blkdiag(parts: &[(usize, LinMat)], r: usize) -> LinMat {
        let mut terms = Vec::new();
        for (off, lm) in parts {
            for &(i, j, a, c) in &lm.terms {
                terms.push((i + *off as u32, j + *off as u32, a, c));
            }
        }
        LinMat { rows: r, cols: r, terms }
    }
}

/// Symbolic map from the flat vector back to [`DecisionVars`].
#[derive(Debug, Clone)]
pub struct VarLayout {
    pub names: Vec<String>,
    pub y11: MatHandle,
    pub y12: MatHandle,
    pub y22: MatHandle,
    pub r_k: Vec<MatHandle>,
    pub q_k: Vec<Option<MatHandle>>,
    pub s_k: Vec<MatHandle>,
    pub s12_k: Vec<MatHandle>,
    pub p2: Vec<P2Handle>,
    pub x: Vec<MatHandle>,
    /// Per bounded-Hessian agent, parallel to `meta.n3`.
    pub omega1: Vec<MatHandle>,
    pub omega2: Vec<MatHandle>,
    pub omega3: Vec<MatHandle>,
    pub kappa_x: Option<usize>,
    pub kappa_p: Option<usize>,
}

/// Assembly-time metadata carried alongside the program.
#[derive(Debug, Clone)]
pub struct LmiMeta {
    pub eps: f64,
    /// (h_k, d_k) per delay channel, in channel order.
    pub delays: Vec<(f64, f64)>,
    /// (n_i, m_i) per agent.
    pub agent_dims: Vec<(usize, usize)>,
    /// Indices of bounded-Hessian agents.
    pub n3: Vec<usize>,
    pub tying: TyingPolicy,
    pub margin: f64,
}

/// One affine PSD constraint F(y) = F_0 + Σ y_a F_a ⪰ margin·I.
///
/// Data is stored as the upper triangle (row ≤ col) of each symmetric
/// coefficient matrix, divided by `scale`.
#[derive(Debug, Clone)]
pub struct PsdBlock {
    pub name: String,
    pub dim: usize,
    pub margin: f64,
    pub scale: f64,
    /// Constant part F_0: (row, col, value), row ≤ col.
    pub f0: Vec<(u32, u32, f64)>,
    /// Coefficient matrices F_a keyed by flat variable index.
    pub fa: BTreeMap<usize, Vec<(u32, u32, f64)>>,
}

impl PsdBlock {
    /// Dense F(y).
    pub fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let mut put = |entries: &[(u32, u32, f64)], w: f64| {
            for &(i, j, v) in entries {
                m[(i as usize, j as usize)] += w * v;
                if i != j {
                    m[(j as usize, i as usize)] += w * v;
                }
            }
        };
        put(&self.f0, 1.0);
        for (&a, entries) in &self.fa {
            if y[a] != 0.0 {
                put(entries, y[a]);
            }
        }
        m
    }
}

/// A block SDP: flat variables, PSD blocks, and an optional linear
/// objective (all-zero objective = pure feasibility).
#[derive(Debug, Clone)]
pub struct BlockSdp {
    pub nvars: usize,
    pub blocks: Vec<PsdBlock>,
    pub objective: Vec<f64>,
    pub layout: VarLayout,
    pub meta: LmiMeta,
}

impl BlockSdp {
    pub fn is_feasibility(&self) -> bool {
        self.objective.iter().all(|&c| c == 0.0)
    }

    /// Strictest per-block margin (the anchor scale for assembled
    /// feasibility programs). The feasibility decision itself is whether a
    /// point exists whose every block clears its own margin.
    pub fn feasibility_threshold(&self) -> f64 {
        self.blocks.iter().map(|b| b.margin).fold(0.0, f64::max)
    }

    /// Rebuild structured variables from a flat solution vector.
    pub fn extract_vars(&self, y: &[f64]) -> DecisionVars {
        let l = &self.layout;
        DecisionVars {
            eps: self.meta.eps,
            y11: l.y11.extract(y),
            y12: l.y12.extract(y),
            y22: l.y22.extract(y),
            r_k: l.r_k.iter().map(|h| h.extract(y)).collect(),
            q_k: l.q_k.iter().map(|h| h.as_ref().map(|h| h.extract(y))).collect(),
            s_k: l.s_k.iter().map(|h| h.extract(y)).collect(),
            s12_k: l.s12_k.iter().map(|h| h.extract(y)).collect(),
            p2_blocks: l.p2.iter().map(|h| h.extract(y)).collect(),
            x_blocks: l.x.iter().map(|h| h.extract(y)).collect(),
            omega1: l.omega1.iter().map(|h| h.extract(y)).collect(),
            omega2: l.omega2.iter().map(|h| h.extract(y)).collect(),
            omega3: l.omega3.iter().map(|h| h.extract(y)).collect(),
            kappa_x: l.kappa_x.map(|a| y[a]),
            kappa_p: l.kappa_p.map(|a| y[a]),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LmiError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("vertex enumeration has {count} blocks (cap {cap})")]
    VertexExplosion { count: usize, cap: usize },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("cost evaluation failed at a non-finite state")]
    EvaluatorFailure,
    #[error("sparse format parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
}

/// Options for [`assemble_corollary1`].
#[derive(Debug, Clone)]
pub struct AssembleOptions {
    /// Strictness margin δ (scaled units).
    pub margin: f64,
    pub tying: TyingPolicy,
    pub vertex_cap: usize,
    /// Normalize each block so max |coefficient| ≈ 1.
    pub scale_blocks: bool,
    /// Override (h_k, d_k) per channel without rebuilding the system
    /// (used by the delay-bound bisection). `None` keeps the bounds the
    /// system was built with.
    pub delays: Option<Vec<(f64, f64)>>,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            margin: DEFAULT_MARGIN,
            tying: TyingPolicy::PerEdge,
            vertex_cap: 256,
            scale_blocks: true,
            delays: None,
        }
    }
}

// ---------------------------------------------------------------------------
// block builder

struct Reg {
    names: Vec<String>,
}

impl Reg {
    fn new() -> Self {
        Reg { names: Vec::new() }
    }

    fn sym(&mut self, name: &str, n: usize) -> MatHandle {
        let base = self.names.len();
        for i in 0..n {
            for j in 0..=i {
                self.names.push(format!("{name}[{i},{j}]"));
            }
        }
        MatHandle { base, rows: n, cols: n, sym: true }
    }

    fn full(&mut self, name: &str, r: usize, c: usize) -> MatHandle {
        let base = self.names.len();
        for i in 0..r {
            for j in 0..c {
                self.names.push(format!("{name}[{i},{j}]"));
            }
        }
        MatHandle { base, rows: r, cols: c, sym: false }
    }

    fn scalar(&mut self, name: &str) -> usize {
        self.names.push(name.to_string());
        self.names.len() - 1
    }
}

struct BlockBuilder {
    name: String,
    dim: usize,
    margin: f64,
    /// key 0 = constant part, key a+1 = variable a
    data: BTreeMap<usize, BTreeMap<(u32, u32), f64>>,
}

impl BlockBuilder {
    fn new(name: &str, dim: usize, margin: f64) -> Self {
        BlockBuilder { name: name.to_string(), dim, margin, data: BTreeMap::new() }
    }

    fn add(&mut self, key: usize, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            *self.data.entry(key).or_default().entry((i as u32, j as u32)).or_insert(0.0) += v;
        }
    }

    /// Add coeff·M as a constant contribution at block offset (ro, co);
    /// with `mirror`, also add the transpose at (co, ro).
    fn add_const(&mut self, ro: usize, co: usize, m: &DMatrix<f64>, coeff: f64, mirror: bool) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = coeff * m[(i, j)];
                self.add(0, ro + i, co + j, v);
                if mirror {
                    self.add(0, co + j, ro + i, v);
                }
            }
        }
    }

    /// Add coeff · L · V(ᵀ) · R at block offset (ro, co), where V is a
    /// variable matrix; with `mirror`, also add the transpose at (co, ro).
    #[allow(clippy::too_many_arguments)]
    fn add_lin(
        &mut self,
        ro: usize,
        co: usize,
        v: &LinMat,
        left: Option<&DMatrix<f64>>,
        right: Option<&DMatrix<f64>>,
        transpose_v: bool,
        coeff: f64,
        mirror: bool,
    ) {
        let (vr, vc) = if transpose_v { (v.cols, v.rows) } else { (v.rows, v.cols) };
        if let Some(l) = left {
            assert_eq!(l.ncols(), vr, "sandwich left dim");
        }
        if let Some(r) = right {
            assert_eq!(r.nrows(), vc, "sandwich right dim");
        }
        for &(ti, tj, a, c) in &v.terms {
            // effective entry position of this variable inside V(ᵀ)
            let (p, q) = if transpose_v {
                (tj as usize, ti as usize)
            } else {
                (ti as usize, tj as usize)
            };
            match (left, right) {
                (None, None) => {
                    let val = coeff * c;
                    self.add(a + 1, ro + p, co + q, val);
                    if mirror {
                        self.add(a + 1, co + q, ro + p, val);
                    }
                }
                (Some(l), None) => {
                    for i in 0..l.nrows() {
                        let val = coeff * c * l[(i, p)];
                        if val != 0.0 {
                            self.add(a + 1, ro + i, co + q, val);
                            if mirror {
                                self.add(a + 1, co + q, ro + i, val);
                            }
                        }
                    }
                }
                (None, Some(r)) => {
                    for j in 0..r.ncols() {
                        let val = coeff * c * r[(q, j)];
                        if val != 0.0 {
                            self.add(a + 1, ro + p, co + j, val);
                            if mirror {
                                self.add(a + 1, co + j, ro + p, val);
                            }
                        }
                    }
                }
                (Some(l), Some(r)) => {
                    for i in 0..l.nrows() {
                        if l[(i, p)] == 0.0 {
                            continue;
                        }
                        for j in 0..r.ncols() {
                            let val = coeff * c * l[(i, p)] * r[(q, j)];
                            if val != 0.0 {
                                self.add(a + 1, ro + i, co + j, val);
                                if mirror {
                                    self.add(a + 1, co + j, ro + i, val);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Verify symmetry of every coefficient matrix, optionally negate
    /// (for ≺ constraints assembled in their natural orientation), scale,
    /// and emit the upper-triangle form.
    fn finalize(self, negate: bool, scale_blocks: bool) -> Result<PsdBlock, LmiError> {
        let sgn = if negate { -1.0 } else { 1.0 };
        let mut f0 = Vec::new();
        let mut fa: BTreeMap<usize, Vec<(u32, u32, f64)>> = BTreeMap::new();
        let mut maxabs = 0.0f64;

        for (key, entries) in &self.data {
            let mut upper = Vec::new();
            for (&(i, j), &v) in entries {
                let vt = entries.get(&(j, i)).copied().unwrap_or(0.0);
                let tol = 1e-9 * (1.0 + v.abs().max(vt.abs()));
                if (v - vt).abs() > tol {
                    return Err(LmiError::DimensionMismatch(format!(
                        "block {}: asymmetric coefficient for key {key} at ({i},{j}): {v} vs {vt}",
                        self.name
                    )));
                }
                if i <= j {
                    let sym_v = sgn * 0.5 * (v + vt);
                    if sym_v != 0.0 {
                        upper.push((i, j, sym_v));
                        maxabs = maxabs.max(sym_v.abs());
                    }
                }
            }
            if upper.is_empty() {
                continue;
            }
            if *key == 0 {
                f0 = upper;
            } else {
                fa.insert(key - 1, upper);
            }
        }

        let scale = if scale_blocks && maxabs > 0.0 { maxabs } else { 1.0 };
        if scale != 1.0 {
            for (_, _, v) in f0.iter_mut() {
                *v /= scale;
            }
            for entries in fa.values_mut() {
                for (_, _, v) in entries.iter_mut() {
                    *v /= scale;
                }
            }
        }
        Ok(PsdBlock { name: self.name, dim: self.dim, margin: self.margin, scale, f0, fa })
    }
}

// ---------------------------------------------------------------------------
// assembly

/// Assemble the full vertex LMI system for fixed ε and delay bounds.
///
/// Emits, in order: one block per Hessian-vertex combination (encoding
/// Ξ^(j) ⪯ −δI), the per-channel ordering blocks `[R_k S12_k; * R_k] ⪰ 0`,
/// the Lyapunov block `[Y11 Y12; * Y22] ⪰ δI`, positivity blocks for R_k,
/// Q_k, S_k, per-agent P_{2,i} + P_{2,i}ᵀ, and the Ω blocks of
/// bounded-Hessian agents.
pub fn assemble_corollary1(
    sys: &ErrorSystem,
    eps: f64,
    opts: &AssembleOptions,
) -> Result<BlockSdp, LmiError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(LmiError::BadParameter(format!("eps must be positive, got {eps}")));
    }
    let r = sys.layout.r;
    let rho = sys.rho();

    // delay bounds, possibly overridden
    let delays: Vec<(f64, f64)> = match &opts.delays {
        Some(d) => {
            if d.len() != rho {
                return Err(LmiError::DimensionMismatch(format!(
                    "delay override lists {} channels, system has {rho}",
                    d.len()
                )));
            }
            d.clone()
        }
        None => sys.edges.iter().map(|e| (e.h, e.d)).collect(),
    };
    for &(h, d) in &delays {
        if h < 0.0 || !h.is_finite() || !(0.0..=1.0).contains(&d) {
            return Err(LmiError::BadParameter(format!("invalid delay bound (h={h}, d={d})")));
        }
    }

    // consistency guards
    for av in &sys.a_vertices {
        if av.nrows() != r || av.ncols() != r {
            return Err(LmiError::DimensionMismatch(format!(
                "vertex matrix is {}x{}, state dimension is {r}",
                av.nrows(),
                av.ncols()
            )));
        }
    }
    for e in &sys.edges {
        if e.t.nrows() != r || e.t.ncols() != r {
            return Err(LmiError::DimensionMismatch(format!(
                "coupling matrix {} is {}x{}, state dimension is {r}",
                e.k,
                e.t.nrows(),
                e.t.ncols()
            )));
        }
    }
    if sys.a_vertices.len() > opts.vertex_cap {
        return Err(LmiError::VertexExplosion {
            count: sys.a_vertices.len(),
            cap: opts.vertex_cap,
        });
    }

    // ---- variable registry (deterministic order)
    let mut reg = Reg::new();
    let y11 = reg.sym("y11", r);
    let y12 = reg.full("y12", r, r);
    let y22 = reg.sym("y22", r);

    let nsets = match opts.tying {
        TyingPolicy::PerEdge => rho,
        TyingPolicy::Tied => usize::from(rho > 0),
    };
    let mut r_sets = Vec::new();
    let mut q_sets = Vec::new();
    let mut s_sets = Vec::new();
    let mut s12_sets = Vec::new();
    for s in 0..nsets {
        let sfx = match opts.tying {
            TyingPolicy::PerEdge => format!("_{s}"),
            TyingPolicy::Tied => String::new(),
        };
        r_sets.push(reg.sym(&format!("r{sfx}"), r));
        // Q exists for a set unless every channel using it is fast-varying
        let q_needed = match opts.tying {
            TyingPolicy::PerEdge => delays[s].1 < 1.0,
            TyingPolicy::Tied => delays.iter().any(|&(_, d)| d < 1.0),
        };
        q_sets.push(q_needed.then(|| reg.sym(&format!("q{sfx}"), r)));
        s_sets.push(reg.sym(&format!("s{sfx}"), r));
        s12_sets.push(reg.full(&format!("s12{sfx}"), r, r));
    }
    // channel -> set mapping
    let set_of = |k: usize| match opts.tying {
        TyingPolicy::PerEdge => k,
        TyingPolicy::Tied => 0,
    };

    let mut p2 = Vec::new();
    let mut x = Vec::new();
    for (i, b) in sys.layout.blocks.iter().enumerate() {
        let ri = b.r();
        if sys.class_smooth.contains(&i) {
            let w11 = reg.scalar(&format!("w11_{i}"));
            let w12 = reg.full(&format!("w12_{i}"), b.n, b.m);
            let w21 = reg.full(&format!("w21_{i}"), b.m, b.n);
            let w22 = reg.full(&format!("w22_{i}"), b.m, b.m);
            p2.push(P2Handle::Structured { w11, w12, w21, w22, n: b.n, m: b.m });
        } else {
            p2.push(P2Handle::Full(reg.full(&format!("p2_{i}"), ri, ri)));
        }
        x.push(reg.full(&format!("x_{i}"), ri, ri));
    }

    let mut omega1 = Vec::new();
    let mut omega2 = Vec::new();
    let mut omega3 = Vec::new();
    for &i in &sys.class_smooth {
        let b = sys.layout.blocks[i];
        omega1.push(reg.sym(&format!("omega1_{i}"), b.m));
        omega2.push(reg.sym(&format!("omega2_{i}"), b.n));
        omega3.push(reg.sym(&format!("omega3_{i}"), b.m));
    }

    let layout = VarLayout {
        names: reg.names,
        y11,
        y12,
        y22,
        r_k: (0..rho).map(|k| r_sets[set_of(k)]).collect(),
        q_k: (0..rho)
            .map(|k| if delays[k].1 < 1.0 { q_sets[set_of(k)] } else { None })
            .collect(),
        s_k: (0..rho).map(|k| s_sets[set_of(k)]).collect(),
        s12_k: (0..rho).map(|k| s12_sets[set_of(k)]).collect(),
        p2: p2.clone(),
        x: x.clone(),
        omega1: omega1.clone(),
        omega2: omega2.clone(),
        omega3: omega3.clone(),
        kappa_x: None,
        kappa_p: None,
    };
    let nvars = layout.names.len();

    // full-r linear forms for the block-diagonal variables
    let p2_full = LinMat::blkdiag(
        &sys.layout
            .blocks
            .iter()
            .zip(&p2)
            .map(|(b, h)| (b.z_off, h.lin()))
            .collect::<Vec<_>>(),
        r,
    );
    let x_full = LinMat::blkdiag(
        &sys.layout
            .blocks
            .iter()
            .zip(&x)
            .map(|(b, h)| (b.z_off, h.lin()))
            .collect::<Vec<_>>(),
        r,
    );

    // Θ column widths over bounded-Hessian agents
    let varsigma: usize = sys.class_smooth.iter().map(|&i| sys.layout.blocks[i].m).sum();
    let sigma: usize = sys.class_smooth.iter().map(|&i| sys.layout.blocks[i].n).sum();
    let base_dim = (3 + 2 * rho) * r;
    let full_dim = base_dim + 2 * varsigma + sigma;

    let (o1, o2, o3) = (0usize, r, 2 * r);
    let o4 = 3 * r;
    let o5 = (3 + rho) * r;
    let ot1 = base_dim;
    let ot2 = base_dim + varsigma;
    let ot3 = base_dim + varsigma + sigma;

    let mut blocks = Vec::new();

    // ---- vertex blocks: Ξ^(j) ⪯ −δI, assembled naturally then negated
    for (j, av) in sys.a_vertices.iter().enumerate() {
        let mut bb = BlockBuilder::new(&format!("vertex_{j}"), full_dim, opts.margin);

        // (1,1): −2 Y22
        bb.add_lin(o1, o1, &y22.lin(), None, None, false, -2.0, false);
        // (1,2): −Y12ᵀ + Y22 − Xᵀ
        bb.add_lin(o1, o2, &y12.lin(), None, None, true, -1.0, true);
        bb.add_lin(o1, o2, &y22.lin(), None, None, false, 1.0, true);
        bb.add_lin(o1, o2, &x_full, None, None, true, -1.0, true);
        // (1,3): Y12ᵀ − εXᵀ
        bb.add_lin(o1, o3, &y12.lin(), None, None, true, 1.0, true);
        bb.add_lin(o1, o3, &x_full, None, None, true, -eps, true);
        // (2,2): Y12 + Y12ᵀ + Ψ1 + P2ᵀÃ + ÃᵀP2 + X + Xᵀ + Σ(S_k + Q_k − R_k)
        bb.add_lin(o2, o2, &y12.lin(), None, None, false, 1.0, false);
        bb.add_lin(o2, o2, &y12.lin(), None, None, true, 1.0, false);
        bb.add_lin(o2, o2, &p2_full, None, Some(av), true, 1.0, false);
        bb.add_lin(o2, o2, &p2_full, Some(&av.transpose()), None, false, 1.0, false);
        bb.add_lin(o2, o2, &x_full, None, None, false, 1.0, false);
        bb.add_lin(o2, o2, &x_full, None, None, true, 1.0, false);
        for k in 0..rho {
            bb.add_lin(o2, o2, &layout.s_k[k].lin(), None, None, false, 1.0, false);
            if let Some(q) = &layout.q_k[k] {
                bb.add_lin(o2, o2, &q.lin(), None, None, false, 1.0, false);
            }
            bb.add_lin(o2, o2, &layout.r_k[k].lin(), None, None, false, -1.0, false);
        }
        // (2,3): Y11 − P2ᵀ + εÃᵀP2 + εXᵀ
        bb.add_lin(o2, o3, &y11.lin(), None, None, false, 1.0, true);
        bb.add_lin(o2, o3, &p2_full, None, None, true, -1.0, true);
        bb.add_lin(o2, o3, &p2_full, Some(&av.transpose()), None, false, eps, true);
        bb.add_lin(o2, o3, &x_full, None, None, true, eps, true);
        // (3,3): −εP2 − εP2ᵀ + Ψ2 + Σ h_k² R_k
        bb.add_lin(o3, o3, &p2_full, None, None, false, -eps, false);
        bb.add_lin(o3, o3, &p2_full, None, None, true, -eps, false);
        for k in 0..rho {
            let h = delays[k].0;
            if h > 0.0 {
                bb.add_lin(o3, o3, &layout.r_k[k].lin(), None, None, false, h * h, false);
            }
        }
        // per-channel rows
        for k in 0..rho {
            let okh = o4 + k * r;
            let okt = o5 + k * r;
            // (2, 4k): S12_k
            bb.add_lin(o2, okh, &layout.s12_k[k].lin(), None, None, false, 1.0, true);
            // (2, 5k): R_k − S12_k + P2ᵀ T_k
            bb.add_lin(o2, okt, &layout.r_k[k].lin(), None, None, false, 1.0, true);
            bb.add_lin(o2, okt, &layout.s12_k[k].lin(), None, None, false, -1.0, true);
            bb.add_lin(o2, okt, &p2_full, None, Some(&sys.edges[k].t), true, 1.0, true);
            // (3, 5k): ε P2ᵀ T_k
            bb.add_lin(o3, okt, &p2_full, None, Some(&sys.edges[k].t), true, eps, true);
            // (4k, 4k): −S_k − R_k
            bb.add_lin(okh, okh, &layout.s_k[k].lin(), None, None, false, -1.0, false);
            bb.add_lin(okh, okh, &layout.r_k[k].lin(), None, None, false, -1.0, false);
            // (4k, 5k): R_k − S12_kᵀ
            bb.add_lin(okh, okt, &layout.r_k[k].lin(), None, None, false, 1.0, true);
            bb.add_lin(okh, okt, &layout.s12_k[k].lin(), None, None, true, -1.0, true);
            // (5k, 5k): −2R_k + S12_k + S12_kᵀ − (1−d_k)Q_k
            bb.add_lin(okt, okt, &layout.r_k[k].lin(), None, None, false, -2.0, false);
            bb.add_lin(okt, okt, &layout.s12_k[k].lin(), None, None, false, 1.0, false);
            bb.add_lin(okt, okt, &layout.s12_k[k].lin(), None, None, true, 1.0, false);
            if let Some(q) = &layout.q_k[k] {
                let dk = delays[k].1;
                bb.add_lin(okt, okt, &q.lin(), None, None, false, -(1.0 - dk), false);
            }
        }

        // bounded-Hessian couplings: Ψ1, Ψ2 on the diagonal, Θ border,
        // and the −diag(Ω) corner
        let (mut c1, mut c2, mut c3) = (0usize, 0usize, 0usize);
        for (slot, &i) in sys.class_smooth.iter().enumerate() {
            let b = sys.layout.blocks[i];
            let mu = sys.problem.agents[i].cost.mu;
            let ell = sys.problem.agents[i].cost.ell;
            let w11 = match &p2[i] {
                P2Handle::Structured { w11, .. } => *w11,
                P2Handle::Full(_) => unreachable!("smooth agents use structured blocks"),
            };
            let w12 = match &p2[i] {
                P2Handle::Structured { w12, .. } => *w12,
                P2Handle::Full(_) => unreachable!(),
            };
            // Ψ1_i = [−2μ w11 I, 0; 0, Ω1_i] into (2,2) at the agent's block
            bb.add_lin(
                o2 + b.z_off,
                o2 + b.z_off,
                &LinMat::scalar_eye(w11, b.n),
                None,
                None,
                false,
                -2.0 * mu,
                false,
            );
            bb.add_lin(
                o2 + b.z_off + b.n,
                o2 + b.z_off + b.n,
                &omega1[slot].lin(),
                None,
                None,
                false,
                1.0,
                false,
            );
            // Ψ2_i = [Ω2_i, 0; 0, Ω3_i] into (3,3)
            bb.add_lin(o3 + b.z_off, o3 + b.z_off, &omega2[slot].lin(), None, None, false, 1.0, false);
            bb.add_lin(
                o3 + b.z_off + b.n,
                o3 + b.z_off + b.n,
                &omega3[slot].lin(),
                None,
                None,
                false,
                1.0,
                false,
            );
            // Θ columns: ℓ W12 | εℓ w11 I | εℓ W12, x̃-rows of the z̃ group
            bb.add_lin(o2 + b.z_off, ot1 + c1, &w12.lin(), None, None, false, ell, true);
            bb.add_lin(
                o2 + b.z_off,
                ot2 + c2,
                &LinMat::scalar_eye(w11, b.n),
                None,
                None,
                false,
                eps * ell,
                true,
            );
            bb.add_lin(o2 + b.z_off, ot3 + c3, &w12.lin(), None, None, false, eps * ell, true);
            // corner: −Ω
            bb.add_lin(ot1 + c1, ot1 + c1, &omega1[slot].lin(), None, None, false, -1.0, false);
            bb.add_lin(ot2 + c2, ot2 + c2, &omega2[slot].lin(), None, None, false, -1.0, false);
            bb.add_lin(ot3 + c3, ot3 + c3, &omega3[slot].lin(), None, None, false, -1.0, false);
            c1 += b.m;
            c2 += b.n;
            c3 += b.m;
        }

        blocks.push(bb.finalize(true, opts.scale_blocks)?);
    }

    // ---- ordering blocks per channel: [R_k S12_k; * R_k] ⪰ 0
    for k in 0..rho {
        let mut bb = BlockBuilder::new(&format!("ordering_{k}"), 2 * r, 0.0);
        bb.add_lin(0, 0, &layout.r_k[k].lin(), None, None, false, 1.0, false);
        bb.add_lin(0, r, &layout.s12_k[k].lin(), None, None, false, 1.0, true);
        bb.add_lin(r, r, &layout.r_k[k].lin(), None, None, false, 1.0, false);
        blocks.push(bb.finalize(false, opts.scale_blocks)?);
    }

    // ---- Lyapunov block: [Y11 Y12; * Y22] ⪰ I (the scale anchor)
    {
        let mut bb = BlockBuilder::new("lkf_y", 2 * r, ANCHOR_MARGIN);
        bb.add_lin(0, 0, &y11.lin(), None, None, false, 1.0, false);
        bb.add_lin(0, r, &y12.lin(), None, None, false, 1.0, true);
        bb.add_lin(r, r, &y22.lin(), None, None, false, 1.0, false);
        blocks.push(bb.finalize(false, opts.scale_blocks)?);
    }

    // ---- positivity blocks
    for (s, h) in r_sets.iter().enumerate() {
        let mut bb = BlockBuilder::new(&format!("pos_r_{s}"), r, opts.margin);
        bb.add_lin(0, 0, &h.lin(), None, None, false, 1.0, false);
        blocks.push(bb.finalize(false, opts.scale_blocks)?);
    }
    for (s, h) in q_sets.iter().enumerate() {
        if let Some(h) = h {
            let mut bb = BlockBuilder::new(&format!("pos_q_{s}"), r, opts.margin);
            bb.add_lin(0, 0, &h.lin(), None, None, false, 1.0, false);
            blocks.push(bb.finalize(false, opts.scale_blocks)?);
        }
    }
    for (s, h) in s_sets.iter().enumerate() {
        let mut bb = BlockBuilder::new(&format!("pos_s_{s}"), r, opts.margin);
        bb.add_lin(0, 0, &h.lin(), None, None, false, 1.0, false);
        blocks.push(bb.finalize(false, opts.scale_blocks)?);
    }
    for (i, h) in p2.iter().enumerate() {
        let d = h.dim();
        let mut bb = BlockBuilder::new(&format!("pos_p2_{i}"), d, opts.margin);
        bb.add_lin(0, 0, &h.lin(), None, None, false, 1.0, false);
        bb.add_lin(0, 0, &h.lin(), None, None, true, 1.0, false);
        blocks.push(bb.finalize(false, opts.scale_blocks)?);
    }
    for (slot, &i) in sys.class_smooth.iter().enumerate() {
        for (g, h) in [(1, &omega1[slot]), (2, &omega2[slot]), (3, &omega3[slot])] {
            if h.rows == 0 {
                continue;
            }
            let mut bb = BlockBuilder::new(&format!("pos_omega{g}_{i}"), h.rows, opts.margin);
            bb.add_lin(0, 0, &h.lin(), None, None, false, 1.0, false);
            blocks.push(bb.finalize(false, opts.scale_blocks)?);
        }
    }

    let meta = LmiMeta {
        eps,
        delays,
        agent_dims: sys.layout.blocks.iter().map(|b| (b.n, b.m)).collect(),
        n3: sys.class_smooth.clone(),
        tying: opts.tying,
        margin: opts.margin,
    };

    Ok(BlockSdp { nvars, blocks, objective: vec![0.0; nvars], layout, meta })
}

/// Extend a feasibility program with the gain-magnitude objective:
/// adds κ_X, κ_P and the two Schur blocks
/// `[0.5(P2+P2ᵀ), I; *, κ_P I] ⪰ δI` and `[κ_X I, −Xᵀ; *, I] ⪰ δI`
/// (the latter being the negation of the printed ≺ 0 form), with objective
/// α1·κ_X + α2·κ_P.
pub fn assemble_remark2(base: &BlockSdp, alpha1: f64, alpha2: f64) -> Result<BlockSdp, LmiError> {
    if !(alpha1 >= 0.0 && alpha2 >= 0.0) {
        return Err(LmiError::BadParameter("weights must be nonnegative".into()));
    }
    let mut out = base.clone();
    let r: usize = base.meta.agent_dims.iter().map(|&(n, m)| n + m).sum();

    let kappa_x = out.nvars;
    out.layout.names.push("kappa_x".into());
    let kappa_p = out.nvars + 1;
    out.layout.names.push("kappa_p".into());
    out.nvars += 2;
    out.layout.kappa_x = Some(kappa_x);
    out.layout.kappa_p = Some(kappa_p);

    // agent offsets recovered from the recorded dimensions
    let mut offs = Vec::with_capacity(base.meta.agent_dims.len());
    let mut acc = 0usize;
    for &(n, m) in &base.meta.agent_dims {
        offs.push(acc);
        acc += n + m;
    }
    let p2_full = LinMat::blkdiag(
        &offs
            .iter()
            .zip(&base.layout.p2)
            .map(|(&o, h)| (o, h.lin()))
            .collect::<Vec<_>>(),
        r,
    );
    let x_full = LinMat::blkdiag(
        &offs
            .iter()
            .zip(&base.layout.x)
            .map(|(&o, h)| (o, h.lin()))
            .collect::<Vec<_>>(),
        r,
    );
    let eye = DMatrix::<f64>::identity(r, r);
    let scale_blocks = true;

    // [0.5(P2+P2ᵀ), I; *, κ_P I] ⪰ δI
    let mut bb = BlockBuilder::new("gain_bound_p", 2 * r, base.meta.margin);
    bb.add_lin(0, 0, &p2_full, None, None, false, 0.5, false);
    bb.add_lin(0, 0, &p2_full, None, None, true, 0.5, false);
    bb.add_const(0, r, &eye, 1.0, true);
    bb.add_lin(r, r, &LinMat::scalar_eye(kappa_p, r), None, None, false, 1.0, false);
    out.blocks.push(bb.finalize(false, scale_blocks)?);

    // negation of [−κ_X I, Xᵀ; *, −I] ⪯ −δI
    let mut bb = BlockBuilder::new("gain_bound_x", 2 * r, base.meta.margin);
    bb.add_lin(0, 0, &LinMat::scalar_eye(kappa_x, r), None, None, false, 1.0, false);
    bb.add_lin(0, r, &x_full, None, None, true, -1.0, true);
    bb.add_const(r, r, &eye, 1.0, false);
    out.blocks.push(bb.finalize(false, scale_blocks)?);

    out.objective = vec![0.0; out.nvars];
    out.objective[kappa_x] = alpha1;
    out.objective[kappa_p] = alpha2;
    Ok(out)
}

/// Dense Φ(x̂) of the state-dependent condition, assembled independently of
/// the symbolic path (this function is the cross-check used by
/// post-synthesis spot tests). Size (3+2ρ)r; uses the true cost Hessians at
/// x̂ and the delay bounds the system carries.
pub fn evaluate_phi_at(
    sys: &ErrorSystem,
    vars: &DecisionVars,
    x_hat: &nalgebra::DVector<f64>,
) -> Result<DMatrix<f64>, LmiError> {
    if x_hat.len() != sys.layout.n {
        return Err(LmiError::DimensionMismatch(format!(
            "state has {} coordinates, problem has {}",
            x_hat.len(),
            sys.layout.n
        )));
    }
    if x_hat.iter().any(|v| !v.is_finite()) {
        return Err(LmiError::EvaluatorFailure);
    }
    let r = sys.layout.r;
    let rho = sys.rho();
    if vars.y11.nrows() != r || vars.r_k.len() != rho {
        return Err(LmiError::DimensionMismatch(
            "decision variables do not match the system dimensions".into(),
        ));
    }
    let eps = vars.eps;
    let a = sys.a_of(x_hat);
    let p2 = vars.p2_full(sys);
    let x = vars.x_full(sys);
    let dim = (3 + 2 * rho) * r;
    let mut phi = DMatrix::zeros(dim, dim);

    let mut set = |ro: usize, co: usize, m: DMatrix<f64>, mirror: bool| {
        let mut view = phi.view_mut((ro, co), (m.nrows(), m.ncols()));
        view += &m;
        if mirror {
            let mt = m.transpose();
            let mut view = phi.view_mut((co, ro), (mt.nrows(), mt.ncols()));
            view += mt;
        }
    };

    let (o2, o3) = (r, 2 * r);
    let o4 = 3 * r;
    let o5 = (3 + rho) * r;

    set(0, 0, vars.y22.scale(-2.0), false);
    set(0, o2, -vars.y12.transpose() + &vars.y22 - x.transpose(), true);
    set(0, o3, vars.y12.transpose() - x.transpose().scale(eps), true);

    let mut phi22 = &vars.y12 + vars.y12.transpose()
        + p2.transpose() * &a
        + a.transpose() * &p2
        + &x
        + x.transpose();
    for k in 0..rho {
        phi22 += &vars.s_k[k] - &vars.r_k[k];
        if let Some(q) = &vars.q_k[k] {
            phi22 += q;
        }
    }
    set(o2, o2, phi22, false);
    set(
        o2,
        o3,
        &vars.y11 - p2.transpose() + (a.transpose() * &p2).scale(eps) + x.transpose().scale(eps),
        true,
    );

    let mut phi33 = (-&p2 - p2.transpose()).scale(eps);
    for (k, e) in sys.edges.iter().enumerate() {
        phi33 += vars.r_k[k].scale(e.h * e.h);
    }
    set(o3, o3, phi33, false);

    for (k, e) in sys.edges.iter().enumerate() {
        let okh = o4 + k * r;
        let okt = o5 + k * r;
        set(o2, okh, vars.s12_k[k].clone(), true);
        set(o2, okt, &vars.r_k[k] - &vars.s12_k[k] + p2.transpose() * &e.t, true);
        set(o3, okt, (p2.transpose() * &e.t).scale(eps), true);
        set(okh, okh, -&vars.s_k[k] - &vars.r_k[k], false);
        set(okh, okt, &vars.r_k[k] - vars.s12_k[k].transpose(), true);
        let mut p55 = vars.r_k[k].scale(-2.0) + &vars.s12_k[k] + vars.s12_k[k].transpose();
        if let Some(q) = &vars.q_k[k] {
            p55 -= q.scale(1.0 - e.d);
        }
        set(okt, okt, p55, false);
    }

    Ok(phi)
}

// ---------------------------------------------------------------------------
// sparse text interchange

/// Serialize to the line-oriented sparse interchange format:
///
/// ```text
/// sdp format 1
/// vars <nvars>
/// objective <var> <coeff>                  # nonzero entries only
/// block <idx> dim <d> margin <m> scale <s> <name>
/// entry <block> <var> <row> <col> <value>  # var 0 = constant part, else 1-based
/// ```
///
/// Entries list the upper triangle (row ≤ col) of each symmetric
/// coefficient matrix.
pub fn write_sparse_text(sdp: &BlockSdp) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "sdp format 1");
    let _ = writeln!(s, "vars {}", sdp.nvars);
    for (a, &c) in sdp.objective.iter().enumerate() {
        if c != 0.0 {
            let _ = writeln!(s, "objective {a} {c:.17e}");
        }
    }
    for (bi, b) in sdp.blocks.iter().enumerate() {
        let _ = writeln!(
            s,
            "block {bi} dim {} margin {:.17e} scale {:.17e} {}",
            b.dim, b.margin, b.scale, b.name
        );
    }
    for (bi, b) in sdp.blocks.iter().enumerate() {
        for &(i, j, v) in &b.f0 {
            let _ = writeln!(s, "entry {bi} 0 {i} {j} {v:.17e}");
        }
        for (&a, entries) in &b.fa {
            for &(i, j, v) in entries {
                let _ = writeln!(s, "entry {bi} {} {i} {j} {v:.17e}", a + 1);
            }
        }
    }
    s
}

/// Parse the sparse interchange format. The structured variable map is not
/// part of the format, so the result carries an anonymous layout suitable
/// for solving and checking but not for [`BlockSdp::extract_vars`].
pub fn read_sparse_text(text: &str) -> Result<BlockSdp, LmiError> {
    let mut nvars = None;
    let mut objective: Vec<(usize, f64)> = Vec::new();
    let mut blocks: Vec<PsdBlock> = Vec::new();

    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: &str| LmiError::ParseError { line: ln + 1, msg: msg.to_string() };
        match toks[0] {
            "sdp" => {}
            "vars" => {
                nvars = Some(toks.get(1).ok_or(err("missing count"))?.parse::<usize>()
                    .map_err(|_| err("bad count"))?);
            }
            "objective" => {
                let a: usize = toks.get(1).ok_or(err("missing var"))?.parse()
                    .map_err(|_| err("bad var"))?;
                let c: f64 = toks.get(2).ok_or(err("missing coeff"))?.parse()
                    .map_err(|_| err("bad coeff"))?;
                objective.push((a, c));
            }
            "block" => {
                if toks.len() < 9 {
                    return Err(err("short block line"));
                }
                let dim: usize = toks[3].parse().map_err(|_| err("bad dim"))?;
                let margin: f64 = toks[5].parse().map_err(|_| err("bad margin"))?;
                let scale: f64 = toks[7].parse().map_err(|_| err("bad scale"))?;
                blocks.push(PsdBlock {
                    name: toks[8].to_string(),
                    dim,
                    margin,
                    scale,
                    f0: Vec::new(),
                    fa: BTreeMap::new(),
                });
            }
            "entry" => {
                if toks.len() < 6 {
                    return Err(err("short entry line"));
                }
                let bi: usize = toks[1].parse().map_err(|_| err("bad block"))?;
                let a: usize = toks[2].parse().map_err(|_| err("bad var"))?;
                let i: u32 = toks[3].parse().map_err(|_| err("bad row"))?;
                let j: u32 = toks[4].parse().map_err(|_| err("bad col"))?;
                let v: f64 = toks[5].parse().map_err(|_| err("bad value"))?;
                let b = blocks.get_mut(bi).ok_or(err("block out of range"))?;
                if a == 0 {
                    b.f0.push((i, j, v));
                } else {
                    b.fa.entry(a - 1).or_default().push((i, j, v));
                }
            }
            _ => return Err(err("unknown directive")),
        }
    }

    let nvars = nvars.ok_or(LmiError::ParseError { line: 0, msg: "missing vars line".into() })?;
    let mut obj = vec![0.0; nvars];
    for (a, c) in objective {
        if a >= nvars {
            return Err(LmiError::ParseError { line: 0, msg: "objective var out of range".into() });
        }
        obj[a] = c;
    }
    let names = (0..nvars).map(|a| format!("y{a}")).collect();
    let dummy = MatHandle { base: 0, rows: 0, cols: 0, sym: false };
    Ok(BlockSdp {
        nvars,
        blocks,
        objective: obj,
        layout: VarLayout {
            names,
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
        },
        meta: LmiMeta {
            eps: 0.0,
            delays: vec![],
            agent_dims: vec![],
            n3: vec![],
            tying: TyingPolicy::PerEdge,
            margin: 0.0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_problem, problem_from_json};
    use crate::structure::{build_error_system, DelaySpec};
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn paper10_sys(h: f64, d: f64) -> crate::structure::ErrorSystem {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../examples/paper10.json");
        let p = load_problem(&path).unwrap();
        build_error_system(&p, &DelaySpec::Homogeneous { h, d }).unwrap()
    }

    fn random_y(sdp: &BlockSdp, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..sdp.nvars).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// random vars with PSD R_k (needed by the h-monotonicity property)
    fn random_vars(sys: &crate::structure::ErrorSystem, eps: f64, seed: u64) -> DecisionVars {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = sys.layout.r;
        let mut mat = |n: usize, m: usize| DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let psd = |m: DMatrix<f64>| {
            let n = m.nrows();
            m.transpose() * m + DMatrix::identity(n, n) * 0.1
        };
        let rho = sys.rho();
        let mut r_k = Vec::new();
        let mut q_k = Vec::new();
        let mut s_k = Vec::new();
        let mut s12_k = Vec::new();
        for e in &sys.edges {
            r_k.push(psd(mat(r, r)));
            q_k.push((e.d < 1.0).then(|| psd(mat(r, r))));
            s_k.push(psd(mat(r, r)));
            s12_k.push(mat(r, r));
        }
        let _ = rho;
        let sym = |m: DMatrix<f64>| {
            let t = m.transpose();
            (m + t) * 0.5
        };
        DecisionVars {
            eps,
            y11: sym(mat(r, r)),
            y12: mat(r, r),
            y22: sym(mat(r, r)),
            r_k,
            q_k,
            s_k,
            s12_k,
            p2_blocks: sys.layout.blocks.iter().map(|b| mat(b.r(), b.r())).collect(),
            x_blocks: sys.layout.blocks.iter().map(|b| mat(b.r(), b.r())).collect(),
            omega1: vec![],
            omega2: vec![],
            omega3: vec![],
            kappa_x: None,
            kappa_p: None,
        }
    }

    /// pack DecisionVars into the flat vector of an assembled program
    fn pack_vars(sdp: &BlockSdp, vars: &DecisionVars) -> Vec<f64> {
        let mut y = vec![0.0; sdp.nvars];
        let l = &sdp.layout;
        let mut put = |h: &MatHandle, m: &DMatrix<f64>| {
            for i in 0..h.rows {
                for j in 0..h.cols {
                    y[h.var_of(i, j)] = m[(i, j)];
                }
            }
        };
        put(&l.y11, &vars.y11);
        put(&l.y12, &vars.y12);
        put(&l.y22, &vars.y22);
        for k in 0..vars.r_k.len() {
            put(&l.r_k[k], &vars.r_k[k]);
            if let (Some(h), Some(q)) = (&l.q_k[k], &vars.q_k[k]) {
                put(h, q);
            }
            put(&l.s_k[k], &vars.s_k[k]);
            put(&l.s12_k[k], &vars.s12_k[k]);
        }
        for (i, h) in l.p2.iter().enumerate() {
            match h {
                P2Handle::Full(h) => put(h, &vars.p2_blocks[i]),
                P2Handle::Structured { .. } => unimplemented!("not needed in these tests"),
            }
        }
        for (i, h) in l.x.iter().enumerate() {
            put(h, &vars.x_blocks[i]);
        }
        y
    }

    fn lambda_max(m: &DMatrix<f64>) -> f64 {
        m.clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }

    #[test]
    fn flagship_assembly_shape() {
        let sys = paper10_sys(1.0, 0.1);
        let sdp = assemble_corollary1(&sys, 1.5, &AssembleOptions::default()).unwrap();
        let vertex: Vec<_> = sdp.blocks.iter().filter(|b| b.name.starts_with("vertex")).collect();
        assert_eq!(vertex.len(), 8);
        for b in &vertex {
            assert_eq!(b.dim, 5 * 19); // no extra border columns
        }
        // 8 vertex + 1 ordering + 1 lkf + R/Q/S positivity + 10 P2 blocks
        assert_eq!(sdp.blocks.len(), 23);
        assert_eq!(sdp.nvars, 1746);
        assert!(sdp.is_feasibility());
    }

    #[test]
    fn single_quadratic_agent_reduces_to_phi_alone() {
        let p = problem_from_json(
            r#"{
            "format_version": 1, "name": "single",
            "agents": [{"cost": {"kind": "quadratic", "h": [[2.0]]}}],
            "box": {"low": [-5], "high": [5]}
        }"#,
        )
        .unwrap();
        let sys = build_error_system(&p, &DelaySpec::Homogeneous { h: 0.5, d: 0.1 }).unwrap();
        assert_eq!(sys.rho(), 0);
        let sdp = assemble_corollary1(&sys, 1.0, &AssembleOptions::default()).unwrap();
        let vertex: Vec<_> = sdp.blocks.iter().filter(|b| b.name.starts_with("vertex")).collect();
        assert_eq!(vertex.len(), 1);
        assert_eq!(vertex[0].dim, 3); // (3+0)·r with r = 1, no border
        // blocks: vertex, lkf_y, pos_p2 — no delay-channel matrices at all
        assert_eq!(sdp.blocks.len(), 3);
        assert!(sdp.layout.r_k.is_empty());
    }

    #[test]
    fn bounded_hessian_border_oracle() {
        // single scalar agent with a self-owned constraint row, declared
        // smooth with bounds [mu, ell]: pin every border coefficient
        let p = problem_from_json(
            r#"{
            "format_version": 1, "name": "n3",
            "agents": [{"cost": {"kind": "sine_quadratic", "amp": 1.0, "freq": 0.5, "quad": 0.5},
                        "class": "smooth", "b": [0.0], "blocks": {"1": [[1.0]]}}],
            "box": {"low": [-5], "high": [5]}
        }"#,
        )
        .unwrap();
        let sys = build_error_system(&p, &DelaySpec::Homogeneous { h: 0.3, d: 0.2 }).unwrap();
        assert_eq!(sys.class_smooth, vec![0]);
        assert_eq!(sys.rho(), 0);
        let (mu, ell) = (p.agents[0].cost.mu, p.agents[0].cost.ell);
        assert!((mu - 0.75).abs() < 1e-12 && (ell - 1.25).abs() < 1e-12);

        let eps = 1.5;
        let opts = AssembleOptions { scale_blocks: false, ..Default::default() };
        let sdp = assemble_corollary1(&sys, eps, &opts).unwrap();
        let vb = sdp.blocks.iter().find(|b| b.name == "vertex_0").unwrap();
        // r = 2, base dim 6, border (m,n,m) = (1,1,1): Ξ is 9×9
        assert_eq!(vb.dim, 9);

        // assignment 1: w11 = 1, everything else 0
        let w11 = match &sdp.layout.p2[0] {
            P2Handle::Structured { w11, .. } => *w11,
            _ => panic!("expected structured block"),
        };
        let mut y = vec![0.0; sdp.nvars];
        y[w11] = 1.0;
        let xi = -vb.eval(&y); // block stores −Ξ
        // Ψ1 top-left: −2μ·w11 at the z̃ x-row (offset r = 2)
        assert_eq!(xi[(2, 2)], -2.0 * mu);
        // P2ᵀA⁰ + (A⁰)ᵀP2 with A⁰ = [0 −1; 1 0]: off-diagonal −1
        assert_eq!(xi[(2, 3)], -1.0);
        assert_eq!(xi[(3, 3)], 0.0);
        // φ̃23 = −P2ᵀ + ε(A⁰)ᵀP2
        assert_eq!(xi[(2, 4)], -1.0);
        assert_eq!(xi[(3, 4)], -eps);
        // φ̃33 = −2ε w11 on the x-part
        assert_eq!(xi[(4, 4)], -2.0 * eps);
        // border: only the εℓ·w11 column (second group, col 7)
        assert_eq!(xi[(2, 6)], 0.0);
        assert_eq!(xi[(2, 7)], eps * ell);
        assert_eq!(xi[(2, 8)], 0.0);

        // assignment 2: W12 = 1 alone lights up the first and third groups
        let w12 = match &sdp.layout.p2[0] {
            P2Handle::Structured { w12, .. } => *w12,
            _ => unreachable!(),
        };
        let mut y = vec![0.0; sdp.nvars];
        y[w12.var_of(0, 0)] = 1.0;
        let xi = -vb.eval(&y);
        assert_eq!(xi[(2, 6)], ell);
        assert_eq!(xi[(2, 7)], 0.0);
        assert_eq!(xi[(2, 8)], eps * ell);

        // assignment 3: Ω's sit negated on the corner diagonal
        let o1 = sdp.layout.omega1[0];
        let o2h = sdp.layout.omega2[0];
        let o3h = sdp.layout.omega3[0];
        let mut y = vec![0.0; sdp.nvars];
        y[o1.var_of(0, 0)] = 0.4;
        y[o2h.var_of(0, 0)] = 0.5;
        y[o3h.var_of(0, 0)] = 0.6;
        let xi = -vb.eval(&y);
        assert_eq!(xi[(6, 6)], -0.4);
        assert_eq!(xi[(7, 7)], -0.5);
        assert_eq!(xi[(8, 8)], -0.6);
        // and they also appear inside Ψ1/Ψ2 on the λ̃ rows
        assert_eq!(xi[(3, 3)], 0.4); // Ω1 in φ̃22 dual corner
        assert_eq!(xi[(4, 4)], 0.5); // Ω2 in φ̃33 x corner
        assert_eq!(xi[(5, 5)], 0.6); // Ω3 in φ̃33 dual corner
    }

    #[test]
    fn affinity_of_assembled_blocks() {
        let sys = paper10_sys(0.8, 0.1);
        let sdp = assemble_corollary1(&sys, 1.0, &AssembleOptions::default()).unwrap();
        let y1 = random_y(&sdp, 1);
        let y2 = random_y(&sdp, 2);
        for theta in [0.0, 0.3, 0.7, 1.0] {
            let ymix: Vec<f64> =
                y1.iter().zip(&y2).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
            for b in &sdp.blocks {
                let fm = b.eval(&ymix);
                let f1 = b.eval(&y1);
                let f2 = b.eval(&y2);
                let expect = f1 * theta + f2 * (1.0 - theta);
                assert!((fm - expect).amax() < 1e-13, "block {} not affine", b.name);
            }
        }
    }

    #[test]
    fn structural_zeros_hold_for_random_assignments() {
        let sys = paper10_sys(0.8, 0.1);
        let sdp = assemble_corollary1(&sys, 1.0, &AssembleOptions::default()).unwrap();
        let r = 19;
        let y = random_y(&sdp, 3);
        for b in sdp.blocks.iter().filter(|b| b.name.starts_with("vertex")) {
            let f = b.eval(&y);
            // (1,4), (1,5), (3,4) block positions of Φ̃ are structurally zero
            let zero_ranges = [
                (0..r, 3 * r..4 * r),
                (0..r, 4 * r..5 * r),
                (2 * r..3 * r, 3 * r..4 * r),
            ];
            for (ri, rj) in zero_ranges {
                for i in ri.clone() {
                    for j in rj.clone() {
                        assert_eq!(f[(i, j)], 0.0, "({i},{j}) leaked in {}", b.name);
                    }
                }
            }
        }
    }

    #[test]
    fn vertex_block_matches_dense_phi_at_attained_hessian() {
        // two sine-curvature agents whose Hessian vertices are attained at
        // x = ±π: the symbolic vertex block must equal the dense
        // state-dependent assembly there
        let p = problem_from_json(
            r#"{
            "format_version": 1, "name": "sines",
            "agents": [
                {"cost": {"kind": "sine_quadratic", "amp": 1.0, "freq": 0.5, "quad": 0.5},
                 "b": [0.0], "blocks": {"1": [[1.0]], "2": [[-1.0]]}},
                {"cost": {"kind": "quadratic", "h": [[2.0]]}}
            ],
            "box": {"low": [-10, -10], "high": [10, 10]}
        }"#,
        )
        .unwrap();
        let sys = build_error_system(&p, &DelaySpec::Homogeneous { h: 0.4, d: 0.1 }).unwrap();
        assert_eq!(sys.a_vertices.len(), 2);
        let eps = 1.2;
        let opts = AssembleOptions { scale_blocks: false, ..Default::default() };
        let sdp = assemble_corollary1(&sys, eps, &opts).unwrap();

        let vars = random_vars(&sys, eps, 5);
        let y = pack_vars(&sdp, &vars);

        // vertex 0 is the first listed Hessian vertex [[mu]] = 0.75,
        // attained at x1 = π (sin(π/2)... the curvature 1 − sin(x/2)/4 = 3/4)
        let x_at = DVector::from_vec(vec![std::f64::consts::PI, 0.0]);
        let hess = p.agents[0].cost.hessian(&DVector::from_vec(vec![std::f64::consts::PI]));
        assert!((hess[(0, 0)] - 0.75).abs() < 1e-14);

        let phi = evaluate_phi_at(&sys, &vars, &x_at).unwrap();
        let vb = sdp.blocks.iter().find(|b| b.name == "vertex_0").unwrap();
        let xi = -vb.eval(&y);
        assert_eq!(xi.nrows(), phi.nrows()); // no border: N3 empty
        assert!((xi - phi).amax() < 1e-10, "vertex block disagrees with dense path");
    }

    #[test]
    fn phi_is_constant_for_quadratic_instances() {
        let p = problem_from_json(
            r#"{
            "format_version": 1, "name": "quad2",
            "agents": [
                {"cost": {"kind": "quadratic", "h": [[1.8]], "g": [1.8]}, "b": [0.0],
                 "blocks": {"1": [[1.0]], "2": [[-1.0]]}},
                {"cost": {"kind": "quadratic", "h": [[2.0]], "g": [-8.0]}}
            ],
            "box": {"low": [-10, -10], "high": [10, 10]}
        }"#,
        )
        .unwrap();
        let sys = build_error_system(&p, &DelaySpec::Homogeneous { h: 0.3, d: 0.0 }).unwrap();
        let vars = random_vars(&sys, 0.8, 9);
        let xa = DVector::from_vec(vec![1.0, -2.0]);
        let xb = DVector::from_vec(vec![-3.5, 0.25]);
        let pa = evaluate_phi_at(&sys, &vars, &xa).unwrap();
        let pb = evaluate_phi_at(&sys, &vars, &xb).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn zero_vars_give_zero_phi() {
        let sys = paper10_sys(0.5, 0.1);
        let r = sys.layout.r;
        let zero = DMatrix::zeros(r, r);
        let vars = DecisionVars {
            eps: 1.0,
            y11: zero.clone(),
            y12: zero.clone(),
            y22: zero.clone(),
            r_k: vec![zero.clone()],
            q_k: vec![Some(zero.clone())],
            s_k: vec![zero.clone()],
            s12_k: vec![zero.clone()],
            p2_blocks: sys.layout.blocks.iter().map(|b| DMatrix::zeros(b.r(), b.r())).collect(),
            x_blocks: sys.layout.blocks.iter().map(|b| DMatrix::zeros(b.r(), b.r())).collect(),
            omega1: vec![],
            omega2: vec![],
            omega3: vec![],
            kappa_x: None,
            kappa_p: None,
        };
        let x = DVector::zeros(10);
        let phi = evaluate_phi_at(&sys, &vars, &x).unwrap();
        assert_eq!(phi.amax(), 0.0);
        assert!(lambda_max(&phi) >= 0.0, "zero matrix is not negative definite");
    }

    #[test]
    fn larger_delay_bound_dominates_smaller() {
        // Ξ(h') ⪯ Ξ(h) for h' ≤ h whenever R_k ⪰ 0 — the monotonicity that
        // justifies bisection on the delay bound
        let sys = paper10_sys(1.0, 0.1);
        let vars = random_vars(&sys, 1.0, 21);
        let y;
        let big = {
            let opts = AssembleOptions {
                scale_blocks: false,
                delays: Some(vec![(1.0, 0.1)]),
                ..Default::default()
            };
            let sdp = assemble_corollary1(&sys, 1.0, &opts).unwrap();
            y = pack_vars(&sdp, &vars);
            sdp
        };
        let small = {
            let opts = AssembleOptions {
                scale_blocks: false,
                delays: Some(vec![(0.4, 0.1)]),
                ..Default::default()
            };
            assemble_corollary1(&sys, 1.0, &opts).unwrap()
        };
        for (bb, sb) in big.blocks.iter().zip(&small.blocks) {
            if !bb.name.starts_with("vertex") {
                continue;
            }
            // −Ξ stored: −Ξ_small − (−Ξ_big) = Ξ_big − Ξ_small ⪯ 0... the
            // difference (h² − h'²)R sits in Ξ, so F_small − F_big ⪰ 0
            let diff = sb.eval(&y) - bb.eval(&y);
            let lmin = -lambda_max(&(-diff.clone()));
            assert!(lmin > -1e-12, "shrinking h must relax the vertex block, got {lmin}");
        }
    }

    #[test]
    fn remark2_blocks_and_objective() {
        let sys = paper10_sys(0.8, 0.1);
        let base = assemble_corollary1(&sys, 1.0, &AssembleOptions::default()).unwrap();
        let sdp = assemble_remark2(&base, 1.0, 2.0).unwrap();
        assert_eq!(sdp.nvars, base.nvars + 2);
        assert!(!sdp.is_feasibility());
        assert_eq!(sdp.objective[sdp.layout.kappa_x.unwrap()], 1.0);
        assert_eq!(sdp.objective[sdp.layout.kappa_p.unwrap()], 2.0);
        assert_eq!(sdp.blocks.len(), base.blocks.len() + 2);

        // zero X: the norm block [κ_X I, −Xᵀ; *, I] is PSD already at κ_X = 0
        let gx = sdp.blocks.iter().find(|b| b.name == "gain_bound_x").unwrap();
        let y = vec![0.0; sdp.nvars];
        let f = gx.eval(&y) * gx.scale;
        let lmin = -lambda_max(&(-f));
        assert!(lmin >= 0.0);
    }

    #[test]
    fn remark2_scalar_schur_condition() {
        // single agent, r = 1: the block [[p, 1], [1, κ_P]] is PD iff κ_P > 1/p
        let p = problem_from_json(
            r#"{
            "format_version": 1, "name": "single",
            "agents": [{"cost": {"kind": "quadratic", "h": [[2.0]]}}],
            "box": {"low": [-5], "high": [5]}
        }"#,
        )
        .unwrap();
        let sys = build_error_system(&p, &DelaySpec::Homogeneous { h: 0.1, d: 0.0 }).unwrap();
        let opts = AssembleOptions { scale_blocks: false, ..Default::default() };
        let base = assemble_corollary1(&sys, 1.0, &opts).unwrap();
        let sdp = assemble_remark2(&base, 1.0, 1.0).unwrap();
        let gp = sdp.blocks.iter().find(|b| b.name == "gain_bound_p").unwrap();

        let p2v = match &sdp.layout.p2[0] {
            P2Handle::Full(h) => h.var_of(0, 0),
            _ => unreachable!(),
        };
        let kp = sdp.layout.kappa_p.unwrap();
        let mut y = vec![0.0; sdp.nvars];
        y[p2v] = 2.0;
        y[kp] = 0.6; // 0.6 > 1/2
        let f = gp.eval(&y) * gp.scale;
        assert!(-lambda_max(&(-f.clone())) > 0.0);
        y[kp] = 0.4; // 0.4 < 1/2 → indefinite
        let f = gp.eval(&y) * gp.scale;
        assert!(-lambda_max(&(-f)) < 0.0);
    }

    #[test]
    fn tied_channels_share_variables() {
        let p = load_problem(
            &std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../examples/paper10.json"),
        )
        .unwrap();
        let sys = build_error_system(&p, &DelaySpec::PerEdge(vec![(0.5, 0.1); 18])).unwrap();
        let tied = assemble_corollary1(
            &sys,
            1.0,
            &AssembleOptions { tying: TyingPolicy::Tied, ..Default::default() },
        )
        .unwrap();
        let per = assemble_corollary1(&sys, 1.0, &AssembleOptions::default()).unwrap();
        assert!(tied.nvars < per.nvars);
        assert_eq!(tied.layout.r_k[0].base, tied.layout.r_k[17].base);
        assert_ne!(per.layout.r_k[0].base, per.layout.r_k[17].base);
    }

    #[test]
    fn sparse_text_roundtrip() {
        let sys = paper10_sys(0.6, 0.1);
        let sdp = assemble_corollary1(&sys, 1.0, &AssembleOptions::default()).unwrap();
        let text = write_sparse_text(&sdp);
        let back = read_sparse_text(&text).unwrap();
        assert_eq!(back.nvars, sdp.nvars);
        assert_eq!(back.blocks.len(), sdp.blocks.len());
        let y = random_y(&sdp, 4);
        for (a, b) in sdp.blocks.iter().zip(&back.blocks) {
            assert_eq!(a.dim, b.dim);
            assert_eq!(a.margin, b.margin);
            assert!((a.eval(&y) - b.eval(&y)).amax() < 1e-14);
        }
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let sys = paper10_sys(0.5, 0.1);
        assert!(matches!(
            assemble_corollary1(&sys, -1.0, &AssembleOptions::default()),
            Err(LmiError::BadParameter(_))
        ));
        let opts = AssembleOptions { delays: Some(vec![(0.5, 0.1), (0.5, 0.1)]), ..Default::default() };
        assert!(matches!(
            assemble_corollary1(&sys, 1.0, &opts),
            Err(LmiError::DimensionMismatch(_))
        ));
        let opts = AssembleOptions { vertex_cap: 4, ..Default::default() };
        assert!(matches!(
            assemble_corollary1(&sys, 1.0, &opts),
            Err(LmiError::VertexExplosion { count: 8, cap: 4 })
        ));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(8))]

        #[test]
        fn assembled_blocks_are_symmetric(seed in 0u64..1000) {
            let sys = paper10_sys(0.7, 0.1);
            let sdp = assemble_corollary1(&sys, 1.0, &AssembleOptions::default()).unwrap();
            let y = random_y(&sdp, seed);
            for b in &sdp.blocks {
                let f = b.eval(&y);
                proptest::prop_assert!((f.clone() - f.transpose()).amax() == 0.0);
            }
        }
    }
}
