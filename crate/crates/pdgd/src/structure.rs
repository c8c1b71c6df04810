//! Block structure of the compact delayed error dynamics.
//!
//! Collects everything the certification and simulation paths share: the
//! per-agent state ordering z = col_i(x_i, λ_i), the state-dependent block
//! diagonal
//!
//! ```text
//!     A_i(x̂_i) = [ −B_i(x̂_i)  −A_iiᵀ ]        B_i = Hessian of f_i
//!                [   A_ii        0    ]
//! ```
//!
//! the delay-edge set (one edge per ordered pair (i, j), j ≠ i, whose
//! coupling matrix
//!
//! ```text
//!     T_ij = [ 0      −A_jiᵀ ]
//!            [ A_ij     0    ]
//! ```
//!
//! is nonzero), the per-agent gain blocks K_i, and the vertex enumeration of
//! A over polytopic-Hessian agents. The delayed dynamics read
//!
//! ```text
//!     ż̃ = (A(x̂) + K) z̃ + Σ_k T_k z̃(t − τ_k(t)) − K ũ,     ũ̇ = z̃ − ũ,
//! ```
//!
//! where own-block terms stay undelayed and every cross-agent term is
//! delayed. [`rhs_augmented`] implements the same flow in original
//! coordinates (the form agents actually run); [`rhs_error_compact`]
//! implements the shifted form via the exact mean-value product
//! B_i(x̂)x̃_i = ∇f_i(x̂_i) − ∇f_i(x*_i), and the two must agree — that
//! equivalence is this module's core cross-check.

use crate::problem::{solve_kkt, CurvatureClass, KktPoint, Problem, ProblemError};
use nalgebra::{DMatrix, DVector};

/// Offsets and sizes of one agent's block inside the stacked z vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    /// Primal dimension n_i.
    pub n: usize,
    /// Dual dimension m_i.
    pub m: usize,
    /// Offset of x_i within the stacked x vector.
    pub x_off: usize,
    /// Offset of λ_i within the stacked λ vector.
    pub lam_off: usize,
    /// Offset of this agent's (x_i, λ_i) block within z.
    pub z_off: usize,
}

impl BlockDims {
    /// r_i = n_i + m_i.
    pub fn r(&self) -> usize {
        self.n + self.m
    }
}

/// State ordering z = col_i(x_i, λ_i) with r = n + m total coordinates.
#[derive(Debug, Clone)]
pub struct StateLayout {
    pub blocks: Vec<BlockDims>,
    pub n: usize,
    pub m: usize,
    pub r: usize,
}

impl StateLayout {
    pub fn from_problem(p: &Problem) -> Self {
        let mut blocks = Vec::with_capacity(p.agents.len());
        let (mut x_off, mut lam_off, mut z_off) = (0, 0, 0);
        for a in &p.agents {
            blocks.push(BlockDims { n: a.n, m: a.m, x_off, lam_off, z_off });
            x_off += a.n;
            lam_off += a.m;
            z_off += a.n + a.m;
        }
        StateLayout { blocks, n: x_off, m: lam_off, r: z_off }
    }

    /// Interleave stacked (x, λ) into z = col_i(x_i, λ_i).
    pub fn pack(&self, x: &DVector<f64>, lam: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.r);
        for b in &self.blocks {
            z.rows_mut(b.z_off, b.n).copy_from(&x.rows(b.x_off, b.n));
            z.rows_mut(b.z_off + b.n, b.m).copy_from(&lam.rows(b.lam_off, b.m));
        }
        z
    }

    /// Split z back into stacked (x, λ).
    pub fn unpack(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut x = DVector::zeros(self.n);
        let mut lam = DVector::zeros(self.m);
        for b in &self.blocks {
            x.rows_mut(b.x_off, b.n).copy_from(&z.rows(b.z_off, b.n));
            lam.rows_mut(b.lam_off, b.m).copy_from(&z.rows(b.z_off + b.n, b.m));
        }
        (x, lam)
    }
}

/// One delayed coupling channel: the matrix T_k applied to z̃(t − τ_k).
///
/// Uncollapsed edges carry a single (target, source) pair; the homogeneous
/// collapse produces one edge holding the sum of all pair couplings.
#[derive(Debug, Clone)]
pub struct DelayEdge {
    /// Edge index k (0-based).
    pub k: usize,
    /// (target agent i, source agent j) for elementary edges; `None` for the
    /// collapsed sum edge.
    pub pair: Option<(usize, usize)>,
    /// Full r×r embedding of the coupling matrix.
    pub t: DMatrix<f64>,
    /// Delay bound h_k in seconds.
    pub h: f64,
    /// Delay rate bound d_k ∈ [0, 1]; 1 declares a fast-varying delay.
    pub d: f64,
}

/// Block-diagonal gain K = blkdiag(K_i) with K_i partitioned as
/// `[κ11 κ12; κ21 κ22]` on (n_i, m_i); agents without duals carry only κ11.
#[derive(Debug, Clone)]
pub struct GainMatrix {
    /// Per-agent r_i×r_i blocks, in agent order.
    pub blocks: Vec<DMatrix<f64>>,
}

impl GainMatrix {
    pub fn zero(layout: &StateLayout) -> Self {
        GainMatrix {
            blocks: layout.blocks.iter().map(|b| DMatrix::zeros(b.r(), b.r())).collect(),
        }
    }

    /// Dense r×r assembly.
    pub fn full(&self, layout: &StateLayout) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(layout.r, layout.r);
        for (b, kb) in layout.blocks.iter().zip(&self.blocks) {
            k.view_mut((b.z_off, b.z_off), (b.r(), b.r())).copy_from(kb);
        }
        k
    }
}

/// How delay bounds are declared when building the error system.
#[derive(Debug, Clone)]
pub enum DelaySpec {
    /// One shared (h, d) for every coupling; edges are merged into a single
    /// delay channel with T = Σ T_ij.
    Homogeneous { h: f64, d: f64 },
    /// Individual (h_k, d_k) per elementary edge, in edge enumeration order.
    PerEdge(Vec<(f64, f64)>),
}

/// The compact error system: layout, A-block factory, delay edges, vertex
/// enumeration, and (optionally) the synthesized gain.
#[derive(Debug, Clone)]
pub struct ErrorSystem {
    pub problem: Problem,
    pub kkt: KktPoint,
    pub layout: StateLayout,
    /// Agent partition: indices of constant-Hessian, polytopic-Hessian, and
    /// bounded-Hessian agents. Pairwise disjoint, union = all agents.
    pub class_quadratic: Vec<usize>,
    pub class_polytopic: Vec<usize>,
    pub class_smooth: Vec<usize>,
    pub edges: Vec<DelayEdge>,
    /// Vertex matrices Ã^(j), each r×r: quadratic agents contribute their
    /// exact A_i, polytopic agents one vertex Hessian per combination, and
    /// bounded-Hessian agents A_i with the Hessian zeroed.
    pub a_vertices: Vec<DMatrix<f64>>,
    pub gain: Option<GainMatrix>,
}

#[derive(Debug, thiserror::Error)]
pub enum StructureError {
    #[error("vertex enumeration would produce {count} vertices (cap {cap})")]
    VertexExplosion { count: usize, cap: usize },
    #[error("delay spec lists {given} edges but the coupling graph has {expect}")]
    DelayCountMismatch { given: usize, expect: usize },
    #[error("no coupling anywhere: the problem has no constraints to delay")]
    EmptyCoupling,
    #[error("delay bounds must satisfy h >= 0 and 0 <= d <= 1, got h={h}, d={d}")]
    BadDelayBound { h: f64, d: f64 },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Largest vertex product accepted before refusing to enumerate.
pub const VERTEX_CAP: usize = 256;

/// Embed T_ij (target i, source j) into an r×r matrix.
fn embed_coupling(p: &Problem, layout: &StateLayout, i: usize, j: usize) -> DMatrix<f64> {
    let bi = layout.blocks[i];
    let bj = layout.blocks[j];
    let mut t = DMatrix::zeros(layout.r, layout.r);
    // x̃_i row: −A_jiᵀ λ̃_j (agent j's rows constrain agent i's primal)
    if let Some(a_ji) = p.agents[j].row_blocks.get(&i) {
        t.view_mut((bi.z_off, bj.z_off + bj.n), (bi.n, bj.m))
            .copy_from(&(-a_ji.transpose()));
    }
    // λ̃_i row: A_ij x̃_j
    if let Some(a_ij) = p.agents[i].row_blocks.get(&j) {
        t.view_mut((bi.z_off + bi.n, bj.z_off), (bi.m, bj.n))
            .copy_from(a_ij);
    }
    t
}

/// Assemble the A_i(x̂_i) block for agent i given its Hessian.
fn a_block(p: &Problem, i: usize, hess: &DMatrix<f64>) -> DMatrix<f64> {
    let a = &p.agents[i];
    let r = a.n + a.m;
    let mut blk = DMatrix::zeros(r, r);
    blk.view_mut((0, 0), (a.n, a.n)).copy_from(&(-hess));
    if let Some(a_ii) = a.row_blocks.get(&i) {
        blk.view_mut((0, a.n), (a.n, a.m)).copy_from(&(-a_ii.transpose()));
        blk.view_mut((a.n, 0), (a.m, a.n)).copy_from(a_ii);
    }
    blk
}

impl ErrorSystem {
    /// ρ: number of delay channels after any collapse.
    pub fn rho(&self) -> usize {
        self.edges.len()
    }

    /// A(x̂) = blkdiag(A_i(x̂_i)) with the true Hessians at x̂
    /// (stacked primal coordinates, length n).
    pub fn a_of(&self, x_hat: &DVector<f64>) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.layout.r, self.layout.r);
        for (i, b) in self.layout.blocks.iter().enumerate() {
            let xi = x_hat.rows(b.x_off, b.n).into_owned();
            let hess = self.problem.agents[i].cost.hessian(&xi);
            a.view_mut((b.z_off, b.z_off), (b.r(), b.r()))
                .copy_from(&a_block(&self.problem, i, &hess));
        }
        a
    }

    /// Sum of all delay coupling matrices (equals the single T for the
    /// homogeneous collapse).
    pub fn t_sum(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.layout.r, self.layout.r);
        for e in &self.edges {
            s += &e.t;
        }
        s
    }

    pub fn with_gain(mut self, gain: GainMatrix) -> Self {
        self.gain = Some(gain);
        self
    }
}

/// Build the error system: enumerate coupling edges, apply the homogeneous
/// collapse if requested, and enumerate the Hessian vertex combinations.
///
/// Callers are responsible for passing a problem that already validates
/// cleanly; analytic reductions (single-agent instances) are accepted as-is.
/// Solves the KKT system internally — the equilibrium is part of the error
/// coordinates.
pub fn build_error_system(p: &Problem, delays: &DelaySpec) -> Result<ErrorSystem, StructureError> {
    let layout = StateLayout::from_problem(p);
    let kkt = solve_kkt(p, 1e-10, 100)?;

    // elementary edges: ordered pairs (i, j), j ≠ i, with T_ij ≠ 0
    let mut pairs = Vec::new();
    for i in 0..p.agents.len() {
        for j in 0..p.agents.len() {
            if i == j {
                continue;
            }
            let coupled = p.agents[j].row_blocks.contains_key(&i)
                || p.agents[i].row_blocks.contains_key(&j);
            if coupled {
                pairs.push((i, j));
            }
        }
    }

    let any_diag = (0..p.agents.len()).any(|i| p.agents[i].row_blocks.contains_key(&i));
    if pairs.is_empty() && !any_diag && p.agents.len() >= 2 {
        return Err(StructureError::EmptyCoupling);
    }

    let edges = match delays {
        DelaySpec::Homogeneous { h, d } => {
            check_bound(*h, *d)?;
            if pairs.is_empty() {
                Vec::new()
            } else {
                let mut t = DMatrix::zeros(layout.r, layout.r);
                for &(i, j) in &pairs {
                    t += embed_coupling(p, &layout, i, j);
                }
                vec![DelayEdge { k: 0, pair: None, t, h: *h, d: *d }]
            }
        }
        DelaySpec::PerEdge(bounds) => {
            if bounds.len() != pairs.len() {
                return Err(StructureError::DelayCountMismatch {
                    given: bounds.len(),
                    expect: pairs.len(),
                });
            }
            pairs
                .iter()
                .zip(bounds)
                .enumerate()
                .map(|(k, (&(i, j), &(h, d)))| {
                    check_bound(h, d)?;
                    Ok(DelayEdge { k, pair: Some((i, j)), t: embed_coupling(p, &layout, i, j), h, d })
                })
                .collect::<Result<Vec<_>, StructureError>>()?
        }
    };

    // agent classes
    let mut class_quadratic = Vec::new();
    let mut class_polytopic = Vec::new();
    let mut class_smooth = Vec::new();
    for (i, a) in p.agents.iter().enumerate() {
        match a.cost.class {
            CurvatureClass::Quadratic => class_quadratic.push(i),
            CurvatureClass::Polytopic => class_polytopic.push(i),
            CurvatureClass::Smooth => class_smooth.push(i),
        }
    }

    // vertex enumeration over polytopic agents (others contribute one fixed block)
    let mut count = 1usize;
    for &i in &class_polytopic {
        count = count.saturating_mul(p.agents[i].cost.vertices.len());
        if count > VERTEX_CAP {
            return Err(StructureError::VertexExplosion { count, cap: VERTEX_CAP });
        }
    }
    let mut a_vertices = Vec::with_capacity(count);
    let mut combo = vec![0usize; class_polytopic.len()];
    loop {
        let mut av = DMatrix::zeros(layout.r, layout.r);
        for (i, b) in layout.blocks.iter().enumerate() {
            let hess = match p.agents[i].cost.class {
                CurvatureClass::Quadratic => {
                    let x0 = DVector::zeros(b.n);
                    p.agents[i].cost.hessian(&x0)
                }
                CurvatureClass::Polytopic => {
                    let slot = class_polytopic.iter().position(|&q| q == i).unwrap();
                    p.agents[i].cost.vertices[combo[slot]].clone()
                }
                CurvatureClass::Smooth => DMatrix::zeros(b.n, b.n),
            };
            av.view_mut((b.z_off, b.z_off), (b.r(), b.r()))
                .copy_from(&a_block(p, i, &hess));
        }
        a_vertices.push(av);

        // advance the mixed-radix counter (last agent fastest)
        let mut pos = combo.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            combo[pos] += 1;
            if combo[pos] < p.agents[class_polytopic[pos]].cost.vertices.len() {
                break;
            }
            combo[pos] = 0;
            if pos == 0 {
                pos = usize::MAX;
                break;
            }
        }
        if combo.iter().all(|&c| c == 0) || pos == usize::MAX {
            break;
        }
    }

    Ok(ErrorSystem {
        problem: p.clone(),
        kkt,
        layout,
        class_quadratic,
        class_polytopic,
        class_smooth,
        edges,
        a_vertices,
        gain: None,
    })
}

fn check_bound(h: f64, d: f64) -> Result<(), StructureError> {
    if h < 0.0 || !(0.0..=1.0).contains(&d) || !h.is_finite() {
        Err(StructureError::BadDelayBound { h, d })
    } else {
        Ok(())
    }
}

/// Right-hand side of the augmented flow in original coordinates:
///
/// ```text
///   ẋ_i  = −∇f_i(x_i) − A_iiᵀλ_i − Σ_{j≠i} A_jiᵀ λ_j(t−τ) + κ11(x_i−u1_i) + κ12(λ_i−u2_i)
///   λ̇_i  = A_ii x_i − b_i + Σ_{j≠i} A_ij x_j(t−τ)        + κ21(x_i−u1_i) + κ22(λ_i−u2_i)
///   u̇1_i = x_i − u1_i,    u̇2_i = λ_i − u2_i
/// ```
///
/// `delayed` supplies the full packed z vector at t − τ_k for edge k.
/// With zero gains and zero delays this is exactly the standard primal-dual
/// flow; at the KKT point with u = (x*, λ*) every derivative vanishes.
pub fn rhs_augmented(
    sys: &ErrorSystem,
    gain: &GainMatrix,
    x: &DVector<f64>,
    lam: &DVector<f64>,
    u1: &DVector<f64>,
    u2: &DVector<f64>,
    delayed: &dyn Fn(usize) -> DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let p = &sys.problem;
    let layout = &sys.layout;

    let mut dx = -p.cost_gradient(x);
    let mut dl = DVector::zeros(layout.m);

    // own-block (undelayed) constraint terms
    for (i, b) in layout.blocks.iter().enumerate() {
        if let Some(a_ii) = p.agents[i].row_blocks.get(&i) {
            let xi = x.rows(b.x_off, b.n);
            let li = lam.rows(b.lam_off, b.m);
            let mut dxi = dx.rows_mut(b.x_off, b.n);
            dxi -= a_ii.transpose() * li;
            let mut dli = dl.rows_mut(b.lam_off, b.m);
            dli += a_ii * xi - &p.agents[i].b;
        } else if b.m > 0 {
            let mut dli = dl.rows_mut(b.lam_off, b.m);
            dli -= &p.agents[i].b;
        }
    }

    // cross-agent (delayed) terms, one edge at a time
    for e in &sys.edges {
        let zd = delayed(e.k);
        match e.pair {
            Some((i, j)) => {
                let bi = layout.blocks[i];
                let bj = layout.blocks[j];
                if let Some(a_ji) = p.agents[j].row_blocks.get(&i) {
                    let lj = zd.rows(bj.z_off + bj.n, bj.m);
                    let mut dxi = dx.rows_mut(bi.x_off, bi.n);
                    dxi -= a_ji.transpose() * lj;
                }
                if let Some(a_ij) = p.agents[i].row_blocks.get(&j) {
                    let xj = zd.rows(bj.z_off, bj.n);
                    let mut dli = dl.rows_mut(bi.lam_off, bi.m);
                    dli += a_ij * xj;
                }
            }
            None => {
                // collapsed edge: apply the summed coupling to the packed state
                let contrib = &e.t * zd;
                for b in layout.blocks.iter() {
                    let mut dxi = dx.rows_mut(b.x_off, b.n);
                    dxi += contrib.rows(b.z_off, b.n);
                    let mut dli = dl.rows_mut(b.lam_off, b.m);
                    dli += contrib.rows(b.z_off + b.n, b.m);
                }
            }
        }
    }

    // gain feedback K_i (z_i − u_i) and the filter states
    let mut du1 = DVector::zeros(layout.n);
    let mut du2 = DVector::zeros(layout.m);
    for (i, b) in layout.blocks.iter().enumerate() {
        let kb = &gain.blocks[i];
        let mut zi = DVector::zeros(b.r());
        zi.rows_mut(0, b.n)
            .copy_from(&(x.rows(b.x_off, b.n) - u1.rows(b.x_off, b.n)));
        zi.rows_mut(b.n, b.m)
            .copy_from(&(lam.rows(b.lam_off, b.m) - u2.rows(b.lam_off, b.m)));
        let fb = kb * zi;
        let mut dxi = dx.rows_mut(b.x_off, b.n);
        dxi += fb.rows(0, b.n);
        let mut dli = dl.rows_mut(b.lam_off, b.m);
        dli += fb.rows(b.n, b.m);

        let mut d1 = du1.rows_mut(b.x_off, b.n);
        d1.copy_from(&(x.rows(b.x_off, b.n) - u1.rows(b.x_off, b.n)));
        let mut d2 = du2.rows_mut(b.lam_off, b.m);
        d2.copy_from(&(lam.rows(b.lam_off, b.m) - u2.rows(b.lam_off, b.m)));
    }

    (dx, dl, du1, du2)
}

/// Right-hand side of the compact error form, using the exact mean-value
/// product B_i(x̂)x̃_i = ∇f_i(x*_i + x̃_i) − ∇f_i(x*_i):
///
/// ```text
///   ż̃ = (A(x̂) + K) z̃ + Σ_k T_k z̃(t − τ_k) − K ũ,      ũ̇ = z̃ − ũ
/// ```
///
/// Agrees with [`rhs_augmented`] shifted by the equilibrium — by
/// construction, not by linearization.
pub fn rhs_error_compact(
    sys: &ErrorSystem,
    gain: &GainMatrix,
    z_tilde: &DVector<f64>,
    u_tilde: &DVector<f64>,
    delayed: &dyn Fn(usize) -> DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let p = &sys.problem;
    let layout = &sys.layout;
    let x_star = sys.kkt.x();

    let mut dz = DVector::zeros(layout.r);
    for (i, b) in layout.blocks.iter().enumerate() {
        let xt = z_tilde.rows(b.z_off, b.n).into_owned();
        let lt = z_tilde.rows(b.z_off + b.n, b.m).into_owned();
        let xs = x_star.rows(b.x_off, b.n).into_owned();
        // mean-value product: exact, no Hessian evaluation
        let bx = p.agents[i].cost.gradient(&(&xs + &xt)) - p.agents[i].cost.gradient(&xs);
        let mut dxi = dz.rows_mut(b.z_off, b.n);
        dxi -= bx;
        if let Some(a_ii) = p.agents[i].row_blocks.get(&i) {
            let mut dxi = dz.rows_mut(b.z_off, b.n);
            dxi -= a_ii.transpose() * &lt;
            let mut dli = dz.rows_mut(b.z_off + b.n, b.m);
            dli += a_ii * &xt;
        }
        // gain feedback on (z̃ − ũ)
        let zi = z_tilde.rows(b.z_off, b.r()) - u_tilde.rows(b.z_off, b.r());
        let fb = &gain.blocks[i] * zi;
        let mut dzi = dz.rows_mut(b.z_off, b.r());
        dzi += fb;
    }
    for e in &sys.edges {
        dz += &e.t * delayed(e.k);
    }

    let du = z_tilde - u_tilde;
    (dz, du)
}

/// Standard primal-dual flow (no gains, no filter states):
/// ẋ = −∇f(x) − Aᵀλ, λ̇ = Ax − b, with cross-agent terms optionally delayed.
pub fn rhs_standard(
    sys: &ErrorSystem,
    x: &DVector<f64>,
    lam: &DVector<f64>,
    delayed: &dyn Fn(usize) -> DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let zero_gain = GainMatrix::zero(&sys.layout);
    let u1 = DVector::zeros(sys.layout.n);
    let u2 = DVector::zeros(sys.layout.m);
    let (dx, dl, _, _) = rhs_augmented(sys, &zero_gain, x, lam, &u1, &u2, delayed);
    (dx, dl)
}

/// Write A vertices, T_k, and K as dense CSV files (one file per matrix)
/// into `dir` for external inspection.
pub fn dump_matrices(sys: &ErrorSystem, dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let write = |name: String, m: &DMatrix<f64>| -> std::io::Result<()> {
        use std::io::Write;
        let mut f = std::fs::File::create(dir.join(name))?;
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    };
    for (j, av) in sys.a_vertices.iter().enumerate() {
        write(format!("a_vertex_{j}.csv"), av)?;
    }
    for e in &sys.edges {
        write(format!("t_edge_{}.csv", e.k), &e.t)?;
    }
    if let Some(g) = &sys.gain {
        write("gain.csv".into(), &g.full(&sys.layout))?;
    }
    Ok(())
}
