//! Equality-constrained separable convex programs and a KKT ground-truth oracle.
//!
//! A [`Problem`] is
//!
//! ```text
//!     minimize   Σ_i f_i(x_i)      x_i ∈ ℝ^{n_i}
//!     subject to A x = b           A ∈ ℝ^{m×n}, rank A = m < n
//! ```
//!
//! with block-partitioned constraints: dual block i (owned by agent i, for the
//! leading M agents) contributes rows `Σ_j A_ij x_j = b_i`. Each cost carries
//! curvature metadata `0 < μ_i ≤ ℓ_i` bounding its Hessian, `μ_i I ⪯ ∇²f_i ⪯
//! ℓ_i I`, which downstream modules use to build polytopic Hessian vertices
//! and bounded-curvature envelopes.
//!
//! [`solve_kkt`] computes the unique saddle point (x*, λ*) of the Lagrangian
//! by damped Newton on the KKT system — deliberately independent of the
//! gradient flow under test, so simulations can be checked against it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Closed-form scalar cost shapes with exact gradients, Hessians, and global
/// curvature ranges. All are strongly convex for admissible parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarForm {
    /// `ln Σ_k exp(α_k x) + quad·x²`
    LogSumExp { alphas: Vec<f64>, quad: f64 },
    /// `amp·sin(freq·x) + quad·x²`
    SineQuadratic { amp: f64, freq: f64, quad: f64 },
    /// `x²/√(x² + shift) + quad·x²`
    SqrtRatio { shift: f64, quad: f64 },
}

impl ScalarForm {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            ScalarForm::LogSumExp { alphas, quad } => {
                // log-sum-exp in shifted form to avoid overflow
                let m = alphas.iter().map(|a| a * x).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = alphas.iter().map(|a| (a * x - m).exp()).sum();
                m + s.ln() + quad * x * x
            }
            ScalarForm::SineQuadratic { amp, freq, quad } => {
                amp * (freq * x).sin() + quad * x * x
            }
            ScalarForm::SqrtRatio { shift, quad } => {
                x * x / (x * x + shift).sqrt() + quad * x * x
            }
        }
    }

    pub fn gradient(&self, x: f64) -> f64 {
        match self {
            ScalarForm::LogSumExp { alphas, quad } => {
                let p = softmax(alphas, x);
                let mean: f64 = alphas.iter().zip(&p).map(|(a, w)| a * w).sum();
                mean + 2.0 * quad * x
            }
            ScalarForm::SineQuadratic { amp, freq, quad } => {
                amp * freq * (freq * x).cos() + 2.0 * quad * x
            }
            ScalarForm::SqrtRatio { shift, quad } => {
                // d/dx [x²(x²+s)^{-1/2}] = x(x²+2s)/(x²+s)^{3/2}
                let s = *shift;
                x * (x * x + 2.0 * s) / (x * x + s).powf(1.5) + 2.0 * quad * x
            }
        }
    }

    pub fn hessian(&self, x: f64) -> f64 {
        match self {
            ScalarForm::LogSumExp { alphas, quad } => {
                // variance of α under the softmax weights
                let p = softmax(alphas, x);
                let mean: f64 = alphas.iter().zip(&p).map(|(a, w)| a * w).sum();
                let var: f64 = alphas.iter().zip(&p).map(|(a, w)| (a - mean) * (a - mean) * w).sum();
                var + 2.0 * quad
            }
            ScalarForm::SineQuadratic { amp, freq, quad } => {
                -amp * freq * freq * (freq * x).sin() + 2.0 * quad
            }
            ScalarForm::SqrtRatio { shift, quad } => {
                // d²/dx² [x²(x²+s)^{-1/2}] = s(2s - x²)/(x²+s)^{5/2}
                let s = *shift;
                s * (2.0 * s - x * x) / (x * x + s).powf(2.5) + 2.0 * quad
            }
        }
    }

    /// Global curvature range `inf_x f''(x), sup_x f''(x)` over all of ℝ.
    ///
    /// Returns `None` when no closed form is available (log-sum-exp with more
    /// than two terms); callers fall back to grid sampling.
    pub fn global_hessian_range(&self) -> Option<(f64, f64)> {
        match self {
            ScalarForm::LogSumExp { alphas, quad } => {
                if alphas.len() == 2 {
                    // two-point variance peaks at (Δα/2)² and vanishes in the tails
                    let d = alphas[1] - alphas[0];
                    Some((2.0 * quad, 2.0 * quad + d * d / 4.0))
                } else {
                    None
                }
            }
            ScalarForm::SineQuadratic { amp, freq, quad } => {
                let swing = amp.abs() * freq * freq;
                Some((2.0 * quad - swing, 2.0 * quad + swing))
            }
            ScalarForm::SqrtRatio { shift, quad } => {
                // extrema of s(2s-x²)/(x²+s)^{5/2}: max 2/√s at x=0,
                // min -2/(5^{5/2}√s) at x = ±2√s
                let s = *shift;
                let hi = 2.0 * quad + 2.0 / s.sqrt();
                let lo = 2.0 * quad - 2.0 / (5.0_f64.powf(2.5) * s.sqrt());
                Some((lo, hi))
            }
        }
    }
}

fn softmax(alphas: &[f64], x: f64) -> Vec<f64> {
    let m = alphas.iter().map(|a| a * x).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = alphas.iter().map(|a| (a * x - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// How a cost's Hessian enters the stability certificate.
///
/// The three classes trade conservatism for generality: a constant Hessian is
/// used exactly; a polytopic Hessian is replaced by vertex enumeration; a
/// merely bounded Hessian is absorbed through norm bounds (the most
/// conservative path, but the only one that stays linear in the unknowns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureClass {
    /// Constant Hessian (quadratic cost): enters the certificate exactly.
    Quadratic,
    /// Hessian ranges over a polytope; scalar costs use the two interval
    /// endpoints as vertices.
    Polytopic,
    /// Hessian only known to lie in `[μI, ℓI]`; handled by norm bounds.
    Smooth,
}

/// Where the declared curvature constants came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsSource {
    /// Supplied in the problem description.
    Declared,
    /// Computed by [`hessian_range`] (closed form or sampled grid).
    Estimated,
}

/// A cost function: closed-form shape plus curvature metadata.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub shape: CostShape,
    pub class: CurvatureClass,
    /// Strong-convexity modulus μ > 0.
    pub mu: f64,
    /// Smoothness constant ℓ ≥ μ.
    pub ell: f64,
    pub bounds_source: BoundsSource,
    /// Hessian vertices for the polytopic class (scalar costs: `[μ], [ℓ]`).
    pub vertices: Vec<DMatrix<f64>>,
}

/// The shape (evaluators) of a cost.
#[derive(Debug, Clone)]
pub enum CostShape {
    /// `½ xᵀH x + gᵀx + c` with H symmetric positive definite.
    Quadratic { h: DMatrix<f64>, g: DVector<f64>, c: f64 },
    /// One of the closed-form scalar catalog entries (requires n_i = 1).
    Scalar(ScalarForm),
}

impl CostModel {
    pub fn dim(&self) -> usize {
        match &self.shape {
            CostShape::Quadratic { h, .. } => h.nrows(),
            CostShape::Scalar(_) => 1,
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match &self.shape {
            CostShape::Quadratic { h, g, c } => 0.5 * (x.transpose() * h * x)[(0, 0)] + g.dot(x) + c,
            CostShape::Scalar(f) => f.value(x[0]),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.shape {
            CostShape::Quadratic { h, g, .. } => h * x + g,
            CostShape::Scalar(f) => DVector::from_element(1, f.gradient(x[0])),
        }
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.shape {
            CostShape::Quadratic { h, .. } => h.clone(),
            CostShape::Scalar(f) => DMatrix::from_element(1, 1, f.hessian(x[0])),
        }
    }
}

/// One agent: local cost, primal dimension, and (for dual-owning agents) its
/// constraint rows `Σ_j A_ij x_j = b_i`.
#[derive(Debug, Clone)]
pub struct Agent {
    pub name: String,
    /// Primal dimension n_i.
    pub n: usize,
    /// Dual dimension m_i (0 for agents without constraint rows).
    pub m: usize,
    pub cost: CostModel,
    /// Nonzero blocks of this agent's constraint rows, keyed by the column
    /// agent index j: `A_ij` of shape m_i × n_j.
    pub row_blocks: BTreeMap<usize, DMatrix<f64>>,
    /// Right-hand side b_i ∈ ℝ^{m_i}.
    pub b: DVector<f64>,
}

/// The separable program. Everything downstream (dynamics, LMIs, simulation)
/// is derived from this object.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub agents: Vec<Agent>,
    /// Per-coordinate operating box (used for curvature estimation, random
    /// state sampling, and spot checks). `box_low.len() == n`.
    pub box_low: DVector<f64>,
    pub box_high: DVector<f64>,
    /// Suggested primal start for demos and convergence tests.
    pub x0: DVector<f64>,
}

impl Problem {
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    /// Total primal dimension n = Σ n_i.
    pub fn primal_dim(&self) -> usize {
        self.agents.iter().map(|a| a.n).sum()
    }

    /// Total dual dimension m = Σ m_i.
    pub fn dual_dim(&self) -> usize {
        self.agents.iter().map(|a| a.m).sum()
    }

    /// Offset of agent i's primal block within the stacked x vector.
    pub fn x_offset(&self, i: usize) -> usize {
        self.agents[..i].iter().map(|a| a.n).sum()
    }

    /// Offset of agent i's dual block within the stacked λ vector.
    pub fn lambda_offset(&self, i: usize) -> usize {
        self.agents[..i].iter().map(|a| a.m).sum()
    }

    /// Dense constraint matrix A ∈ ℝ^{m×n} assembled from the blocks.
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.primal_dim(), self.dual_dim());
        let mut a = DMatrix::zeros(m, n);
        for (i, agent) in self.agents.iter().enumerate() {
            let ro = self.lambda_offset(i);
            for (&j, block) in &agent.row_blocks {
                let co = self.x_offset(j);
                a.view_mut((ro, co), (agent.m, self.agents[j].n))
                    .copy_from(block);
            }
        }
        a
    }

    /// Stacked right-hand side b ∈ ℝ^m.
    pub fn rhs(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.dual_dim());
        for (i, agent) in self.agents.iter().enumerate() {
            b.rows_mut(self.lambda_offset(i), agent.m).copy_from(&agent.b);
        }
        b
    }

    /// Σ_i f_i(x_i) for a stacked x.
    pub fn cost_value(&self, x: &DVector<f64>) -> f64 {
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.cost.value(&x.rows(self.x_offset(i), a.n).into_owned()))
            .sum()
    }

    /// Stacked gradient ∇f(x).
    pub fn cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.primal_dim());
        for (i, a) in self.agents.iter().enumerate() {
            let o = self.x_offset(i);
            let gi = a.cost.gradient(&x.rows(o, a.n).into_owned());
            g.rows_mut(o, a.n).copy_from(&gi);
        }
        g
    }

    /// Block-diagonal Hessian ∇²f(x).
    pub fn cost_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.primal_dim();
        let mut h = DMatrix::zeros(n, n);
        for (i, a) in self.agents.iter().enumerate() {
            let o = self.x_offset(i);
            let hi = a.cost.hessian(&x.rows(o, a.n).into_owned());
            h.view_mut((o, o), (a.n, a.n)).copy_from(&hi);
        }
        h
    }
}

/// The saddle point of the Lagrangian together with achieved residuals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktPoint {
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    /// ‖∇f(x*) + Aᵀλ*‖_∞
    pub stationarity_residual: f64,
    /// ‖A x* − b‖_∞
    pub feasibility_residual: f64,
    pub iterations: usize,
}

impl KktPoint {
    pub fn x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_star)
    }
    pub fn lambda(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.lambda_star)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("KKT Newton did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("Hessian evaluation returned a non-finite entry at sample point {at}")]
    EvaluatorFailure { at: f64 },
    #[error("problem file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A single validation finding. The list of violations is data, not a fault:
/// callers decide whether to proceed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Check dimension plumbing, curvature metadata, and constraint rank.
/// Returns every violated invariant; an empty list means the problem is
/// well-posed for synthesis and simulation.
pub fn validate_problem(p: &Problem) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |s: String| out.push(Violation(s));

    if p.agents.len() < 2 {
        push(format!("need at least 2 agents, got {}", p.agents.len()));
    }
    let n = p.primal_dim();
    let m = p.dual_dim();
    if m == 0 {
        push("no constraint rows: m must be at least 1".into());
    }
    if m >= n && n > 0 {
        push(format!("m = {m} must be strictly less than n = {n}"));
    }

    // dual-owning agents must come first so that block offsets are contiguous
    let mut seen_dualless = false;
    for (i, a) in p.agents.iter().enumerate() {
        if a.m == 0 {
            seen_dualless = true;
        } else if seen_dualless {
            push(format!(
                "agent {} owns dual rows but follows an agent without any; reorder so dual-owning agents lead",
                i + 1
            ));
        }
    }

    for (i, a) in p.agents.iter().enumerate() {
        let tag = format!("agent {}", i + 1);
        if a.n == 0 {
            push(format!("{tag}: primal dimension must be positive"));
        }
        if a.cost.dim() != a.n {
            push(format!(
                "{tag}: cost dimension {} does not match n_i = {}",
                a.cost.dim(),
                a.n
            ));
        }
        if !(a.cost.mu > 0.0) {
            push(format!("{tag}: mu must be positive, got {}", a.cost.mu));
        }
        if a.cost.ell < a.cost.mu {
            push(format!(
                "{tag}: ell = {} must be at least mu = {}",
                a.cost.ell, a.cost.mu
            ));
        }
        if matches!(a.cost.class, CurvatureClass::Quadratic)
            && !matches!(a.cost.shape, CostShape::Quadratic { .. })
        {
            push(format!("{tag}: quadratic curvature class requires a quadratic shape"));
        }
        // quadratic shapes: eigenvalues of H must respect [μ, ℓ]
        if let CostShape::Quadratic { h, .. } = &a.cost.shape {
            if h.nrows() != h.ncols() {
                push(format!("{tag}: quadratic H must be square"));
            } else {
                let sym = (h + h.transpose()) * 0.5;
                let eig = sym.symmetric_eigen();
                let lo = eig.eigenvalues.min();
                let hi = eig.eigenvalues.max();
                let tol = 1e-9 * (1.0 + hi.abs());
                if lo < a.cost.mu - tol {
                    push(format!(
                        "{tag}: H has eigenvalue {lo:.6} below declared mu {}",
                        a.cost.mu
                    ));
                }
                if hi > a.cost.ell + tol {
                    push(format!(
                        "{tag}: H has eigenvalue {hi:.6} above declared ell {}",
                        a.cost.ell
                    ));
                }
            }
        }
        if matches!(a.cost.class, CurvatureClass::Polytopic) {
            if a.cost.vertices.len() < 2 {
                push(format!("{tag}: polytopic class needs at least 2 Hessian vertices"));
            }
            for (k, v) in a.cost.vertices.iter().enumerate() {
                if v.nrows() != a.n || v.ncols() != a.n {
                    push(format!("{tag}: vertex {k} has wrong shape"));
                    continue;
                }
                let eig = ((v + v.transpose()) * 0.5).symmetric_eigen();
                let tol = 1e-9 * (1.0 + a.cost.ell.abs());
                if eig.eigenvalues.min() < a.cost.mu - tol
                    || eig.eigenvalues.max() > a.cost.ell + tol
                {
                    push(format!("{tag}: vertex {k} leaves the declared [mu, ell] interval"));
                }
            }
        }
        if a.row_blocks.is_empty() != (a.m == 0) {
            push(format!("{tag}: m_i = {} inconsistent with its constraint blocks", a.m));
        }
        if a.b.len() != a.m {
            push(format!("{tag}: b_i has length {} but m_i = {}", a.b.len(), a.m));
        }
        for (&j, block) in &a.row_blocks {
            if j >= p.agents.len() {
                push(format!("{tag}: constraint block references missing agent {}", j + 1));
            } else if block.nrows() != a.m || block.ncols() != p.agents[j].n {
                push(format!(
                    "{tag}: block A_{},{} has shape {}×{}, expected {}×{}",
                    i + 1,
                    j + 1,
                    block.nrows(),
                    block.ncols(),
                    a.m,
                    p.agents[j].n
                ));
            }
        }
    }

    if p.box_low.len() != n || p.box_high.len() != n {
        push(format!("operating box must have {n} coordinates"));
    } else if p.box_low.iter().zip(p.box_high.iter()).any(|(l, h)| l >= h) {
        push("operating box must have low < high in every coordinate".into());
    }
    if p.x0.len() != n {
        push(format!("x0 must have {n} coordinates, got {}", p.x0.len()));
    }

    if m > 0 && n > 0 {
        let a = p.constraint_matrix();
        let svd = a.svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-12 * smax.max(1.0))
            .count();
        if rank < m {
            push(format!("constraint matrix is rank deficient: rank {rank} < m = {m}"));
        }
    }

    out
}

/// Solve the KKT system by damped Newton with Armijo backtracking on the
/// residual norm. For all-quadratic costs this terminates after one step
/// (the KKT system is linear).
pub fn solve_kkt(p: &Problem, tol: f64, max_iter: usize) -> Result<KktPoint, ProblemError> {
    let n = p.primal_dim();
    let m = p.dual_dim();
    let a = p.constraint_matrix();
    let b = p.rhs();

    let mut x = p.x0.clone();
    if x.len() != n {
        x = DVector::zeros(n);
    }
    let mut lam = DVector::zeros(m);

    let residual = |x: &DVector<f64>, lam: &DVector<f64>| -> (DVector<f64>, f64) {
        let rx = p.cost_gradient(x) + a.transpose() * lam;
        let rl = &a * x - &b;
        let inf = rx.amax().max(if m > 0 { rl.amax() } else { 0.0 });
        let mut f = DVector::zeros(n + m);
        f.rows_mut(0, n).copy_from(&rx);
        f.rows_mut(n, m).copy_from(&rl);
        (f, inf)
    };

    let (mut f, mut inf) = residual(&x, &lam);
    let mut iterations = 0;
    while inf > tol {
        if iterations >= max_iter {
            return Err(ProblemError::NonConvergence { iterations, residual: inf });
        }
        // KKT Jacobian [H Aᵀ; A 0]
        let mut jac = DMatrix::zeros(n + m, n + m);
        jac.view_mut((0, 0), (n, n)).copy_from(&p.cost_hessian(&x));
        jac.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        jac.view_mut((n, 0), (m, n)).copy_from(&a);
        let lu = jac.full_piv_lu();
        let step = lu
            .solve(&(-&f))
            .ok_or(ProblemError::NonConvergence { iterations, residual: inf })?;

        // backtrack until the residual actually decreases
        let f2 = f.norm();
        let mut t = 1.0;
        loop {
            let xt = &x + step.rows(0, n) * t;
            let lt = &lam + step.rows(n, m) * t;
            let (ft, inft) = residual(&xt, &lt);
            if ft.norm() <= (1.0 - 0.25 * t) * f2 || t < 1e-4 {
                x = xt;
                lam = lt;
                f = ft;
                inf = inft;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if t < 1e-4 && inf > tol {
            return Err(ProblemError::NonConvergence { iterations, residual: inf });
        }
    }

    let rx = p.cost_gradient(&x) + a.transpose() * &lam;
    let rl = &a * &x - &b;
    Ok(KktPoint {
        x_star: x.iter().copied().collect(),
        lambda_star: lam.iter().copied().collect(),
        stationarity_residual: rx.amax(),
        feasibility_residual: if m > 0 { rl.amax() } else { 0.0 },
        iterations,
    })
}

/// Curvature range of a cost over a box: `(B_min, B_max)` with the true
/// Hessian satisfying `B_min ⪯ ∇²f(x) ⪯ B_max` coordinate-wise.
///
/// Built-in scalar forms and quadratics use exact global ranges (no
/// widening); anything else is sampled on a per-coordinate grid of `samples`
/// points and widened by `widen` of the observed spread on each side.
pub fn hessian_range(
    cost: &CostModel,
    box_low: &DVector<f64>,
    box_high: &DVector<f64>,
    samples: usize,
    widen: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ProblemError> {
    match &cost.shape {
        CostShape::Quadratic { h, .. } => Ok((h.clone(), h.clone())),
        CostShape::Scalar(form) => {
            if let Some((lo, hi)) = form.global_hessian_range() {
                return Ok((
                    DMatrix::from_element(1, 1, lo),
                    DMatrix::from_element(1, 1, hi),
                ));
            }
            // grid fallback for shapes without a closed-form range
            let (a, b) = (box_low[0], box_high[0]);
            let k = samples.max(2);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for s in 0..k {
                let x = a + (b - a) * (s as f64) / ((k - 1) as f64);
                let v = form.hessian(x);
                if !v.is_finite() {
                    return Err(ProblemError::EvaluatorFailure { at: x });
                }
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let spread = (hi - lo).max(0.0);
            Ok((
                DMatrix::from_element(1, 1, lo - widen * spread),
                DMatrix::from_element(1, 1, hi + widen * spread),
            ))
        }
    }
}

// ---------------------------------------------------------------------------
// JSON problem description
// ---------------------------------------------------------------------------

/// Serde mirror of the on-disk problem document. Kept separate from
/// [`Problem`] so the JSON stays hand-editable (nested arrays instead of
/// matrix internals).
#[derive(Debug, Serialize, Deserialize)]
struct ProblemDoc {
    format_version: u32,
    name: String,
    agents: Vec<AgentDoc>,
    #[serde(rename = "box")]
    operating_box: BoxDoc,
    #[serde(default)]
    x0: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentDoc {
    #[serde(default)]
    name: Option<String>,
    #[serde(default = "one")]
    dim: usize,
    cost: CostDoc,
    /// Curvature class; defaults to `quadratic` for quadratic costs and
    /// `polytopic` otherwise.
    #[serde(default)]
    class: Option<CurvatureClass>,
    #[serde(default)]
    mu: Option<f64>,
    #[serde(default)]
    ell: Option<f64>,
    /// Constraint blocks of this agent's dual rows, keyed by 1-based agent
    /// index. Row-major dense entries.
    #[serde(default)]
    blocks: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default)]
    b: Vec<f64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CostDoc {
    Quadratic {
        h: Vec<Vec<f64>>,
        #[serde(default)]
        g: Option<Vec<f64>>,
        #[serde(default)]
        c: f64,
    },
    LogSumExp { alphas: Vec<f64>, quad: f64 },
    SineQuadratic { amp: f64, freq: f64, quad: f64 },
    SqrtRatio { shift: f64, quad: f64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct BoxDoc {
    low: Vec<f64>,
    high: Vec<f64>,
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ProblemError> {
    let nr = rows.len();
    if nr == 0 {
        return Err(ProblemError::Parse(format!("{what}: empty matrix")));
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) {
        return Err(ProblemError::Parse(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// Parse a problem from its JSON document. Curvature constants are filled in
/// from [`hessian_range`] when not declared; polytopic vertices default to
/// the interval endpoints for scalar agents.
pub fn problem_from_json(text: &str) -> Result<Problem, ProblemError> {
    let doc: ProblemDoc =
        serde_json::from_str(text).map_err(|e| ProblemError::Parse(e.to_string()))?;
    if doc.format_version != 1 {
        return Err(ProblemError::Parse(format!(
            "unsupported format_version {}",
            doc.format_version
        )));
    }

    let mut agents = Vec::with_capacity(doc.agents.len());
    for (i, ad) in doc.agents.iter().enumerate() {
        let tag = || format!("agent {}", i + 1);
        let shape = match &ad.cost {
            CostDoc::Quadratic { h, g, c } => {
                let hm = rows_to_matrix(h, &format!("{} H", tag()))?;
                let gv = match g {
                    Some(v) => DVector::from_column_slice(v),
                    None => DVector::zeros(hm.nrows()),
                };
                CostShape::Quadratic { h: hm, g: gv, c: *c }
            }
            CostDoc::LogSumExp { alphas, quad } => {
                CostShape::Scalar(ScalarForm::LogSumExp { alphas: alphas.clone(), quad: *quad })
            }
            CostDoc::SineQuadratic { amp, freq, quad } => {
                CostShape::Scalar(ScalarForm::SineQuadratic { amp: *amp, freq: *freq, quad: *quad })
            }
            CostDoc::SqrtRatio { shift, quad } => {
                CostShape::Scalar(ScalarForm::SqrtRatio { shift: *shift, quad: *quad })
            }
        };
        let class = ad.class.unwrap_or(match shape {
            CostShape::Quadratic { .. } => CurvatureClass::Quadratic,
            CostShape::Scalar(_) => CurvatureClass::Polytopic,
        });
        let dim = match &shape {
            CostShape::Quadratic { h, .. } => h.nrows(),
            CostShape::Scalar(_) => 1,
        };
        if ad.dim != dim {
            return Err(ProblemError::Parse(format!(
                "{}: declared dim {} does not match cost dimension {}",
                tag(),
                ad.dim,
                dim
            )));
        }

        // curvature constants: declared, or estimated from the global range
        let probe = CostModel {
            shape: shape.clone(),
            class,
            mu: 1.0,
            ell: 1.0,
            bounds_source: BoundsSource::Declared,
            vertices: Vec::new(),
        };
        let lo_box = DVector::from_element(dim, -20.0);
        let hi_box = DVector::from_element(dim, 20.0);
        let (bmin, bmax) = hessian_range(&probe, &lo_box, &hi_box, 2001, 0.05)?;
        let est_mu = ((&bmin + bmin.transpose()) * 0.5).symmetric_eigen().eigenvalues.min();
        let est_ell = ((&bmax + bmax.transpose()) * 0.5).symmetric_eigen().eigenvalues.max();
        let declared = ad.mu.is_some() && ad.ell.is_some();
        let mu = ad.mu.unwrap_or(est_mu);
        let ell = ad.ell.unwrap_or(est_ell);

        let vertices = if class == CurvatureClass::Polytopic {
            if dim == 1 {
                vec![
                    DMatrix::from_element(1, 1, mu),
                    DMatrix::from_element(1, 1, ell),
                ]
            } else {
                vec![bmin.clone(), bmax.clone()]
            }
        } else {
            Vec::new()
        };

        let m = ad.b.len();
        let mut row_blocks = BTreeMap::new();
        for (key, rows) in &ad.blocks {
            let j: usize = key
                .parse::<usize>()
                .map_err(|_| ProblemError::Parse(format!("{}: bad block key '{key}'", tag())))?;
            if j == 0 {
                return Err(ProblemError::Parse(format!("{}: block keys are 1-based", tag())));
            }
            row_blocks.insert(j - 1, rows_to_matrix(rows, &format!("{} A block {key}", tag()))?);
        }

        agents.push(Agent {
            name: ad.name.clone().unwrap_or_else(|| format!("agent{}", i + 1)),
            n: dim,
            m,
            cost: CostModel {
                shape,
                class,
                mu,
                ell,
                bounds_source: if declared { BoundsSource::Declared } else { BoundsSource::Estimated },
                vertices,
            },
            row_blocks,
            b: DVector::from_column_slice(&ad.b),
        });
    }

    let n: usize = agents.iter().map(|a| a.n).sum();
    let x0 = match doc.x0 {
        Some(v) => DVector::from_column_slice(&v),
        None => DVector::zeros(n),
    };
    Ok(Problem {
        name: doc.name,
        agents,
        box_low: DVector::from_column_slice(&doc.operating_box.low),
        box_high: DVector::from_column_slice(&doc.operating_box.high),
        x0,
    })
}

/// Read and parse a problem file.
pub fn load_problem(path: &std::path::Path) -> Result<Problem, ProblemError> {
    let text = std::fs::read_to_string(path)?;
    problem_from_json(&text)
}

/// SHA-256 of the problem document text, recorded in certificates so a
/// certificate can be matched to the exact problem it was synthesized for.
pub fn problem_digest(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_quadratic(a: f64, center: f64) -> CostModel {
        // a (x - center)² = a x² - 2 a c x + a c²  →  H = 2a, g = -2ac
        CostModel {
            shape: CostShape::Quadratic {
                h: DMatrix::from_element(1, 1, 2.0 * a),
                g: DVector::from_element(1, -2.0 * a * center),
                c: a * center * center,
            },
            class: CurvatureClass::Quadratic,
            mu: 2.0 * a,
            ell: 2.0 * a,
            bounds_source: BoundsSource::Declared,
            vertices: Vec::new(),
        }
    }

    fn two_agent_chain(c1: CostModel, c2: CostModel) -> Problem {
        let mut blocks = BTreeMap::new();
        blocks.insert(0, DMatrix::from_element(1, 1, 1.0));
        blocks.insert(1, DMatrix::from_element(1, 1, -1.0));
        Problem {
            name: "two-agent".into(),
            agents: vec![
                Agent {
                    name: "a1".into(),
                    n: 1,
                    m: 1,
                    cost: c1,
                    row_blocks: blocks,
                    b: DVector::zeros(1),
                },
                Agent {
                    name: "a2".into(),
                    n: 1,
                    m: 0,
                    cost: c2,
                    row_blocks: BTreeMap::new(),
                    b: DVector::zeros(0),
                },
            ],
            box_low: DVector::from_element(2, -10.0),
            box_high: DVector::from_element(2, 10.0),
            x0: DVector::zeros(2),
        }
    }

    #[test]
    fn two_agent_symmetric_quadratic_kkt() {
        // f_i = x_i², consensus constraint → saddle point at the origin
        let p = two_agent_chain(scalar_quadratic(1.0, 0.0), scalar_quadratic(1.0, 0.0));
        assert!(validate_problem(&p).is_empty());
        let kkt = solve_kkt(&p, 1e-10, 50).unwrap();
        assert!(kkt.x_star.iter().all(|v| v.abs() < 1e-12));
        assert!(kkt.lambda_star.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_agent_asymmetric_kkt_closed_form() {
        // 0.9(x+1)² and (x-4)²: stationarity 1.8(x+1) + 2(x-4) = 0 → x = 6.2/3.8
        let p = two_agent_chain(scalar_quadratic(0.9, -1.0), scalar_quadratic(1.0, 4.0));
        let kkt = solve_kkt(&p, 1e-10, 50).unwrap();
        let expect = 6.2 / 3.8;
        assert_relative_eq!(kkt.x_star[0], expect, epsilon = 1e-9);
        assert_relative_eq!(kkt.x_star[1], expect, epsilon = 1e-9);
        // λ from agent-1 stationarity: 1.8(x+1) + λ = 0
        assert_relative_eq!(kkt.lambda_star[0], -1.8 * (expect + 1.0), epsilon = 1e-9);
        // quadratic costs: a single Newton step
        assert_eq!(kkt.iterations, 1);
    }

    #[test]
    fn kkt_is_idempotent() {
        let p = two_agent_chain(scalar_quadratic(0.9, -1.0), scalar_quadratic(1.0, 4.0));
        let kkt = solve_kkt(&p, 1e-10, 50).unwrap();
        let mut warm = p.clone();
        warm.x0 = kkt.x();
        let again = solve_kkt(&warm, 1e-10, 50).unwrap();
        assert!(again.iterations <= 2);
    }

    #[test]
    fn rank_deficient_constraints_flagged() {
        let mut p = two_agent_chain(scalar_quadratic(1.0, 0.0), scalar_quadratic(1.0, 0.0));
        // duplicate the same row twice → rank 1 with m = 2
        let mut blocks = BTreeMap::new();
        blocks.insert(0, DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        blocks.insert(1, DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        p.agents[0].m = 2;
        p.agents[0].row_blocks = blocks;
        p.agents[0].b = DVector::zeros(2);
        let viol = validate_problem(&p);
        assert!(viol.iter().any(|v| v.0.contains("rank deficient")), "{viol:?}");
    }

    #[test]
    fn nonpositive_mu_flagged() {
        let mut p = two_agent_chain(scalar_quadratic(1.0, 0.0), scalar_quadratic(1.0, 0.0));
        p.agents[1].cost.mu = 0.0;
        let viol = validate_problem(&p);
        assert!(viol.iter().any(|v| v.0.contains("mu must be positive")), "{viol:?}");
    }

    #[test]
    fn sine_quadratic_range_is_exact() {
        // sin(x/2) + x²/2 → f'' = 1 - sin(x/2)/4 ∈ [0.75, 1.25]
        let c = CostModel {
            shape: CostShape::Scalar(ScalarForm::SineQuadratic { amp: 1.0, freq: 0.5, quad: 0.5 }),
            class: CurvatureClass::Polytopic,
            mu: 0.75,
            ell: 1.25,
            bounds_source: BoundsSource::Declared,
            vertices: Vec::new(),
        };
        let lo = DVector::from_element(1, -10.0);
        let hi = DVector::from_element(1, 10.0);
        let (bmin, bmax) = hessian_range(&c, &lo, &hi, 100, 0.05).unwrap();
        assert_relative_eq!(bmin[(0, 0)], 0.75, epsilon = 1e-12);
        assert_relative_eq!(bmax[(0, 0)], 1.25, epsilon = 1e-12);
    }

    #[test]
    fn log_sum_exp_range_is_exact() {
        // ln(e^{-0.1x} + e^{0.3x}) + 0.9x² → f'' ∈ [1.8, 1.8 + 0.4²/4] = [1.8, 1.84]
        let c = CostModel {
            shape: CostShape::Scalar(ScalarForm::LogSumExp { alphas: vec![-0.1, 0.3], quad: 0.9 }),
            class: CurvatureClass::Polytopic,
            mu: 1.8,
            ell: 1.84,
            bounds_source: BoundsSource::Declared,
            vertices: Vec::new(),
        };
        let lo = DVector::from_element(1, -20.0);
        let hi = DVector::from_element(1, 20.0);
        let (bmin, bmax) = hessian_range(&c, &lo, &hi, 100, 0.05).unwrap();
        assert_relative_eq!(bmin[(0, 0)], 1.8, epsilon = 1e-12);
        assert_relative_eq!(bmax[(0, 0)], 1.84, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_range_is_tight() {
        let c = scalar_quadratic(0.5, 0.0); // 0.5 x² → H = 1
        let lo = DVector::from_element(1, -5.0);
        let hi = DVector::from_element(1, 5.0);
        let (bmin, bmax) = hessian_range(&c, &lo, &hi, 10, 0.05).unwrap();
        assert_eq!(bmin[(0, 0)], 1.0);
        assert_eq!(bmax[(0, 0)], 1.0);
    }

    #[test]
    fn sqrt_ratio_range_matches_analytic_extrema() {
        // x²/√(x²+9) + 0.6x²: max 1.2 + 2/3 at x = 0, min 1.2 - 2/(5^{5/2}·3) at x = ±6
        let c = CostModel {
            shape: CostShape::Scalar(ScalarForm::SqrtRatio { shift: 9.0, quad: 0.6 }),
            class: CurvatureClass::Polytopic,
            mu: 1.0,
            ell: 2.0,
            bounds_source: BoundsSource::Declared,
            vertices: Vec::new(),
        };
        let lo = DVector::from_element(1, -20.0);
        let hi = DVector::from_element(1, 20.0);
        let (bmin, bmax) = hessian_range(&c, &lo, &hi, 100, 0.05).unwrap();
        assert_relative_eq!(bmax[(0, 0)], 1.2 + 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(bmin[(0, 0)], 1.2 - 2.0 / (5.0_f64.powf(2.5) * 3.0), epsilon = 1e-12);
        // cross-check against direct evaluation at the analytic extremizers
        if let CostShape::Scalar(f) = &c.shape {
            assert_relative_eq!(f.hessian(0.0), bmax[(0, 0)], epsilon = 1e-12);
            assert_relative_eq!(f.hessian(6.0), bmin[(0, 0)], epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let forms = vec![
            ScalarForm::LogSumExp { alphas: vec![-0.1, 0.3], quad: 0.9 },
            ScalarForm::SineQuadratic { amp: 1.0, freq: 0.5, quad: 0.5 },
            ScalarForm::SqrtRatio { shift: 9.0, quad: 0.6 },
        ];
        for f in &forms {
            for k in 0..100 {
                let x = -8.0 + 16.0 * (k as f64) / 99.0;
                let h = 1e-5 * (1.0 + x.abs());
                let fd_g = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
                let fd_h = (f.gradient(x + h) - f.gradient(x - h)) / (2.0 * h);
                assert_relative_eq!(f.gradient(x), fd_g, epsilon = 1e-6, max_relative = 1e-5);
                assert_relative_eq!(f.hessian(x), fd_h, epsilon = 1e-6, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn problem_json_roundtrip() {
        let text = r#"{
            "format_version": 1,
            "name": "tiny",
            "agents": [
                {"cost": {"kind": "quadratic", "h": [[2.0]], "g": [0.0]}, "b": [0.0],
                 "blocks": {"1": [[1.0]], "2": [[-1.0]]}},
                {"cost": {"kind": "sine_quadratic", "amp": 1.0, "freq": 0.5, "quad": 0.5}}
            ],
            "box": {"low": [-10, -10], "high": [10, 10]}
        }"#;
        let p = problem_from_json(text).unwrap();
        assert!(validate_problem(&p).is_empty());
        assert_eq!(p.primal_dim(), 2);
        assert_eq!(p.dual_dim(), 1);
        // estimated curvature for the sine agent is the exact global range
        assert_relative_eq!(p.agents[1].cost.mu, 0.75, epsilon = 1e-12);
        assert_relative_eq!(p.agents[1].cost.ell, 1.25, epsilon = 1e-12);
        assert_eq!(p.agents[1].cost.bounds_source, BoundsSource::Estimated);
        assert_eq!(p.agents[1].cost.vertices.len(), 2);
    }
}
