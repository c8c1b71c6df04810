//! Delay differential equation simulation and certificate validation.
//!
//! Certificates produced by the synthesis path make two claims that can be
//! checked sample-by-sample on trajectories: the closed loop converges to
//! the saddle point for every admissible delay realization, and the
//! Lyapunov–Krasovskii functional
//!
//! ```text
//!     V(t) = [z̃; ũ]ᵀ [Y11 Y12; Y12ᵀ Y22] [z̃; ũ]
//!          + Σ_k ∫_{t−τ_k(t)}^{t} z̃ᵀ Q_k z̃ ds            (rate-bounded only)
//!          + Σ_k ∫_{t−h_k}^{t}    z̃ᵀ S_k z̃ ds
//!          + Σ_k h_k ∫_{−h_k}^{0} ∫_{t+θ}^{t} ż̃ᵀ R_k ż̃ ds dθ
//! ```
//!
//! decreases along them. This module provides both halves: a method-of-steps
//! RK4 integrator for the delayed flows of [`crate::structure`], and a
//! quadrature evaluator for V on the resulting trajectories.
//!
//! Integration scheme. Classical RK4 with a fixed step; delayed state
//! queries hit a dense history of accepted grid points and interpolate
//! linearly inside cells. History before the start time is held constant at
//! the initial state (the standard initialization for constant pre-history).
//! A query landing between the newest accepted point and the current RK
//! stage interpolates toward the stage state, so a zero delay reproduces the
//! stage state exactly and the integrator degenerates to ordinary RK4 — the
//! zero-delay run is bit-comparable to an undelayed one, which is the
//! cheapest end-to-end check of the history plumbing. Linear interpolation
//! caps the global order at two for genuinely delayed runs; the default step
//! of 1e−3 puts the interpolation error far below every tolerance used by
//! the validation suite (halving the step is the supported way to confirm a
//! number is quadrature-converged, see the tests).
//!
//! Functional evaluation. V needs z̃ over a lookback window and ż̃ under a
//! nested integral. The trajectory stores the right-hand side at every
//! accepted point, so both are available by the same linear interpolation.
//! The double integral is flattened by Fubini before discretizing:
//!
//! ```text
//!     ∫_{−h}^{0} ∫_{t+θ}^{t} g(s) ds dθ  =  ∫_{t−h}^{t} (s − t + h) g(s) ds,
//! ```
//!
//! leaving three weighted single integrals per channel, each handled by a
//! composite trapezoid rule over the grid cells with interpolated endpoint
//! values. Evaluation is only offered once the window fits inside recorded
//! history — V(t) before t0 + lookback would silently depend on the
//! constant-history convention, so it is an error instead.

use crate::lmi::DecisionVars;
use crate::structure::{rhs_augmented, rhs_standard, ErrorSystem, GainMatrix};
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;

/// Default integration step (seconds).
pub const DEFAULT_DT: f64 = 1e-3;

/// State-norm threshold beyond which a run is declared divergent.
pub const BLOW_UP: f64 = 1e9;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("need one delay signal per channel: got {given}, system has {expect}")]
    SignalCount { given: usize, expect: usize },
    #[error("bad simulation options: {0}")]
    BadOptions(String),
    #[error("V({t}) needs history back to {needed} but the trajectory starts at {start}")]
    Horizon { t: f64, needed: f64, start: f64 },
    #[error("functional evaluation needs an augmented trajectory (z and u states)")]
    NotAugmented,
    #[error("cannot parse delay signal `{0}`: expected const:τ | sin:h:d | saw:h:period | rand:h:dwell:seed")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A time-varying delay realization τ(t) ≥ 0.
///
/// Signals are pure functions of time — no hidden integrator state — so
/// delayed lookups stay deterministic and random-access. They are chosen
/// when simulating and are independent of the bounds a certificate was
/// synthesized for: validation sweeps deliberately drive delays past the
/// certified range.
#[derive(Debug, Clone, PartialEq)]
pub enum DelaySignal {
    /// τ(t) = τ₀.
    Constant(f64),
    /// τ(t) = (h/2)(1 + sin(2 d t / h)): range [0, h], rate within ±d.
    Sinusoid { h: f64, d: f64 },
    /// Ramp from 0 up to h over one period, then an instantaneous reset.
    /// The ramp rate is h/period — unconstrained, so this shape belongs to
    /// the fast-varying class and is only admissible against certificates
    /// synthesized with d = 1.
    Sawtooth { h: f64, period: f64 },
    /// Piecewise-constant levels drawn uniformly from [0, h], one per
    /// `dwell`-second interval, seeded (level i is a pure hash of i).
    PiecewiseRandom { h: f64, dwell: f64, seed: u64 },
}

impl DelaySignal {
    /// Largest value the signal can take; sizes the history lookback.
    pub fn max_delay(&self) -> f64 {
        match *self {
            DelaySignal::Constant(t) => t.max(0.0),
            DelaySignal::Sinusoid { h, .. }
            | DelaySignal::Sawtooth { h, .. }
            | DelaySignal::PiecewiseRandom { h, .. } => h.max(0.0),
        }
    }

    /// τ(t), clamped to be non-negative.
    pub fn value(&self, t: f64) -> f64 {
        let v = match *self {
            DelaySignal::Constant(tau) => tau,
            DelaySignal::Sinusoid { h, d } => {
                if h <= 0.0 {
                    0.0
                } else {
                    0.5 * h * (1.0 + (2.0 * d * t / h).sin())
                }
            }
            DelaySignal::Sawtooth { h, period } => {
                if h <= 0.0 || period <= 0.0 {
                    0.0
                } else {
                    h * (t.rem_euclid(period) / period)
                }
            }
            DelaySignal::PiecewiseRandom { h, dwell, seed } => {
                if h <= 0.0 || dwell <= 0.0 {
                    0.0
                } else {
                    let idx = (t / dwell).floor().max(0.0) as u64;
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(seed ^ idx.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    rng.gen_range(0.0..=h)
                }
            }
        };
        v.max(0.0)
    }
}

impl std::str::FromStr for DelaySignal {
    type Err = SimError;

    /// `const:0.2`, `sin:0.6:0.1`, `saw:0.6:2.5` (h:period), `rand:0.6:0.05:42`.
    fn from_str(s: &str) -> Result<Self, SimError> {
        let bad = || SimError::Parse(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
        match parts.as_slice() {
            ["const", tau] => {
                let tau = num(tau)?;
                if tau < 0.0 || !tau.is_finite() {
                    return Err(bad());
                }
                Ok(DelaySignal::Constant(tau))
            }
            ["sin", h, d] => Ok(DelaySignal::Sinusoid { h: num(h)?, d: num(d)? }),
            ["saw", h, period] => Ok(DelaySignal::Sawtooth { h: num(h)?, period: num(period)? }),
            ["rand", h, dwell, seed] => Ok(DelaySignal::PiecewiseRandom {
                h: num(h)?,
                dwell: num(dwell)?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Fixed-step integration options.
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Step size (seconds).
    pub dt: f64,
    /// Final time; the run covers [0, t_final].
    pub t_final: f64,
    /// Sup-norm threshold that stops a run as [`SimStatus::Diverged`].
    pub blow_up: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { dt: DEFAULT_DT, t_final: 100.0, blow_up: BLOW_UP }
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SimStatus {
    /// Reached t_final.
    Completed,
    /// State norm crossed the blow-up threshold at time t.
    Diverged { t: f64 },
}

/// Dense fixed-step trajectory: state and right-hand side at every accepted
/// grid point t_i = i·dt, including the initial condition.
///
/// For [`simulate_standard`] the state is the packed z = col_i(x_i, λ_i);
/// for [`simulate_augmented`] it is [z; u] with u the packed filter state.
/// `z_dim` is the length of the z prefix in either case.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    pub derivs: Vec<DVector<f64>>,
    pub status: SimStatus,
    pub z_dim: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Time of grid point i.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Last recorded time.
    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    /// Linear interpolation of the state at time t (clamped to the recorded
    /// range; constant before 0).
    pub fn sample(&self, t: f64) -> DVector<f64> {
        sample_grid(&self.states, self.dt, t)
    }

    /// Linear interpolation of the stored right-hand side at time t.
    pub fn sample_deriv(&self, t: f64) -> DVector<f64> {
        sample_grid(&self.derivs, self.dt, t)
    }
}

fn sample_grid(grid: &[DVector<f64>], dt: f64, t: f64) -> DVector<f64> {
    if t <= 0.0 || grid.len() == 1 {
        return grid[0].clone();
    }
    let last = grid.len() - 1;
    let pos = t / dt;
    if pos >= last as f64 {
        return grid[last].clone();
    }
    let i = pos.floor() as usize;
    let theta = pos - i as f64;
    if theta == 0.0 {
        grid[i].clone()
    } else {
        &grid[i] * (1.0 - theta) + &grid[i + 1] * theta
    }
}

fn check_options(opts: &SimOptions) -> Result<usize, SimError> {
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(SimError::BadOptions(format!("dt = {}", opts.dt)));
    }
    if !(opts.t_final >= opts.dt && opts.t_final.is_finite()) {
        return Err(SimError::BadOptions(format!("t_final = {}", opts.t_final)));
    }
    Ok((opts.t_final / opts.dt).round() as usize)
}

fn check_signals(sys: &ErrorSystem, signals: &[DelaySignal]) -> Result<(), SimError> {
    if signals.len() != sys.rho() {
        return Err(SimError::SignalCount { given: signals.len(), expect: sys.rho() });
    }
    Ok(())
}

/// Method-of-steps RK4 over the generic delayed field `f`.
///
/// `f(t, w, zdel)` receives the delayed packed z per channel through `zdel`;
/// the z prefix of the state vector is what delayed lookups return.
fn integrate<F>(w0: DVector<f64>, z_dim: usize, signals: &[DelaySignal], opts: &SimOptions, f: F) -> Trajectory
where
    F: Fn(f64, &DVector<f64>, &dyn Fn(usize) -> DVector<f64>) -> DVector<f64>,
{
    let dt = opts.dt;
    let steps = (opts.t_final / dt).round() as usize;
    let mut states: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
    let mut derivs: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
    let mut status = SimStatus::Completed;

    // delayed z lookup for a stage at (ts, ws): constant history before 0,
    // linear interpolation inside accepted cells, and interpolation toward
    // the live stage state past the newest accepted point
    let lookup = |states: &Vec<DVector<f64>>, ts: f64, ws: &DVector<f64>, k: usize| {
        let s = ts - signals[k].value(ts);
        if s >= ts {
            return ws.rows(0, z_dim).into_owned();
        }
        if s <= 0.0 {
            return states[0].rows(0, z_dim).into_owned();
        }
        let last = states.len() - 1;
        let t_last = last as f64 * dt;
        if s >= t_last {
            let theta = (s - t_last) / (ts - t_last);
            return (states[last].rows(0, z_dim) * (1.0 - theta) + ws.rows(0, z_dim) * theta)
                .into_owned();
        }
        let pos = s / dt;
        let i = pos.floor() as usize;
        let theta = pos - i as f64;
        (states[i].rows(0, z_dim) * (1.0 - theta) + states[i + 1].rows(0, z_dim) * theta)
            .into_owned()
    };

    let eval = |states: &Vec<DVector<f64>>, ts: f64, ws: &DVector<f64>| -> DVector<f64> {
        f(ts, ws, &|k| lookup(states, ts, ws, k))
    };

    let d0 = eval(&states_seed(&w0), 0.0, &w0);
    states.push(w0);
    derivs.push(d0);

    for j in 0..steps {
        let t = j as f64 * dt;
        let w = states[j].clone();
        let k1 = derivs[j].clone();
        let k2 = eval(&states, t + 0.5 * dt, &(&w + &k1 * (0.5 * dt)));
        let k3 = eval(&states, t + 0.5 * dt, &(&w + &k2 * (0.5 * dt)));
        let k4 = eval(&states, t + dt, &(&w + &k3 * dt));
        let w_next = &w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

        let worst = w_next.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if !worst.is_finite() || worst > opts.blow_up {
            status = SimStatus::Diverged { t: t + dt };
            states.push(w_next.clone());
            derivs.push(DVector::zeros(w_next.len()));
            break;
        }
        let d_next = eval(&states, t + dt, &w_next);
        states.push(w_next);
        derivs.push(d_next);
    }

    Trajectory { dt, states, derivs, status, z_dim }
}

// the very first RHS evaluation has no accepted points yet; hand it the
// initial state as its whole history
fn states_seed(w0: &DVector<f64>) -> Vec<DVector<f64>> {
    vec![w0.clone()]
}

/// Simulate the standard (gain-free) primal-dual flow with delayed
/// cross-agent coupling, from stacked initial (x₀, λ₀).
pub fn simulate_standard(
    sys: &ErrorSystem,
    x0: &DVector<f64>,
    lam0: &DVector<f64>,
    signals: &[DelaySignal],
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    check_options(opts)?;
    check_signals(sys, signals)?;
    let layout = &sys.layout;
    let w0 = layout.pack(x0, lam0);
    let r = layout.r;
    let traj = integrate(w0, r, signals, opts, |_t, w, zdel| {
        let (x, lam) = layout.unpack(&w.rows(0, r).into_owned());
        let (dx, dl) = rhs_standard(sys, &x, &lam, zdel);
        layout.pack(&dx, &dl)
    });
    Ok(traj)
}

/// Simulate the augmented flow (gain feedback plus first-order filter) from
/// stacked initial (x₀, λ₀, u1₀, u2₀). State layout: [z; u].
pub fn simulate_augmented(
    sys: &ErrorSystem,
    gain: &GainMatrix,
    x0: &DVector<f64>,
    lam0: &DVector<f64>,
    u10: &DVector<f64>,
    u20: &DVector<f64>,
    signals: &[DelaySignal],
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    check_options(opts)?;
    check_signals(sys, signals)?;
    let layout = &sys.layout;
    let r = layout.r;
    let mut w0 = DVector::zeros(2 * r);
    w0.rows_mut(0, r).copy_from(&layout.pack(x0, lam0));
    w0.rows_mut(r, r).copy_from(&layout.pack(u10, u20));
    let traj = integrate(w0, r, signals, opts, |_t, w, zdel| {
        let (x, lam) = layout.unpack(&w.rows(0, r).into_owned());
        let (u1, u2) = layout.unpack(&w.rows(r, r).into_owned());
        let (dx, dl, du1, du2) = rhs_augmented(sys, gain, &x, &lam, &u1, &u2, zdel);
        let mut dw = DVector::zeros(2 * r);
        dw.rows_mut(0, r).copy_from(&layout.pack(&dx, &dl));
        dw.rows_mut(r, r).copy_from(&layout.pack(&du1, &du2));
        dw
    });
    Ok(traj)
}

/// The Lyapunov–Krasovskii functional sampled along a trajectory.
#[derive(Debug, Clone)]
pub struct LkfSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Lookback needed before V(t) is fully determined by recorded history.
fn lookback(sys: &ErrorSystem, signals: &[DelaySignal]) -> f64 {
    sys.edges
        .iter()
        .zip(signals)
        .map(|(e, s)| e.h.max(s.max_delay()))
        .fold(0.0, f64::max)
}

/// Evaluate V at a single time on an augmented trajectory.
///
/// Errors with [`SimError::Horizon`] when t − lookback < 0: the functional
/// would then read invented (constant) pre-history rather than the actual
/// flow, and a monotonicity check against such values is meaningless.
pub fn lkf_at(
    sys: &ErrorSystem,
    vars: &DecisionVars,
    traj: &Trajectory,
    signals: &[DelaySignal],
    t: f64,
) -> Result<f64, SimError> {
    check_signals(sys, signals)?;
    let r = sys.layout.r;
    if traj.states[0].len() != 2 * r || traj.z_dim != r {
        return Err(SimError::NotAugmented);
    }
    let need = lookback(sys, signals);
    if t - need < 0.0 || t > traj.t_end() + 1e-12 {
        return Err(SimError::Horizon { t, needed: t - need, start: 0.0 });
    }

    let z_star = sys.layout.pack(&sys.kkt.x(), &sys.kkt.lambda());
    let zt = |s: f64| -> DVector<f64> { traj.sample(s).rows(0, r) - &z_star };
    let ut = |s: f64| -> DVector<f64> { traj.sample(s).rows(r, r) - &z_star };
    let zdot = |s: f64| -> DVector<f64> { traj.sample_deriv(s).rows(0, r).into_owned() };

    // V1: quadratic in the stacked (z̃, ũ)
    let z0 = zt(t);
    let u0 = ut(t);
    let mut v = (z0.transpose() * &vars.y11 * &z0)[(0, 0)]
        + 2.0 * (z0.transpose() * &vars.y12 * &u0)[(0, 0)]
        + (u0.transpose() * &vars.y22 * &u0)[(0, 0)];

    for (k, e) in sys.edges.iter().enumerate() {
        // V2: running-delay window against Q_k (absent for fast-varying)
        if let Some(q) = &vars.q_k[k] {
            let tau = signals[k].value(t);
            v += trapezoid(t - tau, t, traj.dt, |s| {
                let z = zt(s);
                (z.transpose() * q * &z)[(0, 0)]
            });
        }
        // V3: full-bound window against S_k
        let s_k = &vars.s_k[k];
        v += trapezoid(t - e.h, t, traj.dt, |s| {
            let z = zt(s);
            (z.transpose() * s_k * &z)[(0, 0)]
        });
        // V4: Fubini-flattened double integral, weight (s − t + h)
        let r_k = &vars.r_k[k];
        v += e.h
            * trapezoid(t - e.h, t, traj.dt, |s| {
                let zd = zdot(s);
                (s - t + e.h) * (zd.transpose() * r_k * &zd)[(0, 0)]
            });
    }
    Ok(v)
}

/// Evaluate V on every `stride`-th grid point from the first admissible one.
pub fn evaluate_lkf(
    sys: &ErrorSystem,
    vars: &DecisionVars,
    traj: &Trajectory,
    signals: &[DelaySignal],
    stride: usize,
) -> Result<LkfSeries, SimError> {
    let stride = stride.max(1);
    let need = lookback(sys, signals);
    let first = (need / traj.dt).ceil() as usize;
    if first >= traj.len() {
        return Err(SimError::Horizon { t: traj.t_end(), needed: need, start: 0.0 });
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut i = first;
    while i < traj.len() {
        let t = traj.time(i);
        times.push(t);
        values.push(lkf_at(sys, vars, traj, signals, t)?);
        i += stride;
    }
    Ok(LkfSeries { times, values })
}

/// Composite trapezoid of `g` over [a, b] on a dt grid: full cells inside,
/// interpolated partial cells at both ends.
fn trapezoid<G: Fn(f64) -> f64>(a: f64, b: f64, dt: f64, g: G) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut total = 0.0;
    let mut s_prev = a;
    let mut g_prev = g(a);
    // first grid node strictly after a (fp-jitter tolerant)
    let mut i = (a / dt).floor() as i64 + 1;
    loop {
        let s = i as f64 * dt;
        if s >= b - 1e-12 * (1.0 + b.abs()) {
            break;
        }
        if s > s_prev {
            let g_s = g(s);
            total += 0.5 * (g_prev + g_s) * (s - s_prev);
            s_prev = s;
            g_prev = g_s;
        }
        i += 1;
    }
    total += 0.5 * (g_prev + g(b)) * (b - s_prev);
    total
}

/// Outcome of the windowed convergence test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StabilityClass {
    Converged,
    Oscillating,
    Diverged,
}

/// Default absolute tolerance on the tail sup of ‖z̃‖∞ for calling a run
/// converged.
pub const CLASSIFY_TOL: f64 = 1e-4;

/// Windowed verdict on a finished run: a blow-up marker is divergence; a
/// trailing-window sup of ‖z̃‖∞ below `tol` is convergence; everything else
/// is a bounded non-vanishing residual — oscillation (or drift) around a
/// point that is not the saddle. `frac` sets the trailing window as a
/// fraction of the run.
pub fn classify_stability(
    traj: &Trajectory,
    z_star: &DVector<f64>,
    frac: f64,
    tol: f64,
) -> StabilityClass {
    if matches!(traj.status, SimStatus::Diverged { .. }) {
        return StabilityClass::Diverged;
    }
    let frac = frac.clamp(0.01, 0.5);
    let n = traj.len();
    let w = ((n as f64 * frac).ceil() as usize).max(1);
    let err = |i: usize| -> f64 {
        let z = traj.states[i].rows(0, traj.z_dim) - z_star;
        z.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    };
    let tail = (n - w..n).map(err).fold(0.0f64, f64::max);
    if tail < tol {
        StabilityClass::Converged
    } else {
        StabilityClass::Oscillating
    }
}

/// Machine-readable run summary.
#[derive(Debug, Clone, Serialize)]
pub struct SimSummary {
    pub t_final: f64,
    pub steps: usize,
    pub status: SimStatus,
    /// ‖z(t_end) − z*‖∞ when a reference is supplied.
    pub final_error_inf: Option<f64>,
    pub classification: Option<StabilityClass>,
}

pub fn summarize(traj: &Trajectory, z_star: Option<&DVector<f64>>) -> SimSummary {
    let final_error_inf = z_star.map(|zs| {
        let z = traj.states[traj.len() - 1].rows(0, traj.z_dim) - zs;
        z.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    });
    SimSummary {
        t_final: traj.t_end(),
        steps: traj.len() - 1,
        status: traj.status,
        final_error_inf,
        classification: z_star.map(|zs| classify_stability(traj, zs, 0.2, CLASSIFY_TOL)),
    }
}

/// Write the trajectory as CSV: time, state coordinates (z then u), the
/// realized delays τ_k, ‖z̃‖∞ when a reference is supplied, and the
/// functional value when a sampled series is supplied (rows without a sample
/// leave the V cell empty). `stride` decimates rows.
pub fn write_trace_csv(
    out: &mut dyn Write,
    traj: &Trajectory,
    signals: &[DelaySignal],
    z_star: Option<&DVector<f64>>,
    lkf: Option<&LkfSeries>,
    stride: usize,
) -> std::io::Result<()> {
    let stride = stride.max(1);
    let dim = traj.states[0].len();
    let mut header = vec!["t".to_string()];
    for i in 0..traj.z_dim {
        header.push(format!("z{i}"));
    }
    for i in 0..dim - traj.z_dim {
        header.push(format!("u{i}"));
    }
    for k in 0..signals.len() {
        header.push(format!("tau{k}"));
    }
    if z_star.is_some() {
        header.push("err_inf".to_string());
    }
    if lkf.is_some() {
        header.push("V".to_string());
    }
    writeln!(out, "{}", header.join(","))?;
    let mut next_v = 0usize;
    let mut i = 0;
    while i < traj.len() {
        let t = traj.time(i);
        let w = &traj.states[i];
        let mut row = Vec::with_capacity(header.len());
        row.push(format!("{t}"));
        for v in w.iter() {
            row.push(format!("{v}"));
        }
        for sig in signals {
            row.push(format!("{}", sig.value(t)));
        }
        if let Some(zs) = z_star {
            let e = (w.rows(0, traj.z_dim) - zs).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            row.push(format!("{e}"));
        }
        if let Some(series) = lkf {
            while next_v < series.times.len() && series.times[next_v] < t - 0.5 * traj.dt {
                next_v += 1;
            }
            if next_v < series.times.len()
                && (series.times[next_v] - t).abs() <= 0.5 * traj.dt
            {
                row.push(format!("{}", series.values[next_v]));
                next_v += 1;
            } else {
                row.push(String::new());
            }
        }
        writeln!(out, "{}", row.join(","))?;
        i += stride;
    }
    Ok(())
}
