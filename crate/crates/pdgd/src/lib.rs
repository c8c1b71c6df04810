//! Delay-robust primal-dual gradient dynamics (PDGD) toolkit.
//!
//! Solves three related tasks for equality-constrained separable convex
//! programs `min Σ f_i(x_i) s.t. A x = b` running as a continuous-time
//! primal-dual flow over a network with bounded time-varying communication
//! delays:
//!
//! 1. **Synthesis** — find per-agent gain blocks for an augmented PDGD so
//!    that the delayed closed loop is certifiably asymptotically stable
//!    (module [`synthesis`], built on [`lmi`] + [`sdp`]).
//! 2. **Certification** — express delay-dependent stability as the
//!    feasibility of a block LMI derived from a Lyapunov–Krasovskii
//!    functional, solved by an embedded interior-point method.
//! 3. **Validation** — integrate the delayed dynamics as a DDE, evaluate the
//!    Lyapunov–Krasovskii functional along trajectories, and classify
//!    empirical stability (module [`simulate`]).
//!
//! The [`problem`] module defines the program and an independent KKT oracle;
//! [`structure`] assembles the compact error dynamics (state layout, delay
//! edges, gain blocks) that both the LMI and the simulator consume.

pub mod lmi;
pub mod problem;
pub mod sdp;
pub mod simulate;
pub mod structure;
pub mod synthesis;
