//! Zero-order hybrid dynamics of a planar rigid body resting on two
//! unilateral frictional point contacts, and algorithmic classification of
//! its frictional equilibria as finite-time Lyapunov stable or unstable.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: physical parameters, the state-free acceleration tableau and
//!   per-contact-mode dynamics.
//! - [`consistency`]: kinematic admissibility and consistency of contact
//!   modes, equilibrium classification (ambiguity, Painlevé, persistence).
//! - [`impact`]: inelastic frictional impacts with the double-impact
//!   preference order.
//! - [`simulator`]: event-driven simulation with Zeno detection and the
//!   finite-time stability metrics.
//! - [`poincare`]: the reduced return map `R(φ)` and growth map `G(φ)`, fixed
//!   points, endpoint analysis, stable partitions and the stability verdict.
//! - [`biped`], [`sweep`], [`io`]: experiment geometry, parameter sweeps and
//!   file formats used by the command line tool.

pub mod biped;
pub mod cone;
pub mod consistency;
pub mod impact;
pub mod io;
pub mod model;
pub mod poincare;
pub mod simulator;
pub mod sweep;

pub use consistency::{
    admissible_modes, classify_equilibrium, consistent_modes, ContactStatus, EquilibriumClass,
    QualitativeState, Sign,
};
pub use impact::{energy_balance, resolve_impact, ImpactOutcome, TangentialRegime};
pub use model::{
    build_tableau, mode_dynamics, Configuration, ContactMode, ContactState, Letter, ModeSolution,
    ModelError, ZodTableau,
};
pub use poincare::{
    analyze, rg_eval, stability_verdict, Justification, RGMap, RGSample, StabilityReport,
    StabilityVerdict, Verdict,
};
pub use simulator::{simulate, SimOptions, Terminal, Trajectory};
