//! Safety verification engine for polyhedral-invariant hybrid automata.
//!
//! The pipeline mirrors a simulate / explore / verify workflow:
//!
//! * [`sim`] integrates the switched affine dynamics with adaptive
//!   Runge-Kutta stepping and bisection-localized guard events, producing
//!   [`sim::HybridTrace`] values; externally produced traces can be ingested
//!   and labeled through the same machinery.
//! * [`flowpipe`] over-approximates the reachable set from a polyhedral
//!   initial set as a sequence of overlapping polyhedral segments per mode,
//!   chained across discrete transitions by a worklist.
//! * [`checker`] evaluates AG-safety specifications on traces (explore) and
//!   on flow-pipes (verify), refining the initial set by bisection when a
//!   flow-pipe violation cannot be confirmed by a concrete trajectory.
//!
//! [`geometry`] supplies the halfspace polytopes and LP-backed queries that
//! everything above is built on, and [`fwr`] instantiates the bundled
//! full-wave rectifier case study.

pub mod checker;
pub mod flowpipe;
pub mod fwr;
pub mod geometry;
pub mod model;
pub mod sim;

pub use geometry::{Feasibility, GeometryError, Halfspace, Polytope, SampleStrategy};
pub use model::{AffineDynamics, Diagnostic, Mode, ModelError, Piha, SafetySpec, Transition};
