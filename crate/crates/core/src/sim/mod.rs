//! Numerical simulation of the hybrid automaton.
//!
//! Per mode, the affine dynamics are integrated with the adaptive embedded
//! Runge-Kutta 4(5) pair in [`rk45`]; every facet of the active mode's
//! invariant is monitored for sign changes and crossings are localized by
//! bisection on a cubic Hermite interpolant of the accepted step. Crossing a
//! facet fires the matching transition (identity reset); a crossing with no
//! matching transition is a model bug and is surfaced, never masked.
//!
//! Externally produced traces enter through [`ingest_external_trace`], which
//! labels samples by invariant membership and reconstructs events by linear
//! interpolation, so thresholds can be evaluated on simulator output that did
//! not come from this integrator.

mod rk45;
pub mod trace_io;

pub use rk45::{adaptive_step, hermite, raw_step, StepResult};

use nalgebra::DVector;
use thiserror::Error;

use crate::geometry::{GeometryError, LP_TOL};
use crate::model::{Mode, ModelError, Piha};

/// Containment tolerance when matching a localized crossing point against
/// transition guards; covers the state error of time-bisected events.
const EVENT_MATCH_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("integrator config invalid: {0}")]
    InvalidConfig(String),
    #[error("step size underflowed h_min at t = {t} (h = {h}); dynamics too stiff for the configured tolerances")]
    Stiffness { t: f64, h: f64 },
    #[error("state {state:?} violates the invariant of mode `{mode}` beyond tolerance")]
    StateOutsideInvariant { mode: String, state: Vec<f64> },
    #[error("initial state is not inside the initial continuous set")]
    NotInInitialSet,
    #[error("requested duration {requested} exceeds the automaton horizon {horizon}")]
    BeyondHorizon { requested: f64, horizon: f64 },
    #[error("mode `{mode}` invariant facet #{facet} crossed at t = {t} with no matching transition guard")]
    InvariantExitUnmatched { mode: String, facet: usize, t: f64 },
    #[error("more than {max_events} mode switches; Zeno behavior suspected")]
    ZenoSuspected { max_events: usize },
    #[error("two consecutive zero-duration mode switches at t = {t}")]
    ZeroDurationLoop { t: f64 },
    #[error("trace rows must have strictly increasing times (row {index})")]
    NonMonotoneTime { index: usize },
    #[error("trace row {index} has dimension {got}, expected {expected}")]
    DimensionDrift { index: usize, expected: usize, got: usize },
    #[error("trace format error: {0}")]
    TraceFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Adaptive integrator and event-localization settings.
#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Event localization tolerance (seconds).
    pub event_tol: f64,
    /// Mode-switch budget before Zeno behavior is suspected.
    pub max_events: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            h_init: 1e-4,
            h_min: 1e-12,
            h_max: 1e-2,
            event_tol: 1e-9,
            max_events: 100_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("h_init", self.h_init),
            ("h_min", self.h_min),
            ("h_max", self.h_max),
            ("event_tol", self.event_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return Err(SimError::InvalidConfig(format!(
                "need h_min <= h_init <= h_max, got {} / {} / {}",
                self.h_min, self.h_init, self.h_max
            )));
        }
        Ok(())
    }
}

/// One timestamped state sample with its active mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub x: DVector<f64>,
    pub mode: String,
}

/// A localized mode switch.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub t: f64,
    pub from: String,
    pub to: String,
}

/// Timestamped, mode-annotated state trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HybridTrace {
    pub samples: Vec<TracePoint>,
    pub events: Vec<TraceEvent>,
    /// Time at which the trajectory left the analysis region, when it did.
    pub left_analysis_region: Option<f64>,
}

impl HybridTrace {
    /// Structural invariants: strictly increasing times, fixed dimension,
    /// and mode changes only across recorded events.
    pub fn validate(&self) -> Result<(), SimError> {
        let Some(first) = self.samples.first() else { return Ok(()) };
        let dim = first.x.len();
        for (i, pair) in self.samples.windows(2).enumerate() {
            if pair[1].t <= pair[0].t {
                return Err(SimError::NonMonotoneTime { index: i + 1 });
            }
            if pair[1].x.len() != dim {
                return Err(SimError::DimensionDrift { index: i + 1, expected: dim, got: pair[1].x.len() });
            }
            if pair[0].mode != pair[1].mode {
                let backed = self.events.iter().any(|e| {
                    e.from == pair[0].mode
                        && e.to == pair[1].mode
                        && e.t >= pair[0].t - 1e-12
                        && e.t <= pair[1].t + 1e-12
                });
                if !backed {
                    return Err(SimError::TraceFormat(format!(
                        "mode changes {} -> {} between t = {} and t = {} without an event",
                        pair[0].mode, pair[1].mode, pair[0].t, pair[1].t
                    )));
                }
            }
        }
        Ok(())
    }

    /// Visited modes with consecutive repeats collapsed.
    pub fn mode_sequence(&self) -> Vec<String> {
        let mut seq: Vec<String> = Vec::new();
        for s in &self.samples {
            if seq.last().map(String::as_str) != Some(s.mode.as_str()) {
                seq.push(s.mode.clone());
            }
        }
        seq
    }

    /// Largest gap between consecutive sample times.
    pub fn max_sample_spacing(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|p| p[1].t - p[0].t)
            .fold(0.0, f64::max)
    }
}

/// Right-hand side of a mode's dynamics at a state. Defined everywhere, even
/// outside the invariant: integration may overshoot before the event is
/// localized.
pub fn eval_derivative(mode: &Mode, x: &DVector<f64>) -> Result<DVector<f64>, SimError> {
    Ok(mode.dynamics.eval(x)?)
}

/// Why a single-mode integration stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeExit {
    /// An invariant facet was crossed and this transition (index into
    /// `piha.transitions`) matched the crossing point.
    GuardHit { transition: usize },
    /// `t_max` was reached inside the invariant.
    Horizon,
}

/// Integrate one mode's dynamics from `(t0, x0)` until a guard crossing or
/// `t_max`. Returns the sampled partial trajectory (including the initial
/// point; the final entry is the localized crossing point on a guard hit)
/// together with the exit reason.
pub fn simulate_until_event(
    piha: &Piha,
    mode_idx: usize,
    x0: &DVector<f64>,
    t0: f64,
    t_max: f64,
    cfg: &IntegratorConfig,
) -> Result<(Vec<(f64, DVector<f64>)>, ModeExit), SimError> {
    cfg.validate()?;
    let mode = &piha.modes[mode_idx];
    if x0.len() != piha.dim {
        return Err(ModelError::DimensionMismatch { expected: piha.dim, got: x0.len() }.into());
    }

    let boundary_band = |norm: f64, x: &DVector<f64>| LP_TOL * norm.max(1e-300) * (1.0 + x.norm());

    // Precondition: x0 inside the invariant up to the boundary band.
    for hs in mode.invariant.constraints() {
        if hs.slack(x0) < -boundary_band(hs.normal.norm(), x0) {
            return Err(SimError::StateOutsideInvariant {
                mode: mode.id.clone(),
                state: x0.iter().copied().collect(),
            });
        }
    }

    let f = {
        let dynamics = mode.dynamics.clone();
        move |x: &DVector<f64>| dynamics.eval(x).expect("dimension checked above")
    };

    let mut samples = vec![(t0, x0.clone())];

    // A state sitting on a facet with outward flow exits immediately
    // (zero-duration segment).
    {
        let dx = f(x0);
        for (fi, hs) in mode.invariant.constraints().iter().enumerate() {
            let g = hs.slack(x0);
            let band = boundary_band(hs.normal.norm(), x0);
            if g.abs() <= band && -hs.normal.dot(&dx) < -band {
                let transition = match_transition(piha, mode_idx, x0, fi)?;
                return Ok((samples, ModeExit::GuardHit { transition }));
            }
        }
    }

    if t_max <= t0 {
        return Ok((samples, ModeExit::Horizon));
    }

    let mut t = t0;
    let mut x = x0.clone();
    let mut h = cfg.h_init;
    loop {
        let remaining = t_max - t;
        let clipped = remaining <= h;
        let h_try = h.min(remaining);
        let mut step_cfg = cfg.clone();
        if remaining < cfg.h_min {
            step_cfg.h_min = remaining;
        }
        let mut step = adaptive_step(&f, &x, t, h_try, &step_cfg)?;
        if clipped && step.t_next >= t_max {
            step.t_next = t_max;
        }

        // Facet monitoring on the accepted step.
        let mut earliest: Option<(f64, usize)> = None;
        for (fi, hs) in mode.invariant.constraints().iter().enumerate() {
            let g_prev = hs.slack(&x);
            let g_next = hs.slack(&step.x_next);
            if g_prev >= 0.0 && g_next < 0.0 {
                let tau = bisect_crossing(hs, t, &x, &step, cfg.event_tol);
                if earliest.map_or(true, |(best, _)| tau < best) {
                    earliest = Some((tau, fi));
                }
            }
        }
        if let Some((tau, fi)) = earliest {
            // Bisection on the Hermite interpolant pins the time; the state
            // is then re-integrated to tau so it carries no interpolation
            // error into the next mode.
            let x_cross = if tau > t { raw_step(&f, &x, tau - t) } else { x.clone() };
            let transition = match_transition(piha, mode_idx, &x_cross, fi)?;
            samples.push((tau, x_cross));
            return Ok((samples, ModeExit::GuardHit { transition }));
        }

        samples.push((step.t_next, step.x_next.clone()));
        t = step.t_next;
        x = step.x_next;
        h = step.h_next;
        if t >= t_max {
            return Ok((samples, ModeExit::Horizon));
        }
    }
}

/// Bisect the crossing time of invariant facet `hs` inside an accepted step,
/// to `event_tol` seconds, on the Hermite interpolant.
fn bisect_crossing(
    hs: &crate::geometry::Halfspace,
    t: f64,
    x: &DVector<f64>,
    step: &StepResult,
    event_tol: f64,
) -> f64 {
    let mut lo = t;
    let mut hi = step.t_next;
    while hi - lo > event_tol {
        let mid = 0.5 * (lo + hi);
        let xm = hermite(t, x, &step.deriv_start, step.t_next, &step.x_next, &step.deriv_end, mid);
        if hs.slack(&xm) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Find the transition out of `mode_idx` whose guard contains the crossing
/// point. Transitions whose target invariant also admits the point win over
/// bare guard matches.
fn match_transition(
    piha: &Piha,
    mode_idx: usize,
    x_cross: &DVector<f64>,
    facet: usize,
) -> Result<usize, SimError> {
    let mode = &piha.modes[mode_idx];
    let mut guard_only: Option<usize> = None;
    for (ti, tr) in piha.transitions.iter().enumerate() {
        if tr.source != mode.id {
            continue;
        }
        if !tr.guard.contains_point(x_cross, EVENT_MATCH_TOL)? {
            continue;
        }
        let target = piha.mode(&tr.target)?;
        if target.invariant.contains_point(x_cross, EVENT_MATCH_TOL)? {
            return Ok(ti);
        }
        guard_only.get_or_insert(ti);
    }
    guard_only.ok_or_else(|| SimError::InvariantExitUnmatched {
        mode: mode.id.clone(),
        facet,
        t: f64::NAN,
    })
}

/// Simulate the full hybrid run from `x0` over `[0, duration]`, chaining
/// single-mode integrations across guard events. The initial mode comes from
/// [`Piha::select_mode`]; leaving the analysis region ends the run and is
/// recorded on the trace rather than treated as an error.
pub fn simulate_hybrid(
    piha: &Piha,
    x0: &DVector<f64>,
    duration: f64,
    cfg: &IntegratorConfig,
) -> Result<HybridTrace, SimError> {
    cfg.validate()?;
    if duration > piha.horizon {
        return Err(SimError::BeyondHorizon { requested: duration, horizon: piha.horizon });
    }
    if !piha.ics.contains_point(x0, LP_TOL)? {
        return Err(SimError::NotInInitialSet);
    }
    let mut mode_idx = piha.select_mode(x0)?;

    let mut trace = HybridTrace {
        samples: vec![TracePoint { t: 0.0, x: x0.clone(), mode: piha.modes[mode_idx].id.clone() }],
        events: Vec::new(),
        left_analysis_region: None,
    };
    if duration <= 0.0 {
        return Ok(trace);
    }

    let mut t = 0.0;
    let mut x = x0.clone();
    let mut consecutive_zero = 0usize;
    loop {
        let (part, exit) = simulate_until_event(piha, mode_idx, &x, t, duration, cfg)?;
        let mode_name = piha.modes[mode_idx].id.clone();
        let mut left_ar = None;
        for (ts, xs) in part.into_iter().skip(1) {
            let inside = piha.analysis_region.contains_point(&xs, LP_TOL)?;
            trace.samples.push(TracePoint { t: ts, x: xs, mode: mode_name.clone() });
            if !inside {
                left_ar = Some(ts);
                break;
            }
        }
        if let Some(ts) = left_ar {
            trace.left_analysis_region = Some(ts);
            return Ok(trace);
        }
        match exit {
            ModeExit::Horizon => return Ok(trace),
            ModeExit::GuardHit { transition } => {
                let tr = &piha.transitions[transition];
                let last = trace.samples.last().expect("trace has samples");
                let (tau, x_cross) = (last.t, last.x.clone());
                trace.events.push(TraceEvent { t: tau, from: tr.source.clone(), to: tr.target.clone() });
                if trace.events.len() > cfg.max_events {
                    return Err(SimError::ZenoSuspected { max_events: cfg.max_events });
                }
                if tau <= t {
                    consecutive_zero += 1;
                    if consecutive_zero >= 2 {
                        return Err(SimError::ZeroDurationLoop { t: tau });
                    }
                } else {
                    consecutive_zero = 0;
                }
                mode_idx = piha
                    .mode_index(&tr.target)
                    .ok_or_else(|| ModelError::UnknownMode(tr.target.clone()))?;
                t = tau;
                x = x_cross;
                if t >= duration {
                    return Ok(trace);
                }
            }
        }
    }
}

/// Label an externally produced trace: each row's mode comes from invariant
/// membership (declaration-order tie-break), and an event is inserted at the
/// linearly interpolated facet crossing wherever consecutive rows land in
/// different modes.
pub fn ingest_external_trace(
    piha: &Piha,
    rows: &[(f64, DVector<f64>)],
) -> Result<HybridTrace, SimError> {
    let mut trace = HybridTrace::default();
    for (i, (t, x)) in rows.iter().enumerate() {
        if x.len() != piha.dim {
            return Err(SimError::DimensionDrift { index: i, expected: piha.dim, got: x.len() });
        }
        if i > 0 && *t <= rows[i - 1].0 {
            return Err(SimError::NonMonotoneTime { index: i });
        }
        let mode_idx = piha.select_mode(x)?;
        trace.samples.push(TracePoint { t: *t, x: x.clone(), mode: piha.modes[mode_idx].id.clone() });
    }
    for i in 1..trace.samples.len() {
        let (prev, next) = (&trace.samples[i - 1], &trace.samples[i]);
        if prev.mode == next.mode {
            continue;
        }
        let from_idx = piha.mode_index(&prev.mode).expect("label from select_mode");
        // Earliest invariant facet of the previous mode crossed between the
        // two samples, located by linear interpolation of its slack.
        let mut tau = 0.5 * (prev.t + next.t);
        let mut best = f64::INFINITY;
        for hs in piha.modes[from_idx].invariant.constraints() {
            let g0 = hs.slack(&prev.x);
            let g1 = hs.slack(&next.x);
            if g0 >= 0.0 && g1 < 0.0 {
                let theta = g0 / (g0 - g1);
                let cand = prev.t + theta * (next.t - prev.t);
                if cand < best {
                    best = cand;
                }
            }
        }
        if best.is_finite() {
            tau = best;
        }
        trace.events.push(TraceEvent { t: tau, from: prev.mode.clone(), to: next.mode.clone() });
    }
    trace.validate()?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fwr::{build_fwr_piha, CircuitParams};
    use crate::geometry::Polytope;
    use crate::model::{AffineDynamics, Mode, Transition};
    use nalgebra::DMatrix;

    fn fwr() -> Piha {
        build_fwr_piha(&CircuitParams::default(), (3.8, 4.2), 0.2).unwrap()
    }

    #[test]
    fn eval_derivative_fwr_spot_values() {
        let piha = fwr();
        let offoff = piha.mode("OffOff").unwrap();
        // Zero state: dvout/dt = -2 I0 / C = -0.02 V/s.
        let dx = eval_derivative(offoff, &DVector::zeros(3)).unwrap();
        assert!((dx[2] + 0.02).abs() < 1e-12, "got {}", dx[2]);
        // vout = 4: -4/(RC) - 2 I0/C = -40.02 V/s.
        let dx = eval_derivative(offoff, &DVector::from_row_slice(&[0.0, 5.0, 4.0])).unwrap();
        assert!((dx[2] + 40.02).abs() < 1e-9, "got {}", dx[2]);
        // OnOff at vin = 5, vout = 4: -40 + (0.1 - 1e-6)/1e-4 = 959.99 V/s.
        let onoff = piha.mode("OnOff").unwrap();
        let dx = eval_derivative(onoff, &DVector::from_row_slice(&[5.0, 0.0, 4.0])).unwrap();
        assert!((dx[2] - 959.99).abs() < 1e-9, "got {}", dx[2]);
    }

    #[test]
    fn horizon_exit_when_invariant_never_crossed() {
        // Single mode covering everything, dx/dt = -x.
        let piha = Piha {
            dim: 1,
            modes: vec![Mode {
                id: "only".into(),
                dynamics: AffineDynamics::new(
                    DMatrix::from_row_slice(1, 1, &[-1.0]),
                    DVector::zeros(1),
                )
                .unwrap(),
                invariant: Polytope::universe(1),
            }],
            transitions: vec![],
            ics: Polytope::from_box(&[1.0], &[1.0]).unwrap(),
            analysis_region: Polytope::from_box(&[-2.0], &[2.0]).unwrap(),
            horizon: 0.1,
        };
        let (samples, exit) = simulate_until_event(
            &piha,
            0,
            &DVector::from_row_slice(&[1.0]),
            0.0,
            0.1,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(exit, ModeExit::Horizon);
        let (t_end, x_end) = samples.last().unwrap();
        assert_eq!(*t_end, 0.1);
        let exact = (-0.1f64).exp();
        assert!((x_end[0] - exact).abs() < 1e-8);
    }

    #[test]
    fn zero_duration_trace() {
        let piha = fwr();
        let trace = simulate_hybrid(
            &piha,
            &DVector::from_row_slice(&[0.0, 5.0, 4.0]),
            0.0,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(trace.samples.len(), 1);
        assert_eq!(trace.samples[0].t, 0.0);
        assert_eq!(trace.samples[0].mode, "OffOff");
    }

    #[test]
    fn x0_outside_ics_rejected() {
        let piha = fwr();
        let err = simulate_hybrid(
            &piha,
            &DVector::from_row_slice(&[0.0, 5.0, 3.0]),
            0.01,
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SimError::NotInInitialSet));
    }

    #[test]
    fn duration_beyond_horizon_rejected() {
        let piha = fwr();
        let err = simulate_hybrid(
            &piha,
            &DVector::from_row_slice(&[0.0, 5.0, 4.0]),
            1.0,
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SimError::BeyondHorizon { .. }));
    }

    #[test]
    fn immediate_guard_hit_on_facet_with_outward_flow() {
        // mode L: x <= 1, dx/dt = +1; start exactly on x = 1. Mode R keeps
        // moving right so the run does not chatter on the boundary.
        let guard = Polytope::from_box(&[1.0], &[1.0]).unwrap();
        let piha = Piha {
            dim: 1,
            modes: vec![
                Mode {
                    id: "L".into(),
                    dynamics: AffineDynamics::new(DMatrix::zeros(1, 1), DVector::from_row_slice(&[1.0])).unwrap(),
                    invariant: Polytope::new(1, vec![crate::geometry::Halfspace::from_slice(&[1.0], 1.0)]).unwrap(),
                },
                Mode {
                    id: "R".into(),
                    dynamics: AffineDynamics::new(DMatrix::zeros(1, 1), DVector::from_row_slice(&[1.0])).unwrap(),
                    invariant: Polytope::new(1, vec![crate::geometry::Halfspace::from_slice(&[-1.0], -1.0)]).unwrap(),
                },
            ],
            transitions: vec![
                Transition { source: "L".into(), target: "R".into(), guard: guard.clone() },
                Transition { source: "R".into(), target: "L".into(), guard },
            ],
            ics: Polytope::from_box(&[1.0], &[1.0]).unwrap(),
            analysis_region: Polytope::from_box(&[-2.0], &[3.0]).unwrap(),
            horizon: 1.0,
        };
        let (samples, exit) = simulate_until_event(
            &piha,
            0,
            &DVector::from_row_slice(&[1.0]),
            0.0,
            1.0,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(samples.len(), 1);
        match exit {
            ModeExit::GuardHit { transition } => assert_eq!(piha.transitions[transition].target, "R"),
            other => panic!("expected guard hit, got {other:?}"),
        }
        // The full hybrid run bounces once (allowed) and then integrates R.
        let trace = simulate_hybrid(&piha, &DVector::from_row_slice(&[1.0]), 0.5, &IntegratorConfig::default()).unwrap();
        assert_eq!(trace.events.len(), 1);
        assert_eq!(trace.mode_sequence(), vec!["L".to_string(), "R".to_string()]);
        trace.validate().unwrap();
    }

    #[test]
    fn invariant_exit_without_transition_is_surfaced() {
        let piha = Piha {
            dim: 1,
            modes: vec![Mode {
                id: "only".into(),
                dynamics: AffineDynamics::new(DMatrix::zeros(1, 1), DVector::from_row_slice(&[1.0])).unwrap(),
                invariant: Polytope::new(1, vec![crate::geometry::Halfspace::from_slice(&[1.0], 1.0)]).unwrap(),
            }],
            transitions: vec![],
            ics: Polytope::from_box(&[0.0], &[0.0]).unwrap(),
            analysis_region: Polytope::from_box(&[-2.0], &[2.0]).unwrap(),
            horizon: 5.0,
        };
        let err = simulate_until_event(
            &piha,
            0,
            &DVector::from_row_slice(&[0.0]),
            0.0,
            5.0,
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SimError::InvariantExitUnmatched { .. }), "{err}");
    }

    #[test]
    fn fwr_first_conduction_event_matches_dense_oracle() {
        // Dense fixed-step RK4 reference for the first v1 = 0 crossing from
        // (0, A, 4). The sinusoid rises to meet the decaying vout at
        // t* ~ 2.8357e-3 s (the frozen value below comes from this oracle).
        let piha = fwr();
        let x0 = DVector::from_row_slice(&[0.0, 5.0, 4.0]);
        let offoff = piha.mode_index("OffOff").unwrap();
        let oracle_t = dense_rk4_first_crossing(&piha, offoff, &x0, 1e-8);
        assert!((oracle_t - 2.8357399e-3).abs() < 1e-8, "oracle drifted: {oracle_t}");

        let (samples, exit) = simulate_until_event(&piha, offoff, &x0, 0.0, 0.02, &IntegratorConfig::default()).unwrap();
        let (t_event, x_event) = samples.last().unwrap();
        match exit {
            ModeExit::GuardHit { transition } => {
                assert_eq!(piha.transitions[transition].source, "OffOff");
                assert_eq!(piha.transitions[transition].target, "OnOff");
            }
            other => panic!("expected guard hit, got {other:?}"),
        }
        assert!(
            (t_event - oracle_t).abs() < 1e-6,
            "event at {t_event}, oracle {oracle_t}"
        );
        // Crossing point sits on v1 = 0 within the event accuracy contract.
        let g = x_event[0] - x_event[2];
        let scale = 2.0f64.sqrt() * x_event.norm();
        assert!(g.abs() <= 1e-6 * scale, "|g| = {}", g.abs());
    }

    /// Fixed-step RK4 with linear interpolation at the sign change of
    /// v1 = x1 - vout. Independent of the adaptive integrator.
    fn dense_rk4_first_crossing(piha: &Piha, mode_idx: usize, x0: &DVector<f64>, h: f64) -> f64 {
        let dynamics = piha.modes[mode_idx].dynamics.clone();
        let f = |x: &DVector<f64>| dynamics.eval(x).unwrap();
        let mut x = x0.clone();
        let mut t = 0.0;
        let g = |x: &DVector<f64>| x[0] - x[2];
        let mut g_prev = g(&x);
        loop {
            let k1 = f(&x);
            let k2 = f(&(&x + &k1 * (h / 2.0)));
            let k3 = f(&(&x + &k2 * (h / 2.0)));
            let k4 = f(&(&x + &k3 * h));
            let x_next = &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            let g_next = g(&x_next);
            if g_prev < 0.0 && g_next >= 0.0 {
                return t + h * (-g_prev) / (g_next - g_prev);
            }
            x = x_next;
            t += h;
            g_prev = g_next;
            assert!(t < 0.02, "no crossing found by the oracle");
        }
    }

    #[test]
    fn fwr_mode_sequence_two_pulses_per_period() {
        let piha = fwr();
        let trace = simulate_hybrid(
            &piha,
            &DVector::from_row_slice(&[0.0, 5.0, 4.0]),
            0.1,
            &IntegratorConfig::default(),
        )
        .unwrap();
        trace.validate().unwrap();
        let seq = trace.mode_sequence();
        // Two conduction pulses per period, alternating polarity.
        assert!(seq.len() >= 9, "sequence too short: {seq:?}");
        assert_eq!(
            &seq[..5],
            &["OffOff", "OnOff", "OffOff", "OffOn", "OffOff"],
            "unexpected prefix: {seq:?}"
        );
        for (i, m) in seq.iter().enumerate() {
            if i % 2 == 0 {
                assert_eq!(m, "OffOff", "even entries must be OffOff: {seq:?}");
            }
        }
        // Conduction modes alternate OnOff / OffOn.
        let pulses: Vec<&String> = seq.iter().skip(1).step_by(2).collect();
        for pair in pulses.windows(2) {
            assert_ne!(pair[0], pair[1], "pulses must alternate: {seq:?}");
        }
    }

    #[test]
    fn fwr_trace_identity_and_oscillator_conservation() {
        let piha = fwr();
        let trace = simulate_hybrid(
            &piha,
            &DVector::from_row_slice(&[0.0, 5.0, 4.1]),
            0.1,
            &IntegratorConfig::default(),
        )
        .unwrap();
        let a2 = 25.0;
        for s in &trace.samples {
            let (v1, v2) = (s.x[0] - s.x[2], -s.x[0] - s.x[2]);
            assert!((v1 + v2 + 2.0 * s.x[2]).abs() < 1e-9);
            let energy = s.x[0] * s.x[0] + s.x[1] * s.x[1];
            assert!((energy - a2).abs() < 1e-6 * a2, "energy drift at t = {}: {energy}", s.t);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let piha = fwr();
        let x0 = DVector::from_row_slice(&[0.0, 5.0, 3.9]);
        let cfg = IntegratorConfig::default();
        let a = simulate_hybrid(&piha, &x0, 0.05, &cfg).unwrap();
        let b = simulate_hybrid(&piha, &x0, 0.05, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ingest_interpolates_crossing() {
        let piha = fwr();
        // Two synthetic samples straddling v1 = 0 inside the analysis region
        // (crossing from OffOff into OnOff as vin rises past vout).
        let rows = vec![
            (0.0, DVector::from_row_slice(&[0.5, 5.0, 1.0])),
            (1.0e-3, DVector::from_row_slice(&[1.5, 5.0, 1.0])),
        ];
        let trace = ingest_external_trace(&piha, &rows).unwrap();
        assert_eq!(trace.events.len(), 1);
        let e = &trace.events[0];
        assert_eq!((e.from.as_str(), e.to.as_str()), ("OffOff", "OnOff"));
        // v1 = x1 - 1 crosses zero halfway between x1 = 0.5 and 1.5.
        assert!((e.t - 0.5e-3).abs() < 1e-12, "t = {}", e.t);
    }

    #[test]
    fn ingest_single_mode_has_no_events() {
        let piha = fwr();
        let rows: Vec<(f64, DVector<f64>)> = (0..10)
            .map(|i| (i as f64 * 1e-4, DVector::from_row_slice(&[0.0, 5.0, 4.0])))
            .collect();
        let mut rows = rows;
        for (i, row) in rows.iter_mut().enumerate() {
            row.1[0] = -0.001 * i as f64; // stay in OffOff
        }
        let trace = ingest_external_trace(&piha, &rows).unwrap();
        assert!(trace.events.is_empty());
        assert!(trace.samples.iter().all(|s| s.mode == "OffOff"));
    }

    #[test]
    fn ingest_rejects_non_monotone_time() {
        let piha = fwr();
        let rows = vec![
            (0.0, DVector::from_row_slice(&[0.0, 5.0, 4.0])),
            (0.0, DVector::from_row_slice(&[0.0, 5.0, 4.0])),
        ];
        assert!(matches!(
            ingest_external_trace(&piha, &rows),
            Err(SimError::NonMonotoneTime { index: 1 })
        ));
    }
}
