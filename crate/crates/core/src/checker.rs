//! Safety checking: trace-level (explore) and flow-pipe (verify) with
//! initial-set refinement.
//!
//! The specification fragment is conjunctions of "AG not p" with `p` a
//! polyhedral region, optionally mode-qualified, plus the implicit
//! "AG inside the analysis region". A flow-pipe violation is only a
//! *possible* violation because the pipe over-approximates; it is confirmed
//! by simulating from the offending initial-set partition, and refuted by
//! bisecting that partition and trying again at smaller scale. Counterexamples
//! are therefore always concrete trajectories, never geometry artifacts.

use std::time::Instant;

use nalgebra::DVector;
use thiserror::Error;

use crate::flowpipe::{reach_sets, FlowpipeSegment, ReachConfig, ReachError};
use crate::geometry::{GeometryError, Halfspace, Polytope, SampleStrategy, LP_TOL};
use crate::model::{Diagnostic, ModelError, Piha, SafetySpec};
use crate::sim::{simulate_hybrid, HybridTrace, IntegratorConfig, SimError};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("model failed validation with {0:?}")]
    InvalidModel(Vec<Diagnostic>),
    #[error("partition has no axis of positive width left to split")]
    Unsplittable,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which conjunct of the safety formula failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conjunct {
    /// An avoid region was entered (index into `spec.avoid_regions`).
    Avoid { region: usize },
    /// The trajectory left the analysis region.
    OutOfBound,
}

impl std::fmt::Display for Conjunct {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Conjunct::Avoid { region } => write!(f, "avoid[{region}]"),
            Conjunct::OutOfBound => write!(f, "out_of_bound"),
        }
    }
}

/// Earliest point at which a trace violates the specification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub t: f64,
    pub conjunct: Conjunct,
}

/// Sample-wise AG check of one trace: unsafe iff any sample lies in a
/// matching avoid region or outside the analysis region. Returns the
/// earliest violation.
pub fn check_trace_safety(
    trace: &HybridTrace,
    spec: &SafetySpec,
    piha: &Piha,
) -> Result<(bool, Option<Violation>), CheckError> {
    for sample in &trace.samples {
        for (ri, avoid) in spec.avoid_regions.iter().enumerate() {
            if let Some(mode) = &avoid.mode {
                if *mode != sample.mode {
                    continue;
                }
            }
            if avoid.region.contains_point(&sample.x, 0.0)? {
                return Ok((false, Some(Violation { t: sample.t, conjunct: Conjunct::Avoid { region: ri } })));
            }
        }
        if !piha.analysis_region.contains_point(&sample.x, LP_TOL)? {
            return Ok((false, Some(Violation { t: sample.t, conjunct: Conjunct::OutOfBound })));
        }
    }
    Ok((true, None))
}

/// Outcome of simulating and checking one initial point.
#[derive(Debug)]
pub enum PointOutcome {
    Safe,
    Unsafe { trace: HybridTrace, violation: Violation },
    /// Simulation failed; other points are still processed.
    Error(String),
}

#[derive(Debug)]
pub struct PointReport {
    pub x0: DVector<f64>,
    pub outcome: PointOutcome,
}

#[derive(Debug)]
pub struct ExploreReport {
    /// True iff every sampled initial point simulated successfully and
    /// satisfied the specification.
    pub all_safe: bool,
    pub points: Vec<PointReport>,
}

/// Simulate from the vertices and Chebyshev center of the initial set over
/// the full horizon and check each trace. Any unsafe trace is returned
/// verbatim as a concrete counterexample candidate.
pub fn explore(
    piha: &Piha,
    spec: &SafetySpec,
    cfg: &IntegratorConfig,
) -> Result<ExploreReport, CheckError> {
    let points = piha.ics.sample_points(SampleStrategy::VerticesPlusCenter)?;
    let mut reports = Vec::with_capacity(points.len());
    for x0 in points {
        let outcome = match simulate_hybrid(piha, &x0, piha.horizon, cfg) {
            Ok(trace) => match check_trace_safety(&trace, spec, piha)? {
                (true, _) => PointOutcome::Safe,
                (false, Some(violation)) => PointOutcome::Unsafe { trace, violation },
                (false, None) => unreachable!("unsafe verdict always carries a violation"),
            },
            Err(e) => PointOutcome::Error(e.to_string()),
        };
        reports.push(PointReport { x0, outcome });
    }
    let all_safe = reports.iter().all(|r| matches!(r.outcome, PointOutcome::Safe));
    Ok(ExploreReport { all_safe, points: reports })
}

/// How refinement picks the axis to bisect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    /// Bisect the widest bounding-box axis.
    WidestAxis,
    /// Bisect axis `k mod dim` (falling back to the widest when that axis is
    /// flat).
    RoundRobin(usize),
}

/// Bisect a bounded polytope along one bounding-box axis. The two children
/// union to the parent exactly and have disjoint interiors.
pub fn refine_ics(p: &Polytope, rule: SplitRule) -> Result<(Polytope, Polytope), CheckError> {
    let (lo, hi) = p.bounding_box()?;
    let widths: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
    // Lowest index wins ties, so splits are deterministic.
    let mut widest = 0;
    for (i, w) in widths.iter().enumerate().skip(1) {
        if *w > widths[widest] {
            widest = i;
        }
    }
    let axis = match rule {
        SplitRule::WidestAxis => widest,
        SplitRule::RoundRobin(k) => {
            let k = k % widths.len();
            if widths[k] > 1e-9 {
                k
            } else {
                widest
            }
        }
    };
    if widths[axis] <= 1e-9 {
        return Err(CheckError::Unsplittable);
    }
    let mid = 0.5 * (lo[axis] + hi[axis]);
    let mut up = DVector::zeros(p.dim());
    up[axis] = 1.0;
    let below = p.intersect(&Polytope::new(p.dim(), vec![Halfspace::new(up.clone(), mid)])?)?;
    let above = p.intersect(&Polytope::new(p.dim(), vec![Halfspace::new(-up, -mid)])?)?;
    Ok((below, above))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "Pass"),
            Verdict::Fail => write!(f, "Fail"),
            Verdict::Inconclusive => write!(f, "Inconclusive"),
        }
    }
}

/// Outcome of [`verify_safety`].
///
/// `Fail` always carries a concrete counterexample trace; `Pass` means no
/// flow-pipe segment of any partition met an avoid region or left the
/// analysis region; `Inconclusive` means some partition stayed unresolved
/// when the refinement depth or segment budget ran out.
#[derive(Debug)]
pub struct VerificationResult {
    pub verdict: Verdict,
    pub counterexample: Option<HybridTrace>,
    /// Worklist iterations (= reach computations attempted).
    pub iterations: usize,
    pub segments_total: usize,
    /// Partitions resolved to a final answer (leaves of the refinement tree).
    pub partitions_processed: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct RefineConfig {
    pub max_depth: usize,
    pub rule: SplitRule,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { max_depth: 6, rule: SplitRule::WidestAxis }
    }
}

/// Segments that touch an avoid region of the spec or poke past the
/// analysis region.
fn segment_violations(
    segments: &[FlowpipeSegment],
    spec: &SafetySpec,
    piha: &Piha,
) -> Result<usize, CheckError> {
    let mut count = 0;
    'next_segment: for seg in segments {
        for avoid in &spec.avoid_regions {
            if let Some(mode) = &avoid.mode {
                if *mode != seg.mode {
                    continue;
                }
            }
            if !seg.region.intersect(&avoid.region)?.is_empty()? {
                count += 1;
                continue 'next_segment;
            }
        }
        for hs in piha.analysis_region.constraints() {
            let beyond = Polytope::new(
                piha.dim,
                vec![Halfspace::new(-hs.normal.clone(), -(hs.offset + LP_TOL * hs.normal.norm()))],
            )?;
            if !seg.region.intersect(&beyond)?.is_empty()? {
                count += 1;
                continue 'next_segment;
            }
        }
    }
    Ok(count)
}

/// Flow-pipe safety verification with initial-set refinement.
///
/// Per partition of the initial set (starting from the whole set): compute
/// the reach over-approximation; a clean pipe passes the partition. A pipe
/// that touches an avoid region or the analysis-region boundary is checked
/// by simulation — a concrete unsafe trace is a definitive `Fail`; otherwise
/// the hit is treated as approximation-induced and the partition is bisected
/// up to `refine.max_depth`. Budget exhaustion and unsplittable partitions
/// degrade the verdict to `Inconclusive`, never to a false `Pass`.
pub fn verify_safety(
    piha: &Piha,
    spec: &SafetySpec,
    reach_cfg: &ReachConfig,
    refine: &RefineConfig,
) -> Result<VerificationResult, CheckError> {
    let started = Instant::now();
    let diags = piha.validate();
    if !diags.is_empty() {
        return Err(CheckError::InvalidModel(diags));
    }

    let mut stack: Vec<(Polytope, usize)> = vec![(piha.ics.clone(), 0)];
    let mut iterations = 0usize;
    let mut segments_total = 0usize;
    let mut partitions_processed = 0usize;
    let mut unresolved = 0usize;

    while let Some((partition, depth)) = stack.pop() {
        iterations += 1;
        let sub = piha.with_ics(partition.clone());
        let segments = match reach_sets(&sub, None, reach_cfg) {
            Ok(segments) => segments,
            Err(ReachError::BudgetExhausted { .. }) => {
                unresolved += 1;
                partitions_processed += 1;
                continue;
            }
            Err(other) => return Err(other.into()),
        };
        segments_total += segments.len();

        if segment_violations(&segments, spec, piha)? == 0 {
            partitions_processed += 1;
            continue;
        }

        // Possible violation: look for a concrete witness inside this
        // partition before refining.
        let report = explore(&sub, spec, &reach_cfg.integrator)?;
        for point in report.points {
            if let PointOutcome::Unsafe { trace, .. } = point.outcome {
                return Ok(VerificationResult {
                    verdict: Verdict::Fail,
                    counterexample: Some(trace),
                    iterations,
                    segments_total,
                    partitions_processed,
                    wall_time: started.elapsed().as_secs_f64(),
                });
            }
        }

        if depth >= refine.max_depth {
            unresolved += 1;
            partitions_processed += 1;
            continue;
        }
        let rule = match refine.rule {
            SplitRule::WidestAxis => SplitRule::WidestAxis,
            SplitRule::RoundRobin(start) => SplitRule::RoundRobin(start + depth),
        };
        match refine_ics(&partition, rule) {
            Ok((below, above)) => {
                stack.push((below, depth + 1));
                stack.push((above, depth + 1));
            }
            Err(CheckError::Unsplittable) => {
                unresolved += 1;
                partitions_processed += 1;
            }
            Err(other) => return Err(other),
        }
    }

    Ok(VerificationResult {
        verdict: if unresolved == 0 { Verdict::Pass } else { Verdict::Inconclusive },
        counterexample: None,
        iterations,
        segments_total,
        partitions_processed,
        wall_time: started.elapsed().as_secs_f64(),
    })
}
