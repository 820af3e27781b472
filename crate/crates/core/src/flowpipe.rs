//! Flow-pipe over-approximation of the reachable set.
//!
//! Within one mode, trajectories sampled from the vertices and Chebyshev
//! center of the entry polytope are integrated across consecutive time
//! windows of width `dt`; each window's segment is the template hull of all
//! sampled states in the window (both endpoints plus every accepted
//! integrator step), padded outward by a bloat term that covers integrator
//! error and inter-sample curvature. Affine flows map convex sets to convex
//! sets, so vertex trajectories span the flowed set exactly at the sampled
//! instants; the bloat covers what happens between them.
//!
//! Across modes, [`reach_sets`] runs a worklist: whenever a run of segments
//! meets a transition guard inside the target invariant, the union of those
//! crossing slices becomes the entry polytope of a new pipe in the target
//! mode. Because a trajectory may cross anywhere within the run's time span,
//! the spawned pipe's segment windows are widened by that span, keeping
//! every concrete trajectory inside some segment whose window contains its
//! timestamp.

use std::collections::VecDeque;

use nalgebra::DVector;
use thiserror::Error;

use crate::geometry::{default_template, template_hull, GeometryError, Polytope, SampleStrategy, Support};
use crate::model::{ModelError, Piha};
use crate::sim::{adaptive_step, IntegratorConfig, SimError};

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("reach config invalid: {0}")]
    InvalidConfig(String),
    #[error("initial set is empty")]
    InitialSetEmpty,
    #[error("entry polytope is not inside the invariant of mode `{mode}`")]
    InitialOutsideInvariant { mode: String },
    #[error("segment budget of {max_segments} exhausted before the horizon; verdict must not be trusted")]
    BudgetExhausted { max_segments: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One slice of the reachable-set over-approximation: all states the mode
/// can occupy during `[t_lo, t_hi]`, over-approximated by `region`.
#[derive(Debug, Clone)]
pub struct FlowpipeSegment {
    pub mode: String,
    pub t_lo: f64,
    pub t_hi: f64,
    pub region: Polytope,
}

/// Flow-pipe construction parameters.
#[derive(Debug, Clone)]
pub struct ReachConfig {
    /// Segment width in seconds.
    pub dt: f64,
    /// Total segment budget across the whole reach computation.
    pub max_segments: usize,
    /// Multiplier on the error-plus-curvature bloat term (>= 1).
    pub bloat_factor: f64,
    /// Template directions; empty means the default box + octagonal set.
    pub template: Vec<DVector<f64>>,
    /// Skip worklist entries contained in an already-processed entry
    /// polytope of the same mode.
    pub subsumption: bool,
    pub integrator: IntegratorConfig,
}

impl Default for ReachConfig {
    fn default() -> Self {
        ReachConfig {
            // 1/200 of a 50 Hz period; pass an explicit value for systems on
            // other timescales.
            dt: 1e-4,
            max_segments: 20_000,
            bloat_factor: 2.0,
            template: Vec::new(),
            subsumption: true,
            integrator: IntegratorConfig::default(),
        }
    }
}

impl ReachConfig {
    fn validate(&self) -> Result<(), ReachError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ReachError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.max_segments == 0 {
            return Err(ReachError::InvalidConfig("max_segments must be positive".into()));
        }
        if !(self.bloat_factor >= 1.0 && self.bloat_factor.is_finite()) {
            return Err(ReachError::InvalidConfig(format!(
                "bloat_factor must be >= 1, got {}",
                self.bloat_factor
            )));
        }
        Ok(())
    }

    fn template_for(&self, dim: usize) -> Vec<DVector<f64>> {
        if self.template.is_empty() {
            default_template(dim)
        } else {
            self.template.clone()
        }
    }
}

/// Why a single-mode pipe stopped extending.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipeStop {
    /// The last segment no longer meets the mode invariant.
    InvariantExit,
    /// The automaton horizon was reached.
    Horizon,
    /// The segment budget ran out mid-pipe; coverage is incomplete.
    SegmentCap,
}

/// A single mode's flow-pipe and the reason it ended.
#[derive(Debug, Clone)]
pub struct ModePipe {
    pub segments: Vec<FlowpipeSegment>,
    pub stop: PipeStop,
}

/// One slice of a worklist entry: states entering the mode somewhere in
/// `[t_lo, t_lo + smear]`, integrated from `t_lo`.
///
/// Keeping guard crossings staged by their segment of origin instead of
/// hulled into one blob is what keeps the pipes tight: every sample's clock
/// matches real time to within `smear`, so deterministic subsystems (such as
/// an autonomized sinusoid drive) do not smear into phase-spread phantoms
/// whose dynamics differ from any real trajectory.
#[derive(Debug, Clone)]
struct Stage {
    region: Polytope,
    t_lo: f64,
    smear: f64,
}

/// Build the flow-pipe of one mode from entry polytope `p0` at time `t0`.
///
/// Consecutive segments share a time endpoint. Segmentation stops at the
/// horizon, when a segment's region exits the mode invariant entirely, or
/// when `cfg.max_segments` is reached (reported via [`PipeStop::SegmentCap`];
/// callers must treat that as incomplete coverage).
pub fn flowpipe_mode_segments(
    piha: &Piha,
    mode_idx: usize,
    p0: &Polytope,
    t0: f64,
    cfg: &ReachConfig,
) -> Result<ModePipe, ReachError> {
    staged_pipe(
        piha,
        mode_idx,
        vec![Stage { region: p0.clone(), t_lo: t0, smear: 0.0 }],
        cfg,
    )
}

/// Flow-pipe of one mode from a set of entry stages (sorted by time). Each
/// stage's samples join the integration when the window clock reaches its
/// entry time; segment windows are widened by the largest smear among the
/// stages they draw from.
fn staged_pipe(
    piha: &Piha,
    mode_idx: usize,
    mut stages: Vec<Stage>,
    cfg: &ReachConfig,
) -> Result<ModePipe, ReachError> {
    cfg.validate()?;
    cfg.integrator.validate()?;
    let mode = &piha.modes[mode_idx];
    let template = cfg.template_for(piha.dim);
    stages.sort_by(|a, b| a.t_lo.total_cmp(&b.t_lo));

    for stage in &stages {
        if !mode.invariant.contains_polytope(&stage.region)? {
            return Err(ReachError::InitialOutsideInvariant { mode: mode.id.clone() });
        }
    }

    let dynamics = mode.dynamics.clone();
    let f = move |x: &DVector<f64>| dynamics.eval(x).expect("dimensions fixed at model build");
    let a_norm_sq = mode.dynamics.a().norm().powi(2);

    let t0 = stages[0].t_lo;
    let mut segments = Vec::new();
    if t0 >= piha.horizon {
        // Zero-width segment pinned at the horizon: the entry set itself.
        let initial_points = stages[0].region.sample_points(SampleStrategy::VerticesPlusCenter)?;
        let region = template_hull(&initial_points, &template)?;
        segments.push(FlowpipeSegment { mode: mode.id.clone(), t_lo: t0, t_hi: t0, region });
        return Ok(ModePipe { segments, stop: PipeStop::Horizon });
    }

    // (state, next step size) per sampled trajectory; stages activate when
    // the window clock reaches their entry time.
    let mut states: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut pending = stages.into_iter().peekable();
    let mut active_smear = 0.0f64;
    let mut t = t0;
    let mut window = 0usize;
    loop {
        while let Some(stage) = pending.peek() {
            if stage.t_lo > t + cfg.dt * 1e-9 {
                break;
            }
            let stage = pending.next().expect("peeked");
            // Errors out on empty or unbounded stage sets. Entry times off
            // the window grid start early; the lag joins the smear.
            let points = stage.region.sample_points(SampleStrategy::VerticesPlusCenter)?;
            states.extend(points.into_iter().map(|x| (x, cfg.integrator.h_init)));
            active_smear = active_smear.max(stage.smear + (t - stage.t_lo).max(0.0));
        }
        window += 1;
        // Windows come from t0 + k*dt rather than accumulation, and snap to
        // the horizon when within rounding of it, so no sliver segment
        // appears at the end.
        let mut t_end = (t0 + window as f64 * cfg.dt).min(piha.horizon);
        if piha.horizon - t_end < cfg.dt * 1e-6 {
            t_end = piha.horizon;
        }
        let mut cloud: Vec<DVector<f64>> = states.iter().map(|(x, _)| x.clone()).collect();
        let mut max_err = 0.0f64;
        let mut max_norm = cloud.iter().map(|x| x.norm()).fold(0.0, f64::max);
        // Largest time gap between consecutive hull points along any sampled
        // trajectory: the chord between them deviates from the true flow by
        // at most |x''| gap^2 / 8, which the curvature bloat dominates.
        let mut max_gap = 0.0f64;
        for (x, h) in &mut states {
            let mut ts = t;
            while ts < t_end {
                let remaining = t_end - ts;
                let clipped = remaining <= *h;
                let mut step_cfg = cfg.integrator.clone();
                if remaining < step_cfg.h_min {
                    step_cfg.h_min = remaining;
                }
                let mut step = adaptive_step(&f, x, ts, h.min(remaining), &step_cfg)?;
                if clipped && step.t_next >= t_end {
                    step.t_next = t_end;
                }
                ts = step.t_next;
                *x = step.x_next;
                *h = step.h_next;
                max_err = max_err.max(step.err_estimate);
                max_norm = max_norm.max(x.norm());
                max_gap = max_gap.max(step.h_taken);
                cloud.push(x.clone());
            }
        }
        let curvature = max_gap * max_gap * a_norm_sq * max_norm / 2.0;
        let eps = cfg.bloat_factor * (max_err + curvature);
        let region = template_hull(&cloud, &template)?.bloat(eps)?;
        let exits_invariant = region.intersect(&mode.invariant)?.is_empty()?;
        let t_hi = (t_end + active_smear).min(piha.horizon).max(t_end);
        segments.push(FlowpipeSegment { mode: mode.id.clone(), t_lo: t, t_hi, region });

        if segments.len() >= cfg.max_segments {
            return Ok(ModePipe { segments, stop: PipeStop::SegmentCap });
        }
        if exits_invariant && pending.peek().is_none() {
            return Ok(ModePipe { segments, stop: PipeStop::InvariantExit });
        }
        t = t_end;
        if t >= piha.horizon {
            return Ok(ModePipe { segments, stop: PipeStop::Horizon });
        }
    }
}

/// Worklist entry: staged slices entering one mode.
#[derive(Debug, Clone)]
struct Entry {
    mode_idx: usize,
    stages: Vec<Stage>,
}

/// Cap on stages per pipe; longer entries get adjacent stages chunked
/// together so pipe cost stays bounded.
const MAX_STAGES: usize = 12;

impl Entry {
    fn time_range(&self) -> (f64, f64) {
        let lo = self.stages.iter().map(|s| s.t_lo).fold(f64::INFINITY, f64::min);
        let hi = self
            .stages
            .iter()
            .map(|s| s.t_lo + s.smear)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Queue an entry, merging it into an already queued entry of the same mode
/// whose stage-time range overlaps (merging keeps the worklist linear in the
/// number of distinct mode visits instead of spawning near-duplicate pipes).
fn push_entry(queue: &mut VecDeque<Entry>, new: Entry, dt: f64) {
    let (nlo, nhi) = new.time_range();
    for existing in queue.iter_mut() {
        if existing.mode_idx != new.mode_idx {
            continue;
        }
        let (elo, ehi) = existing.time_range();
        if nlo <= ehi + dt && elo <= nhi + dt {
            existing.stages.extend(new.stages);
            return;
        }
    }
    queue.push_back(new);
}

/// Merge adjacent stages until at most `cap` remain: each group becomes one
/// stage whose region is the template hull of the group's slices clipped to
/// the mode invariant, spanning the group's entry window.
fn chunk_stages(
    mut stages: Vec<Stage>,
    cap: usize,
    template: &[DVector<f64>],
    invariant: &Polytope,
) -> Result<Vec<Stage>, ReachError> {
    if stages.len() <= cap {
        return Ok(stages);
    }
    stages.sort_by(|a, b| a.t_lo.total_cmp(&b.t_lo));
    let group_size = stages.len().div_ceil(cap);
    let mut merged = Vec::with_capacity(cap);
    for group in stages.chunks(group_size) {
        let mut halves = Vec::with_capacity(template.len());
        for dir in template {
            let mut offset = f64::NEG_INFINITY;
            for stage in group {
                match stage.region.support(dir)? {
                    Support::Bounded { value, .. } => offset = offset.max(value),
                    Support::Unbounded => {
                        return Err(ReachError::Geometry(GeometryError::Unbounded(
                            dir.iter().copied().collect(),
                        )))
                    }
                    Support::Empty => {}
                }
            }
            halves.push(crate::geometry::Halfspace::new(dir.clone(), offset));
        }
        let hull = Polytope::new(invariant.dim(), halves)?;
        let t_lo = group[0].t_lo;
        let hi = group.iter().map(|s| s.t_lo + s.smear).fold(f64::NEG_INFINITY, f64::max);
        merged.push(Stage {
            region: hull.intersect(invariant)?,
            t_lo,
            smear: (hi - t_lo).max(0.0),
        });
    }
    Ok(merged)
}

/// Reachable-set over-approximation for the whole automaton, as flow-pipe
/// segments across all modes.
///
/// Seeds one pipe per mode whose invariant meets the initial set, then
/// discharges a FIFO worklist of guard-crossing entries. An entry contained
/// in an already-processed entry polytope of the same mode is skipped when
/// `cfg.subsumption` holds. The optional `hook` is invoked on every produced
/// segment; returning `false` aborts the computation early with the segments
/// produced so far (callers doing exhaustive safety checks must not abort).
pub fn reach_sets(
    piha: &Piha,
    hook: Option<&dyn Fn(&FlowpipeSegment) -> bool>,
    cfg: &ReachConfig,
) -> Result<Vec<FlowpipeSegment>, ReachError> {
    cfg.validate()?;

    if piha.ics.is_empty()? {
        return Err(ReachError::InitialSetEmpty);
    }
    let mut queue: VecDeque<Entry> = VecDeque::new();
    for (i, mode) in piha.modes.iter().enumerate() {
        let seed = piha.ics.intersect(&mode.invariant)?;
        if !seed.is_empty()? {
            queue.push_back(Entry {
                mode_idx: i,
                stages: vec![Stage { region: seed, t_lo: 0.0, smear: 0.0 }],
            });
        }
    }

    let mut processed: Vec<Vec<Polytope>> = vec![Vec::new(); piha.modes.len()];
    let mut all_segments: Vec<FlowpipeSegment> = Vec::new();
    let mut budget = cfg.max_segments;

    while let Some(entry) = queue.pop_front() {
        if cfg.subsumption {
            let mut subsumed = true;
            for stage in &entry.stages {
                let mut covered = false;
                for prior in &processed[entry.mode_idx] {
                    if prior.contains_polytope(&stage.region)? {
                        covered = true;
                        break;
                    }
                }
                if !covered {
                    subsumed = false;
                    break;
                }
            }
            if subsumed {
                continue;
            }
        }
        for stage in &entry.stages {
            processed[entry.mode_idx].push(stage.region.clone());
        }

        if budget == 0 {
            return Err(ReachError::BudgetExhausted { max_segments: cfg.max_segments });
        }
        if std::env::var_os("PIHA_REACH_TRACE").is_some() {
            eprintln!(
                "reach: mode {} stages {} t_lo {:.5} queue {} budget {}",
                piha.modes[entry.mode_idx].id,
                entry.stages.len(),
                entry.stages[0].t_lo,
                queue.len(),
                budget
            );
        }
        let stages = chunk_stages(
            entry.stages,
            MAX_STAGES,
            &cfg.template_for(piha.dim),
            &piha.modes[entry.mode_idx].invariant,
        )?;
        let mut local = cfg.clone();
        local.max_segments = budget;
        let pipe = staged_pipe(piha, entry.mode_idx, stages, &local)?;
        if pipe.stop == PipeStop::SegmentCap {
            return Err(ReachError::BudgetExhausted { max_segments: cfg.max_segments });
        }
        budget -= pipe.segments.len();

        // Guard crossings spawn new entries: per transition, each maximal
        // run of consecutive segments whose region meets guard and target
        // invariant becomes one staged entry (one stage per segment).
        // Slices where the source field points strictly inward are bloat
        // artifacts, not crossings — no trajectory exits there — and are
        // dropped, which is what stops freshly entered pipes from bouncing
        // straight back through the guard they came in on.
        for tr in &piha.transitions {
            if tr.source != piha.modes[entry.mode_idx].id {
                continue;
            }
            let Some(target_idx) = piha.mode_index(&tr.target) else {
                return Err(ReachError::Model(ModelError::UnknownMode(tr.target.clone())));
            };
            let target_inv = &piha.modes[target_idx].invariant;
            let outward = outward_facet_normal(&piha.modes[entry.mode_idx], tr);
            let mut run: Vec<Stage> = Vec::new();
            for seg in pipe.segments.iter() {
                let slice = seg.region.intersect(&tr.guard)?.intersect(target_inv)?;
                let mut crossing = !slice.is_empty()?;
                if crossing {
                    if let Some(n_out) = &outward {
                        crossing = slice_has_outward_flow(
                            &slice,
                            n_out,
                            &piha.modes[entry.mode_idx].dynamics,
                        )?;
                    }
                }
                // A crossing at the horizon spawns nothing: no time remains
                // for the target mode to flow.
                if crossing && seg.t_lo < piha.horizon {
                    run.push(Stage {
                        region: slice,
                        t_lo: seg.t_lo,
                        smear: (seg.t_hi - seg.t_lo).max(0.0),
                    });
                } else if !run.is_empty() {
                    push_entry(&mut queue, Entry { mode_idx: target_idx, stages: std::mem::take(&mut run) }, cfg.dt);
                }
            }
            if !run.is_empty() {
                push_entry(&mut queue, Entry { mode_idx: target_idx, stages: run }, cfg.dt);
            }
        }

        for seg in pipe.segments {
            let keep_going = hook.map_or(true, |h| h(&seg));
            all_segments.push(seg);
            if !keep_going {
                return Ok(all_segments);
            }
        }
    }
    Ok(all_segments)
}

/// Outward normal of the source-invariant facet a transition crosses, when
/// the guard is a facet slab: a pair of opposing guard rows pins the plane,
/// and the source-invariant row parallel to it gives the outward side. For
/// guards of any other shape there is nothing to orient against and callers
/// skip the transversality filter.
fn outward_facet_normal(source: &crate::model::Mode, tr: &crate::model::Transition) -> Option<DVector<f64>> {
    let rows = tr.guard.constraints();
    for (i, gi) in rows.iter().enumerate() {
        let ni = gi.normal.norm();
        if ni == 0.0 {
            continue;
        }
        for gj in &rows[i + 1..] {
            let nj = gj.normal.norm();
            if nj == 0.0 {
                continue;
            }
            let cosine = gi.normal.dot(&gj.normal) / (ni * nj);
            let same_plane = (gi.offset / ni + gj.offset / nj).abs() <= 1e-9;
            if cosine < -1.0 + 1e-12 && same_plane {
                let plane = &gi.normal / ni;
                for hs in source.invariant.constraints() {
                    let ns = hs.normal.norm();
                    if ns == 0.0 {
                        continue;
                    }
                    let align = hs.normal.dot(&plane) / ns;
                    let offset_matches = (hs.offset / ns - align.signum() * gi.offset / ni).abs() <= 1e-9;
                    if align.abs() > 1.0 - 1e-12 && offset_matches {
                        return Some(hs.normal.clone() / ns);
                    }
                }
            }
        }
    }
    None
}

/// True when the source field has a nonnegative outward component somewhere
/// on the slice. The field is affine, so `max n·(Ax + b)` over the slice is
/// one support LP; strictly negative everywhere means no trajectory can exit
/// through this slice.
fn slice_has_outward_flow(
    slice: &Polytope,
    n_out: &DVector<f64>,
    dynamics: &crate::model::AffineDynamics,
) -> Result<bool, ReachError> {
    let dir = dynamics.a().transpose() * n_out;
    let drift = n_out.dot(dynamics.b());
    match slice.support(&dir)? {
        Support::Bounded { value, .. } => Ok(value + drift >= -1e-6),
        Support::Unbounded => Ok(true),
        Support::Empty => Ok(false),
    }
}

/// Debug dump: one CSV row per segment constraint,
/// `mode,t_lo,t_hi,constraint_index,normal...,offset`.
pub fn write_segments_csv<W: std::io::Write>(
    segments: &[FlowpipeSegment],
    mut out: W,
) -> std::io::Result<()> {
    let dim = segments.first().map_or(0, |s| s.region.dim());
    let mut header = String::from("mode,t_lo,t_hi,constraint_index");
    for i in 1..=dim {
        header.push_str(&format!(",n{i}"));
    }
    header.push_str(",offset\n");
    out.write_all(header.as_bytes())?;
    for seg in segments {
        for (ci, hs) in seg.region.constraints().iter().enumerate() {
            let mut line = format!("{},{:.16e},{:.16e},{ci}", seg.mode, seg.t_lo, seg.t_hi);
            for v in hs.normal.iter() {
                line.push_str(&format!(",{v:.16e}"));
            }
            line.push_str(&format!(",{:.16e}\n", hs.offset));
            out.write_all(line.as_bytes())?;
        }
    }
    Ok(())
}
