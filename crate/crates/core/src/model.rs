//! The polyhedral-invariant hybrid automaton (PIHA) data model.
//!
//! A PIHA has a finite set of modes, each with affine continuous dynamics
//! `dx/dt = A x + b` and a polyhedral invariant; transitions fire when the
//! state crosses a linear guard, with identity resets (the continuous state
//! is preserved across switches). Verification is confined to a bounded
//! analysis region and starts from a polyhedral initial continuous set.
//!
//! Strict inequalities in source models are encoded as closed halfspaces
//! sharing the boundary; [`Piha::select_mode`] resolves shared boundaries
//! deterministically by declaration order.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{GeometryError, Halfspace, Polytope, SampleStrategy, LP_TOL};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no mode invariant contains the state {0:?} (coverage gap)")]
    CoverageGap(Vec<f64>),
    #[error("unknown mode id `{0}`")]
    UnknownMode(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Affine vector field `dx/dt = a·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineDynamics {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl AffineDynamics {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, ModelError> {
        if a.nrows() != a.ncols() {
            return Err(ModelError::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
        }
        if b.len() != a.nrows() {
            return Err(ModelError::DimensionMismatch { expected: a.nrows(), got: b.len() });
        }
        Ok(AffineDynamics { a, b })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    #[inline]
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    #[inline]
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Right-hand side `a·x + b`. Defined for all states, including outside
    /// the owning mode's invariant (integration may overshoot before an event
    /// is localized).
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(&self.a * x + &self.b)
    }
}

/// One operating mode: dynamics active while the state stays inside the
/// closed polyhedral invariant.
#[derive(Debug, Clone)]
pub struct Mode {
    pub id: String,
    pub dynamics: AffineDynamics,
    pub invariant: Polytope,
}

/// Discrete switch between modes. Resets are identity by construction: the
/// continuous state is continuous across the jump.
#[derive(Debug, Clone)]
pub struct Transition {
    pub source: String,
    pub target: String,
    pub guard: Polytope,
}

/// A validation finding from [`Piha::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Stable rule slug, e.g. `unresolved-target`.
    pub rule: &'static str,
    /// Human-readable detail naming the offending element.
    pub detail: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

/// Polyhedral-invariant hybrid automaton.
#[derive(Debug, Clone)]
pub struct Piha {
    pub dim: usize,
    pub modes: Vec<Mode>,
    pub transitions: Vec<Transition>,
    /// Initial continuous set.
    pub ics: Polytope,
    /// Bounded region within which analysis is performed.
    pub analysis_region: Polytope,
    /// Time horizon in seconds.
    pub horizon: f64,
}

impl Piha {
    pub fn mode_index(&self, id: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.id == id)
    }

    pub fn mode(&self, id: &str) -> Result<&Mode, ModelError> {
        self.mode_index(id)
            .map(|i| &self.modes[i])
            .ok_or_else(|| ModelError::UnknownMode(id.to_string()))
    }

    /// Replica with a different initial continuous set (used by refinement).
    pub fn with_ics(&self, ics: Polytope) -> Piha {
        Piha { ics, ..self.clone() }
    }

    /// The unique active mode for a state: the first declared mode whose
    /// closed invariant contains `x`. Declaration order is the tie-break on
    /// shared boundaries, which keeps traces reproducible.
    pub fn select_mode(&self, x: &DVector<f64>) -> Result<usize, ModelError> {
        if x.len() != self.dim {
            return Err(ModelError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        for (i, mode) in self.modes.iter().enumerate() {
            if mode.invariant.contains_point(x, LP_TOL)? {
                return Ok(i);
            }
        }
        Err(ModelError::CoverageGap(x.iter().copied().collect()))
    }

    /// Compliance check. Returns one diagnostic per violated model rule;
    /// an empty list means the automaton is well-formed. Idempotent and
    /// side-effect free.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();

        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            diags.push(Diagnostic {
                rule: "invalid-horizon",
                detail: format!("horizon must be finite and nonnegative, got {}", self.horizon),
            });
        }
        if self.modes.is_empty() {
            diags.push(Diagnostic { rule: "no-modes", detail: "automaton has no modes".into() });
        }

        for (i, m) in self.modes.iter().enumerate() {
            if self.modes[..i].iter().any(|other| other.id == m.id) {
                diags.push(Diagnostic {
                    rule: "duplicate-mode-id",
                    detail: format!("mode id `{}` declared more than once", m.id),
                });
            }
            if m.id.is_empty() || m.id.contains(',') || m.id.contains(char::is_whitespace) {
                diags.push(Diagnostic {
                    rule: "invalid-mode-id",
                    detail: format!("mode id `{}` must be nonempty without commas or whitespace", m.id),
                });
            }
            if m.dynamics.dim() != self.dim {
                diags.push(Diagnostic {
                    rule: "dimension-mismatch",
                    detail: format!(
                        "mode `{}` dynamics are {}-dimensional, automaton is {}-dimensional",
                        m.id,
                        m.dynamics.dim(),
                        self.dim
                    ),
                });
            }
            if m.invariant.dim() != self.dim {
                diags.push(Diagnostic {
                    rule: "dimension-mismatch",
                    detail: format!(
                        "mode `{}` invariant is {}-dimensional, automaton is {}-dimensional",
                        m.id,
                        m.invariant.dim(),
                        self.dim
                    ),
                });
            }
        }

        for (i, t) in self.transitions.iter().enumerate() {
            if self.mode_index(&t.source).is_none() {
                diags.push(Diagnostic {
                    rule: "unresolved-source",
                    detail: format!("transition #{i} references unknown source mode `{}`", t.source),
                });
            }
            if self.mode_index(&t.target).is_none() {
                diags.push(Diagnostic {
                    rule: "unresolved-target",
                    detail: format!("transition #{i} references unknown target mode `{}`", t.target),
                });
            }
            if t.source == t.target {
                diags.push(Diagnostic {
                    rule: "self-loop",
                    detail: format!("transition #{i} has source == target (`{}`)", t.source),
                });
            }
            if t.guard.dim() != self.dim {
                diags.push(Diagnostic {
                    rule: "dimension-mismatch",
                    detail: format!("transition #{i} guard is {}-dimensional", t.guard.dim()),
                });
            }
        }

        if self.ics.dim() != self.dim {
            diags.push(Diagnostic {
                rule: "dimension-mismatch",
                detail: format!("ics is {}-dimensional", self.ics.dim()),
            });
        }
        if self.analysis_region.dim() != self.dim {
            diags.push(Diagnostic {
                rule: "dimension-mismatch",
                detail: format!("analysis region is {}-dimensional", self.analysis_region.dim()),
            });
        }
        // Geometry checks only make sense once dimensions line up.
        if !diags.iter().any(|d| d.rule == "dimension-mismatch") {
            match self.ics.is_empty() {
                Ok(true) => diags.push(Diagnostic { rule: "empty-ics", detail: "initial set is empty".into() }),
                Ok(false) => self.check_ics_inside_ar(&mut diags),
                Err(e) => diags.push(Diagnostic { rule: "solver-failure", detail: e.to_string() }),
            }
            self.check_invariant_coverage(&mut diags);
        }
        diags
    }

    /// ics ⊆ AR, tested per AR facet: ics ∩ {beyond facet} must be empty.
    fn check_ics_inside_ar(&self, diags: &mut Vec<Diagnostic>) {
        for (i, hs) in self.analysis_region.constraints().iter().enumerate() {
            let margin = LP_TOL * hs.normal.norm();
            let beyond = Halfspace::new(-hs.normal.clone(), -(hs.offset + margin));
            let outside = match Polytope::new(self.dim, vec![beyond]) {
                Ok(p) => p,
                Err(e) => {
                    diags.push(Diagnostic { rule: "solver-failure", detail: e.to_string() });
                    return;
                }
            };
            match self.ics.intersect(&outside).and_then(|p| p.is_empty()) {
                Ok(true) => {}
                Ok(false) => diags.push(Diagnostic {
                    rule: "ics-outside-ar",
                    detail: format!("ics extends past analysis-region constraint #{i}"),
                }),
                Err(e) => diags.push(Diagnostic { rule: "solver-failure", detail: e.to_string() }),
            }
        }
    }

    /// Mode invariants must cover the analysis region: every sampled AR
    /// point satisfies at least one invariant.
    fn check_invariant_coverage(&self, diags: &mut Vec<Diagnostic>) {
        let strategy = if self.dim <= 4 {
            SampleStrategy::VerticesPlusCenter
        } else {
            SampleStrategy::Grid(3)
        };
        let samples = match self.analysis_region.sample_points(strategy) {
            Ok(s) => s,
            Err(e) => {
                diags.push(Diagnostic {
                    rule: "analysis-region-unsampleable",
                    detail: format!("analysis region must be nonempty and bounded: {e}"),
                });
                return;
            }
        };
        for x in &samples {
            let covered = self.modes.iter().any(|m| {
                m.invariant.dim() == self.dim
                    && m.invariant.contains_point(x, LP_TOL).unwrap_or(false)
            });
            if !covered {
                diags.push(Diagnostic {
                    rule: "coverage-gap",
                    detail: format!("analysis-region point {:?} satisfies no mode invariant", x.as_slice()),
                });
            }
        }
    }
}

/// Derive transitions from invariant adjacency: modes `s -> t` get an edge
/// for every facet of `s`'s invariant whose facet slab meets `t`'s invariant
/// in a set of dimension `dim - 1`. Ridge-only contact (e.g. two quadrants
/// touching at a corner) produces no edge.
pub fn derive_transitions(dim: usize, modes: &[Mode]) -> Result<Vec<Transition>, ModelError> {
    let mut transitions = Vec::new();
    for s in modes {
        for t in modes {
            if s.id == t.id {
                continue;
            }
            for facet in s.invariant.constraints() {
                let norm = facet.normal.norm();
                if norm == 0.0 {
                    continue;
                }
                let mut slab = s.invariant.clone();
                slab = slab.intersect(&Polytope::new(
                    dim,
                    vec![Halfspace::new(-facet.normal.clone(), -facet.offset)],
                )?)?;
                let shared = slab.intersect(&t.invariant)?;
                if facet_has_relative_interior(&shared, facet)? {
                    transitions.push(Transition {
                        source: s.id.clone(),
                        target: t.id.clone(),
                        guard: slab,
                    });
                    break; // one edge per (source, target) pair
                }
            }
        }
    }
    Ok(transitions)
}

/// True when `shared` (a subset of the hyperplane `facet·x = offset`) has a
/// point with strictly positive slack against every constraint that is not
/// parallel to the facet. Reuses the inscribed-ball LP restricted to the
/// facet plane.
fn facet_has_relative_interior(shared: &Polytope, facet: &Halfspace) -> Result<bool, ModelError> {
    let unit = &facet.normal / facet.normal.norm();
    let mut kept = Vec::new();
    for hs in shared.constraints() {
        let n = hs.normal.norm();
        if n == 0.0 {
            if hs.offset < 0.0 {
                return Ok(false);
            }
            continue;
        }
        let cosine = hs.normal.dot(&unit) / n;
        if cosine.abs() > 1.0 - 1e-9 {
            // Parallel to the facet plane: keep as a hard constraint so the
            // plane itself stays pinned, but without an interior demand.
            kept.push((hs.clone(), false));
        } else {
            kept.push((hs.clone(), true));
        }
    }
    // maximize r s.t. n·x (+ |n| r if interior demanded) <= b
    let dim = shared.dim();
    let mut objective = vec![0.0; dim + 1];
    objective[dim] = 1.0;
    let mut rows: Vec<Halfspace> = Vec::new();
    for (hs, wants_interior) in kept {
        let mut coeffs: Vec<f64> = hs.normal.iter().copied().collect();
        coeffs.push(if wants_interior { hs.normal.norm() } else { 0.0 });
        rows.push(Halfspace::from_slice(&coeffs, hs.offset));
    }
    let mut cap = vec![0.0; dim + 1];
    cap[dim] = 1.0;
    rows.push(Halfspace::from_slice(&cap, 1.0));
    let lifted = Polytope::new(dim + 1, rows)?;
    let mut dir = nalgebra::DVector::zeros(dim + 1);
    dir[dim] = 1.0;
    match lifted.support(&dir)? {
        // Ridges give a radius of exactly zero; proper facets reach the cap
        // or a real inscribed radius. 1e-6 separates the two with margin
        // over LP noise.
        crate::geometry::Support::Bounded { value, .. } => Ok(value > 1e-6),
        crate::geometry::Support::Unbounded => Ok(true),
        crate::geometry::Support::Empty => Ok(false),
    }
}

/// Safety specification: the AG fragment. A run is unsafe when it reaches an
/// avoid region (with matching mode where one is given) or leaves the
/// analysis region; the out-of-bound conjunct is implied by the automaton's
/// analysis region rather than stored here.
#[derive(Debug, Clone)]
pub struct SafetySpec {
    pub name: String,
    pub avoid_regions: Vec<AvoidRegion>,
}

#[derive(Debug, Clone)]
pub struct AvoidRegion {
    /// Restrict the avoid test to one mode; `None` applies in every mode.
    pub mode: Option<String>,
    pub region: Polytope,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Halfspace;

    fn two_mode_line() -> Piha {
        // mode L: x <= 1 with dx/dt = 1; mode R: x >= 1 with dx/dt = -1
        let dyn_l = AffineDynamics::new(DMatrix::zeros(1, 1), DVector::from_row_slice(&[1.0])).unwrap();
        let dyn_r = AffineDynamics::new(DMatrix::zeros(1, 1), DVector::from_row_slice(&[-1.0])).unwrap();
        let inv_l = Polytope::new(1, vec![Halfspace::from_slice(&[1.0], 1.0)]).unwrap();
        let inv_r = Polytope::new(1, vec![Halfspace::from_slice(&[-1.0], -1.0)]).unwrap();
        let guard = Polytope::new(
            1,
            vec![Halfspace::from_slice(&[1.0], 1.0), Halfspace::from_slice(&[-1.0], -1.0)],
        )
        .unwrap();
        Piha {
            dim: 1,
            modes: vec![
                Mode { id: "L".into(), dynamics: dyn_l, invariant: inv_l },
                Mode { id: "R".into(), dynamics: dyn_r, invariant: inv_r },
            ],
            transitions: vec![
                Transition { source: "L".into(), target: "R".into(), guard: guard.clone() },
                Transition { source: "R".into(), target: "L".into(), guard },
            ],
            ics: Polytope::from_box(&[0.0], &[0.0]).unwrap(),
            analysis_region: Polytope::from_box(&[-2.0], &[3.0]).unwrap(),
            horizon: 2.0,
        }
    }

    #[test]
    fn well_formed_model_validates_clean() {
        let diags = two_mode_line().validate();
        assert!(diags.is_empty(), "unexpected diagnostics: {diags:?}");
    }

    #[test]
    fn unresolved_target_is_reported() {
        let mut piha = two_mode_line();
        piha.transitions[0].target = "Missing".into();
        let diags = piha.validate();
        assert!(diags.iter().any(|d| d.rule == "unresolved-target"), "{diags:?}");
    }

    #[test]
    fn ics_outside_ar_is_reported() {
        let mut piha = two_mode_line();
        piha.ics = Polytope::from_box(&[-5.0], &[0.0]).unwrap();
        let diags = piha.validate();
        assert!(diags.iter().any(|d| d.rule == "ics-outside-ar"), "{diags:?}");
    }

    #[test]
    fn coverage_gap_is_reported() {
        let mut piha = two_mode_line();
        // Shrink mode R so states beyond x = 2 belong to nobody.
        piha.modes[1].invariant = Polytope::from_box(&[1.0], &[2.0]).unwrap();
        let diags = piha.validate();
        assert!(diags.iter().any(|d| d.rule == "coverage-gap"), "{diags:?}");
    }

    #[test]
    fn select_mode_tie_break_prefers_declaration_order() {
        let piha = two_mode_line();
        // x = 1 satisfies both closed invariants; L is declared first.
        let idx = piha.select_mode(&DVector::from_row_slice(&[1.0])).unwrap();
        assert_eq!(piha.modes[idx].id, "L");
        let idx = piha.select_mode(&DVector::from_row_slice(&[2.0])).unwrap();
        assert_eq!(piha.modes[idx].id, "R");
    }

    #[test]
    fn select_mode_coverage_gap_errors() {
        let mut piha = two_mode_line();
        piha.modes[1].invariant = Polytope::from_box(&[1.0], &[2.0]).unwrap();
        let err = piha.select_mode(&DVector::from_row_slice(&[2.5])).unwrap_err();
        assert!(matches!(err, ModelError::CoverageGap(_)));
    }

    #[test]
    fn validate_is_idempotent() {
        let piha = two_mode_line();
        assert_eq!(piha.validate(), piha.validate());
    }

    #[test]
    fn derive_transitions_on_line_pair() {
        let piha = two_mode_line();
        let derived = derive_transitions(1, &piha.modes).unwrap();
        assert_eq!(derived.len(), 2);
        assert!(derived.iter().any(|t| t.source == "L" && t.target == "R"));
        assert!(derived.iter().any(|t| t.source == "R" && t.target == "L"));
    }

    #[test]
    fn dynamics_eval_is_affine() {
        let dynamics = AffineDynamics::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DVector::from_row_slice(&[0.5, 0.0]),
        )
        .unwrap();
        let dx = dynamics.eval(&DVector::from_row_slice(&[2.0, 3.0])).unwrap();
        assert_eq!(dx, DVector::from_row_slice(&[3.5, -2.0]));
    }
}
