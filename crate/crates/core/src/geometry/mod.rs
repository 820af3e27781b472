//! Convex polytopes in halfspace representation.
//!
//! A [`Polytope`] is an intersection of closed halfspaces `normal·x <= offset`.
//! This is the single set representation used everywhere in the crate: mode
//! invariants, transition guards, initial sets, analysis regions, avoid
//! regions, and flow-pipe segments are all `Polytope` values. Emptiness,
//! support values and Chebyshev centers are decided by LP; vertices are
//! enumerated on demand (low dimension only) for initial-set sampling.
//!
//! All operations are tolerant of non-normalized constraint rows: scaling any
//! `(normal, offset)` pair by a positive factor never changes an observable
//! result.

mod lp;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use lp::{maximize, LpOutcome};

/// Tolerance of the LP layer; containment verdicts are exact only up to this
/// slack (scaled by the row norm where applicable).
pub const LP_TOL: f64 = 1e-9;

/// Relative slack separating "empty" from "degenerate but nonempty" in the
/// feasibility LP. Degenerate sets (guard planes, point initial sets) have an
/// inscribed radius of exactly zero, which solvers report as zero plus noise
/// up to ~1e-7 on ill-conditioned systems; the verdict must not flip on that
/// noise. A set is reported empty only when even the `tol`-relaxed system is
/// infeasible, with `tol` scaled by the constraint data magnitude.
pub const FEASIBILITY_SLACK: f64 = 1e-6;

/// Cap on the inscribed-radius variable in feasibility LPs. Keeps the
/// objective bounded for polytopes that contain arbitrarily large balls.
const RADIUS_CAP: f64 = 1e6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("LP solver failure: {0}")]
    SolverFailure(String),
    #[error("operation requires a nonempty polytope")]
    EmptyPolytope,
    #[error("polytope is unbounded in direction {0:?}")]
    Unbounded(Vec<f64>),
    #[error("vertex enumeration supports dimension <= 4, got {0}")]
    DimensionTooLarge(usize),
    #[error("point list must be nonempty")]
    EmptyPointList,
    #[error("zero direction vector in template")]
    ZeroDirection,
    #[error("template must contain +/- every axis direction")]
    IncompleteTemplate,
    #[error("bloat epsilon must be nonnegative, got {0}")]
    NegativeEps(f64),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
}

/// One closed halfspace `normal·x <= offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: DVector<f64>, offset: f64) -> Self {
        Halfspace { normal, offset }
    }

    pub fn from_slice(normal: &[f64], offset: f64) -> Self {
        Halfspace::new(DVector::from_row_slice(normal), offset)
    }

    /// Signed slack `offset - normal·x`; nonnegative inside.
    #[inline]
    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        self.offset - self.normal.dot(x)
    }
}

/// Feasibility verdict with an interior (or best-effort) witness point.
#[derive(Debug, Clone)]
pub enum Feasibility {
    Empty,
    Nonempty(DVector<f64>),
}

/// Support value of a polytope in a direction.
#[derive(Debug, Clone)]
pub enum Support {
    Empty,
    Unbounded,
    Bounded { value: f64, argmax: DVector<f64> },
}

/// How `sample_points` picks representatives of a polytope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleStrategy {
    /// Every vertex (dimension <= 4).
    Vertices,
    /// Every vertex plus the Chebyshev center.
    VerticesPlusCenter,
    /// Points of a `k`-per-axis grid over the bounding box that lie inside.
    Grid(usize),
}

/// Convex polytope as an intersection of closed halfspaces.
///
/// An empty constraint list denotes all of `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    dim: usize,
    constraints: Vec<Halfspace>,
}

impl Polytope {
    pub fn new(dim: usize, constraints: Vec<Halfspace>) -> Result<Self, GeometryError> {
        if dim == 0 {
            return Err(GeometryError::InvalidConstraint("dimension must be positive".into()));
        }
        for hs in &constraints {
            if hs.normal.len() != dim {
                return Err(GeometryError::DimensionMismatch { expected: dim, got: hs.normal.len() });
            }
            if !hs.offset.is_finite() || hs.normal.iter().any(|v| !v.is_finite()) {
                return Err(GeometryError::InvalidConstraint("non-finite constraint data".into()));
            }
        }
        Ok(Polytope { dim, constraints })
    }

    /// All of `R^dim`.
    pub fn universe(dim: usize) -> Self {
        Polytope { dim, constraints: Vec::new() }
    }

    /// Axis-aligned box `lo[i] <= x[i] <= hi[i]`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() {
            return Err(GeometryError::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        let dim = lo.len();
        let mut constraints = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            let mut up = DVector::zeros(dim);
            up[i] = 1.0;
            constraints.push(Halfspace::new(up, hi[i]));
            let mut down = DVector::zeros(dim);
            down[i] = -1.0;
            constraints.push(Halfspace::new(down, -lo[i]));
        }
        Polytope::new(dim, constraints)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn constraints(&self) -> &[Halfspace] {
        &self.constraints
    }

    pub fn is_universe(&self) -> bool {
        self.constraints.is_empty()
    }

    /// `normal·x <= offset + tol·|normal|` for every constraint.
    pub fn contains_point(&self, x: &DVector<f64>, tol: f64) -> Result<bool, GeometryError> {
        if x.len() != self.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(self
            .constraints
            .iter()
            .all(|hs| hs.slack(x) >= -tol * hs.normal.norm()))
    }

    /// Constraint concatenation; the point set is exactly the intersection.
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope, GeometryError> {
        if self.dim != other.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut constraints = self.constraints.clone();
        constraints.extend(other.constraints.iter().cloned());
        Ok(Polytope { dim: self.dim, constraints })
    }

    /// Outward padding: every offset grows by `eps·|normal|`, so the result
    /// contains all points within distance `eps` of the original set.
    pub fn bloat(&self, eps: f64) -> Result<Polytope, GeometryError> {
        if eps < 0.0 || !eps.is_finite() {
            return Err(GeometryError::NegativeEps(eps));
        }
        let constraints = self
            .constraints
            .iter()
            .map(|hs| {
                if hs.normal.norm() == 0.0 {
                    return Err(GeometryError::InvalidConstraint(
                        "bloat requires nonzero normals".into(),
                    ));
                }
                Ok(Halfspace::new(hs.normal.clone(), hs.offset + eps * hs.normal.norm()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Polytope { dim: self.dim, constraints })
    }

    /// LP feasibility via the inscribed-ball formulation: maximize `r` subject
    /// to `n_i·x + |n_i|·r <= b_i`. The set is empty iff the optimum is
    /// negative beyond the scaled [`FEASIBILITY_SLACK`]; otherwise the
    /// maximizer is a witness with the largest attainable minimum slack.
    pub fn emptiness(&self) -> Result<Feasibility, GeometryError> {
        if self.constraints.is_empty() {
            return Ok(Feasibility::Nonempty(DVector::zeros(self.dim)));
        }
        let n = self.dim;
        let mut objective = vec![0.0; n + 1];
        objective[n] = 1.0;
        let mut data_scale = 1.0f64;
        let mut rows = Vec::with_capacity(self.constraints.len() + 1);
        for hs in &self.constraints {
            let norm = hs.normal.norm();
            if norm == 0.0 {
                // 0·x <= b: trivially true or an outright contradiction.
                if hs.offset < 0.0 {
                    return Ok(Feasibility::Empty);
                }
                continue;
            }
            data_scale = data_scale.max(hs.offset.abs() / norm);
            let mut row: Vec<f64> = hs.normal.iter().copied().collect();
            row.push(norm);
            rows.push((row, hs.offset));
        }
        if rows.is_empty() {
            return Ok(Feasibility::Nonempty(DVector::zeros(self.dim)));
        }
        let mut cap = vec![0.0; n + 1];
        cap[n] = 1.0;
        rows.push((cap, RADIUS_CAP));
        let tol = FEASIBILITY_SLACK * data_scale;
        match maximize(&objective, &rows).map_err(|e| GeometryError::SolverFailure(e.0))? {
            LpOutcome::Optimal { value, point } => {
                if value < -tol {
                    Ok(Feasibility::Empty)
                } else {
                    Ok(Feasibility::Nonempty(DVector::from_row_slice(&point[..n])))
                }
            }
            LpOutcome::Infeasible => Ok(Feasibility::Empty),
            LpOutcome::Unbounded => {
                // Radius is capped, so this can only mean the solver wandered
                // off along a free state direction; the set itself is nonempty.
                // Re-solve against a unit radius to pin down a witness.
                let last = rows.len() - 1;
                rows[last].1 = 1.0;
                match maximize(&objective, &rows).map_err(|e| GeometryError::SolverFailure(e.0))? {
                    LpOutcome::Optimal { point, .. } => {
                        Ok(Feasibility::Nonempty(DVector::from_row_slice(&point[..n])))
                    }
                    other => Err(GeometryError::SolverFailure(format!(
                        "witness re-solve returned {other:?}"
                    ))),
                }
            }
        }
    }

    pub fn is_empty(&self) -> Result<bool, GeometryError> {
        Ok(matches!(self.emptiness()?, Feasibility::Empty))
    }

    /// Maximum of `direction·x` over the polytope.
    pub fn support(&self, direction: &DVector<f64>) -> Result<Support, GeometryError> {
        if direction.len() != self.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: direction.len() });
        }
        if self.constraints.is_empty() {
            return Ok(if direction.norm() == 0.0 {
                Support::Bounded { value: 0.0, argmax: DVector::zeros(self.dim) }
            } else {
                Support::Unbounded
            });
        }
        let objective: Vec<f64> = direction.iter().copied().collect();
        let rows: Vec<(Vec<f64>, f64)> = self
            .constraints
            .iter()
            .map(|hs| (hs.normal.iter().copied().collect(), hs.offset))
            .collect();
        match maximize(&objective, &rows).map_err(|e| GeometryError::SolverFailure(e.0))? {
            LpOutcome::Optimal { value, point } => Ok(Support::Bounded {
                value,
                argmax: DVector::from_row_slice(&point),
            }),
            LpOutcome::Infeasible => Ok(Support::Empty),
            LpOutcome::Unbounded => Ok(Support::Unbounded),
        }
    }

    /// Center and radius of the largest inscribed ball. Radius 0 for
    /// degenerate (lower-dimensional) polytopes.
    ///
    /// When the center is not unique (degenerate sets, elongated boxes), the
    /// bounding-box midpoint is preferred among the optimal centers, which
    /// keeps sampling representative instead of vertex-biased.
    pub fn chebyshev_center(&self) -> Result<(DVector<f64>, f64), GeometryError> {
        let witness = match self.emptiness()? {
            Feasibility::Empty => return Err(GeometryError::EmptyPolytope),
            Feasibility::Nonempty(witness) => witness,
        };
        let inscribed = |x: &DVector<f64>| {
            self.constraints
                .iter()
                .map(|hs| hs.slack(x) / hs.normal.norm().max(f64::MIN_POSITIVE))
                .fold(f64::INFINITY, f64::min)
        };
        let radius = inscribed(&witness).max(0.0);
        if let Ok((lo, hi)) = self.bounding_box() {
            let mid = DVector::from_iterator(self.dim, lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)));
            if inscribed(&mid) >= radius - 1e-12 * (1.0 + radius) {
                return Ok((mid, radius));
            }
        }
        Ok((witness, radius))
    }

    /// `other ⊆ self`, decided by one support LP per facet of `self`.
    /// An empty `other` is contained in everything.
    pub fn contains_polytope(&self, other: &Polytope) -> Result<bool, GeometryError> {
        if self.dim != other.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        for hs in &self.constraints {
            match other.support(&hs.normal)? {
                Support::Empty => return Ok(true),
                Support::Unbounded => return Ok(false),
                Support::Bounded { value, .. } => {
                    if value > hs.offset + LP_TOL * hs.normal.norm() {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// Component-wise bounding box `(lo, hi)`. Errors if unbounded or empty.
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>), GeometryError> {
        let mut lo = vec![0.0; self.dim];
        let mut hi = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut dir = DVector::zeros(self.dim);
            dir[i] = 1.0;
            hi[i] = match self.support(&dir)? {
                Support::Bounded { value, .. } => value,
                Support::Unbounded => return Err(GeometryError::Unbounded(dir.iter().copied().collect())),
                Support::Empty => return Err(GeometryError::EmptyPolytope),
            };
            dir[i] = -1.0;
            lo[i] = match self.support(&dir)? {
                Support::Bounded { value, .. } => -value,
                Support::Unbounded => return Err(GeometryError::Unbounded(dir.iter().copied().collect())),
                Support::Empty => return Err(GeometryError::EmptyPolytope),
            };
        }
        Ok((lo, hi))
    }

    /// All vertices (basic feasible points), dimension <= 4 only.
    ///
    /// Solves every `dim`-subset of constraint rows and keeps solutions that
    /// are feasible for the whole system; duplicates from degenerate vertices
    /// are merged.
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>, GeometryError> {
        if self.dim > 4 {
            return Err(GeometryError::DimensionTooLarge(self.dim));
        }
        let d = self.dim;
        let m = self.constraints.len();
        let mut found: Vec<DVector<f64>> = Vec::new();
        for combo in (0..m).combinations(d) {
            let mut mat = DMatrix::zeros(d, d);
            let mut rhs = DVector::zeros(d);
            for (r, &ci) in combo.iter().enumerate() {
                mat.row_mut(r).copy_from(&self.constraints[ci].normal.transpose());
                rhs[r] = self.constraints[ci].offset;
            }
            let lu = mat.clone().lu();
            let Some(candidate) = lu.solve(&rhs) else { continue };
            // Reject garbage from near-singular systems.
            let residual = (&mat * &candidate - &rhs).norm();
            if residual > 1e-7 * (1.0 + rhs.norm()) {
                continue;
            }
            if !self.contains_point(&candidate, LP_TOL)? {
                continue;
            }
            let scale = 1.0 + candidate.norm();
            if !found.iter().any(|v| (v - &candidate).norm() <= 1e-8 * scale) {
                found.push(candidate);
            }
        }
        Ok(found)
    }

    /// Representative points per the chosen strategy. Requires a nonempty,
    /// bounded polytope (boundedness is checked by support LPs along the box
    /// template).
    pub fn sample_points(&self, strategy: SampleStrategy) -> Result<Vec<DVector<f64>>, GeometryError> {
        if self.is_empty()? {
            return Err(GeometryError::EmptyPolytope);
        }
        for dir in box_directions(self.dim) {
            if matches!(self.support(&dir)?, Support::Unbounded) {
                return Err(GeometryError::Unbounded(dir.iter().copied().collect()));
            }
        }
        match strategy {
            SampleStrategy::Vertices => self.vertices(),
            SampleStrategy::VerticesPlusCenter => {
                let mut points = self.vertices()?;
                let (center, _) = self.chebyshev_center()?;
                let scale = 1.0 + center.norm();
                if !points.iter().any(|v| (v - &center).norm() <= 1e-8 * scale) {
                    points.push(center);
                }
                Ok(points)
            }
            SampleStrategy::Grid(k) => {
                if k == 0 {
                    return Err(GeometryError::InvalidConstraint("grid resolution must be >= 1".into()));
                }
                let (lo, hi) = self.bounding_box()?;
                let mut points = Vec::new();
                let mut idx = vec![0usize; self.dim];
                loop {
                    let coords: Vec<f64> = (0..self.dim)
                        .map(|i| {
                            if k == 1 {
                                0.5 * (lo[i] + hi[i])
                            } else {
                                lo[i] + idx[i] as f64 * (hi[i] - lo[i]) / (k - 1) as f64
                            }
                        })
                        .collect();
                    let p = DVector::from_row_slice(&coords);
                    if self.contains_point(&p, LP_TOL)? {
                        points.push(p);
                    }
                    // odometer increment
                    let mut axis = 0;
                    loop {
                        if axis == self.dim {
                            return Ok(points);
                        }
                        idx[axis] += 1;
                        if idx[axis] < k {
                            break;
                        }
                        idx[axis] = 0;
                        axis += 1;
                    }
                }
            }
        }
    }
}

/// Tightest template polytope containing all `points`: one constraint
/// `d·x <= max_p d·p` per direction `d`.
pub fn template_hull(
    points: &[DVector<f64>],
    directions: &[DVector<f64>],
) -> Result<Polytope, GeometryError> {
    let Some(first) = points.first() else {
        return Err(GeometryError::EmptyPointList);
    };
    let dim = first.len();
    for p in points {
        if p.len() != dim {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: p.len() });
        }
    }
    validate_template(dim, directions)?;
    let constraints = directions
        .iter()
        .map(|d| {
            let offset = points
                .iter()
                .map(|p| d.dot(p))
                .fold(f64::NEG_INFINITY, f64::max);
            Halfspace::new(d.clone(), offset)
        })
        .collect();
    Polytope::new(dim, constraints)
}

fn validate_template(dim: usize, directions: &[DVector<f64>]) -> Result<(), GeometryError> {
    for d in directions {
        if d.len() != dim {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: d.len() });
        }
        if d.norm() == 0.0 {
            return Err(GeometryError::ZeroDirection);
        }
    }
    // Boundedness of the hull needs +/- every axis (up to positive scaling).
    for axis in 0..dim {
        for sign in [1.0, -1.0] {
            let ok = directions.iter().any(|d| {
                d[axis] * sign > 0.0 && (0..dim).all(|j| j == axis || d[j] == 0.0)
            });
            if !ok {
                return Err(GeometryError::IncompleteTemplate);
            }
        }
    }
    Ok(())
}

/// `+/- e_i` for each axis.
pub fn box_directions(dim: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::with_capacity(2 * dim);
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut d = DVector::zeros(dim);
            d[i] = sign;
            dirs.push(d);
        }
    }
    dirs
}

/// Default template: box directions plus all planar octagonal combinations
/// `+/- e_i +/- e_j`.
pub fn default_template(dim: usize) -> Vec<DVector<f64>> {
    let mut dirs = box_directions(dim);
    for i in 0..dim {
        for j in (i + 1)..dim {
            for si in [1.0, -1.0] {
                for sj in [1.0, -1.0] {
                    let mut d = DVector::zeros(dim);
                    d[i] = si;
                    d[j] = sj;
                    dirs.push(d);
                }
            }
        }
    }
    dirs
}
