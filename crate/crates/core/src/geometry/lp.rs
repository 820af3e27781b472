//! Thin facade over the LP backend.
//!
//! Every polytope query (feasibility, support values, Chebyshev centers)
//! bottoms out in `maximize`: maximize `c·x` subject to `rows[i]·x <= ub[i]`
//! with all variables free. The backend is swappable behind this function.

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { value: f64, point: Vec<f64> },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub(crate) struct LpFailure(pub String);

/// Box bound substituted for genuinely free variables. The backend flags any
/// unbounded feasible ray as "unbounded" even when the objective is bounded
/// along it, so variables get large finite bounds instead and unboundedness
/// is recognized from the objective magnitude. Model coordinates in this
/// crate are O(10), far below the detection threshold.
const VAR_BOUND: f64 = 1e9;
const UNBOUNDED_VALUE: f64 = 1e7;

pub(crate) fn maximize(
    objective: &[f64],
    rows: &[(Vec<f64>, f64)],
) -> Result<LpOutcome, LpFailure> {
    let n = objective.len();
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = objective
        .iter()
        .map(|&c| problem.add_var(c, (-VAR_BOUND, VAR_BOUND)))
        .collect();
    for (coeffs, ub) in rows {
        debug_assert_eq!(coeffs.len(), n);
        if !ub.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(LpFailure("non-finite constraint data".into()));
        }
        let terms: Vec<_> = vars.iter().copied().zip(coeffs.iter().copied()).collect();
        problem.add_constraint(&terms, ComparisonOp::Le, *ub);
    }
    let scale = 1.0 + objective.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    match problem.solve() {
        Ok(SolveOutcome::Solution(solution)) => {
            let value = solution.objective();
            let point: Vec<f64> = vars.iter().map(|&v| solution[v]).collect();
            if value == f64::INFINITY || value > UNBOUNDED_VALUE * scale {
                return Ok(LpOutcome::Unbounded);
            }
            if !value.is_finite() || point.iter().any(|x| !x.is_finite()) {
                return Err(LpFailure(format!("non-finite LP solution (value {value})")));
            }
            Ok(LpOutcome::Optimal { value, point })
        }
        Ok(SolveOutcome::Interrupted(_)) => {
            Err(LpFailure("LP solve interrupted before a usable solution".into()))
        }
        Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
        Err(microlp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
        Err(other) => Err(LpFailure(other.to_string())),
    }
}
