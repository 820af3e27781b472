//! Embedded Dormand-Prince 5(4) step with adaptive error control.
//!
//! Seven stages, first-same-as-last: the final stage derivative equals the
//! derivative at the accepted end point, which event localization reuses for
//! Hermite interpolation inside a step.

use nalgebra::DVector;

use super::{IntegratorConfig, SimError};

const STAGES: usize = 7;

// Stage abscissae are not needed: all dynamics here are autonomous.
const A: [[f64; 6]; STAGES] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];

/// Fifth-order weights (propagated solution). Identical to the last A row.
const B5: [f64; STAGES] =
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];

/// Fourth-order embedded weights.
const B4: [f64; STAGES] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const SHRINK_LIMIT: f64 = 0.2;
const GROW_LIMIT: f64 = 5.0;

/// One accepted adaptive step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub x_next: DVector<f64>,
    pub t_next: f64,
    /// Step size suggestion for the next step.
    pub h_next: f64,
    /// Size of the step actually taken.
    pub h_taken: f64,
    /// Embedded 4th/5th-order error estimate of the accepted step.
    pub err_estimate: f64,
    /// Derivative at the step start (stage 1).
    pub deriv_start: DVector<f64>,
    /// Derivative at the accepted end point (FSAL stage).
    pub deriv_end: DVector<f64>,
}

/// Advance one accepted step from `(t, x)`, shrinking and retrying on error
/// rejections. Errors with [`SimError::Stiffness`] when the step size
/// underflows `h_min` without acceptance.
pub fn adaptive_step<F>(
    f: &F,
    x: &DVector<f64>,
    t: f64,
    h_try: f64,
    cfg: &IntegratorConfig,
) -> Result<StepResult, SimError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut h = h_try.clamp(cfg.h_min, cfg.h_max);
    let tol = cfg.rel_tol * x.norm() + cfg.abs_tol;
    loop {
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(STAGES);
        k.push(f(x));
        for stage in 1..STAGES {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[stage][j];
                if a != 0.0 {
                    xs.axpy(h * a, kj, 1.0);
                }
            }
            k.push(f(&xs));
        }
        let mut x5 = x.clone();
        let mut err_vec = DVector::zeros(n);
        for (j, kj) in k.iter().enumerate() {
            if B5[j] != 0.0 {
                x5.axpy(h * B5[j], kj, 1.0);
            }
            let db = B5[j] - B4[j];
            if db != 0.0 {
                err_vec.axpy(h * db, kj, 1.0);
            }
        }
        let err = err_vec.norm();

        if err <= tol {
            let factor = if err == 0.0 {
                GROW_LIMIT
            } else {
                (SAFETY * (tol / err).powf(0.2)).clamp(SHRINK_LIMIT, GROW_LIMIT)
            };
            let h_next = (h * factor).clamp(cfg.h_min, cfg.h_max);
            return Ok(StepResult {
                x_next: x5,
                t_next: t + h,
                h_next,
                h_taken: h,
                err_estimate: err,
                deriv_end: k.pop().expect("seven stages"),
                deriv_start: k.swap_remove(0),
            });
        }
        // Rejected: shrink and retry.
        let factor = (SAFETY * (tol / err).powf(0.2)).clamp(SHRINK_LIMIT, 1.0);
        let h_new = h * factor;
        if h_new < cfg.h_min || !(h_new > 0.0) {
            return Err(SimError::Stiffness { t, h });
        }
        h = h_new;
    }
}

/// Single fifth-order step of prescribed size, without error control.
///
/// Event handling re-integrates from the step start to the localized
/// crossing time with this, so event states carry integrator-level accuracy
/// instead of interpolation error.
pub fn raw_step<F>(f: &F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(STAGES - 1);
    k.push(f(x));
    for stage in 1..STAGES - 1 {
        let mut xs = x.clone();
        for (j, kj) in k.iter().enumerate() {
            let a = A[stage][j];
            if a != 0.0 {
                xs.axpy(h * a, kj, 1.0);
            }
        }
        k.push(f(&xs));
    }
    let mut x5 = x.clone();
    for (j, kj) in k.iter().enumerate() {
        if B5[j] != 0.0 {
            x5.axpy(h * B5[j], kj, 1.0);
        }
    }
    x5
}

/// Cubic Hermite interpolant over an accepted step, used for event
/// localization between step endpoints.
pub fn hermite(
    t0: f64,
    x0: &DVector<f64>,
    f0: &DVector<f64>,
    t1: f64,
    x1: &DVector<f64>,
    f1: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    let dt = t1 - t0;
    if dt == 0.0 {
        return x0.clone();
    }
    let s = (t - t0) / dt;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 1.0 - 3.0 * s2 + 2.0 * s3;
    let h10 = s - 2.0 * s2 + s3;
    let h01 = 3.0 * s2 - 2.0 * s3;
    let h11 = -s2 + s3;
    let mut out = x0 * h00;
    out.axpy(h10 * dt, f0, 1.0);
    out.axpy(h01, x1, 1.0);
    out.axpy(h11 * dt, f1, 1.0);
    out
}
