//! Full-wave rectifier case study.
//!
//! Two ideal diodes (forward resistance `Rf`, reverse leakage `I0`) feed an
//! RC load from a sinusoidal source `vin = A sin(2*pi*f*t)`. Each diode is
//! either conducting or blocking, giving four operating modes keyed by the
//! signs of the diode voltages `v1 = vin - vout` and `v2 = -vin - vout`.
//!
//! The source is autonomized: the state is `(x1, x2, vout)` where the pair
//! `(x1, x2)` is the harmonic oscillator `dx1/dt = w*x2`, `dx2/dt = -w*x1`
//! started at `(0, A)`, so `x1(t) = A sin(w t)` and every mode's dynamics
//! is affine and every guard linear.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{Halfspace, Polytope};
use crate::model::{AffineDynamics, AvoidRegion, Mode, Piha, SafetySpec, Transition};

#[derive(Debug, Error)]
pub enum FwrError {
    #[error("circuit parameter {name} must be strictly positive, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("ics vout interval [{0}, {1}] is invalid or outside the analysis region")]
    BadIcsInterval(f64, f64),
    #[error("P2 threshold {threshold} must lie below the input amplitude {amplitude}")]
    ThresholdAboveAmplitude { threshold: f64, amplitude: f64 },
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
}

/// Diode-state combination of the rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwrMode {
    OnOn,
    OnOff,
    OffOn,
    OffOff,
}

impl FwrMode {
    pub const ALL: [FwrMode; 4] = [FwrMode::OnOn, FwrMode::OnOff, FwrMode::OffOn, FwrMode::OffOff];

    pub fn name(self) -> &'static str {
        match self {
            FwrMode::OnOn => "OnOn",
            FwrMode::OnOff => "OnOff",
            FwrMode::OffOn => "OffOn",
            FwrMode::OffOff => "OffOff",
        }
    }
}

/// Circuit constants. SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitParams {
    /// Load resistance (ohm).
    pub r: f64,
    /// Load capacitance (farad).
    pub c: f64,
    /// Diode forward resistance (ohm).
    pub rf: f64,
    /// Diode reverse leakage current (ampere).
    pub i0: f64,
    /// Input amplitude (volt).
    pub amplitude: f64,
    /// Input frequency (hertz).
    pub frequency: f64,
}

impl Default for CircuitParams {
    fn default() -> Self {
        CircuitParams {
            r: 1.0e3,
            c: 100.0e-6,
            rf: 10.0,
            i0: 1.0e-6,
            amplitude: 5.0,
            frequency: 50.0,
        }
    }
}

impl CircuitParams {
    pub fn validate(&self) -> Result<(), FwrError> {
        for (name, value) in [
            ("R", self.r),
            ("C", self.c),
            ("Rf", self.rf),
            ("I0", self.i0),
            ("A", self.amplitude),
            ("f", self.frequency),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(FwrError::NonPositiveParam { name, value });
            }
        }
        Ok(())
    }

    /// Input period 1/f (seconds).
    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }

    /// Angular frequency 2*pi*f (rad/s).
    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency
    }
}

/// Diode voltages for a state vector `(x1, x2, vout)`.
pub fn diode_voltages(x: &DVector<f64>) -> (f64, f64) {
    let v1 = x[0] - x[2];
    let v2 = -x[0] - x[2];
    (v1, v2)
}

/// Mode from the diode-voltage sign quadrant; boundaries belong to the
/// `>= 0` side.
pub fn fwr_mode_of(v1: f64, v2: f64) -> FwrMode {
    match (v1 >= 0.0, v2 >= 0.0) {
        (true, true) => FwrMode::OnOn,
        (true, false) => FwrMode::OnOff,
        (false, true) => FwrMode::OffOn,
        (false, false) => FwrMode::OffOff,
    }
}

/// Per-mode affine dynamics of the state `(x1, x2, vout)`.
///
/// The `vout` row comes from `dvout/dt = -vout/(R C) + (i1 + i2)/C` with the
/// mode's diode currents substituted:
/// conducting diode `i = v/Rf`, blocking diode `i = -I0`.
pub fn build_fwr_dynamics(p: &CircuitParams, mode: FwrMode) -> Result<AffineDynamics, FwrError> {
    p.validate()?;
    let w = p.omega();
    let rc = 1.0 / (p.r * p.c);
    let rfc = 1.0 / (p.rf * p.c);
    let leak = p.i0 / p.c;
    // (row over x1, x2, vout; affine term)
    let (vout_row, vout_b) = match mode {
        // i1 + i2 = (v1 + v2)/Rf = -2 vout / Rf: the x1 terms cancel.
        FwrMode::OnOn => ([0.0, 0.0, -rc - 2.0 * rfc], 0.0),
        // i1 = (x1 - vout)/Rf, i2 = -I0
        FwrMode::OnOff => ([rfc, 0.0, -rc - rfc], -leak),
        // i1 = -I0, i2 = (-x1 - vout)/Rf
        FwrMode::OffOn => ([-rfc, 0.0, -rc - rfc], -leak),
        // i1 = i2 = -I0
        FwrMode::OffOff => ([0.0, 0.0, -rc], -2.0 * leak),
    };
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[
            0.0, w, 0.0, //
            -w, 0.0, 0.0, //
            vout_row[0], vout_row[1], vout_row[2],
        ],
    );
    let b = DVector::from_row_slice(&[0.0, 0.0, vout_b]);
    Ok(AffineDynamics::new(a, b).expect("3x3 system is square"))
}

// Halfspaces over (x1, x2, vout): v1 = x1 - vout, v2 = -x1 - vout.
fn v1_le_zero() -> Halfspace {
    Halfspace::from_slice(&[1.0, 0.0, -1.0], 0.0)
}
fn v1_ge_zero() -> Halfspace {
    Halfspace::from_slice(&[-1.0, 0.0, 1.0], 0.0)
}
fn v2_le_zero() -> Halfspace {
    Halfspace::from_slice(&[-1.0, 0.0, -1.0], 0.0)
}
fn v2_ge_zero() -> Halfspace {
    Halfspace::from_slice(&[1.0, 0.0, 1.0], 0.0)
}

fn invariant_of(mode: FwrMode) -> Polytope {
    let halves = match mode {
        FwrMode::OnOn => vec![v1_ge_zero(), v2_ge_zero()],
        FwrMode::OnOff => vec![v1_ge_zero(), v2_le_zero()],
        FwrMode::OffOn => vec![v1_le_zero(), v2_ge_zero()],
        FwrMode::OffOff => vec![v1_le_zero(), v2_le_zero()],
    };
    Polytope::new(3, halves).expect("static invariant data")
}

/// Four-mode automaton with eight transitions across the `v1 = 0` and
/// `v2 = 0` hyperplanes between sign-adjacent modes (there is no diagonal
/// OnOn <-> OffOff edge: those quadrants only touch in a ridge).
pub fn build_fwr_piha(
    p: &CircuitParams,
    ics_vout: (f64, f64),
    horizon: f64,
) -> Result<Piha, FwrError> {
    p.validate()?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(FwrError::BadHorizon(horizon));
    }
    let a = p.amplitude;
    let (lo, hi) = ics_vout;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= -1.0 && hi <= a + 1.0) {
        return Err(FwrError::BadIcsInterval(lo, hi));
    }

    let modes = FwrMode::ALL
        .iter()
        .map(|&m| {
            Ok(Mode {
                id: m.name().to_string(),
                dynamics: build_fwr_dynamics(p, m)?,
                invariant: invariant_of(m),
            })
        })
        .collect::<Result<Vec<_>, FwrError>>()?;

    // Guard for an edge = the shared sign hyperplane intersected with the
    // facet's side constraints (same slab in both directions).
    let v1_plane = vec![v1_le_zero(), v1_ge_zero()];
    let v2_plane = vec![v2_le_zero(), v2_ge_zero()];
    let slab = |plane: &[Halfspace], side: Halfspace| {
        let mut hs = plane.to_vec();
        hs.push(side);
        Polytope::new(3, hs).expect("static guard data")
    };
    let edges = [
        // across v1 = 0, v2 <= 0 side
        ("OffOff", "OnOff", slab(&v1_plane, v2_le_zero())),
        ("OnOff", "OffOff", slab(&v1_plane, v2_le_zero())),
        // across v1 = 0, v2 >= 0 side
        ("OffOn", "OnOn", slab(&v1_plane, v2_ge_zero())),
        ("OnOn", "OffOn", slab(&v1_plane, v2_ge_zero())),
        // across v2 = 0, v1 <= 0 side
        ("OffOff", "OffOn", slab(&v2_plane, v1_le_zero())),
        ("OffOn", "OffOff", slab(&v2_plane, v1_le_zero())),
        // across v2 = 0, v1 >= 0 side
        ("OnOff", "OnOn", slab(&v2_plane, v1_ge_zero())),
        ("OnOn", "OnOff", slab(&v2_plane, v1_ge_zero())),
    ];
    let transitions = edges
        .into_iter()
        .map(|(s, t, guard)| Transition { source: s.into(), target: t.into(), guard })
        .collect();

    // ICS: x1 = 0, x2 = A, vout in [lo, hi].
    let ics = Polytope::from_box(&[0.0, a, lo], &[0.0, a, hi]).expect("ics box");
    let analysis_region =
        Polytope::from_box(&[-(a + 1.0), -(a + 1.0), -1.0], &[a + 1.0, a + 1.0, a + 1.0])
            .expect("analysis region box");

    Ok(Piha { dim: 3, modes, transitions, ics, analysis_region, horizon })
}

/// The two safety properties: P1 "vout is never negative" and P2 "vout never
/// drops below the threshold". Both also forbid leaving the analysis region.
/// P1's avoid region is offset by -1e-6 V so that trajectories touching zero
/// exactly do not count as violations.
pub fn fwr_properties(
    p: &CircuitParams,
    p2_threshold: f64,
) -> Result<(SafetySpec, SafetySpec), FwrError> {
    p.validate()?;
    if !(p2_threshold < p.amplitude) {
        return Err(FwrError::ThresholdAboveAmplitude {
            threshold: p2_threshold,
            amplitude: p.amplitude,
        });
    }
    let vout_le = |threshold: f64| {
        Polytope::new(3, vec![Halfspace::from_slice(&[0.0, 0.0, 1.0], threshold)])
            .expect("avoid halfspace")
    };
    let p1 = SafetySpec {
        name: "P1".into(),
        avoid_regions: vec![AvoidRegion { mode: None, region: vout_le(-1.0e-6) }],
    };
    let p2 = SafetySpec {
        name: "P2".into(),
        avoid_regions: vec![AvoidRegion { mode: None, region: vout_le(p2_threshold) }],
    };
    Ok((p1, p2))
}
