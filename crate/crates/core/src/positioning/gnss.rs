use nalgebra::{Matrix4, Vector3, Vector4};

use super::dop::dop_from_normal;
use super::solver::{gauss_newton, Normal};
use super::{EnuFix, PositionEstimate, PositioningError, PositioningMethod, RangingModelParams};
use crate::geo::EnuFrame;
use crate::trace::{Infrastructure, RangingObservation};

const MAX_ITERATIONS: usize = 25;
const STEP_TOLERANCE: f64 = 1e-4;
/// A non-converged solve is still accepted below this residual RMS (meters).
const ACCEPTABLE_RMS: f64 = 1e3;

/// Solves for position and receiver clock bias from satellites given in the
/// local frame. `prior_sigma` floors the a-posteriori range-error scale.
pub fn gnss_fix(
    satellites: &[Vector3<f64>],
    pseudoranges: &[f64],
    init: Option<Vector3<f64>>,
    prior_sigma: f64,
) -> Result<EnuFix, PositioningError> {
    let n = satellites.len();
    if n != pseudoranges.len() {
        return Err(PositioningError::InvalidInput(
            "satellite and pseudorange counts differ".into(),
        ));
    }
    if n < 4 {
        return Err(PositioningError::InsufficientAnchors { needed: 4, got: n });
    }
    if satellites
        .iter()
        .chain(std::iter::once(&init.unwrap_or_default()))
        .any(|s| !s.iter().all(|c| c.is_finite()))
        || pseudoranges.iter().any(|r| !r.is_finite())
    {
        return Err(PositioningError::InvalidInput("non-finite input".into()));
    }
    let p0 = init.unwrap_or_else(Vector3::zeros);
    // Closed-form clock initialization keeps the first step small.
    let b0 = satellites
        .iter()
        .zip(pseudoranges)
        .map(|(s, r)| r - (p0 - s).norm())
        .sum::<f64>()
        / n as f64;
    let eval = |x: &Vector4<f64>| {
        let p = x.xyz();
        let mut normal = Normal::<4>::zero();
        for (s, rho) in satellites.iter().zip(pseudoranges) {
            let d = p - s;
            let range = d.norm();
            let u = d / range;
            normal.add(range + x[3] - rho, &Vector4::new(u.x, u.y, u.z, 1.0));
        }
        normal
    };
    let out = gauss_newton(
        Vector4::new(p0.x, p0.y, p0.z, b0),
        MAX_ITERATIONS,
        STEP_TOLERANCE,
        eval,
    );
    let jtj: Matrix4<f64> = out.normal.jtj;
    let dop = dop_from_normal(&jtj)?;
    let dof = n.saturating_sub(4).max(1) as f64;
    let rms = if n > 4 {
        (out.normal.cost / dof).sqrt()
    } else {
        0.0
    };
    if !out.x.iter().all(|v| v.is_finite()) || (!out.converged && !(rms < ACCEPTABLE_RMS)) {
        return Err(PositioningError::NoConvergence);
    }
    let scale = rms.max(prior_sigma);
    Ok(EnuFix {
        position: out.x.xyz(),
        sigma: Vector3::new(dop.east, dop.north, dop.up) * scale,
        clock_bias: Some(out.x[3]),
        clock_sigma: Some(dop.time * scale),
        residual_rms: rms,
        iterations: out.iterations,
    })
}

/// Trilateration over GNSS observations; satellite positions are ECEF and
/// per-constellation biases are removed before solving.
pub fn gnss_trilateration(
    observations: &[&RangingObservation],
    frame: &EnuFrame,
    init: Option<Vector3<f64>>,
    params: &RangingModelParams,
    subset_index: usize,
) -> Result<PositionEstimate, PositioningError> {
    let mut sats = Vec::with_capacity(observations.len());
    let mut ranges = Vec::with_capacity(observations.len());
    for o in observations {
        if o.infrastructure != Infrastructure::Gnss {
            return Err(PositioningError::InvalidInput(format!(
                "{} observation passed to trilateration",
                o.infrastructure
            )));
        }
        let sat = o
            .satellite_position
            .ok_or_else(|| PositioningError::UnknownAnchor(o.anchor_id.to_string()))?;
        let bias = o
            .constellation
            .map_or(0.0, |c| params.constellation_bias(c));
        sats.push(frame.ecef_to_enu(&sat));
        ranges.push(o.value - bias);
    }
    let fix = gnss_fix(&sats, &ranges, init, params.pseudorange_sigma)?;
    PositionEstimate::from_fix(
        &fix,
        frame,
        PositioningMethod::Trilateration,
        Infrastructure::Gnss,
        subset_index,
    )
}
