use std::net::IpAddr;

use nalgebra::{Vector2, Vector3};

use super::solver::{gauss_newton, Normal};
use super::{
    rtt_to_distance, EnuFix, PositionEstimate, PositioningError, PositioningMethod,
    RangingModelParams,
};
use crate::geo::EnuFrame;
use crate::trace::{AnchorDatabase, Infrastructure, RangingObservation};

const GRID: usize = 15;
const MAX_ITERATIONS: usize = 50;
const STEP_TOLERANCE: f64 = 1e-3;

/// `Σ max(0, ‖p − α_j‖ − d_j)²`; zero on the intersection of all disks.
fn hinge(p: &Vector3<f64>, servers: &[Vector3<f64>], distances: &[f64]) -> f64 {
    servers
        .iter()
        .zip(distances)
        .map(|(s, d)| ((p - s).norm() - d).max(0.0).powi(2))
        .sum()
}

/// Approximates the centroid of the disk intersection: the centroid of the
/// feasible points of a grid over the intersection's bounding box, polished by
/// Gauss-Newton on the hinge objective when no grid point is feasible.
pub fn geoip_solve(
    servers: &[Vector3<f64>],
    distances: &[f64],
    up: f64,
) -> Result<EnuFix, PositioningError> {
    let n = servers.len();
    if n != distances.len() {
        return Err(PositioningError::InvalidInput(
            "server and distance counts differ".into(),
        ));
    }
    if n < 3 {
        return Err(PositioningError::InsufficientAnchors { needed: 3, got: n });
    }
    if distances.iter().any(|d| !(*d >= 0.0 && d.is_finite())) || !up.is_finite() {
        return Err(PositioningError::InvalidInput("bad distance".into()));
    }
    let mut lo = Vector2::repeat(f64::NEG_INFINITY);
    let mut hi = Vector2::repeat(f64::INFINITY);
    for (s, d) in servers.iter().zip(distances) {
        lo = lo.sup(&(s.xy() - Vector2::repeat(*d)));
        hi = hi.inf(&(s.xy() + Vector2::repeat(*d)));
    }
    if lo.x > hi.x || lo.y > hi.y {
        // Disjoint bounding boxes: search the span between the server extremes.
        lo = servers
            .iter()
            .map(|s| s.xy())
            .fold(Vector2::repeat(f64::INFINITY), |a, b| a.inf(&b));
        hi = servers
            .iter()
            .map(|s| s.xy())
            .fold(Vector2::repeat(f64::NEG_INFINITY), |a, b| a.sup(&b));
    }
    let mut feasible: Vec<Vector2<f64>> = Vec::new();
    let mut best = (f64::INFINITY, lo);
    for i in 0..GRID {
        for j in 0..GRID {
            let g = Vector2::new(
                lo.x + (hi.x - lo.x) * (i as f64 + 0.5) / GRID as f64,
                lo.y + (hi.y - lo.y) * (j as f64 + 0.5) / GRID as f64,
            );
            let f = hinge(&Vector3::new(g.x, g.y, up), servers, distances);
            if f == 0.0 {
                feasible.push(g);
            }
            if f < best.0 {
                best = (f, g);
            }
        }
    }
    let (xy, iterations, spread) = if feasible.is_empty() {
        let out = gauss_newton(best.1, MAX_ITERATIONS, STEP_TOLERANCE, |x| {
            let p = Vector3::new(x.x, x.y, up);
            let mut normal = Normal::<2>::zero();
            for (s, d) in servers.iter().zip(distances) {
                let diff = p - s;
                let range = diff.norm();
                if range > *d && range > 0.0 {
                    normal.add(range - d, &(diff.xy() / range));
                }
            }
            normal
        });
        (out.x, out.iterations, Vector2::zeros())
    } else {
        let m = feasible.len() as f64;
        let c = feasible.iter().sum::<Vector2<f64>>() / m;
        let var = feasible
            .iter()
            .map(|g| (g - c).component_mul(&(g - c)))
            .sum::<Vector2<f64>>()
            / m;
        (c, 0, var.map(f64::sqrt))
    };
    if !xy.iter().all(|v| v.is_finite()) {
        return Err(PositioningError::NoConvergence);
    }
    let position = Vector3::new(xy.x, xy.y, up);
    let residual_rms = (servers
        .iter()
        .zip(distances)
        .map(|(s, d)| ((position - s).norm() - d).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let horizontal = Vector2::new(
        residual_rms.max(spread.x).max(1.0),
        residual_rms.max(spread.y).max(1.0),
    );
    Ok(EnuFix {
        position,
        sigma: Vector3::new(horizontal.x, horizontal.y, horizontal.max()),
        clock_bias: None,
        clock_sigma: None,
        residual_rms,
        iterations,
    })
}

/// Delay-based GeoIP with at least three RTTs, else the table entry for the
/// client address.
#[allow(clippy::too_many_arguments)]
pub fn geoip_position(
    rtts: &[&RangingObservation],
    db: &AnchorDatabase,
    client_ip: Option<IpAddr>,
    frame: &EnuFrame,
    up: f64,
    params: &RangingModelParams,
    subset_index: usize,
) -> Result<PositionEstimate, PositioningError> {
    if rtts.len() >= 3 {
        let mut servers = Vec::with_capacity(rtts.len());
        let mut distances = Vec::with_capacity(rtts.len());
        for o in rtts {
            if o.infrastructure != Infrastructure::GeoIp {
                return Err(PositioningError::InvalidInput(
                    "non-RTT observation in GeoIP subset".into(),
                ));
            }
            let pos = db
                .position(Infrastructure::GeoIp, &o.anchor_id)
                .ok_or_else(|| PositioningError::UnknownAnchor(o.anchor_id.to_string()))?;
            servers.push(frame.to_enu(&pos));
            distances.push(rtt_to_distance(o.value, &params.rtt));
        }
        let mut fix = geoip_solve(&servers, &distances, up)?;
        let floor = params.rtt.slope_km_per_ms * 1000.0 * params.rtt_sigma_ms;
        fix.sigma = fix.sigma.map(|s| s.max(floor));
        return PositionEstimate::from_fix(
            &fix,
            frame,
            PositioningMethod::GeoIpDelay,
            Infrastructure::GeoIp,
            subset_index,
        );
    }
    let table_pos = client_ip
        .and_then(|ip| db.geoip_table.lookup(ip))
        .ok_or(PositioningError::NoGeoipData)?;
    let fix = EnuFix {
        position: frame.to_enu(&table_pos),
        sigma: Vector3::repeat(params.geoip_table_sigma.max(f64::MIN_POSITIVE)),
        clock_bias: None,
        clock_sigma: None,
        residual_rms: 0.0,
        iterations: 0,
    };
    PositionEstimate::from_fix(
        &fix,
        frame,
        PositioningMethod::GeoIpTable,
        Infrastructure::GeoIp,
        subset_index,
    )
}
