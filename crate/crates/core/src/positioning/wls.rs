use nalgebra::{Matrix2, Vector2, Vector3};

use super::solver::{gauss_newton, GnOutcome, Normal};
use super::{
    rssi_to_distance, EnuFix, PositionEstimate, PositioningError, PositioningMethod,
    RangingModelParams,
};
use crate::geo::EnuFrame;
use crate::trace::{AnchorDatabase, RangingObservation};

const MAX_ITERATIONS: usize = 50;
const STEP_TOLERANCE: f64 = 1e-2;
/// Iterations spent on each secondary start before it must beat the best fit.
const PROBE_ITERATIONS: usize = 4;
/// Horizontal anchor spread (m²) below which the geometry is degenerate.
const MIN_SPREAD: f64 = 1e-6;

/// `Σ ((‖p − α_j‖ − ρ_j) / ρ_j)²`: range residuals weighted by the inverse
/// square of the measured range.
pub fn wls_objective(p: &Vector3<f64>, anchors: &[Vector3<f64>], distances: &[f64]) -> f64 {
    anchors
        .iter()
        .zip(distances)
        .map(|(a, d)| (((p - a).norm() - d) / d).powi(2))
        .sum()
}

fn normal_at(xy: &Vector2<f64>, up: f64, anchors: &[Vector3<f64>], distances: &[f64]) -> Normal<2> {
    let p = Vector3::new(xy.x, xy.y, up);
    let mut n = Normal::<2>::zero();
    for (a, d) in anchors.iter().zip(distances) {
        let diff = p - a;
        let range = diff.norm();
        let j = if range > 1e-12 {
            Vector2::new(diff.x, diff.y) / (range * d)
        } else {
            Vector2::zeros()
        };
        n.add((range - d) / d, &j);
    }
    n
}

fn check_geometry(anchors: &[Vector3<f64>]) -> Result<(), PositioningError> {
    let n = anchors.len() as f64;
    let c = anchors.iter().map(|a| a.xy()).sum::<Vector2<f64>>() / n;
    let mut cov = Matrix2::zeros();
    for a in anchors {
        let d = a.xy() - c;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigenvalues();
    if !(eig.min() > MIN_SPREAD && eig.min() > eig.max() * 1e-10) {
        return Err(PositioningError::SingularGeometry);
    }
    Ok(())
}

/// Horizontal weighted least squares with altitude fixed to `up`.
///
/// Runs damped Gauss-Newton from the anchor centroid. Four perturbed starts
/// get a few iterations each and are refined only if they undercut the best
/// fit so far. Any anchor that beats the best solution is tried as a start too.
/// `relative_sigma` floors the relative range-error scale used for the
/// covariance.
pub fn geolocation_wls(
    anchors: &[Vector3<f64>],
    distances: &[f64],
    up: f64,
    relative_sigma: f64,
) -> Result<EnuFix, PositioningError> {
    let n = anchors.len();
    if n != distances.len() {
        return Err(PositioningError::InvalidInput(
            "anchor and distance counts differ".into(),
        ));
    }
    if n < 3 {
        return Err(PositioningError::InsufficientAnchors { needed: 3, got: n });
    }
    if distances.iter().any(|d| !(*d > 0.0 && d.is_finite()))
        || anchors.iter().any(|a| !a.iter().all(|c| c.is_finite()))
        || !up.is_finite()
    {
        return Err(PositioningError::InvalidInput(
            "distances must be positive and inputs finite".into(),
        ));
    }
    check_geometry(anchors)?;

    let centroid = anchors.iter().map(|a| a.xy()).sum::<Vector2<f64>>() / n as f64;
    let spread = (anchors
        .iter()
        .map(|a| (a.xy() - centroid).norm_squared())
        .sum::<f64>()
        / n as f64)
        .sqrt()
        .max(1.0);
    let starts = [
        centroid,
        centroid + Vector2::new(spread, 0.0),
        centroid - Vector2::new(spread, 0.0),
        centroid + Vector2::new(0.0, spread),
        centroid - Vector2::new(0.0, spread),
    ];
    let solve = |x0: Vector2<f64>| {
        gauss_newton(x0, MAX_ITERATIONS, STEP_TOLERANCE, |x| {
            normal_at(x, up, anchors, distances)
        })
    };
    let mut best: Option<GnOutcome<2>> = None;
    let consider = |best: &mut Option<GnOutcome<2>>, out: GnOutcome<2>| {
        if out.normal.cost.is_finite()
            && best
                .as_ref()
                .is_none_or(|b| out.normal.cost < b.normal.cost)
        {
            *best = Some(out);
        }
    };
    consider(&mut best, solve(starts[0]));
    for s in &starts[1..] {
        let probe = gauss_newton(*s, PROBE_ITERATIONS, STEP_TOLERANCE, |x| {
            normal_at(x, up, anchors, distances)
        });
        if best
            .as_ref()
            .is_none_or(|b| probe.normal.cost < b.normal.cost)
        {
            consider(&mut best, solve(probe.x));
        }
    }
    let mut anchor_starts: Vec<(f64, Vector2<f64>)> = anchors
        .iter()
        .map(|a| {
            let p = Vector3::new(a.x, a.y, up);
            (wls_objective(&p, anchors, distances), a.xy())
        })
        .collect();
    anchor_starts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(&(cost, start)) = anchor_starts.first() {
        if best.as_ref().is_none_or(|b| cost < b.normal.cost) {
            consider(&mut best, solve(start));
        }
    }
    let best = best.ok_or(PositioningError::NoConvergence)?;
    if !best.x.iter().all(|v| v.is_finite()) {
        return Err(PositioningError::NoConvergence);
    }

    let position = Vector3::new(best.x.x, best.x.y, up);
    let dof = (n - 2) as f64;
    let scale = (best.normal.cost / dof).sqrt().max(relative_sigma);
    let cov = best
        .normal
        .jtj
        .try_inverse()
        .ok_or(PositioningError::SingularGeometry)?
        * scale
        * scale;
    let (se, sn) = (cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt());
    if !(se.is_finite() && sn.is_finite()) {
        return Err(PositioningError::SingularGeometry);
    }
    let residual_rms = (anchors
        .iter()
        .zip(distances)
        .map(|(a, d)| ((position - a).norm() - d).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    Ok(EnuFix {
        position,
        sigma: Vector3::new(se, sn, se.max(sn)),
        clock_bias: None,
        clock_sigma: None,
        residual_rms,
        iterations: best.iterations,
    })
}

/// RSSI observations → ranges → weighted least squares.
pub fn network_fix(
    observations: &[&RangingObservation],
    db: &AnchorDatabase,
    frame: &EnuFrame,
    up: f64,
    params: &RangingModelParams,
    subset_index: usize,
) -> Result<PositionEstimate, PositioningError> {
    let infra = observations
        .first()
        .map(|o| o.infrastructure)
        .ok_or(PositioningError::InsufficientAnchors { needed: 3, got: 0 })?;
    let mut anchors = Vec::with_capacity(observations.len());
    let mut distances = Vec::with_capacity(observations.len());
    for o in observations {
        if o.infrastructure != infra || !infra.is_rssi() {
            return Err(PositioningError::InvalidInput(
                "network subset mixes infrastructures or is not RSSI-based".into(),
            ));
        }
        let pos = db
            .position(infra, &o.anchor_id)
            .ok_or_else(|| PositioningError::UnknownAnchor(o.anchor_id.to_string()))?;
        anchors.push(frame.to_enu(&pos));
        distances.push(rssi_to_distance(
            o.value,
            params.rssi_p0_dbm,
            params.path_loss(infra),
        ));
    }
    let fix = geolocation_wls(&anchors, &distances, up, params.relative_range_sigma(infra))?;
    PositionEstimate::from_fix(
        &fix,
        frame,
        PositioningMethod::WeightedLeastSquares,
        infra,
        subset_index,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(points: &[(f64, f64)]) -> Vec<Vector3<f64>> {
        points
            .iter()
            .map(|&(x, y)| Vector3::new(x, y, 0.0))
            .collect()
    }

    fn ranges(anchors: &[Vector3<f64>], p: Vector3<f64>) -> Vec<f64> {
        anchors.iter().map(|a| (p - a).norm()).collect()
    }

    #[test]
    fn right_triangle_recovers_point() {
        let anchors = flat(&[(0.0, 0.0), (100.0, 0.0), (0.0, 100.0)]);
        let d = ranges(&anchors, Vector3::new(30.0, 40.0, 0.0));
        let fix = geolocation_wls(&anchors, &d, 0.0, 0.3).unwrap();
        assert!((fix.position.xy() - Vector2::new(30.0, 40.0)).norm() < 0.1);
    }

    #[test]
    fn grid_oracle_agrees_on_right_triangle() {
        let anchors = flat(&[(0.0, 0.0), (100.0, 0.0), (0.0, 100.0)]);
        let d = ranges(&anchors, Vector3::new(30.0, 40.0, 0.0));
        // Brute force over [-50, 150]² at 0.1 m pitch.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=2000 {
            let x = -50.0 + i as f64 * 0.1;
            for j in 0..=2000 {
                let y = -50.0 + j as f64 * 0.1;
                let f = wls_objective(&Vector3::new(x, y, 0.0), &anchors, &d);
                if f < best.0 {
                    best = (f, x, y);
                }
            }
        }
        let fix = geolocation_wls(&anchors, &d, 0.0, 0.3).unwrap();
        assert!((fix.position.xy() - Vector2::new(best.1, best.2)).norm() < 0.1);
    }

    #[test]
    fn equilateral_equal_distances_give_centroid() {
        let r = 50.0;
        let anchors: Vec<Vector3<f64>> = (0..3)
            .map(|k| {
                let a = (90.0 + 120.0 * k as f64).to_radians();
                Vector3::new(r * a.cos() + 10.0, r * a.sin() - 20.0, 0.0)
            })
            .collect();
        let fix = geolocation_wls(&anchors, &[r; 3], 0.0, 0.3).unwrap();
        assert!((fix.position.xy() - Vector2::new(10.0, -20.0)).norm() < 1e-3);
    }

    #[test]
    fn two_anchors_are_insufficient() {
        let anchors = flat(&[(0.0, 0.0), (100.0, 0.0)]);
        assert_eq!(
            geolocation_wls(&anchors, &[50.0, 50.0], 0.0, 0.3),
            Err(PositioningError::InsufficientAnchors { needed: 3, got: 2 })
        );
    }

    #[test]
    fn collinear_anchors_are_singular() {
        let anchors = flat(&[(0.0, 0.0), (50.0, 0.0), (100.0, 0.0)]);
        assert_eq!(
            geolocation_wls(&anchors, &[40.0, 30.0, 70.0], 0.0, 0.3),
            Err(PositioningError::SingularGeometry)
        );
    }

    proptest! {
        #[test]
        fn solution_beats_anchors_and_centroid(
            pts in proptest::collection::vec((-200f64..200.0, -200f64..200.0), 3..8),
            noise in proptest::collection::vec(0.5f64..2.0, 8),
            px in -150f64..150.0, py in -150f64..150.0,
        ) {
            let anchors = flat(&pts);
            let truth = Vector3::new(px, py, 0.0);
            let d: Vec<f64> = ranges(&anchors, truth)
                .iter()
                .zip(&noise)
                .map(|(r, k)| (r * k).max(1.0))
                .collect();
            let Ok(fix) = geolocation_wls(&anchors, &d, 0.0, 0.3) else {
                return Ok(());
            };
            let f = wls_objective(&fix.position, &anchors, &d);
            let c = anchors.iter().sum::<Vector3<f64>>() / anchors.len() as f64;
            prop_assert!(f <= wls_objective(&c, &anchors, &d) + 1e-12);
            for a in &anchors {
                prop_assert!(f <= wls_objective(a, &anchors, &d) + 1e-12);
            }
            prop_assert!(fix.sigma.iter().all(|s| *s > 0.0));
        }
    }
}
