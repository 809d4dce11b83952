use nalgebra::Vector3;

use crate::geo::rotation_matrix;
use crate::trace::MotionSample;

/// Position (local frame) and sensor-frame velocity of the platform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlatformState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// One motion step: `p̄ = p + R v dt + ½ R a dt²`, `v̄ = v + a dt`, with `R`
/// built from the sample's orientation. The sample's velocity is used as the
/// state velocity when `prev.velocity` is not tracked separately.
pub fn propagate_state(prev: &PlatformState, motion: &MotionSample, dt: f64) -> PlatformState {
    debug_assert!(dt > 0.0);
    let r = rotation_matrix(&motion.orientation);
    let position =
        prev.position + r * prev.velocity * dt + r * motion.acceleration * (0.5 * dt * dt);
    let velocity = prev.velocity + motion.acceleration * dt;
    PlatformState { position, velocity }
}

/// Local-frame displacement over one epoch driven by the epoch's own motion
/// sample (velocity measured over the interval ending at the sample).
pub fn motion_displacement(motion: &MotionSample, dt: f64) -> Vector3<f64> {
    let start = PlatformState {
        position: Vector3::zeros(),
        velocity: motion.velocity,
    };
    propagate_state(&start, motion, dt).position
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::OrientationAngles;

    fn sample(v: Vector3<f64>, a: Vector3<f64>, o: OrientationAngles) -> MotionSample {
        MotionSample {
            timestamp: 0.0,
            velocity: v,
            acceleration: a,
            orientation: o,
        }
    }

    #[test]
    fn stationary_keeps_position() {
        let p = PlatformState {
            position: Vector3::new(1.0, 2.0, 3.0),
            velocity: Vector3::zeros(),
        };
        let m = sample(
            Vector3::zeros(),
            Vector3::zeros(),
            OrientationAngles::default(),
        );
        assert_eq!(propagate_state(&p, &m, 1.0).position, p.position);
    }

    #[test]
    fn identity_orientation_unit_step() {
        let p = PlatformState {
            position: Vector3::zeros(),
            velocity: Vector3::new(1.0, 0.0, 0.0),
        };
        let m = sample(
            Vector3::zeros(),
            Vector3::zeros(),
            OrientationAngles::default(),
        );
        let next = propagate_state(&p, &m, 1.0);
        assert!((next.position - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(next.velocity, p.velocity);
    }

    #[test]
    fn yaw_ninety_points_north() {
        let p = PlatformState {
            position: Vector3::zeros(),
            velocity: Vector3::new(1.0, 0.0, 0.0),
        };
        let m = sample(
            Vector3::zeros(),
            Vector3::zeros(),
            OrientationAngles::new(0.0, 0.0, 90.0),
        );
        let next = propagate_state(&p, &m, 1.0);
        assert!((next.position - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn acceleration_terms() {
        let p = PlatformState {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
        };
        let m = sample(
            Vector3::zeros(),
            Vector3::new(2.0, 0.0, 0.0),
            OrientationAngles::default(),
        );
        let next = propagate_state(&p, &m, 3.0);
        assert!((next.position.x - 9.0).abs() < 1e-12);
        assert!((next.velocity.x - 6.0).abs() < 1e-12);
    }
}
