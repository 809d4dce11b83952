//! WGS84 coordinates, the local east-north-up frame and the sensor-to-world
//! rotation used by motion propagation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS84 semi-minor axis (m).
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// First eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),
}

/// Latitude/longitude in degrees, altitude in meters above the ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticPosition {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
}

impl GeodeticPosition {
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self, GeoError> {
        let p = Self {
            latitude,
            longitude,
            altitude,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.latitude.is_finite() && self.longitude.is_finite() && self.altitude.is_finite()) {
            return Err(GeoError::InvalidCoordinate(format!(
                "non-finite component in {self:?}"
            )));
        }
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(GeoError::InvalidCoordinate(format!(
                "latitude {} outside [-90, 90]",
                self.latitude
            )));
        }
        if !(-180.0..180.0).contains(&self.longitude) {
            return Err(GeoError::InvalidCoordinate(format!(
                "longitude {} outside [-180, 180)",
                self.longitude
            )));
        }
        Ok(())
    }
}

/// Earth-centered Earth-fixed position (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcefPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefPosition {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Roll, pitch and yaw in degrees in the platform sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OrientationAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl OrientationAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }
}

/// Wraps an angle in degrees into [-180, 180).
pub fn wrap_degrees(angle: f64) -> f64 {
    let a = (angle + 180.0).rem_euclid(360.0) - 180.0;
    if a >= 180.0 {
        a - 360.0
    } else {
        a
    }
}

pub fn geodetic_to_ecef(p: &GeodeticPosition) -> Result<EcefPosition, GeoError> {
    if !(p.latitude.is_finite() && p.longitude.is_finite() && p.altitude.is_finite()) {
        return Err(GeoError::InvalidCoordinate(format!(
            "non-finite component in {p:?}"
        )));
    }
    Ok(geodetic_to_ecef_unchecked(p))
}

fn geodetic_to_ecef_unchecked(p: &GeodeticPosition) -> EcefPosition {
    let (sin_lat, cos_lat) = p.latitude.to_radians().sin_cos();
    let (sin_lon, cos_lon) = p.longitude.to_radians().sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    EcefPosition {
        x: (n + p.altitude) * cos_lat * cos_lon,
        y: (n + p.altitude) * cos_lat * sin_lon,
        z: (n * (1.0 - WGS84_E2) + p.altitude) * sin_lat,
    }
}

pub fn ecef_to_geodetic(p: &EcefPosition) -> Result<GeodeticPosition, GeoError> {
    if !p.is_finite() {
        return Err(GeoError::InvalidCoordinate(format!(
            "non-finite component in {p:?}"
        )));
    }
    let rho = p.x.hypot(p.y);
    if rho == 0.0 {
        // Polar axis: latitude and height are closed form, longitude is arbitrary.
        if p.z == 0.0 {
            return Err(GeoError::InvalidCoordinate("Earth center".into()));
        }
        return Ok(GeodeticPosition {
            latitude: 90f64.copysign(p.z),
            longitude: 0.0,
            altitude: p.z.abs() - WGS84_B,
        });
    }
    let longitude = wrap_degrees(p.y.atan2(p.x).to_degrees());
    // Fixed-point iteration on latitude written without any division by rho
    // or cos(lat), so it stays well conditioned near the poles.
    let mut lat = p.z.atan2(rho * (1.0 - WGS84_E2));
    for _ in 0..16 {
        let sin_lat = lat.sin();
        let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
        let next = (p.z + WGS84_E2 * n * sin_lat).atan2(rho);
        let done = (next - lat).abs() < 1e-15;
        lat = next;
        if done {
            break;
        }
    }
    let (sin_lat, cos_lat) = lat.sin_cos();
    let altitude =
        rho * cos_lat + p.z * sin_lat - WGS84_A * (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    Ok(GeodeticPosition {
        latitude: lat.to_degrees(),
        longitude,
        altitude,
    })
}

/// The sensor-to-world rotation: yaw about up, then pitch about the first
/// axis, then roll about the second, with the sign conventions of the
/// smartphone sensor frame (roll and pitch swapped relative to aviation, yaw
/// positive counter-clockwise).
pub fn rotation_matrix(o: &OrientationAngles) -> Matrix3<f64> {
    let (s_phi, c_phi) = o.roll.to_radians().sin_cos();
    let (s_theta, c_theta) = o.pitch.to_radians().sin_cos();
    let (s_psi, c_psi) = o.yaw.to_radians().sin_cos();
    let r_psi = Matrix3::new(c_psi, -s_psi, 0.0, s_psi, c_psi, 0.0, 0.0, 0.0, 1.0);
    let r_theta = Matrix3::new(1.0, 0.0, 0.0, 0.0, c_theta, s_theta, 0.0, -s_theta, c_theta);
    let r_phi = Matrix3::new(c_phi, 0.0, -s_phi, 0.0, 1.0, 0.0, s_phi, 0.0, c_phi);
    r_psi * r_theta * r_phi
}

/// Straight-line (ECEF chord) distance in meters.
pub fn distance(a: &GeodeticPosition, b: &GeodeticPosition) -> f64 {
    let pa = geodetic_to_ecef_unchecked(a).to_vector();
    let pb = geodetic_to_ecef_unchecked(b).to_vector();
    (pa - pb).norm()
}

/// A local east-north-up Cartesian frame anchored at a geodetic origin.
#[derive(Debug, Clone, PartialEq)]
pub struct EnuFrame {
    origin: GeodeticPosition,
    origin_ecef: Vector3<f64>,
    // Rows are the east, north and up unit vectors expressed in ECEF.
    ecef_to_enu: Matrix3<f64>,
}

impl EnuFrame {
    pub fn new(origin: GeodeticPosition) -> Result<Self, GeoError> {
        origin.validate()?;
        let origin_ecef = geodetic_to_ecef(&origin)?.to_vector();
        let (s_lat, c_lat) = origin.latitude.to_radians().sin_cos();
        let (s_lon, c_lon) = origin.longitude.to_radians().sin_cos();
        let ecef_to_enu = Matrix3::new(
            -s_lon,
            c_lon,
            0.0,
            -s_lat * c_lon,
            -s_lat * s_lon,
            c_lat,
            c_lat * c_lon,
            c_lat * s_lon,
            s_lat,
        );
        Ok(Self {
            origin,
            origin_ecef,
            ecef_to_enu,
        })
    }

    pub fn origin(&self) -> &GeodeticPosition {
        &self.origin
    }

    pub fn ecef_to_enu(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.ecef_to_enu * (p - self.origin_ecef)
    }

    pub fn enu_to_ecef(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.ecef_to_enu.transpose() * p + self.origin_ecef
    }

    pub fn to_enu(&self, p: &GeodeticPosition) -> Vector3<f64> {
        self.ecef_to_enu(&geodetic_to_ecef_unchecked(p).to_vector())
    }

    pub fn to_geodetic(&self, p: &Vector3<f64>) -> Result<GeodeticPosition, GeoError> {
        ecef_to_geodetic(&EcefPosition::from_vector(&self.enu_to_ecef(p)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn geo(lat: f64, lon: f64, alt: f64) -> GeodeticPosition {
        GeodeticPosition::new(lat, lon, alt).unwrap()
    }

    #[test]
    fn equator_prime_meridian_is_semi_major_axis() {
        let p = geodetic_to_ecef(&geo(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(p, EcefPosition::new(6_378_137.0, 0.0, 0.0));
    }

    #[test]
    fn north_pole_is_semi_minor_axis() {
        let p = geodetic_to_ecef(&geo(90.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.z, 6_356_752.314245, epsilon = 1e-6);
    }

    #[test]
    fn stockholm_matches_extended_precision_reference() {
        // Evaluated with 40-digit arithmetic from the published WGS84 constants.
        let p = geodetic_to_ecef(&geo(59.4, 17.95, 30.0)).unwrap();
        assert_abs_diff_eq!(p.x, 3_096_406.365_807_040_9, epsilon = 1e-6);
        assert_abs_diff_eq!(p.y, 1_003_096.866_701_253_6, epsilon = 1e-6);
        assert_abs_diff_eq!(p.z, 5_466_778.318_453_308_7, epsilon = 1e-6);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let p = GeodeticPosition {
            latitude: f64::NAN,
            longitude: 0.0,
            altitude: 0.0,
        };
        assert!(matches!(
            geodetic_to_ecef(&p),
            Err(GeoError::InvalidCoordinate(_))
        ));
        assert!(ecef_to_geodetic(&EcefPosition::new(f64::INFINITY, 0.0, 0.0)).is_err());
    }

    #[test]
    fn axis_and_polar_inverse_cases() {
        let g = ecef_to_geodetic(&EcefPosition::new(6_378_137.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(g.latitude, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.longitude, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.altitude, 0.0, epsilon = 1e-6);

        let g = ecef_to_geodetic(&EcefPosition::new(0.0, 0.0, 6_356_752.314245)).unwrap();
        assert_eq!(g.latitude, 90.0);
        assert_eq!(g.longitude, 0.0);
        assert_abs_diff_eq!(g.altitude, 0.0, epsilon = 1e-6);

        // Just off the axis the iteration must still be stable.
        let near = EcefPosition::new(0.3, -0.2, -6_356_800.0);
        let back = geodetic_to_ecef(&ecef_to_geodetic(&near).unwrap()).unwrap();
        assert!((back.to_vector() - near.to_vector()).norm() < 1e-6);
    }

    #[test]
    fn round_trip_of_random_surface_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = geo(
                rng.random_range(-90.0..=90.0),
                rng.random_range(-180.0..180.0),
                rng.random_range(-100.0..9000.0),
            );
            let e = geodetic_to_ecef(&p).unwrap();
            let back = geodetic_to_ecef(&ecef_to_geodetic(&e).unwrap()).unwrap();
            worst = worst.max((back.to_vector() - e.to_vector()).norm());
        }
        assert!(worst <= 1e-6, "worst round-trip error {worst}");
    }

    #[test]
    fn satellite_altitude_round_trip() {
        let p = geo(35.0, -120.0, 20_200_000.0);
        let e = geodetic_to_ecef(&p).unwrap();
        let back = geodetic_to_ecef(&ecef_to_geodetic(&e).unwrap()).unwrap();
        assert!((back.to_vector() - e.to_vector()).norm() < 1e-6);
    }

    #[test]
    fn identity_rotation_at_zero_angles() {
        let r = rotation_matrix(&OrientationAngles::default());
        assert_abs_diff_eq!(r, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn yaw_quarter_turn_maps_x_to_y() {
        let r = rotation_matrix(&OrientationAngles::new(0.0, 0.0, 90.0));
        let v = r * Vector3::x();
        assert_abs_diff_eq!(v, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn roll_tilts_forward_axis_upward() {
        // The first sensor angle rotates about the second axis here, so a
        // positive value lifts the forward axis toward up.
        let r = rotation_matrix(&OrientationAngles::new(30.0, 0.0, 0.0));
        let v = r * Vector3::x();
        assert_abs_diff_eq!(
            v,
            Vector3::new(30f64.to_radians().cos(), 0.0, 0.5),
            epsilon = 1e-15
        );
    }

    #[test]
    fn distance_examples() {
        let a = geo(0.0, 0.0, 0.0);
        assert_eq!(distance(&a, &a), 0.0);
        // Chord lengths from 40-digit evaluation of the ellipsoid formulas.
        let b = geo(0.001, 0.0, 0.0);
        assert_abs_diff_eq!(distance(&a, &b), 110.574_275_820_304, epsilon = 1e-6);
        let c = geo(0.0, 0.001, 0.0);
        assert_abs_diff_eq!(distance(&a, &c), 111.319_490_791_861, epsilon = 1e-6);
    }

    #[test]
    fn enu_round_trip_near_origin() {
        let frame = EnuFrame::new(geo(59.4, 17.95, 30.0)).unwrap();
        let o = frame.to_enu(frame.origin());
        assert!(o.norm() < 1e-9);
        let p = Vector3::new(1234.5, -987.25, 12.0);
        let g = frame.to_geodetic(&p).unwrap();
        assert!((frame.to_enu(&g) - p).norm() < 1e-6);
    }

    #[test]
    fn wrap_degrees_range() {
        assert_eq!(wrap_degrees(180.0), -180.0);
        assert_eq!(wrap_degrees(-180.0), -180.0);
        assert_abs_diff_eq!(wrap_degrees(370.0), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_degrees(-190.0), 170.0, epsilon = 1e-12);
    }

    fn arb_geo() -> impl Strategy<Value = GeodeticPosition> {
        (-89.9f64..89.9, -179.9f64..179.9, -50.0f64..3000.0).prop_map(|(a, b, c)| geo(a, b, c))
    }

    proptest! {
        #[test]
        fn rotation_is_proper_orthonormal(
            roll in -180.0f64..180.0, pitch in -180.0f64..180.0, yaw in -180.0f64..180.0,
            vx in -100.0f64..100.0, vy in -100.0f64..100.0, vz in -100.0f64..100.0,
        ) {
            let r = rotation_matrix(&OrientationAngles::new(roll, pitch, yaw));
            prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
            let v = Vector3::new(vx, vy, vz);
            prop_assert!(((r * v).norm() - v.norm()).abs() < 1e-12 * v.norm().max(1.0));
        }

        #[test]
        fn distance_is_a_metric(a in arb_geo(), b in arb_geo(), c in arb_geo()) {
            let ab = distance(&a, &b);
            prop_assert!((ab - distance(&b, &a)).abs() < 1e-6);
            prop_assert!(ab >= 0.0);
            prop_assert!(ab <= distance(&a, &c) + distance(&c, &b) + 1e-6);
        }
    }
}
