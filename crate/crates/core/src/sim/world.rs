use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::synth::{gauss, Satellite};
use super::{ScenarioConfig, SimError};
use crate::geo::{geodetic_to_ecef, EnuFrame, GeodeticPosition, OrientationAngles};
use crate::trace::{
    AnchorDatabase, AnchorId, AnchorRecord, Constellation, Infrastructure, IpPrefix, MotionSample,
};

const SATELLITE_ALTITUDE_M: f64 = 20_200e3;
const MEAN_EARTH_RADIUS_M: f64 = 6_371e3;
const MIN_ELEVATION_DEG: f64 = 15.0;
const MAX_ELEVATION_DEG: f64 = 85.0;

/// Piecewise-linear path in the local frame of its first waypoint.
#[derive(Debug, Clone)]
pub struct Route {
    frame: EnuFrame,
    points: Vec<Vector3<f64>>,
    /// Cumulative arc length at each point.
    arc: Vec<f64>,
}

impl Route {
    pub fn new(waypoints: &[GeodeticPosition]) -> Result<Self, SimError> {
        let origin = *waypoints
            .first()
            .ok_or_else(|| SimError::ConfigInvalid("empty route".into()))?;
        let frame = EnuFrame::new(origin).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        Ok(Self::in_frame(
            frame,
            waypoints.iter().map(|w| frame_to_enu(&origin, w)).collect(),
        ))
    }

    /// Polyline given directly in `frame` coordinates.
    pub fn in_frame(frame: EnuFrame, points: Vec<Vector3<f64>>) -> Self {
        let mut arc = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += (p - points[i - 1]).norm();
            }
            arc.push(acc);
        }
        Self { frame, points, arc }
    }

    pub fn frame(&self) -> &EnuFrame {
        &self.frame
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap_or(&0.0)
    }

    /// Position after travelling `s` meters, reflecting at both ends.
    pub fn at(&self, s: f64) -> Vector3<f64> {
        let len = self.length();
        if len <= 0.0 {
            return self.points[0];
        }
        let period = 2.0 * len;
        let mut u = s.rem_euclid(period);
        if u > len {
            u = period - u;
        }
        let i = self
            .arc
            .partition_point(|a| *a <= u)
            .clamp(1, self.points.len() - 1);
        let seg = self.arc[i] - self.arc[i - 1];
        let f = if seg > 0.0 {
            (u - self.arc[i - 1]) / seg
        } else {
            0.0
        };
        self.points[i - 1] + (self.points[i] - self.points[i - 1]) * f
    }

    /// Random point within `spread` meters (horizontally) of the path.
    fn scatter<R: Rng + ?Sized>(&self, rng: &mut R, spread: f64, height: f64) -> Vector3<f64> {
        let on = self.at(rng.random_range(0.0..=self.length().max(f64::MIN_POSITIVE)));
        let r = spread * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        on + Vector3::new(r * a.cos(), r * a.sin(), height)
    }
}

fn frame_to_enu(origin: &GeodeticPosition, p: &GeodeticPosition) -> Vector3<f64> {
    EnuFrame::new(*origin)
        .map(|f| f.to_enu(p))
        .unwrap_or_default()
}

/// Ground-truth kinematics of the platform at 1/epoch_rate spacing.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub route: Route,
    pub timestamps: Vec<f64>,
    /// Local-frame truth positions.
    pub positions: Vec<Vector3<f64>>,
}

impl Trajectory {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let route = Route::new(&cfg.waypoint_positions()?)?;
        let dt = 1.0 / cfg.epoch_rate;
        let n = match cfg.epochs {
            Some(n) => n,
            None => (route.length() / (cfg.speed * dt)).floor() as usize + 1,
        };
        if n == 0 {
            return Err(SimError::ConfigInvalid("trace has no epochs".into()));
        }
        let timestamps = (0..n).map(|k| cfg.start_time + k as f64 * dt).collect();
        let positions = (0..n)
            .map(|k| route.at(cfg.speed * dt * k as f64))
            .collect();
        Ok(Self {
            route,
            timestamps,
            positions,
        })
    }

    pub fn frame(&self) -> &EnuFrame {
        self.route.frame()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn geodetic(&self, k: usize) -> Result<GeodeticPosition, SimError> {
        self.frame()
            .to_geodetic(&self.positions[k])
            .map_err(|e| SimError::ConfigInvalid(e.to_string()))
    }

    /// Noise-free motion sample describing the interval ending at epoch `k`:
    /// speed along the chord, roll = elevation angle, yaw = heading.
    pub fn exact_motion(&self, k: usize) -> MotionSample {
        let t = self.timestamps[k];
        if k == 0 {
            return MotionSample::stationary(t);
        }
        let d = self.positions[k] - self.positions[k - 1];
        let dt = t - self.timestamps[k - 1];
        let horizontal = d.xy().norm();
        let (heading, elevation) = if d.norm() > 0.0 {
            (
                d.y.atan2(d.x).to_degrees(),
                d.z.atan2(horizontal).to_degrees(),
            )
        } else {
            (0.0, 0.0)
        };
        MotionSample {
            timestamp: t,
            velocity: Vector3::new(d.norm() / dt, 0.0, 0.0),
            acceleration: Vector3::zeros(),
            orientation: OrientationAngles::new(elevation, 0.0, heading),
        }
    }

    pub fn noisy_motion<R: Rng + ?Sized>(
        &self,
        k: usize,
        noise: &super::NoiseModel,
        rng: &mut R,
    ) -> MotionSample {
        let mut m = self.exact_motion(k);
        if k == 0 {
            return m;
        }
        m.velocity += Vector3::from_fn(|_, _| gauss(rng, noise.velocity_sigma));
        m.acceleration += Vector3::from_fn(|_, _| gauss(rng, noise.acceleration_sigma));
        let s = noise.orientation_sigma_deg;
        m.orientation = OrientationAngles::new(
            m.orientation.roll + gauss(rng, s),
            m.orientation.pitch + gauss(rng, s),
            m.orientation.yaw + gauss(rng, s),
        );
        m
    }
}

/// Satellites on a sphere of GNSS orbital radius, seen from `origin` at
/// elevations between 15° and 85°; constellations assigned round-robin.
pub fn place_satellites<R: Rng + ?Sized>(
    frame: &EnuFrame,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Satellite>, SimError> {
    if count < 4 {
        return Err(SimError::InsufficientSatellites { got: count });
    }
    let o = geodetic_to_ecef(frame.origin())
        .map_err(|e| SimError::ConfigInvalid(e.to_string()))?
        .to_vector();
    let radius = MEAN_EARTH_RADIUS_M + SATELLITE_ALTITUDE_M;
    let mut per = [0usize; 4];
    Ok((0..count)
        .map(|i| {
            let c = Constellation::ALL[i % 4];
            per[i % 4] += 1;
            let az = rng.random_range(0.0..360.0f64).to_radians();
            let el = rng
                .random_range(MIN_ELEVATION_DEG..MAX_ELEVATION_DEG)
                .to_radians();
            let dir_enu = Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
            let u = frame.enu_to_ecef(&dir_enu) - o;
            // |o + r u| = radius, positive root.
            let b = o.dot(&u);
            let r = -b + (b * b - (o.norm_squared() - radius * radius)).sqrt();
            let prefix = match c {
                Constellation::Gps => 'G',
                Constellation::Galileo => 'E',
                Constellation::Glonass => 'R',
                Constellation::BeiDou => 'C',
            };
            Satellite {
                id: AnchorId::new(format!("{prefix}{:02}", per[i % 4])),
                constellation: c,
                ecef: o + u * r,
            }
        })
        .collect())
}

/// Anchor id prefix per infrastructure.
pub fn anchor_prefix(infra: Infrastructure) -> &'static str {
    match infra {
        Infrastructure::Wifi => "ap",
        Infrastructure::Cellular => "cell",
        Infrastructure::Bluetooth => "bt",
        Infrastructure::GeoIp => "srv",
        Infrastructure::Gnss => "sv",
    }
}

/// Inserts `count` fixed anchors scattered around `route`; returns their ids.
pub fn plant_anchors<R: Rng + ?Sized>(
    db: &mut AnchorDatabase,
    route: &Route,
    infra: Infrastructure,
    count: usize,
    spread: f64,
    height: f64,
    tag: &str,
    rng: &mut R,
) -> Result<Vec<AnchorId>, SimError> {
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let enu = route.scatter(rng, spread, height);
        let pos = route
            .frame()
            .to_geodetic(&enu)
            .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        let id = AnchorId::new(format!("{}-{tag}{i:03}", anchor_prefix(infra)));
        db.insert(AnchorRecord::fixed(id.clone(), infra, pos, None))
            .map_err(SimError::ConfigInvalid)?;
        ids.push(id);
    }
    Ok(ids)
}

/// GeoIP servers at random bearings and great-circle ranges from the origin,
/// plus a table entry for the client's /24 near the origin.
pub fn place_geoip<R: Rng + ?Sized>(
    db: &mut AnchorDatabase,
    cfg: &ScenarioConfig,
    origin: &GeodeticPosition,
    rng: &mut R,
) -> Result<(), SimError> {
    let lat1 = origin.latitude.to_radians();
    let lon1 = origin.longitude.to_radians();
    for i in 0..cfg.geoip.count {
        let range = rng.random_range(cfg.geoip.min_range_km..=cfg.geoip.max_range_km) * 1e3;
        let bearing = rng.random_range(0.0..std::f64::consts::TAU);
        let delta = range / MEAN_EARTH_RADIUS_M;
        let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * bearing.cos()).asin();
        let lon2 = lon1
            + (bearing.sin() * delta.sin() * lat1.cos())
                .atan2(delta.cos() - lat1.sin() * lat2.sin());
        let pos = GeodeticPosition::new(
            lat2.to_degrees(),
            crate::geo::wrap_degrees(lon2.to_degrees()),
            0.0,
        )
        .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        db.insert(AnchorRecord::fixed(
            format!("{}-{i:02}", anchor_prefix(Infrastructure::GeoIp)),
            Infrastructure::GeoIp,
            pos,
            None,
        ))
        .map_err(SimError::ConfigInvalid)?;
    }
    if let Some(ip) = cfg.client_ip {
        let len = if ip.is_ipv4() { 24 } else { 48 };
        let prefix = IpPrefix::new(ip, len).map_err(SimError::ConfigInvalid)?;
        let frame = EnuFrame::new(*origin).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(0.0..3000.0);
        let pos = frame
            .to_geodetic(&Vector3::new(r * a.cos(), r * a.sin(), 0.0))
            .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        db.geoip_table.insert(prefix, pos);
    }
    Ok(())
}

/// Random stream identifiers for independent parts of a scenario.
pub(crate) mod streams {
    pub const SATELLITES: u64 = 1;
    pub const ANCHORS: u64 = 2;
    pub const PLANTED: u64 = 3;
    pub const FRAMES: u64 = 4;
    pub const ATTACKS: u64 = 5;
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{motion_displacement, propagate_state, PlatformState};

    #[test]
    fn route_reflects_at_the_end() {
        let cfg = ScenarioConfig::default();
        let route = Route::new(&cfg.waypoint_positions().unwrap()).unwrap();
        let len = route.length();
        assert!((route.at(len + 10.0) - route.at(len - 10.0)).norm() < 1e-9);
        assert!(route.at(0.0).norm() < 1e-9);
        assert!((route.at(2.0 * len) - route.at(0.0)).norm() < 1e-9);
    }

    #[test]
    fn satellites_lie_on_the_orbit_sphere_above_the_mask() {
        let origin = GeodeticPosition::new(59.4, 17.95, 30.0).unwrap();
        let frame = EnuFrame::new(origin).unwrap();
        let sats = place_satellites(&frame, 24, &mut stream_rng(3, 1)).unwrap();
        for s in &sats {
            assert!((s.ecef.norm() - 26_571e3).abs() < 1.0);
            let e = frame.ecef_to_enu(&s.ecef);
            let el = e.z.atan2(e.xy().norm()).to_degrees();
            assert!((14.9..85.1).contains(&el), "{el}");
        }
        for c in Constellation::ALL {
            assert_eq!(sats.iter().filter(|s| s.constellation == c).count(), 6);
        }
    }

    #[test]
    fn dead_reckoning_reproduces_truth() {
        let cfg = ScenarioConfig {
            epochs: Some(300),
            ..ScenarioConfig::default()
        };
        let tr = Trajectory::new(&cfg).unwrap();
        let mut state = PlatformState {
            position: tr.positions[0],
            velocity: Vector3::zeros(),
        };
        for k in 1..tr.len() {
            let m = tr.exact_motion(k);
            let dt = tr.timestamps[k] - tr.timestamps[k - 1];
            state = propagate_state(
                &PlatformState {
                    position: state.position,
                    velocity: m.velocity,
                },
                &m,
                dt,
            );
            assert!(
                (motion_displacement(&m, dt) - (tr.positions[k] - tr.positions[k - 1])).norm()
                    < 1e-9
            );
            if k % 100 == 0 {
                assert!(
                    (state.position - tr.positions[k]).norm() < 1e-6,
                    "epoch {k}"
                );
            }
        }
    }
}
