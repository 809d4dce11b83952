//! Synthetic scenarios: route, sky, transmitters, noisy observations and
//! attack injection.

mod attack;
mod config;
mod synth;
mod world;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attack::{apply_attack, AttackEntry, AttackEnvironment, AttackKind, AttackSchedule};
pub use config::{AnchorLayout, GeoipLayout, NoiseModel, ScenarioConfig};
pub use synth::{
    distance_to_rtt, path_loss_rssi, synth_geoip_observations, synth_gnss_observations,
    synth_network_observations, Satellite,
};
pub use world::{place_satellites, Route, Trajectory};

use crate::geo::{EnuFrame, GeodeticPosition};
use crate::positioning::RangingModelParams;
use crate::trace::{AnchorDatabase, AnchorId, Constellation, Infrastructure, TraceFrame};
use synth::gauss;
use world::{place_geoip, plant_anchors, stream_rng, streams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ConfigInvalid(String),
    #[error("need at least 4 satellites, got {got}")]
    InsufficientSatellites { got: usize },
    #[error("attack entry {entry}: {reason}")]
    ScheduleOutOfRange { entry: usize, reason: String },
    #[error("frame at t={timestamp} has no ground truth")]
    MissingGroundTruth { timestamp: f64 },
}

/// Spoofed position relative to the true one: a horizontal offset along a
/// bearing, reached at once or ramped in at a fixed rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpoofProfile {
    /// Degrees clockwise from north.
    pub bearing_deg: f64,
    pub offset_m: f64,
    /// Growth rate of the offset from the window start, m/s; a step when absent.
    #[serde(default)]
    pub ramp_m_per_s: Option<f64>,
    #[serde(default)]
    pub up_m: f64,
}

impl SpoofProfile {
    /// Local-frame offset `elapsed` seconds into the window.
    pub fn offset_at(&self, elapsed: f64) -> Vector3<f64> {
        let mag = match self.ramp_m_per_s {
            Some(r) => (r * elapsed.max(0.0)).min(self.offset_m),
            None => self.offset_m,
        };
        let b = self.bearing_deg.to_radians();
        let frac = if self.offset_m > 0.0 {
            mag / self.offset_m
        } else {
            1.0
        };
        Vector3::new(mag * b.sin(), mag * b.cos(), self.up_m * frac)
    }
}

/// Anchors placed along the spoof trace so replayed beacons resolve near it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayPool {
    pub wifi: usize,
    pub cellular: usize,
    pub bluetooth: usize,
}

/// Attack as written in a config file; resolved against the scenario's
/// trajectory into an [`AttackEntry`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub spoof: Option<SpoofProfile>,
    /// Explicit `[lat, lon, alt]` per frame in the window.
    #[serde(default)]
    pub spoof_trace: Vec<[f64; 3]>,
    #[serde(default)]
    pub constellations: Vec<Constellation>,
    #[serde(default)]
    pub replayed_anchors: Vec<String>,
    #[serde(default)]
    pub replay_pool: ReplayPool,
    #[serde(default)]
    pub delay_ms: f64,
    #[serde(default)]
    pub replay_gain_db: f64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, start: f64, end: f64) -> Self {
        Self {
            kind,
            start,
            end,
            spoof: None,
            spoof_trace: Vec::new(),
            constellations: Vec::new(),
            replayed_anchors: Vec::new(),
            replay_pool: ReplayPool::default(),
            delay_ms: 0.0,
            replay_gain_db: 0.0,
        }
    }
}

/// A generated trace with the transmitter database it was synthesized from.
#[derive(Debug, Clone)]
pub struct SimulatedTrace {
    pub frames: Vec<TraceFrame>,
    pub db: AnchorDatabase,
    pub satellites: Vec<Satellite>,
    pub schedule: AttackSchedule,
}

fn reception(cfg: &ScenarioConfig) -> [f64; Infrastructure::COUNT] {
    let mut r = [0.0; Infrastructure::COUNT];
    for infra in Infrastructure::ALL {
        r[infra.index()] = cfg.layout(infra).map_or(0.0, |l| l.reception_m);
    }
    r
}

fn local_to_geodetic(frame: &EnuFrame, p: &Vector3<f64>) -> Result<GeodeticPosition, SimError> {
    frame
        .to_geodetic(p)
        .map_err(|e| SimError::ConfigInvalid(e.to_string()))
}

/// Spoof positions for the frames of `[start, end]`, as local-frame points.
fn spoof_points(
    traj: &Trajectory,
    spec: &AttackSpec,
    index: usize,
) -> Result<Vec<Vector3<f64>>, SimError> {
    let in_window: Vec<usize> = (0..traj.len())
        .filter(|&k| traj.timestamps[k] >= spec.start && traj.timestamps[k] <= spec.end)
        .collect();
    if let Some(profile) = &spec.spoof {
        if !spec.spoof_trace.is_empty() {
            return Err(SimError::ConfigInvalid(format!(
                "attack {index}: give either a spoof profile or an explicit spoof trace"
            )));
        }
        if profile.ramp_m_per_s.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            return Err(SimError::ConfigInvalid(format!(
                "attack {index}: ramp_m_per_s must be positive; omit it for a step"
            )));
        }
        return Ok(in_window
            .iter()
            .map(|&k| traj.positions[k] + profile.offset_at(traj.timestamps[k] - spec.start))
            .collect());
    }
    spec.spoof_trace
        .iter()
        .map(|w| {
            GeodeticPosition::new(w[0], w[1], w[2])
                .map(|g| traj.frame().to_enu(&g))
                .map_err(|e| SimError::ConfigInvalid(format!("attack {index}: {e}")))
        })
        .collect()
}

/// Builds the world, the benign frames and the attacked frames for `cfg`.
pub fn simulate(
    cfg: &ScenarioConfig,
    attacks: &[AttackSpec],
    params: &RangingModelParams,
) -> Result<SimulatedTrace, SimError> {
    cfg.validate()?;
    params.validate().map_err(SimError::ConfigInvalid)?;
    let traj = Trajectory::new(cfg)?;
    let frame = traj.frame().clone();

    let mut sky_rng = stream_rng(
        cfg.geometry_seed.unwrap_or(cfg.rng_seed),
        streams::SATELLITES,
    );
    let satellites = place_satellites(&frame, cfg.satellites, &mut sky_rng)?;

    let mut db = AnchorDatabase::new();
    let mut rng = stream_rng(cfg.rng_seed, streams::ANCHORS);
    for infra in [
        Infrastructure::Wifi,
        Infrastructure::Cellular,
        Infrastructure::Bluetooth,
    ] {
        let l = cfg.layout(infra).expect("rssi layout");
        plant_anchors(
            &mut db,
            &traj.route,
            infra,
            l.count,
            l.spread_m,
            l.height_m,
            "",
            &mut rng,
        )?;
    }
    place_geoip(&mut db, cfg, frame.origin(), &mut rng)?;

    let mut planted_rng = stream_rng(cfg.rng_seed, streams::PLANTED);
    let mut entries = Vec::with_capacity(attacks.len());
    for (i, spec) in attacks.iter().enumerate() {
        let points = spoof_points(&traj, spec, i)?;
        let mut entry = AttackEntry::new(spec.kind, spec.start, spec.end);
        entry.constellations = spec.constellations.clone();
        entry.delay_ms = spec.delay_ms;
        entry.replay_gain_db = spec.replay_gain_db;
        entry.replayed_anchors = spec.replayed_anchors.iter().map(AnchorId::new).collect();
        entry.spoof_trace = points
            .iter()
            .map(|p| local_to_geodetic(&frame, p))
            .collect::<Result<_, _>>()?;
        let pool = &spec.replay_pool;
        if pool.wifi + pool.cellular + pool.bluetooth > 0 {
            if points.is_empty() {
                return Err(SimError::ConfigInvalid(format!(
                    "attack {i}: replay pool without a spoof trace"
                )));
            }
            let spoof_route = Route::in_frame(frame.clone(), points.clone());
            for (infra, count) in [
                (Infrastructure::Wifi, pool.wifi),
                (Infrastructure::Cellular, pool.cellular),
                (Infrastructure::Bluetooth, pool.bluetooth),
            ] {
                let l = cfg.layout(infra).expect("rssi layout");
                let tag = format!("r{i}-");
                let ids = plant_anchors(
                    &mut db,
                    &spoof_route,
                    infra,
                    count,
                    l.spread_m,
                    l.height_m,
                    &tag,
                    &mut planted_rng,
                )?;
                entry.replayed_anchors.extend(ids);
            }
        }
        entries.push(entry);
    }

    let benign = benign_frames(cfg, &traj, &satellites, &db, params)?;
    let schedule = AttackSchedule { entries };
    let env = AttackEnvironment {
        db: &db,
        params,
        noise: &cfg.noise,
        reception_m: reception(cfg),
    };
    let frames = if schedule.entries.is_empty() {
        benign
    } else {
        apply_attack(&benign, &schedule, &env, cfg.rng_seed)?
    };
    Ok(SimulatedTrace {
        frames,
        db,
        satellites,
        schedule,
    })
}

/// A trace with no attacks.
pub fn generate_benign_trace(
    cfg: &ScenarioConfig,
    params: &RangingModelParams,
) -> Result<SimulatedTrace, SimError> {
    simulate(cfg, &[], params)
}

fn benign_frames(
    cfg: &ScenarioConfig,
    traj: &Trajectory,
    satellites: &[Satellite],
    db: &AnchorDatabase,
    params: &RangingModelParams,
) -> Result<Vec<TraceFrame>, SimError> {
    let mut rng = stream_rng(cfg.rng_seed, streams::FRAMES);
    let noise = &cfg.noise;
    let radius = reception(cfg);
    let network: Vec<_> = db
        .records()
        .filter(|r| r.infrastructure.is_rssi())
        .collect();
    let servers: Vec<_> = db.records_for(Infrastructure::GeoIp).collect();
    let mut clock = if noise.clock_initial > 0.0 {
        rand::Rng::random_range(&mut rng, -noise.clock_initial..=noise.clock_initial)
    } else {
        0.0
    };
    let mut frames = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let t = traj.timestamps[k];
        if k > 0 {
            let dt = t - traj.timestamps[k - 1];
            clock += gauss(&mut rng, noise.clock_random_walk * dt.sqrt());
        }
        let truth = traj.geodetic(k)?;
        let motion = traj.noisy_motion(k, noise, &mut rng);
        let mut obs = synth_gnss_observations(t, &truth, clock, satellites, noise, &mut rng)?;
        obs.extend(synth_network_observations(
            t,
            &truth,
            network.iter().copied(),
            |i| radius[i.index()],
            params,
            noise,
            &mut rng,
        ));
        obs.extend(synth_geoip_observations(
            t,
            &truth,
            servers.iter().copied(),
            params,
            noise,
            &mut rng,
        ));
        let lbs_local =
            traj.positions[k] + Vector3::from_fn(|_, _| gauss(&mut rng, noise.lbs_sigma));
        let mut f = TraceFrame::new(t, motion, local_to_geodetic(traj.frame(), &lbs_local)?);
        f.observations = obs;
        f.ground_truth = Some(truth);
        f.client_ip = cfg.client_ip;
        f.sort_observations();
        f.relabel();
        frames.push(f);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::distance;
    use crate::positioning::gnss_trilateration;
    use crate::trace::RangingObservation;

    fn short(epochs: usize) -> ScenarioConfig {
        ScenarioConfig {
            epochs: Some(epochs),
            ..ScenarioConfig::default()
        }
    }

    fn gnss_of<'a>(f: &'a TraceFrame, cs: &[Constellation]) -> Vec<&'a RangingObservation> {
        f.observations_for(Infrastructure::Gnss)
            .filter(|o| cs.contains(&o.constellation.unwrap()))
            .collect()
    }

    #[test]
    fn noiseless_straight_path() {
        let cfg = ScenarioConfig {
            waypoints: vec![[59.4, 17.95, 30.0], [59.4, 17.951_771, 30.0]],
            speed: 1.0,
            epochs: Some(100),
            noise: NoiseModel::noiseless(),
            ..ScenarioConfig::default()
        };
        let params = RangingModelParams::default();
        let sim = generate_benign_trace(&cfg, &params).unwrap();
        let enu = EnuFrame::new(sim.frames[0].ground_truth.unwrap()).unwrap();
        for w in sim.frames.windows(2) {
            let d = distance(&w[0].ground_truth.unwrap(), &w[1].ground_truth.unwrap());
            assert!((d - 1.0).abs() < 1e-6, "{d}");
        }
        for f in sim.frames.iter().step_by(17) {
            let obs: Vec<&RangingObservation> = f.observations_for(Infrastructure::Gnss).collect();
            let est = gnss_trilateration(&obs, &enu, None, &params, 0).unwrap();
            assert!(distance(&est.position, &f.ground_truth.unwrap()) < 1e-3);
            assert_eq!(f.attack_label, Some(false));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let params = RangingModelParams::default();
        let a = generate_benign_trace(&short(30), &params).unwrap();
        let b = generate_benign_trace(&short(30), &params).unwrap();
        assert_eq!(a.frames, b.frames);
        let c = generate_benign_trace(
            &ScenarioConfig {
                rng_seed: 9,
                ..short(30)
            },
            &params,
        )
        .unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn every_frame_has_all_infrastructures() {
        let sim = generate_benign_trace(&short(40), &RangingModelParams::default()).unwrap();
        for f in &sim.frames {
            assert_eq!(f.count_for(Infrastructure::Gnss), 24);
            assert_eq!(f.count_for(Infrastructure::GeoIp), 12);
            assert!(f.count_for(Infrastructure::Wifi) > 0);
            assert!(f.count_for(Infrastructure::Cellular) > 0);
        }
    }

    #[test]
    fn default_noise_pseudorange_residual_rms() {
        let params = RangingModelParams::default();
        let sim = generate_benign_trace(&short(300), &params).unwrap();
        let enu = EnuFrame::new(sim.frames[0].ground_truth.unwrap()).unwrap();
        let mut sq = 0.0;
        let mut n = 0usize;
        let mut dof = 0usize;
        for f in &sim.frames {
            let obs: Vec<&RangingObservation> = f.observations_for(Infrastructure::Gnss).collect();
            let est = gnss_trilateration(&obs, &enu, None, &params, 0).unwrap();
            sq += est.residual_rms.powi(2) * (obs.len() - 4) as f64;
            n += obs.len();
            dof += obs.len() - 4;
        }
        let rms = (sq / dof as f64).sqrt();
        assert!(n > 0 && (1.5..4.5).contains(&rms), "rms {rms}");
    }

    fn step_spec(kind: AttackKind, start: f64, end: f64, offset: f64) -> AttackSpec {
        AttackSpec {
            spoof: Some(SpoofProfile {
                bearing_deg: 90.0,
                offset_m: offset,
                ramp_m_per_s: None,
                up_m: 0.0,
            }),
            ..AttackSpec::new(kind, start, end)
        }
    }

    #[test]
    fn jam_window_removes_gnss_only_inside() {
        let params = RangingModelParams::default();
        let benign = generate_benign_trace(&short(30), &params).unwrap();
        let jam = simulate(
            &short(30),
            &[AttackSpec::new(AttackKind::GnssJam, 10.0, 20.0)],
            &params,
        )
        .unwrap();
        for (a, b) in benign.frames.iter().zip(&jam.frames) {
            if (10.0..=20.0).contains(&a.timestamp) {
                assert_eq!(b.count_for(Infrastructure::Gnss), 0);
                assert_eq!(b.attack_label, Some(false));
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn gps_spoof_moves_only_gps() {
        let params = RangingModelParams::default();
        let cfg = ScenarioConfig {
            noise: NoiseModel::noiseless(),
            ..short(20)
        };
        let mut spec = step_spec(AttackKind::GnssSpoof, 5.0, 15.0, 600.0);
        spec.constellations = vec![Constellation::Gps];
        let sim = simulate(&cfg, &[spec], &params).unwrap();
        let enu = EnuFrame::new(sim.frames[0].ground_truth.unwrap()).unwrap();
        let f = &sim.frames[8];
        let truth = f.ground_truth.unwrap();
        let spoof = sim.schedule.entries[0].spoof_trace[3];
        let gps =
            gnss_trilateration(&gnss_of(f, &[Constellation::Gps]), &enu, None, &params, 0).unwrap();
        assert!(distance(&gps.position, &spoof) < 1e-2);
        let gal = gnss_trilateration(
            &gnss_of(f, &[Constellation::Galileo]),
            &enu,
            None,
            &params,
            0,
        )
        .unwrap();
        assert!(distance(&gal.position, &truth) < 1e-2);
        assert!((distance(&spoof, &truth) - 600.0).abs() < 1e-6);
        assert_eq!(f.attack_label, Some(true));
    }

    #[test]
    fn small_coordinated_offset_is_not_labeled() {
        let params = RangingModelParams::default();
        let spec = step_spec(AttackKind::Coordinated, 5.0, 15.0, 20.0);
        let sim = simulate(&short(20), &[spec], &params).unwrap();
        assert!(sim.frames.iter().all(|f| f.attack_label == Some(false)));
    }

    #[test]
    fn wifi_replay_injects_anchors_near_the_spoof() {
        let params = RangingModelParams::default();
        let mut spec = step_spec(AttackKind::WifiReplay, 5.0, 15.0, 650.0);
        spec.replay_pool.wifi = 6;
        let sim = simulate(&short(20), &[spec], &params).unwrap();
        let replayed = &sim.schedule.entries[0].replayed_anchors;
        assert_eq!(replayed.len(), 6);
        let f = &sim.frames[10];
        let heard = f
            .observations_for(Infrastructure::Wifi)
            .filter(|o| replayed.contains(&o.anchor_id))
            .count();
        assert!(heard >= 3, "heard {heard}");
        let before = &sim.frames[2];
        assert!(before
            .observations_for(Infrastructure::Wifi)
            .all(|o| !replayed.contains(&o.anchor_id) || o.value < -70.0));
    }

    #[test]
    fn schedule_outside_trace_is_rejected() {
        let params = RangingModelParams::default();
        let r = simulate(
            &short(10),
            &[AttackSpec::new(AttackKind::GnssJam, 100.0, 120.0)],
            &params,
        );
        assert!(matches!(
            r,
            Err(SimError::ScheduleOutOfRange { entry: 0, .. })
        ));
        let r = simulate(
            &short(10),
            &[AttackSpec::new(AttackKind::GnssJam, 5.0, 5.0)],
            &params,
        );
        assert!(matches!(r, Err(SimError::ScheduleOutOfRange { .. })));
    }

    #[test]
    fn spoofing_requires_a_trace() {
        let params = RangingModelParams::default();
        let r = simulate(
            &short(10),
            &[AttackSpec::new(AttackKind::GnssSpoof, 2.0, 5.0)],
            &params,
        );
        assert!(matches!(r, Err(SimError::ConfigInvalid(_))));
    }

    #[test]
    fn missing_truth_is_reported() {
        let params = RangingModelParams::default();
        let sim = generate_benign_trace(&short(10), &params).unwrap();
        let mut frames = sim.frames.clone();
        frames[3].ground_truth = None;
        let schedule = AttackSchedule {
            entries: vec![AttackEntry::new(AttackKind::GnssJam, 2.0, 5.0)],
        };
        let env = AttackEnvironment {
            db: &sim.db,
            params: &params,
            noise: &NoiseModel::default(),
            reception_m: [0.0, 300.0, 5000.0, 300.0, 0.0],
        };
        assert_eq!(
            apply_attack(&frames, &schedule, &env, 0),
            Err(SimError::MissingGroundTruth { timestamp: 3.0 })
        );
    }

    #[test]
    fn ramp_profile_saturates() {
        let p = SpoofProfile {
            bearing_deg: 0.0,
            offset_m: 10.0,
            ramp_m_per_s: Some(2.0),
            up_m: 0.0,
        };
        assert!((p.offset_at(3.0) - Vector3::new(0.0, 6.0, 0.0)).norm() < 1e-12);
        assert!((p.offset_at(30.0) - Vector3::new(0.0, 10.0, 0.0)).norm() < 1e-12);
    }
}
