use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geo::GeodeticPosition;
use crate::trace::Infrastructure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Pseudorange noise, meters.
    pub pseudorange_sigma: f64,
    /// Receiver clock-bias random walk, meters per √s.
    pub clock_random_walk: f64,
    /// Half-width of the uniform initial clock bias, meters.
    pub clock_initial: f64,
    /// RSSI shadowing, dB.
    pub rssi_shadowing_db: f64,
    /// RTT jitter, ms.
    pub rtt_jitter_ms: f64,
    /// Motion sensor noise: speed (m/s), acceleration (m/s²), angles (degrees).
    pub velocity_sigma: f64,
    pub acceleration_sigma: f64,
    pub orientation_sigma_deg: f64,
    /// Per-axis noise of the reported (LBS) position, meters.
    pub lbs_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pseudorange_sigma: 3.0,
            clock_random_walk: 5.0,
            clock_initial: 1000.0,
            rssi_shadowing_db: 4.0,
            rtt_jitter_ms: 5.0,
            velocity_sigma: 0.05,
            acceleration_sigma: 0.02,
            orientation_sigma_deg: 0.5,
            lbs_sigma: 2.0,
        }
    }
}

impl NoiseModel {
    /// Every noise term set to zero.
    pub fn noiseless() -> Self {
        Self {
            pseudorange_sigma: 0.0,
            clock_random_walk: 0.0,
            clock_initial: 0.0,
            rssi_shadowing_db: 0.0,
            rtt_jitter_ms: 0.0,
            velocity_sigma: 0.0,
            acceleration_sigma: 0.0,
            orientation_sigma_deg: 0.0,
            lbs_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let all = [
            self.pseudorange_sigma,
            self.clock_random_walk,
            self.clock_initial,
            self.rssi_shadowing_db,
            self.rtt_jitter_ms,
            self.velocity_sigma,
            self.acceleration_sigma,
            self.orientation_sigma_deg,
            self.lbs_sigma,
        ];
        if all.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(SimError::ConfigInvalid(
                "noise terms must be finite and non-negative".into(),
            ))
        }
    }
}

/// Transmitters of one infrastructure scattered along the route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorLayout {
    pub count: usize,
    /// Maximum horizontal distance from the route, meters.
    pub spread_m: f64,
    /// Observations beyond this range are not heard, meters.
    pub reception_m: f64,
    /// Mounting height above the route, meters.
    #[serde(default)]
    pub height_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoipLayout {
    pub count: usize,
    pub min_range_km: f64,
    pub max_range_km: f64,
}

impl Default for GeoipLayout {
    fn default() -> Self {
        Self {
            count: 12,
            min_range_km: 100.0,
            max_range_km: 2000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `[latitude, longitude, altitude]` in degrees and meters.
    pub waypoints: Vec<[f64; 3]>,
    /// m/s.
    pub speed: f64,
    /// Hz.
    pub epoch_rate: f64,
    /// Trace length; the route is traversed back and forth as needed. When
    /// absent the trace ends at the last waypoint.
    pub epochs: Option<usize>,
    pub start_time: f64,
    pub satellites: usize,
    /// Seed for the satellite sky; `rng_seed` when absent.
    pub geometry_seed: Option<u64>,
    pub wifi: AnchorLayout,
    pub cellular: AnchorLayout,
    pub bluetooth: AnchorLayout,
    pub geoip: GeoipLayout,
    pub client_ip: Option<IpAddr>,
    pub noise: NoiseModel,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            waypoints: vec![
                [59.4000, 17.9500, 30.0],
                [59.4000, 17.9590, 30.0],
                [59.4030, 17.9590, 30.0],
            ],
            speed: 1.4,
            epoch_rate: 1.0,
            epochs: None,
            start_time: 0.0,
            satellites: 24,
            geometry_seed: None,
            wifi: AnchorLayout {
                count: 10,
                spread_m: 150.0,
                reception_m: 300.0,
                height_m: 3.0,
            },
            cellular: AnchorLayout {
                count: 5,
                spread_m: 2000.0,
                reception_m: 5000.0,
                height_m: 30.0,
            },
            bluetooth: AnchorLayout {
                count: 4,
                spread_m: 60.0,
                reception_m: 300.0,
                height_m: 2.0,
            },
            geoip: GeoipLayout::default(),
            client_ip: Some("198.51.100.23".parse().expect("literal address")),
            noise: NoiseModel::default(),
            rng_seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn layout(&self, infra: Infrastructure) -> Option<&AnchorLayout> {
        match infra {
            Infrastructure::Wifi => Some(&self.wifi),
            Infrastructure::Cellular => Some(&self.cellular),
            Infrastructure::Bluetooth => Some(&self.bluetooth),
            _ => None,
        }
    }

    pub fn waypoint_positions(&self) -> Result<Vec<GeodeticPosition>, SimError> {
        self.waypoints
            .iter()
            .map(|w| {
                GeodeticPosition::new(w[0], w[1], w[2])
                    .map_err(|e| SimError::ConfigInvalid(format!("waypoint: {e}")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::ConfigInvalid(m.to_string()));
        if self.waypoints.len() < 2 {
            return bad("at least two waypoints are required");
        }
        self.waypoint_positions()?;
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return bad("speed must be positive");
        }
        if !(self.epoch_rate > 0.0 && self.epoch_rate.is_finite()) {
            return bad("epoch_rate must be positive");
        }
        if !self.start_time.is_finite() {
            return bad("start_time must be finite");
        }
        if self.satellites < 4 {
            return bad("at least four satellites are required");
        }
        for (name, l) in [
            ("wifi", &self.wifi),
            ("cellular", &self.cellular),
            ("bluetooth", &self.bluetooth),
        ] {
            if l.count > 0 && l.count < 3 {
                return Err(SimError::ConfigInvalid(format!(
                    "{name}: a simulated infrastructure needs at least three anchors"
                )));
            }
            if !(l.spread_m >= 0.0 && l.reception_m > 0.0 && l.height_m.is_finite()) {
                return Err(SimError::ConfigInvalid(format!(
                    "{name}: invalid layout distances"
                )));
            }
        }
        let g = &self.geoip;
        if g.count > 0 && g.count < 3 {
            return bad("geoip: at least three servers are required");
        }
        if !(g.min_range_km > 0.0 && g.max_range_km >= g.min_range_km) {
            return bad("geoip: invalid range interval");
        }
        self.noise.validate()
    }
}
