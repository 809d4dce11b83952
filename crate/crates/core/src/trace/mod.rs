//! Epoch data model: ranging observations, motion samples, anchors and the
//! frames that tie them to a single time instant.

mod align;
mod anchors;
mod format;

pub use align::{
    align_epochs, EpochStreams, TimedPosition, ALIGNMENT_TOLERANCE_S, STALENESS_BOUND_S,
};
pub use anchors::{
    clean_anchors, AnchorDatabase, AnchorRecord, CleaningRules, GeoIpTable, IpPrefix, Mobility,
    RemovalLogEntry,
};
pub use format::{load_anchor_db, load_trace, read_trace, save_anchor_db, save_trace, write_trace};

use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeodeticPosition, OrientationAngles};

/// Deviation between the reported and true position above which an epoch is
/// labeled as attacked (meters, strict inequality).
pub const ATTACK_LABEL_DISTANCE_M: f64 = 30.0;

/// Bound on accelerometer magnitude for a plausible consumer device (m/s²).
pub const MAX_ACCELERATION: f64 = 50.0;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace at line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },
    #[error("timestamps not strictly increasing at line {line}: {previous} then {current}")]
    NonMonotonicTimestamps {
        line: usize,
        previous: f64,
        current: f64,
    },
    #[error("malformed anchor database at record {record}: {reason}")]
    MalformedAnchorDb { record: usize, reason: String },
    #[error("master clock stream is empty")]
    EmptyMasterStream,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ranging infrastructure class; the declaration order is the source index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Infrastructure {
    Gnss,
    Wifi,
    Cellular,
    Bluetooth,
    GeoIp,
}

impl Infrastructure {
    pub const ALL: [Infrastructure; 5] = [
        Infrastructure::Gnss,
        Infrastructure::Wifi,
        Infrastructure::Cellular,
        Infrastructure::Bluetooth,
        Infrastructure::GeoIp,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    /// The short tag used in trace and anchor files.
    pub fn tag(self) -> &'static str {
        match self {
            Infrastructure::Gnss => "gnss",
            Infrastructure::Wifi => "wifi",
            Infrastructure::Cellular => "cell",
            Infrastructure::Bluetooth => "bt",
            Infrastructure::GeoIp => "geoip",
        }
    }

    pub fn is_rssi(self) -> bool {
        matches!(
            self,
            Infrastructure::Wifi | Infrastructure::Cellular | Infrastructure::Bluetooth
        )
    }
}

impl fmt::Display for Infrastructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Infrastructure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gnss" => Ok(Infrastructure::Gnss),
            "wifi" => Ok(Infrastructure::Wifi),
            "cell" | "cellular" => Ok(Infrastructure::Cellular),
            "bt" | "bluetooth" => Ok(Infrastructure::Bluetooth),
            "geoip" => Ok(Infrastructure::GeoIp),
            other => Err(format!("unknown infrastructure '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constellation {
    #[serde(rename = "GPS")]
    Gps,
    Galileo,
    #[serde(rename = "GLONASS")]
    Glonass,
    BeiDou,
}

impl Constellation {
    pub const ALL: [Constellation; 4] = [
        Constellation::Gps,
        Constellation::Galileo,
        Constellation::Glonass,
        Constellation::BeiDou,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Constellation::Gps => "GPS",
            Constellation::Galileo => "Galileo",
            Constellation::Glonass => "GLONASS",
            Constellation::BeiDou => "BeiDou",
        }
    }
}

impl fmt::Display for Constellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Constellation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GPS" | "G" => Ok(Constellation::Gps),
            "GALILEO" | "GAL" | "E" => Ok(Constellation::Galileo),
            "GLONASS" | "GLO" | "R" => Ok(Constellation::Glonass),
            "BEIDOU" | "BDS" | "C" => Ok(Constellation::BeiDou),
            other => Err(format!("unknown constellation '{other}'")),
        }
    }
}

/// Opaque anchor identifier (satellite id, BSSID, cell id, server name).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnchorId(Arc<str>);

impl AnchorId {
    pub fn new(id: impl AsRef<str>) -> Self {
        Self(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AnchorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AnchorId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

impl From<String> for AnchorId {
    fn from(s: String) -> Self {
        Self(Arc::from(s))
    }
}

/// One ranging measurement: pseudorange (m), RSSI (dBm) or RTT (ms)
/// depending on the infrastructure.
#[derive(Debug, Clone, PartialEq)]
pub struct RangingObservation {
    pub timestamp: f64,
    pub infrastructure: Infrastructure,
    pub anchor_id: AnchorId,
    pub value: f64,
    /// GNSS only.
    pub constellation: Option<Constellation>,
    /// GNSS only: satellite ECEF position at transmission.
    pub satellite_position: Option<Vector3<f64>>,
}

impl RangingObservation {
    pub fn gnss(
        timestamp: f64,
        sat: impl Into<AnchorId>,
        constellation: Constellation,
        pseudorange: f64,
        satellite_position: Vector3<f64>,
    ) -> Self {
        Self {
            timestamp,
            infrastructure: Infrastructure::Gnss,
            anchor_id: sat.into(),
            value: pseudorange,
            constellation: Some(constellation),
            satellite_position: Some(satellite_position),
        }
    }

    pub fn rssi(
        timestamp: f64,
        infrastructure: Infrastructure,
        anchor: impl Into<AnchorId>,
        rssi_dbm: f64,
    ) -> Self {
        Self {
            timestamp,
            infrastructure,
            anchor_id: anchor.into(),
            value: rssi_dbm,
            constellation: None,
            satellite_position: None,
        }
    }

    pub fn rtt(timestamp: f64, server: impl Into<AnchorId>, rtt_ms: f64) -> Self {
        Self {
            timestamp,
            infrastructure: Infrastructure::GeoIp,
            anchor_id: server.into(),
            value: rtt_ms,
            constellation: None,
            satellite_position: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.value.is_finite() || !self.timestamp.is_finite() {
            return Err(format!("non-finite value for anchor {}", self.anchor_id));
        }
        match self.infrastructure {
            Infrastructure::Gnss => {
                if !(1.8e7..=3.0e7).contains(&self.value) {
                    return Err(format!(
                        "pseudorange {} m outside [1.8e7, 3e7] for {}",
                        self.value, self.anchor_id
                    ));
                }
                match self.satellite_position {
                    Some(p) if p.iter().all(|c| c.is_finite()) => {}
                    _ => return Err(format!("missing satellite position for {}", self.anchor_id)),
                }
            }
            Infrastructure::Wifi | Infrastructure::Cellular | Infrastructure::Bluetooth => {
                if self.value > 0.0 {
                    return Err(format!(
                        "RSSI {} dBm above 0 for {}",
                        self.value, self.anchor_id
                    ));
                }
            }
            Infrastructure::GeoIp => {
                if self.value < 0.0 {
                    return Err(format!(
                        "negative RTT {} for {}",
                        self.value, self.anchor_id
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Onboard motion at the end of an epoch interval; vectors are in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSample {
    pub timestamp: f64,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub orientation: OrientationAngles,
}

impl MotionSample {
    pub fn stationary(timestamp: f64) -> Self {
        Self {
            timestamp,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            orientation: OrientationAngles::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = self.timestamp.is_finite()
            && self.velocity.iter().all(|v| v.is_finite())
            && self.acceleration.iter().all(|v| v.is_finite())
            && self.orientation.is_finite();
        if !finite {
            return Err("non-finite motion sample".into());
        }
        if self.acceleration.norm() > MAX_ACCELERATION {
            return Err(format!(
                "acceleration magnitude {:.1} m/s² exceeds {MAX_ACCELERATION}",
                self.acceleration.norm()
            ));
        }
        Ok(())
    }
}

/// All data for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFrame {
    pub timestamp: f64,
    pub motion: MotionSample,
    /// Sorted by infrastructure, then anchor id.
    pub observations: Vec<RangingObservation>,
    pub lbs_position: GeodeticPosition,
    pub ground_truth: Option<GeodeticPosition>,
    pub attack_label: Option<bool>,
    /// Public address of the platform, for table-based IP geolocation.
    pub client_ip: Option<IpAddr>,
}

impl TraceFrame {
    pub fn new(timestamp: f64, motion: MotionSample, lbs_position: GeodeticPosition) -> Self {
        Self {
            timestamp,
            motion,
            observations: Vec::new(),
            lbs_position,
            ground_truth: None,
            attack_label: None,
            client_ip: None,
        }
    }

    pub fn observations_for(
        &self,
        infra: Infrastructure,
    ) -> impl Iterator<Item = &RangingObservation> + '_ {
        self.observations
            .iter()
            .filter(move |o| o.infrastructure == infra)
    }

    pub fn count_for(&self, infra: Infrastructure) -> usize {
        self.observations_for(infra).count()
    }

    /// Restores the canonical observation order.
    pub fn sort_observations(&mut self) {
        self.observations.sort_by(|a, b| {
            a.infrastructure
                .cmp(&b.infrastructure)
                .then_with(|| a.anchor_id.cmp(&b.anchor_id))
        });
    }

    /// Recomputes the attack label from the reported and true positions.
    pub fn relabel(&mut self) {
        self.attack_label = self.ground_truth.map(|truth| {
            crate::geo::distance(&self.lbs_position, &truth) > ATTACK_LABEL_DISTANCE_M
        });
    }

    pub fn validate(&self, tolerance: f64) -> Result<(), String> {
        self.motion.validate()?;
        self.lbs_position.validate().map_err(|e| e.to_string())?;
        if let Some(t) = &self.ground_truth {
            t.validate().map_err(|e| e.to_string())?;
        }
        for o in &self.observations {
            o.validate()?;
            if (o.timestamp - self.timestamp).abs() > tolerance + 1e-9 {
                return Err(format!(
                    "observation of {} at t={} is outside the alignment tolerance of frame t={}",
                    o.anchor_id, o.timestamp, self.timestamp
                ));
            }
        }
        Ok(())
    }
}
