use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::synth::{distance_to_rtt, gauss, path_loss_rssi};
use super::world::{stream_rng, streams};
use super::{NoiseModel, SimError};
use crate::geo::{geodetic_to_ecef, EnuFrame, GeodeticPosition};
use crate::positioning::RangingModelParams;
use crate::trace::{
    AnchorDatabase, AnchorId, Constellation, Infrastructure, RangingObservation, TraceFrame,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackKind {
    GnssJam,
    GnssSpoof,
    WifiReplay,
    Coordinated,
    GeoipDelay,
}

impl AttackKind {
    /// Kinds that move the reported position onto a spoof trace.
    pub fn is_spoofing(self) -> bool {
        matches!(
            self,
            AttackKind::GnssSpoof | AttackKind::WifiReplay | AttackKind::Coordinated
        )
    }

    fn priority(self) -> u8 {
        match self {
            AttackKind::GnssJam => 0,
            AttackKind::GnssSpoof => 1,
            AttackKind::Coordinated => 2,
            AttackKind::WifiReplay => 3,
            AttackKind::GeoipDelay => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackEntry {
    pub kind: AttackKind,
    /// Inclusive window, seconds.
    pub start: f64,
    pub end: f64,
    /// One position per frame in the window, or a single fixed position.
    pub spoof_trace: Vec<GeodeticPosition>,
    /// GNSS_SPOOF targets; empty means every constellation.
    pub constellations: Vec<Constellation>,
    /// Replayed anchors; empty means every database anchor of the replayed
    /// infrastructures.
    pub replayed_anchors: Vec<AnchorId>,
    /// Added RTT, ms.
    pub delay_ms: f64,
    /// Transmit gain applied to replayed beacons, dB.
    pub replay_gain_db: f64,
}

impl AttackEntry {
    pub fn new(kind: AttackKind, start: f64, end: f64) -> Self {
        Self {
            kind,
            start,
            end,
            spoof_trace: Vec::new(),
            constellations: Vec::new(),
            replayed_anchors: Vec::new(),
            delay_ms: 0.0,
            replay_gain_db: 0.0,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    fn spoofs(&self, c: Option<Constellation>) -> bool {
        match self.kind {
            AttackKind::Coordinated => true,
            AttackKind::GnssSpoof => {
                self.constellations.is_empty()
                    || c.is_some_and(|c| self.constellations.contains(&c))
            }
            _ => false,
        }
    }

    fn replays(&self, infra: Infrastructure) -> bool {
        match self.kind {
            AttackKind::WifiReplay => infra == Infrastructure::Wifi,
            AttackKind::Coordinated => infra.is_rssi(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackSchedule {
    pub entries: Vec<AttackEntry>,
}

/// Everything apply_attack needs besides the frames.
#[derive(Debug, Clone, Copy)]
pub struct AttackEnvironment<'a> {
    pub db: &'a AnchorDatabase,
    pub params: &'a RangingModelParams,
    pub noise: &'a NoiseModel,
    /// Reception radius per RSSI infrastructure, meters.
    pub reception_m: [f64; Infrastructure::COUNT],
}

impl AttackSchedule {
    /// Checks every entry against the trace's time span.
    pub fn validate(&self, frames: &[TraceFrame]) -> Result<(), SimError> {
        let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
            return if self.entries.is_empty() {
                Ok(())
            } else {
                Err(SimError::ScheduleOutOfRange {
                    entry: 0,
                    reason: "empty trace".into(),
                })
            };
        };
        for (i, e) in self.entries.iter().enumerate() {
            let out = |reason: String| Err(SimError::ScheduleOutOfRange { entry: i, reason });
            if !(e.start.is_finite() && e.end.is_finite() && e.start < e.end) {
                return out(format!("window [{}, {}] is empty", e.start, e.end));
            }
            if e.end < first.timestamp || e.start > last.timestamp {
                return out(format!(
                    "window [{}, {}] outside trace span [{}, {}]",
                    e.start, e.end, first.timestamp, last.timestamp
                ));
            }
            if e.kind.is_spoofing() {
                let n = frames.iter().filter(|f| e.contains(f.timestamp)).count();
                if e.spoof_trace.is_empty() {
                    return Err(SimError::ConfigInvalid(format!(
                        "entry {i}: spoofing attack without a spoof trace"
                    )));
                }
                if e.spoof_trace.len() != 1 && e.spoof_trace.len() < n {
                    return out(format!(
                        "spoof trace has {} positions for {n} frames",
                        e.spoof_trace.len()
                    ));
                }
            }
            if !(e.delay_ms >= 0.0 && e.delay_ms.is_finite() && e.replay_gain_db.is_finite()) {
                return Err(SimError::ConfigInvalid(format!(
                    "entry {i}: delay must be non-negative"
                )));
            }
        }
        Ok(())
    }
}

fn ecef(p: &GeodeticPosition) -> Result<Vector3<f64>, SimError> {
    geodetic_to_ecef(p)
        .map(|e| e.to_vector())
        .map_err(|e| SimError::ConfigInvalid(e.to_string()))
}

/// Mutates the frames inside each entry's window. Frames outside every
/// window are returned unchanged.
pub fn apply_attack(
    frames: &[TraceFrame],
    schedule: &AttackSchedule,
    env: &AttackEnvironment<'_>,
    rng_seed: u64,
) -> Result<Vec<TraceFrame>, SimError> {
    schedule.validate(frames)?;
    let mut rng = stream_rng(rng_seed, streams::ATTACKS);
    let mut order: Vec<usize> = (0..schedule.entries.len()).collect();
    order.sort_by_key(|&i| (schedule.entries[i].kind.priority(), i));
    let mut window_index = vec![0usize; schedule.entries.len()];
    let mut out = Vec::with_capacity(frames.len());

    for frame in frames {
        let active: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| schedule.entries[i].contains(frame.timestamp))
            .collect();
        if active.is_empty() {
            out.push(frame.clone());
            continue;
        }
        let truth = frame.ground_truth.ok_or(SimError::MissingGroundTruth {
            timestamp: frame.timestamp,
        })?;
        let truth_ecef = ecef(&truth)?;
        let benign_gnss: Vec<RangingObservation> = frame
            .observations_for(Infrastructure::Gnss)
            .cloned()
            .collect();
        let mut f = frame.clone();
        let mut lbs_spoof: Option<GeodeticPosition> = None;

        for &i in &active {
            let e = &schedule.entries[i];
            let spoof = (!e.spoof_trace.is_empty())
                .then(|| e.spoof_trace[window_index[i].min(e.spoof_trace.len() - 1)]);
            window_index[i] += 1;
            match e.kind {
                AttackKind::GnssJam => {
                    f.observations
                        .retain(|o| o.infrastructure != Infrastructure::Gnss);
                }
                AttackKind::GnssSpoof | AttackKind::Coordinated => {
                    let spoof = spoof.expect("validated spoof trace");
                    let spoof_ecef = ecef(&spoof)?;
                    f.observations.retain(|o| {
                        o.infrastructure != Infrastructure::Gnss || !e.spoofs(o.constellation)
                    });
                    for o in benign_gnss.iter().filter(|o| e.spoofs(o.constellation)) {
                        let Some(sat) = o.satellite_position else {
                            continue;
                        };
                        let mut s = o.clone();
                        s.value = o.value - (truth_ecef - sat).norm() + (spoof_ecef - sat).norm();
                        f.observations.push(s);
                    }
                    if e.kind == AttackKind::Coordinated {
                        inject_replay(&mut f, e, &spoof, env, &mut rng)?;
                        delay_toward(&mut f, e, &truth_ecef, &spoof_ecef, env)?;
                    }
                }
                AttackKind::WifiReplay => {
                    let spoof = spoof.expect("validated spoof trace");
                    inject_replay(&mut f, e, &spoof, env, &mut rng)?;
                }
                AttackKind::GeoipDelay => {
                    for o in f
                        .observations
                        .iter_mut()
                        .filter(|o| o.infrastructure == Infrastructure::GeoIp)
                    {
                        o.value += e.delay_ms;
                    }
                }
            }
            if e.kind.is_spoofing() {
                lbs_spoof = spoof;
            }
        }
        if let Some(s) = lbs_spoof {
            let local = EnuFrame::new(s).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
            let sigma = env.noise.lbs_sigma;
            let n = Vector3::from_fn(|_, _| gauss(&mut rng, sigma));
            f.lbs_position = local
                .to_geodetic(&n)
                .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        }
        f.sort_observations();
        f.relabel();
        out.push(f);
    }
    Ok(out)
}

/// Adds replayed beacons heard as if the receiver were at `spoof`; an anchor
/// already observed keeps the stronger of the two readings.
fn inject_replay<R: rand::Rng + ?Sized>(
    f: &mut TraceFrame,
    e: &AttackEntry,
    spoof: &GeodeticPosition,
    env: &AttackEnvironment<'_>,
    rng: &mut R,
) -> Result<(), SimError> {
    let spoof_ecef = ecef(spoof)?;
    let candidates: Vec<(Infrastructure, AnchorId, GeodeticPosition)> =
        if e.replayed_anchors.is_empty() {
            env.db
                .records()
                .filter(|r| e.replays(r.infrastructure))
                .filter_map(|r| Some((r.infrastructure, r.anchor_id.clone(), r.position?)))
                .collect()
        } else {
            let mut v = Vec::new();
            for id in &e.replayed_anchors {
                for infra in Infrastructure::ALL.into_iter().filter(|i| e.replays(*i)) {
                    if let Some(p) = env.db.position(infra, id) {
                        v.push((infra, id.clone(), p));
                    }
                }
            }
            v
        };
    for (infra, id, pos) in candidates {
        let d = (spoof_ecef - ecef(&pos)?).norm();
        if d > env.reception_m[infra.index()] {
            continue;
        }
        let rssi = path_loss_rssi(d, env.params.rssi_p0_dbm, env.params.path_loss(infra))
            + gauss(rng, env.noise.rssi_shadowing_db)
            + e.replay_gain_db;
        match f
            .observations
            .iter_mut()
            .find(|o| o.infrastructure == infra && o.anchor_id == id)
        {
            Some(o) => o.value = o.value.max(rssi),
            None => f
                .observations
                .push(RangingObservation::rssi(f.timestamp, infra, id, rssi)),
        }
    }
    Ok(())
}

/// Delays each RTT so its distance reads as if measured from `spoof`; delay
/// can only be added.
fn delay_toward(
    f: &mut TraceFrame,
    e: &AttackEntry,
    truth: &Vector3<f64>,
    spoof: &Vector3<f64>,
    env: &AttackEnvironment<'_>,
) -> Result<(), SimError> {
    for o in f
        .observations
        .iter_mut()
        .filter(|o| o.infrastructure == Infrastructure::GeoIp)
    {
        let Some(server) = env.db.position(Infrastructure::GeoIp, &o.anchor_id) else {
            continue;
        };
        let s = ecef(&server)?;
        let k = env.params.fiber_factor;
        let extra = distance_to_rtt((spoof - s).norm(), k, 0.0)
            - distance_to_rtt((truth - s).norm(), k, 0.0);
        o.value += extra.max(0.0) + e.delay_ms;
    }
    Ok(())
}
