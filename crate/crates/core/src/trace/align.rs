use std::net::IpAddr;

use nalgebra::Vector3;

use super::{Infrastructure, MotionSample, RangingObservation, TraceError, TraceFrame};
use crate::geo::GeodeticPosition;

/// Nearest-neighbor attachment tolerance (seconds).
pub const ALIGNMENT_TOLERANCE_S: f64 = 0.5;
/// Network and GeoIP scans are carried forward at most this long (seconds).
pub const STALENESS_BOUND_S: f64 = 10.0;
/// GNSS gaps longer than this are filled with synthetic 1 Hz epochs.
const MAX_MASTER_GAP_S: f64 = 1.5;
const SAME_EPOCH_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPosition {
    pub timestamp: f64,
    pub position: GeodeticPosition,
}

/// Raw, individually time-sorted input streams.
#[derive(Debug, Clone, Default)]
pub struct EpochStreams {
    pub motion: Vec<MotionSample>,
    pub gnss: Vec<RangingObservation>,
    /// Wi-Fi, cellular and Bluetooth scans.
    pub network: Vec<RangingObservation>,
    pub geoip: Vec<RangingObservation>,
    pub lbs: Vec<TimedPosition>,
    pub truth: Vec<TimedPosition>,
    pub client_ip: Option<IpAddr>,
}

fn master_clock(streams: &EpochStreams) -> Vec<f64> {
    let mut gnss_epochs: Vec<f64> = Vec::new();
    for o in &streams.gnss {
        if gnss_epochs
            .last()
            .is_none_or(|&t| (o.timestamp - t).abs() > SAME_EPOCH_S)
        {
            gnss_epochs.push(o.timestamp);
        }
    }
    let Some((m0, m1)) = streams
        .motion
        .first()
        .zip(streams.motion.last())
        .map(|(a, b)| (a.timestamp, b.timestamp))
    else {
        return gnss_epochs;
    };
    if gnss_epochs.is_empty() {
        let n = ((m1 - m0) + SAME_EPOCH_S).floor() as usize;
        return (0..=n).map(|k| m0 + k as f64).collect();
    }
    let mut epochs = Vec::with_capacity(gnss_epochs.len());
    // Synthetic epochs before the first fix, generated backwards.
    let mut lead = Vec::new();
    let mut t = gnss_epochs[0] - 1.0;
    while t >= m0 - SAME_EPOCH_S {
        lead.push(t);
        t -= 1.0;
    }
    epochs.extend(lead.into_iter().rev());
    for (i, &t) in gnss_epochs.iter().enumerate() {
        epochs.push(t);
        let next = gnss_epochs.get(i + 1).copied();
        let gap_end = next.unwrap_or(m1 + 1.0);
        if next.is_some() && gap_end - t <= MAX_MASTER_GAP_S {
            continue;
        }
        let mut s = t + 1.0;
        while s <= gap_end - ALIGNMENT_TOLERANCE_S && s <= m1 + SAME_EPOCH_S {
            epochs.push(s);
            s += 1.0;
        }
    }
    epochs
}

fn nearest_index(epochs: &[f64], t: f64) -> Option<usize> {
    let i = epochs.partition_point(|&e| e < t);
    let mut best: Option<usize> = None;
    for j in [i.wrapping_sub(1), i] {
        if let Some(&e) = epochs.get(j) {
            if best.is_none_or(|b| (e - t).abs() < (epochs[b] - t).abs()) {
                best = Some(j);
            }
        }
    }
    best.filter(|&j| (epochs[j] - t).abs() <= ALIGNMENT_TOLERANCE_S + SAME_EPOCH_S)
}

fn epoch_motion(samples: &[MotionSample], prev: Option<f64>, t: f64) -> MotionSample {
    let start = prev.unwrap_or(t - 1.0);
    let lo = samples.partition_point(|s| s.timestamp <= start + SAME_EPOCH_S);
    let hi = samples.partition_point(|s| s.timestamp <= t + SAME_EPOCH_S);
    let window = &samples[lo..hi];
    if let Some(last) = window.last() {
        let n = window.len() as f64;
        let velocity = window.iter().map(|s| s.velocity).sum::<Vector3<f64>>() / n;
        let acceleration = window.iter().map(|s| s.acceleration).sum::<Vector3<f64>>() / n;
        return MotionSample {
            timestamp: t,
            velocity,
            acceleration,
            orientation: last.orientation,
        };
    }
    // No sample inside the interval: hold the most recent one (or the first).
    let held = samples[..hi].last().or(samples.first());
    match held {
        Some(s) => MotionSample { timestamp: t, ..*s },
        None => MotionSample::stationary(t),
    }
}

fn attach_scans(
    epochs: &[f64],
    stream: &[RangingObservation],
    per_epoch: &mut [Vec<RangingObservation>],
) {
    for infra in Infrastructure::ALL {
        let mut fresh: Vec<Vec<RangingObservation>> = vec![Vec::new(); epochs.len()];
        for o in stream.iter().filter(|o| o.infrastructure == infra) {
            if let Some(i) = nearest_index(epochs, o.timestamp) {
                fresh[i].retain(|p| p.anchor_id != o.anchor_id);
                fresh[i].push(o.clone());
            }
        }
        let mut last_scan: Option<(f64, Vec<RangingObservation>)> = None;
        for (i, scan) in fresh.into_iter().enumerate() {
            let t = epochs[i];
            if !scan.is_empty() {
                per_epoch[i].extend(scan.iter().cloned());
                last_scan = Some((t, scan));
            } else if let Some((t0, prev)) = &last_scan {
                if t - t0 <= STALENESS_BOUND_S + SAME_EPOCH_S {
                    per_epoch[i].extend(prev.iter().map(|o| RangingObservation {
                        timestamp: t,
                        ..o.clone()
                    }));
                }
            }
        }
    }
}

fn nearest_position(stream: &[TimedPosition], t: f64) -> Option<GeodeticPosition> {
    let times: Vec<f64> = stream.iter().map(|p| p.timestamp).collect();
    nearest_index(&times, t).map(|i| stream[i].position)
}

/// Builds one frame per master epoch from the raw streams.
pub fn align_epochs(streams: &EpochStreams) -> Result<Vec<TraceFrame>, TraceError> {
    let epochs = master_clock(streams);
    if epochs.is_empty() {
        return Err(TraceError::EmptyMasterStream);
    }
    let mut per_epoch: Vec<Vec<RangingObservation>> = vec![Vec::new(); epochs.len()];
    for o in &streams.gnss {
        if let Some(i) = nearest_index(&epochs, o.timestamp) {
            per_epoch[i].push(RangingObservation {
                timestamp: epochs[i],
                ..o.clone()
            });
        }
    }
    attach_scans(&epochs, &streams.network, &mut per_epoch);
    attach_scans(&epochs, &streams.geoip, &mut per_epoch);

    let mut frames = Vec::with_capacity(epochs.len());
    for (i, observations) in per_epoch.into_iter().enumerate() {
        let t = epochs[i];
        if observations.is_empty() {
            continue;
        }
        let Some(lbs) = nearest_position(&streams.lbs, t) else {
            continue;
        };
        let prev = i.checked_sub(1).map(|j| epochs[j]);
        let mut frame = TraceFrame::new(t, epoch_motion(&streams.motion, prev, t), lbs);
        frame.observations = observations;
        frame.ground_truth = nearest_position(&streams.truth, t);
        frame.client_ip = streams.client_ip;
        frame.sort_observations();
        frame.relabel();
        frames.push(frame);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pos() -> GeodeticPosition {
        GeodeticPosition::new(59.4, 17.95, 30.0).unwrap()
    }

    fn gnss(t: f64, sat: &str) -> RangingObservation {
        RangingObservation::gnss(
            t,
            sat,
            super::super::Constellation::Gps,
            2.2e7,
            Vector3::new(1.5e7, 0.0, 2.1e7),
        )
    }

    fn wifi(t: f64, ap: &str) -> RangingObservation {
        RangingObservation::rssi(t, Infrastructure::Wifi, ap, -70.0)
    }

    fn lbs(ts: impl Iterator<Item = f64>) -> Vec<TimedPosition> {
        ts.map(|t| TimedPosition {
            timestamp: t,
            position: pos(),
        })
        .collect()
    }

    #[test]
    fn identical_timestamps_give_one_frame_each() {
        let ts = [0.0, 1.0, 2.0];
        let streams = EpochStreams {
            motion: ts.iter().map(|&t| MotionSample::stationary(t)).collect(),
            gnss: ts.iter().map(|&t| gnss(t, "G01")).collect(),
            network: ts.iter().map(|&t| wifi(t, "ap")).collect(),
            geoip: ts
                .iter()
                .map(|&t| RangingObservation::rtt(t, "s", 20.0))
                .collect(),
            lbs: lbs(ts.into_iter()),
            ..Default::default()
        };
        let frames = align_epochs(&streams).unwrap();
        assert_eq!(frames.len(), 3);
        for f in &frames {
            assert_eq!(f.observations.len(), 3);
        }
    }

    #[test]
    fn nearest_neighbor_attachment() {
        let streams = EpochStreams {
            gnss: vec![gnss(10.0, "G01"), gnss(11.0, "G01")],
            network: vec![wifi(10.4, "ap")],
            lbs: lbs([10.0, 11.0].into_iter()),
            ..Default::default()
        };
        let frames = align_epochs(&streams).unwrap();
        assert_eq!(frames[0].count_for(Infrastructure::Wifi), 1);
        assert_eq!(
            frames[0]
                .observations_for(Infrastructure::Wifi)
                .next()
                .unwrap()
                .timestamp,
            10.4
        );
        // Carried forward to frame 11 with the frame timestamp.
        let carried = frames[1]
            .observations_for(Infrastructure::Wifi)
            .next()
            .unwrap();
        assert_eq!(carried.timestamp, 11.0);
    }

    #[test]
    fn staleness_bound_stops_carry_forward() {
        let ts: Vec<f64> = (0..20).map(f64::from).collect();
        let streams = EpochStreams {
            gnss: ts.iter().map(|&t| gnss(t, "G01")).collect(),
            network: vec![wifi(0.0, "ap")],
            lbs: lbs(ts.iter().copied()),
            ..Default::default()
        };
        let frames = align_epochs(&streams).unwrap();
        for f in &frames {
            let has_net = f.count_for(Infrastructure::Wifi) > 0;
            assert_eq!(has_net, f.timestamp <= 10.0, "t = {}", f.timestamp);
        }
    }

    #[test]
    fn jammed_gnss_is_bridged_by_motion_epochs() {
        let streams = EpochStreams {
            motion: (0..100)
                .map(|k| MotionSample::stationary(k as f64 * 0.1))
                .collect(),
            network: (0..10).map(|k| wifi(k as f64, "ap")).collect(),
            lbs: lbs((0..10).map(f64::from)),
            ..Default::default()
        };
        let frames = align_epochs(&streams).unwrap();
        assert_eq!(frames.len(), 10);
        assert_eq!(frames[3].timestamp, 3.0);
    }

    #[test]
    fn gap_in_gnss_is_filled() {
        let streams = EpochStreams {
            motion: (0..=100)
                .map(|k| MotionSample::stationary(k as f64 * 0.1))
                .collect(),
            gnss: vec![gnss(0.0, "G01"), gnss(1.0, "G01"), gnss(6.0, "G01")],
            network: (0..=10).map(|k| wifi(k as f64, "ap")).collect(),
            lbs: lbs((0..=10).map(f64::from)),
            ..Default::default()
        };
        let frames = align_epochs(&streams).unwrap();
        let ts: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();
        assert_eq!(ts, (0..=10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(frames[3].count_for(Infrastructure::Gnss), 0);
        assert_eq!(frames[6].count_for(Infrastructure::Gnss), 1);
    }

    #[test]
    fn motion_is_averaged_over_the_epoch() {
        let motion: Vec<MotionSample> = (1..=10)
            .map(|k| MotionSample {
                velocity: Vector3::new(k as f64, 0.0, 0.0),
                ..MotionSample::stationary(k as f64 * 0.1)
            })
            .collect();
        let streams = EpochStreams {
            motion,
            gnss: vec![gnss(1.0, "G01")],
            lbs: lbs([1.0].into_iter()),
            ..Default::default()
        };
        let frames = align_epochs(&streams).unwrap();
        assert!((frames[0].motion.velocity.x - 5.5).abs() < 1e-12);
    }

    #[test]
    fn empty_streams_error() {
        assert!(matches!(
            align_epochs(&EpochStreams::default()),
            Err(TraceError::EmptyMasterStream)
        ));
    }

    proptest! {
        #[test]
        fn aligned_frames_satisfy_invariants(
            gnss_t in proptest::collection::btree_set(0u32..400, 1..60),
            net_t in proptest::collection::btree_set(0u32..400, 0..30),
        ) {
            let g: Vec<f64> = gnss_t.iter().map(|&k| k as f64 * 0.5).collect();
            let n: Vec<f64> = net_t.iter().map(|&k| k as f64 * 0.5 + 0.13).collect();
            let streams = EpochStreams {
                motion: (0..=2000).map(|k| MotionSample::stationary(k as f64 * 0.1)).collect(),
                gnss: g.iter().map(|&t| gnss(t, "G01")).collect(),
                network: n.iter().map(|&t| wifi(t, "ap")).collect(),
                lbs: lbs((0..=400).map(|k| k as f64 * 0.5)),
                ..Default::default()
            };
            let frames = align_epochs(&streams).unwrap();
            for w in frames.windows(2) {
                prop_assert!(w[0].timestamp < w[1].timestamp);
            }
            for f in &frames {
                prop_assert!(!f.observations.is_empty());
                prop_assert!(f.validate(ALIGNMENT_TOLERANCE_S).is_ok());
            }
        }
    }
}
