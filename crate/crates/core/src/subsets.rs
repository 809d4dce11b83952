//! Subset generation, sampling and per-subset positioning.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geo::EnuFrame;
use crate::positioning::{
    geoip_position, gnss_trilateration, network_fix, PositionEstimate, PositioningError,
    RangingModelParams,
};
use crate::trace::{
    AnchorDatabase, AnchorId, Constellation, Infrastructure, RangingObservation, TraceFrame,
};

pub const MIN_NETWORK_MEMBERS: usize = 3;
pub const MIN_GNSS_SATELLITES: usize = 4;
pub const DEFAULT_CAP: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubsetMembers {
    /// Every satellite of the named constellations.
    Constellations(Vec<Constellation>),
    /// Named anchors, sorted by id. Empty for the GeoIP table lookup.
    Anchors(Vec<AnchorId>),
}

impl SubsetMembers {
    pub fn len(&self) -> usize {
        match self {
            SubsetMembers::Constellations(c) => c.len(),
            SubsetMembers::Anchors(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubsetSpec {
    pub infrastructure: Infrastructure,
    pub members: SubsetMembers,
    /// Position in the enumeration for this infrastructure.
    pub index: usize,
    /// True for the subset holding every candidate of the infrastructure.
    pub full: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplingDistribution {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingPolicy {
    pub rate: f64,
    pub distribution: SamplingDistribution,
    pub seed: u64,
    pub cap: usize,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            rate: 1.0,
            distribution: SamplingDistribution::Uniform,
            seed: 0,
            cap: DEFAULT_CAP,
        }
    }
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(format!("sampling rate {} outside [0, 1]", self.rate));
        }
        if self.cap < MIN_NETWORK_MEMBERS {
            return Err(format!("cap {} below {MIN_NETWORK_MEMBERS}", self.cap));
        }
        Ok(())
    }
}

/// `Σ_{i=3}^{J} C(J, i)`.
pub fn network_subset_count(j: usize) -> usize {
    if j < MIN_NETWORK_MEMBERS {
        return 0;
    }
    (1usize << j) - 1 - j - j * (j - 1) / 2
}

/// All subsets of at least three of the first `cap` ids, in lexicographic
/// order of their sorted member lists.
pub fn enumerate_network_subsets(
    infrastructure: Infrastructure,
    ids: &[AnchorId],
    cap: usize,
) -> Vec<SubsetSpec> {
    let mut kept: Vec<AnchorId> = ids.iter().take(cap).cloned().collect();
    kept.sort();
    kept.dedup();
    let j = kept.len();
    if j < MIN_NETWORK_MEMBERS {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(network_subset_count(j));
    let mut stack: Vec<usize> = Vec::with_capacity(j);
    // Depth-first preorder over index combinations is lexicographic.
    fn visit(
        start: usize,
        kept: &[AnchorId],
        stack: &mut Vec<usize>,
        out: &mut Vec<SubsetSpec>,
        infrastructure: Infrastructure,
    ) {
        for i in start..kept.len() {
            stack.push(i);
            if stack.len() >= MIN_NETWORK_MEMBERS {
                out.push(SubsetSpec {
                    infrastructure,
                    members: SubsetMembers::Anchors(
                        stack.iter().map(|&k| kept[k].clone()).collect(),
                    ),
                    index: out.len(),
                    full: stack.len() == kept.len(),
                });
            }
            visit(i + 1, kept, stack, out, infrastructure);
            stack.pop();
        }
    }
    visit(0, &kept, &mut stack, &mut out, infrastructure);
    out
}

/// Constellation combinations whose pooled satellites number at least four.
pub fn enumerate_gnss_subsets<'a>(
    observations: impl IntoIterator<Item = &'a RangingObservation>,
) -> Vec<SubsetSpec> {
    let mut counts = [0usize; 4];
    for o in observations {
        if o.infrastructure == Infrastructure::Gnss {
            counts[o.constellation.unwrap_or(Constellation::Gps).index()] += 1;
        }
    }
    let present: u8 = (0..4)
        .filter(|&k| counts[k] > 0)
        .fold(0, |m, k| m | (1 << k));
    let mut out = Vec::new();
    for mask in 1u8..16 {
        if mask & !present != 0 {
            continue;
        }
        let members: Vec<Constellation> = Constellation::ALL
            .iter()
            .copied()
            .filter(|c| mask & (1 << c.index()) != 0)
            .collect();
        let sats: usize = members.iter().map(|c| counts[c.index()]).sum();
        if sats >= MIN_GNSS_SATELLITES {
            out.push(SubsetSpec {
                infrastructure: Infrastructure::Gnss,
                members: SubsetMembers::Constellations(members),
                index: out.len(),
                full: mask == present,
            });
        }
    }
    out
}

/// Observations of one infrastructure ordered strongest first (highest RSSI,
/// lowest RTT), ties broken by id.
pub fn strongest_first(frame: &TraceFrame, infra: Infrastructure) -> Vec<&RangingObservation> {
    let mut obs: Vec<&RangingObservation> = frame.observations_for(infra).collect();
    obs.sort_by(|a, b| {
        let ord = if infra == Infrastructure::GeoIp {
            a.value.total_cmp(&b.value)
        } else {
            b.value.total_cmp(&a.value)
        };
        ord.then_with(|| a.anchor_id.cmp(&b.anchor_id))
    });
    obs
}

/// Every candidate subset of a frame across all infrastructures. A GeoIP
/// table lookup subset is added when fewer than three RTTs are present and
/// the frame carries a client address.
pub fn enumerate_frame_subsets(frame: &TraceFrame, cap: usize) -> Vec<SubsetSpec> {
    let mut out = enumerate_gnss_subsets(&frame.observations);
    for infra in [
        Infrastructure::Wifi,
        Infrastructure::Cellular,
        Infrastructure::Bluetooth,
        Infrastructure::GeoIp,
    ] {
        let ids: Vec<AnchorId> = strongest_first(frame, infra)
            .into_iter()
            .map(|o| o.anchor_id.clone())
            .collect();
        let subsets = enumerate_network_subsets(infra, &ids, cap);
        if subsets.is_empty() && infra == Infrastructure::GeoIp && frame.client_ip.is_some() {
            out.push(SubsetSpec {
                infrastructure: infra,
                members: SubsetMembers::Anchors(Vec::new()),
                index: 0,
                full: true,
            });
        }
        out.extend(subsets);
    }
    out
}

/// Keeps each subset independently with probability `policy.rate`. The
/// random stream is selected by `stream` (typically the epoch index). An
/// infrastructure whose draw keeps nothing retains its full-set subset.
pub fn sample_subsets(
    subsets: &[SubsetSpec],
    policy: &SamplingPolicy,
    stream: u64,
) -> Vec<SubsetSpec> {
    if policy.rate >= 1.0 {
        return subsets.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    rng.set_stream(stream);
    let keep: Vec<bool> = subsets
        .iter()
        .map(|_| rng.random::<f64>() < policy.rate)
        .collect();
    let mut out = Vec::new();
    for infra in Infrastructure::ALL {
        let candidates: Vec<usize> = (0..subsets.len())
            .filter(|&i| subsets[i].infrastructure == infra)
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let kept: Vec<usize> = candidates.iter().copied().filter(|&i| keep[i]).collect();
        if kept.is_empty() {
            let forced = candidates
                .iter()
                .copied()
                .find(|&i| subsets[i].full)
                .unwrap_or(candidates[candidates.len() - 1]);
            out.push(subsets[forced].clone());
        } else {
            out.extend(kept.into_iter().map(|i| subsets[i].clone()));
        }
    }
    out
}

/// Shared inputs for solving one frame's subsets.
#[derive(Debug, Clone, Copy)]
pub struct SolveContext<'a> {
    pub db: &'a AnchorDatabase,
    pub params: &'a RangingModelParams,
    pub enu: &'a EnuFrame,
    /// Starting point for trilateration.
    pub gnss_init: Option<Vector3<f64>>,
    /// Altitude (ENU up) for the horizontal solvers.
    pub altitude: f64,
}

#[derive(Debug, Clone)]
pub struct SubsetFailure {
    pub subset: SubsetSpec,
    pub error: PositioningError,
}

#[derive(Debug, Clone, Default)]
pub struct SubsetResults {
    /// In subset order.
    pub estimates: Vec<(SubsetSpec, PositionEstimate)>,
    pub failures: Vec<SubsetFailure>,
}

fn solve_one(
    frame: &TraceFrame,
    subset: &SubsetSpec,
    ctx: &SolveContext<'_>,
) -> Result<PositionEstimate, PositioningError> {
    match &subset.members {
        SubsetMembers::Constellations(cs) => {
            let obs: Vec<&RangingObservation> = frame
                .observations_for(Infrastructure::Gnss)
                .filter(|o| cs.contains(&o.constellation.unwrap_or(Constellation::Gps)))
                .collect();
            gnss_trilateration(&obs, ctx.enu, ctx.gnss_init, ctx.params, subset.index)
        }
        SubsetMembers::Anchors(ids) => {
            let obs: Vec<&RangingObservation> = frame
                .observations_for(subset.infrastructure)
                .filter(|o| ids.binary_search(&o.anchor_id).is_ok())
                .collect();
            if obs.len() != ids.len() {
                return Err(PositioningError::InvalidInput(
                    "subset references observations missing from the frame".into(),
                ));
            }
            if subset.infrastructure == Infrastructure::GeoIp {
                geoip_position(
                    &obs,
                    ctx.db,
                    frame.client_ip,
                    ctx.enu,
                    ctx.altitude,
                    ctx.params,
                    subset.index,
                )
            } else {
                network_fix(
                    &obs,
                    ctx.db,
                    ctx.enu,
                    ctx.altitude,
                    ctx.params,
                    subset.index,
                )
            }
        }
    }
}

/// Solves every subset; failures are recorded and skipped.
pub fn position_subsets(
    frame: &TraceFrame,
    subsets: &[SubsetSpec],
    ctx: &SolveContext<'_>,
) -> SubsetResults {
    let solved: Vec<Result<PositionEstimate, PositioningError>> = subsets
        .par_iter()
        .map(|s| solve_one(frame, s, ctx))
        .collect();
    let mut results = SubsetResults::default();
    for (subset, r) in subsets.iter().zip(solved) {
        match r {
            Ok(est) => results.estimates.push((subset.clone(), est)),
            Err(error) => {
                log::debug!(
                    "t={} {} subset {} failed: {error}",
                    frame.timestamp,
                    subset.infrastructure,
                    subset.index
                );
                results.failures.push(SubsetFailure {
                    subset: subset.clone(),
                    error,
                });
            }
        }
    }
    results
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeodeticPosition, OrientationAngles};
    use crate::trace::{AnchorRecord, MotionSample};

    fn ids(n: usize) -> Vec<AnchorId> {
        (0..n).map(|i| AnchorId::new(format!("ap{i:02}"))).collect()
    }

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn closed_form_counts() {
        assert_eq!(
            enumerate_network_subsets(Infrastructure::Wifi, &ids(3), 12).len(),
            1
        );
        assert_eq!(
            enumerate_network_subsets(Infrastructure::Wifi, &ids(5), 12).len(),
            16
        );
        assert!(enumerate_network_subsets(Infrastructure::Wifi, &ids(2), 12).is_empty());
        for j in 3..=12 {
            let expected: usize = (3..=j).map(|i| binom(j, i)).sum();
            let subsets = enumerate_network_subsets(Infrastructure::Wifi, &ids(j), 12);
            assert_eq!(subsets.len(), expected);
            assert_eq!(network_subset_count(j), expected);
            assert_eq!(subsets.iter().filter(|s| s.full).count(), 1);
        }
        assert_eq!(network_subset_count(12), 4017);
    }

    #[test]
    fn enumeration_is_lexicographic_and_capped() {
        let subsets = enumerate_network_subsets(Infrastructure::Wifi, &ids(15), 4);
        assert_eq!(subsets.len(), 5);
        let lists: Vec<Vec<AnchorId>> = subsets
            .iter()
            .map(|s| match &s.members {
                SubsetMembers::Anchors(a) => a.clone(),
                _ => unreachable!(),
            })
            .collect();
        let mut sorted = lists.clone();
        sorted.sort();
        assert_eq!(lists, sorted);
        assert!(lists.iter().flatten().all(|id| id.as_str() < "ap04"));
    }

    fn gnss_obs(counts: &[(Constellation, usize)]) -> Vec<RangingObservation> {
        let mut out = Vec::new();
        for &(c, n) in counts {
            for i in 0..n {
                out.push(RangingObservation::gnss(
                    0.0,
                    format!("{c}{i}").as_str(),
                    c,
                    2.2e7,
                    Vector3::new(1.5e7, 0.0, 2.1e7),
                ));
            }
        }
        out
    }

    #[test]
    fn constellation_subsets() {
        let s = enumerate_gnss_subsets(&gnss_obs(&[
            (Constellation::Gps, 6),
            (Constellation::Galileo, 5),
        ]));
        assert_eq!(s.len(), 3);
        assert_eq!(
            s[2].members,
            SubsetMembers::Constellations(vec![Constellation::Gps, Constellation::Galileo])
        );
        assert!(s[2].full);
        let s = enumerate_gnss_subsets(&gnss_obs(&[
            (Constellation::Gps, 3),
            (Constellation::Galileo, 3),
        ]));
        assert_eq!(s.len(), 1);
        assert!(s[0].full);
        let s = enumerate_gnss_subsets(&gnss_obs(&[(Constellation::BeiDou, 4)]));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn constellation_rule_exhaustive() {
        for mask in 0u32..(5u32.pow(4)) {
            let counts: Vec<(Constellation, usize)> = Constellation::ALL
                .iter()
                .enumerate()
                .map(|(k, &c)| (c, ((mask / 5u32.pow(k as u32)) % 5) as usize))
                .collect();
            for s in enumerate_gnss_subsets(&gnss_obs(&counts)) {
                let SubsetMembers::Constellations(cs) = &s.members else {
                    unreachable!()
                };
                let n: usize = cs.iter().map(|c| counts[c.index()].1).sum();
                assert!(n >= 4);
                assert!(cs.iter().all(|c| counts[c.index()].1 > 0));
            }
        }
    }

    #[test]
    fn sampling_rates() {
        let all = enumerate_network_subsets(Infrastructure::Wifi, &ids(8), 12);
        let policy = SamplingPolicy {
            rate: 1.0,
            ..Default::default()
        };
        assert_eq!(sample_subsets(&all, &policy, 0), all);
        let policy = SamplingPolicy {
            rate: 0.0,
            ..Default::default()
        };
        let kept = sample_subsets(&all, &policy, 0);
        assert_eq!(kept.len(), 1);
        assert!(kept[0].full);
    }

    #[test]
    fn half_rate_concentrates() {
        let all: Vec<SubsetSpec> = (0..10_000)
            .map(|i| SubsetSpec {
                infrastructure: Infrastructure::Wifi,
                members: SubsetMembers::Anchors(vec![AnchorId::new(format!("{i}"))]),
                index: i,
                full: false,
            })
            .collect();
        let policy = SamplingPolicy {
            rate: 0.5,
            seed: 11,
            ..Default::default()
        };
        let kept = sample_subsets(&all, &policy, 3);
        assert!((4700..=5300).contains(&kept.len()), "{}", kept.len());
        assert_eq!(kept, sample_subsets(&all, &policy, 3));
        assert!(kept.iter().all(|s| all.contains(s)));
    }

    fn wifi_frame() -> (TraceFrame, AnchorDatabase, EnuFrame) {
        let origin = GeodeticPosition::new(59.4, 17.95, 0.0).unwrap();
        let enu = EnuFrame::new(origin).unwrap();
        let mut db = AnchorDatabase::new();
        let mut frame = TraceFrame::new(
            0.0,
            MotionSample {
                orientation: OrientationAngles::default(),
                ..MotionSample::stationary(0.0)
            },
            origin,
        );
        let layout = [
            (0.0, 0.0),
            (80.0, 0.0),
            (0.0, 90.0),
            (70.0, 60.0),
            (200.0, 0.0),
        ];
        for (i, &(e, n)) in layout.iter().enumerate() {
            let id = format!("ap{i}");
            let p = enu.to_geodetic(&Vector3::new(e, n, 0.0)).unwrap();
            db.insert(AnchorRecord::fixed(
                id.as_str(),
                Infrastructure::Wifi,
                p,
                None,
            ))
            .unwrap();
            let d: f64 = Vector3::new(e - 30.0, n - 20.0, 0.0).norm();
            let rssi = -40.0 - 30.0 * d.log10();
            frame.observations.push(RangingObservation::rssi(
                0.0,
                Infrastructure::Wifi,
                id.as_str(),
                rssi,
            ));
        }
        frame.sort_observations();
        (frame, db, enu)
    }

    #[test]
    fn degenerate_subset_is_skipped() {
        let (frame, db, enu) = wifi_frame();
        let params = RangingModelParams::default();
        let ctx = SolveContext {
            db: &db,
            params: &params,
            enu: &enu,
            gnss_init: None,
            altitude: 0.0,
        };
        let subsets = enumerate_frame_subsets(&frame, 12);
        assert_eq!(subsets.len(), 16);
        let res = position_subsets(&frame, &subsets, &ctx);
        // {ap0, ap1, ap4} is collinear along the east axis.
        assert_eq!(res.failures.len(), 1);
        assert_eq!(
            res.failures[0].subset.members,
            SubsetMembers::Anchors(vec!["ap0".into(), "ap1".into(), "ap4".into()])
        );
        assert_eq!(res.estimates.len(), 15);
        for (_, e) in &res.estimates {
            assert!((e.enu.xy() - nalgebra::Vector2::new(30.0, 20.0)).norm() < 1e-3);
        }
        // Order-insensitive: reversed input yields the same set.
        let mut rev = subsets.clone();
        rev.reverse();
        let res2 = position_subsets(&frame, &rev, &ctx);
        let mut a: Vec<usize> = res.estimates.iter().map(|(s, _)| s.index).collect();
        let mut b: Vec<usize> = res2.estimates.iter().map(|(s, _)| s.index).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
