use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{NoiseModel, SimError};
use crate::geo::{geodetic_to_ecef, GeodeticPosition};
use crate::positioning::{RangingModelParams, SPEED_OF_LIGHT};
use crate::trace::{AnchorId, AnchorRecord, Constellation, Infrastructure, RangingObservation};

/// A satellite fixed in ECEF for the duration of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Satellite {
    pub id: AnchorId,
    pub constellation: Constellation,
    pub ecef: Vector3<f64>,
}

/// Zero-mean Gaussian sample; exactly zero when `sigma` is zero.
pub(crate) fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
    } else {
        0.0
    }
}

fn ecef(p: &GeodeticPosition) -> Result<Vector3<f64>, SimError> {
    geodetic_to_ecef(p)
        .map(|e| e.to_vector())
        .map_err(|e| SimError::ConfigInvalid(e.to_string()))
}

/// `ρ = ‖p − α‖ + clock_bias + n`, `n ~ N(0, pseudorange_sigma²)`.
pub fn synth_gnss_observations<R: Rng + ?Sized>(
    timestamp: f64,
    truth: &GeodeticPosition,
    clock_bias: f64,
    satellites: &[Satellite],
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Vec<RangingObservation>, SimError> {
    if satellites.len() < 4 {
        return Err(SimError::InsufficientSatellites {
            got: satellites.len(),
        });
    }
    let p = ecef(truth)?;
    Ok(satellites
        .iter()
        .map(|s| {
            let rho = (p - s.ecef).norm() + clock_bias + gauss(rng, noise.pseudorange_sigma);
            RangingObservation::gnss(timestamp, s.id.clone(), s.constellation, rho, s.ecef)
        })
        .collect())
}

/// Log-distance path loss, no shadowing: `P₀ − 10 n log10(d / 1 m)`.
pub fn path_loss_rssi(distance: f64, p0_dbm: f64, path_loss: f64) -> f64 {
    p0_dbm - 10.0 * path_loss * distance.max(1.0).log10()
}

/// RSSI of every anchor within `reception_m` of the receiver, with Gaussian
/// shadowing in dB.
pub fn synth_network_observations<'a, R: Rng + ?Sized>(
    timestamp: f64,
    truth: &GeodeticPosition,
    anchors: impl IntoIterator<Item = &'a AnchorRecord>,
    reception_m: impl Fn(Infrastructure) -> f64,
    params: &RangingModelParams,
    noise: &NoiseModel,
    rng: &mut R,
) -> Vec<RangingObservation> {
    let Ok(p) = ecef(truth) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for a in anchors {
        if !a.infrastructure.is_rssi() {
            continue;
        }
        let Some(pos) = a.position.as_ref().and_then(|q| ecef(q).ok()) else {
            continue;
        };
        let d = (p - pos).norm();
        if d > reception_m(a.infrastructure) {
            continue;
        }
        let rssi = path_loss_rssi(d, params.rssi_p0_dbm, params.path_loss(a.infrastructure))
            + gauss(rng, noise.rssi_shadowing_db);
        out.push(RangingObservation::rssi(
            timestamp,
            a.infrastructure,
            a.anchor_id.clone(),
            rssi,
        ));
    }
    out
}

/// One-way distance in meters to round-trip time in ms through fiber with
/// propagation factor `kappa`, plus a fixed latency.
pub fn distance_to_rtt(distance: f64, kappa: f64, base_latency_ms: f64) -> f64 {
    2.0 * distance / (SPEED_OF_LIGHT * kappa) * 1e3 + base_latency_ms
}

/// `RTT = 2 d / (c κ) + base + jitter`, floored at 0.1 ms.
pub fn synth_geoip_observations<'a, R: Rng + ?Sized>(
    timestamp: f64,
    truth: &GeodeticPosition,
    servers: impl IntoIterator<Item = &'a AnchorRecord>,
    params: &RangingModelParams,
    noise: &NoiseModel,
    rng: &mut R,
) -> Vec<RangingObservation> {
    let Ok(p) = ecef(truth) else {
        return Vec::new();
    };
    servers
        .into_iter()
        .filter(|s| s.infrastructure == Infrastructure::GeoIp)
        .filter_map(|s| {
            let pos = ecef(s.position.as_ref()?).ok()?;
            let rtt = distance_to_rtt(
                (p - pos).norm(),
                params.fiber_factor,
                params.rtt.intercept_ms,
            ) + gauss(rng, noise.rtt_jitter_ms);
            Some(RangingObservation::rtt(
                timestamp,
                s.anchor_id.clone(),
                rtt.max(0.1),
            ))
        })
        .collect()
}
