use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::detector::motion_displacement;
use crate::geo::EnuFrame;
use crate::positioning::{
    geolocation_wls, gnss_trilateration, rssi_to_distance, EnuFix, RangingModelParams,
};
use crate::trace::{AnchorDatabase, Infrastructure, RangingObservation, TraceFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaselineKind {
    KalmanResidual,
    NetworkDistance,
    SecureFusion,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [
        BaselineKind::KalmanResidual,
        BaselineKind::NetworkDistance,
        BaselineKind::SecureFusion,
    ];
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::KalmanResidual => "KALMAN_RESIDUAL",
            BaselineKind::NetworkDistance => "NETWORK_DISTANCE",
            BaselineKind::SecureFusion => "SECURE_FUSION",
        })
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "KALMAN_RESIDUAL" | "KALMAN" => Ok(BaselineKind::KalmanResidual),
            "NETWORK_DISTANCE" | "NETWORK" => Ok(BaselineKind::NetworkDistance),
            "SECURE_FUSION" | "FUSION" => Ok(BaselineKind::SecureFusion),
            other => Err(format!("unknown baseline '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Kalman process noise as white acceleration, m/s².
    pub kalman_accel_sigma: f64,
    /// Random-walk growth of the fused prior per epoch, meters.
    pub fusion_process_sigma: f64,
    /// Floor on every measurement sigma, meters.
    pub sigma_floor: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kalman_accel_sigma: 1.0,
            fusion_process_sigma: 0.5,
            sigma_floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineVerdict {
    pub timestamp: f64,
    pub score: Option<f64>,
    pub attack: Option<bool>,
}

/// One WLS over every RSSI anchor of the frame, altitude fixed to `up`.
pub fn pooled_network_fix(
    frame: &TraceFrame,
    db: &AnchorDatabase,
    enu: &EnuFrame,
    up: f64,
    params: &RangingModelParams,
) -> Option<EnuFix> {
    let mut anchors = Vec::new();
    let mut dist = Vec::new();
    let mut rel = 0.0f64;
    for o in frame
        .observations
        .iter()
        .filter(|o| o.infrastructure.is_rssi())
    {
        let Some(p) = db.position(o.infrastructure, &o.anchor_id) else {
            continue;
        };
        anchors.push(enu.to_enu(&p));
        dist.push(rssi_to_distance(
            o.value,
            params.rssi_p0_dbm,
            params.path_loss(o.infrastructure),
        ));
        rel = rel.max(params.relative_range_sigma(o.infrastructure));
    }
    geolocation_wls(&anchors, &dist, up, rel).ok()
}

fn gnss_fix_of(
    frame: &TraceFrame,
    enu: &EnuFrame,
    init: Option<Vector3<f64>>,
    params: &RangingModelParams,
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let obs: Vec<&RangingObservation> = frame.observations_for(Infrastructure::Gnss).collect();
    if obs.len() < 4 {
        return None;
    }
    gnss_trilateration(&obs, enu, init, params, 0)
        .ok()
        .map(|e| (e.enu, e.sigma))
}

/// Per-epoch anomaly scores in meters; `None` where the inputs are missing.
pub fn baseline_scores(
    kind: BaselineKind,
    frames: &[TraceFrame],
    db: &AnchorDatabase,
    params: &RangingModelParams,
    cfg: &BaselineConfig,
) -> Result<Vec<Option<f64>>, EvalError> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let origin = first.ground_truth.unwrap_or(first.lbs_position);
    let enu = EnuFrame::new(origin).map_err(|e| EvalError::MissingInput {
        kind,
        reason: e.to_string(),
    })?;
    let needs_gnss = kind != BaselineKind::NetworkDistance;
    let needs_network = kind == BaselineKind::NetworkDistance;
    if needs_gnss
        && !frames
            .iter()
            .any(|f| f.count_for(Infrastructure::Gnss) >= 4)
    {
        return Err(EvalError::MissingInput {
            kind,
            reason: "no frame has four GNSS pseudoranges".into(),
        });
    }
    if needs_network
        && !frames
            .iter()
            .any(|f| f.observations.iter().any(|o| o.infrastructure.is_rssi()))
    {
        return Err(EvalError::MissingInput {
            kind,
            reason: "no frame has network observations".into(),
        });
    }
    let floor = cfg.sigma_floor;
    let mut out = Vec::with_capacity(frames.len());
    // Position estimate and per-axis variance carried between epochs.
    let mut state: Option<(Vector3<f64>, Vector3<f64>)> = None;
    let mut prev_t: Option<f64> = None;
    for f in frames {
        let dt = prev_t.map_or(0.0, |p| f.timestamp - p);
        prev_t = Some(f.timestamp);
        let disp = if dt > 0.0 {
            motion_displacement(&f.motion, dt)
        } else {
            Vector3::zeros()
        };
        let lbs = enu.to_enu(&f.lbs_position);
        let score = match kind {
            BaselineKind::NetworkDistance => pooled_network_fix(f, db, &enu, lbs.z, params)
                .map(|fix| (fix.position - lbs).norm()),
            BaselineKind::KalmanResidual => {
                let q = {
                    let a = cfg.kalman_accel_sigma;
                    (a * dt * dt / 2.0).powi(2)
                };
                let prior = state.map(|(p, var)| (p + disp, var.add_scalar(q)));
                let fix = gnss_fix_of(f, &enu, prior.map(|s| s.0), params);
                match (prior, fix) {
                    (_, None) => {
                        state = prior;
                        None
                    }
                    (None, Some((z, s))) => {
                        state = Some((z, s.map(|v| v.max(floor).powi(2))));
                        Some(0.0)
                    }
                    (Some((p, var)), Some((z, s))) => {
                        let r = s.map(|v| v.max(floor).powi(2));
                        let gain = var.component_div(&(var + r));
                        let post = p + gain.component_mul(&(z - p));
                        let post_var = (Vector3::repeat(1.0) - gain).component_mul(&var);
                        state = Some((post, post_var));
                        Some((post - z).norm())
                    }
                }
            }
            BaselineKind::SecureFusion => {
                let q = cfg.fusion_process_sigma.powi(2);
                let prior = state.map(|(p, var)| (p + disp, var.add_scalar(q)));
                let fix = gnss_fix_of(f, &enu, prior.map(|s| s.0), params);
                let up = fix.map(|g| g.0.z).or(prior.map(|p| p.0.z)).unwrap_or(lbs.z);
                let net = pooled_network_fix(f, db, &enu, up, params);
                let mut num = Vector3::zeros();
                let mut den = Vector3::zeros();
                let mut add = |p: Vector3<f64>, var: Vector3<f64>| {
                    let w = var.map(|v| 1.0 / v.max(floor * floor));
                    num += w.component_mul(&p);
                    den += w;
                };
                if let Some((p, var)) = prior {
                    add(p, var);
                }
                if let Some((z, s)) = fix {
                    add(z, s.map(|v| v * v));
                }
                if let Some(n) = &net {
                    // The network fix carries no vertical information.
                    let mut var = n.sigma.map(|v| v * v);
                    var.z = f64::INFINITY;
                    add(n.position, var);
                }
                if den.iter().all(|d| *d > 0.0) {
                    let fused = num.component_div(&den);
                    state = Some((fused, den.map(|d| 1.0 / d)));
                }
                match (fix, state) {
                    (Some((z, _)), Some((fused, _))) => Some((fused - z).norm()),
                    _ => None,
                }
            }
        };
        out.push(score);
    }
    Ok(out)
}

/// Scores and flags (`score > threshold`) for every frame.
pub fn run_baseline(
    kind: BaselineKind,
    frames: &[TraceFrame],
    db: &AnchorDatabase,
    params: &RangingModelParams,
    cfg: &BaselineConfig,
    threshold: f64,
) -> Result<Vec<BaselineVerdict>, EvalError> {
    let scores = baseline_scores(kind, frames, db, params, cfg)?;
    Ok(frames
        .iter()
        .zip(scores)
        .map(|(f, score)| BaselineVerdict {
            timestamp: f.timestamp,
            score,
            attack: score.map(|s| s > threshold),
        })
        .collect())
}
