use nalgebra::Vector3;
use serde::Serialize;

use super::DetectorError;
use crate::positioning::PositionEstimate;
use crate::subsets::SubsetMembers;
use crate::trace::Infrastructure;

/// Largest `f64` strictly below one.
pub const MAX_LIKELIHOOD: f64 = 1.0 - f64::EPSILON / 2.0;

/// A subset estimate after smoothing, in the detector's local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedEstimate {
    pub position: Vector3<f64>,
    pub sigma: Vector3<f64>,
    pub infrastructure: Infrastructure,
    pub subset_index: usize,
    pub members: SubsetMembers,
}

/// Solver sigma when the method provides one, otherwise the per-axis RMS of
/// the regression residuals; floored per axis.
pub fn assemble_sigma(
    estimate: &PositionEstimate,
    regression_rms: Option<&Vector3<f64>>,
    floor: f64,
) -> Vector3<f64> {
    let solver = estimate.sigma;
    let usable = solver.iter().all(|s| s.is_finite() && *s > 0.0);
    let base = match (usable, regression_rms) {
        (true, _) => solver,
        (false, Some(rms)) => *rms,
        (false, None) => Vector3::zeros(),
    };
    base.map(|s| if s.is_finite() { s.max(floor) } else { floor })
}

/// `ln` of the peak-normalized kernel: mean over axes of `−½ z²`.
pub fn log_position_kernel(p: &Vector3<f64>, est: &SmoothedEstimate) -> f64 {
    let z = (p - est.position).component_div(&est.sigma);
    -0.5 * z.norm_squared() / 3.0
}

/// Geometric mean over axes of `exp(−½ ((p − p̂)/σ̂)²)`; in `(0, 1]`.
pub fn position_kernel(p: &Vector3<f64>, est: &SmoothedEstimate) -> f64 {
    log_position_kernel(p, est).exp()
}

/// Mean over present infrastructures of the mean log kernel within each.
pub fn log_agreement(
    estimates: &[SmoothedEstimate],
    p: &Vector3<f64>,
) -> Result<f64, DetectorError> {
    let mut sum = [0.0; Infrastructure::COUNT];
    let mut count = [0usize; Infrastructure::COUNT];
    for e in estimates {
        let i = e.infrastructure.index();
        sum[i] += log_position_kernel(p, e);
        count[i] += 1;
    }
    let present: Vec<f64> = sum
        .iter()
        .zip(&count)
        .filter(|(_, c)| **c > 0)
        .map(|(s, c)| s / *c as f64)
        .collect();
    if present.is_empty() {
        return Err(DetectorError::NoEstimates);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// `f = 1 − exp(s)`, held strictly below one.
pub fn likelihood_from_log(s: f64) -> f64 {
    (-s.exp_m1()).clamp(0.0, MAX_LIKELIHOOD)
}

/// `f_t(p) = 1 − Π_m (Π_l f_l^m(p))^{1/(L_m M)}` with `M` counting only the
/// infrastructures that contributed an estimate.
pub fn composite_likelihood(
    estimates: &[SmoothedEstimate],
    p: &Vector3<f64>,
) -> Result<f64, DetectorError> {
    log_agreement(estimates, p).map(likelihood_from_log)
}

/// Maximizer of the kernel product: per-axis mean weighted by `1/(M L_m σ²)`.
pub fn fused_position(estimates: &[SmoothedEstimate]) -> Option<Vector3<f64>> {
    let mut count = [0usize; Infrastructure::COUNT];
    for e in estimates {
        count[e.infrastructure.index()] += 1;
    }
    let m = count.iter().filter(|c| **c > 0).count();
    if m == 0 {
        return None;
    }
    let mut num = Vector3::zeros();
    let mut den = Vector3::zeros();
    for e in estimates {
        let scale = 1.0 / (m * count[e.infrastructure.index()]) as f64;
        let w = e.sigma.map(|s| scale / (s * s));
        num += w.component_mul(&e.position);
        den += w;
    }
    Some(num.component_div(&den))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Attack,
    Benign,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelValue {
    pub infrastructure: Infrastructure,
    pub subset_index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionVerdict {
    pub timestamp: f64,
    /// `None` when no estimate was available.
    pub likelihood: Option<f64>,
    pub decision: Decision,
    pub kernels: Vec<KernelValue>,
    pub estimate_count: usize,
    /// Subset solves attempted this epoch (successful or not).
    pub solve_count: usize,
}

impl DetectionVerdict {
    pub fn is_attack(&self) -> Option<bool> {
        match self.decision {
            Decision::Attack => Some(true),
            Decision::Benign => Some(false),
            Decision::Indeterminate => None,
        }
    }
}

/// Strict comparison: `f_t > Λ_f` is an attack.
pub fn decide(likelihood: f64, lambda_f: f64) -> Decision {
    if likelihood > lambda_f {
        Decision::Attack
    } else {
        Decision::Benign
    }
}

/// Scores the reported position against the smoothed estimates of one epoch.
pub fn detect(
    timestamp: f64,
    lbs: &Vector3<f64>,
    estimates: &[SmoothedEstimate],
    lambda_f: f64,
) -> DetectionVerdict {
    let kernels: Vec<KernelValue> = estimates
        .iter()
        .map(|e| KernelValue {
            infrastructure: e.infrastructure,
            subset_index: e.subset_index,
            value: position_kernel(lbs, e),
        })
        .collect();
    match composite_likelihood(estimates, lbs) {
        Ok(f) => DetectionVerdict {
            timestamp,
            likelihood: Some(f),
            decision: decide(f, lambda_f),
            kernels,
            estimate_count: estimates.len(),
            solve_count: 0,
        },
        Err(_) => DetectionVerdict {
            timestamp,
            likelihood: None,
            decision: Decision::Indeterminate,
            kernels,
            estimate_count: 0,
            solve_count: 0,
        },
    }
}
