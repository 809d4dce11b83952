//! Motion-constrained smoothing of subset estimates and composite-likelihood
//! scoring of the reported position.

mod likelihood;
mod motion;
mod regression;
mod threshold;

use std::collections::{HashMap, VecDeque};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use likelihood::{
    assemble_sigma, composite_likelihood, decide, detect, fused_position, likelihood_from_log,
    log_agreement, log_position_kernel, position_kernel, Decision, DetectionVerdict, KernelValue,
    SmoothedEstimate, MAX_LIKELIHOOD,
};
pub use motion::{motion_displacement, propagate_state, PlatformState};
pub use regression::{
    regression_kernel, smooth_position, ActiveBound, HistoryPoint, RegressionParams, SmoothedFit,
};
pub use threshold::{calibrate_threshold, ThresholdMethod, MIN_CALIBRATION_SAMPLES};

use crate::geo::{EnuFrame, GeoError};
use crate::positioning::RangingModelParams;
use crate::subsets::{
    enumerate_frame_subsets, position_subsets, sample_subsets, SamplingPolicy, SolveContext,
    SubsetMembers,
};
use crate::trace::{AnchorDatabase, Infrastructure, TraceFrame};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("regression needs {needed} distinct epochs, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("no position estimates available")]
    NoEstimates,
    #[error("threshold calibration needs {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Source for window epochs in which a stream produced no estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GapFill {
    /// The detector's fused position at that epoch.
    #[default]
    Fused,
    /// The stream's own last smoothed position, dead-reckoned.
    Stream,
}

/// Which earlier position of a stream, dead-reckoned to the current epoch,
/// centers its motion box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterSource {
    /// The stream's last subset solution.
    Raw,
    /// The stream's last smoothed estimate.
    #[default]
    Smoothed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Regression window in epochs.
    pub window: usize,
    pub kernel_coeff: f64,
    pub poly_order: usize,
    /// Box half-widths (east, north, up) around the motion-propagated center.
    pub eps_t: [f64; 3],
    pub lambda_f: f64,
    pub sigma_floor: f64,
    pub gap_fill: GapFill,
    pub center: CenterSource,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 20,
            kernel_coeff: 0.3,
            poly_order: 2,
            eps_t: [5.0, 5.0, 10.0],
            lambda_f: 0.9,
            sigma_floor: 1.0,
            gap_fill: GapFill::Fused,
            center: CenterSource::Smoothed,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: String| Err(DetectorError::InvalidConfig(m));
        if self.poly_order == 0 || self.window < self.poly_order + 1 {
            return bad(format!(
                "window {} must be at least poly_order + 1 with poly_order ≥ 1 (got {})",
                self.window, self.poly_order
            ));
        }
        if !self.eps_t.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return bad("eps_t must be positive".into());
        }
        if !(self.lambda_f > 0.0 && self.lambda_f < 1.0) {
            return bad(format!("lambda_f {} outside (0, 1)", self.lambda_f));
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return bad("sigma_floor must be positive".into());
        }
        if !(self.kernel_coeff >= 0.0 && self.kernel_coeff.is_finite()) {
            return bad("kernel_coeff must be non-negative".into());
        }
        Ok(())
    }

    pub fn regression(&self) -> RegressionParams {
        RegressionParams {
            window: self.window,
            kernel_coeff: self.kernel_coeff,
            order: self.poly_order,
            eps: Vector3::from(self.eps_t),
        }
    }
}

type StreamKey = (Infrastructure, SubsetMembers);

#[derive(Debug, Clone, Copy)]
struct StreamEntry {
    raw: Option<Vector3<f64>>,
    dead_reckoned: Vector3<f64>,
}

#[derive(Debug, Clone)]
struct Stream {
    /// Most recent last; at most `window` entries, one per epoch since birth.
    entries: VecDeque<StreamEntry>,
    /// Last smoothed position, dead-reckoned to the current epoch.
    smoothed: Vector3<f64>,
    /// Last subset solution, dead-reckoned to the current epoch.
    raw: Vector3<f64>,
    last_seen: u64,
}

/// Per-epoch output with the detector's internal fused position.
#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub verdict: DetectionVerdict,
    pub estimates: Vec<SmoothedEstimate>,
    pub fused: Option<Vector3<f64>>,
}

/// Stateful detector over the frames of one trace, fed in time order.
#[derive(Debug, Clone)]
pub struct Detector<'a> {
    config: DetectorConfig,
    sampling: SamplingPolicy,
    params: RangingModelParams,
    db: &'a AnchorDatabase,
    enu: Option<EnuFrame>,
    epoch: u64,
    prev_timestamp: Option<f64>,
    fused: Option<Vector3<f64>>,
    /// Fused positions of the last `window` epochs, most recent last.
    fused_history: VecDeque<Option<Vector3<f64>>>,
    streams: HashMap<StreamKey, Stream>,
}

impl<'a> Detector<'a> {
    pub fn new(
        config: DetectorConfig,
        sampling: SamplingPolicy,
        params: RangingModelParams,
        db: &'a AnchorDatabase,
    ) -> Result<Self, DetectorError> {
        config.validate()?;
        sampling.validate().map_err(DetectorError::InvalidConfig)?;
        params.validate().map_err(DetectorError::InvalidConfig)?;
        Ok(Self {
            config,
            sampling,
            params,
            db,
            enu: None,
            epoch: 0,
            prev_timestamp: None,
            fused: None,
            fused_history: VecDeque::new(),
            streams: HashMap::new(),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Local frame, fixed at the first frame (ground truth when present,
    /// otherwise the reported position).
    pub fn frame(&self) -> Option<&EnuFrame> {
        self.enu.as_ref()
    }

    pub fn live_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn step(&mut self, frame: &TraceFrame) -> Result<EpochOutcome, DetectorError> {
        if self.enu.is_none() {
            let origin = frame.ground_truth.unwrap_or(frame.lbs_position);
            self.enu = Some(EnuFrame::new(origin)?);
        }
        let enu = self.enu.clone().expect("frame set above");
        let dt = self.prev_timestamp.map_or(0.0, |p| frame.timestamp - p);
        let displacement = if dt > 0.0 {
            motion_displacement(&frame.motion, dt)
        } else {
            Vector3::zeros()
        };
        for s in self.streams.values_mut() {
            s.smoothed += displacement;
            s.raw += displacement;
        }
        let predicted = self.fused.map(|f| f + displacement);

        let candidates = enumerate_frame_subsets(frame, self.sampling.cap);
        let sampled = sample_subsets(&candidates, &self.sampling, self.epoch);
        let ctx = SolveContext {
            db: self.db,
            params: &self.params,
            enu: &enu,
            gnss_init: predicted,
            altitude: predicted.map_or(0.0, |p| p.z),
        };
        let solved = position_subsets(frame, &sampled, &ctx);

        let reg = self.config.regression();
        let w = self.config.window;
        let mut estimates = Vec::with_capacity(solved.estimates.len());
        let mut updates: Vec<(StreamKey, Vector3<f64>, Vector3<f64>)> =
            Vec::with_capacity(solved.estimates.len());
        for (spec, est) in &solved.estimates {
            let key = (spec.infrastructure, spec.members.clone());
            let stream = self.streams.get(&key);
            let center = stream
                .map(|s| match self.config.center {
                    CenterSource::Raw => s.raw,
                    CenterSource::Smoothed => s.smoothed,
                })
                .or(predicted)
                .unwrap_or(est.enu);
            let mut history = Vec::with_capacity(w + 1);
            history.push(HistoryPoint {
                age: 0.0,
                position: est.enu,
            });
            let own = stream.map_or(0, |s| s.entries.len());
            for age in 1..=w {
                let from_stream = stream.and_then(|s| (age <= own).then(|| s.entries[own - age]));
                let value = match (from_stream, self.config.gap_fill) {
                    (Some(StreamEntry { raw: Some(p), .. }), _) => Some(p),
                    (Some(e), GapFill::Stream) => Some(e.dead_reckoned),
                    _ => self
                        .fused_history
                        .len()
                        .checked_sub(age)
                        .and_then(|i| self.fused_history[i]),
                };
                if let Some(position) = value {
                    history.push(HistoryPoint {
                        age: age as f64,
                        position,
                    });
                }
            }
            let (position, rms) = match smooth_position(&history, &center, &reg) {
                Ok(fit) => (fit.position, Some(fit.residual_rms())),
                Err(_) => (clamp_box(&est.enu, &center, &reg.eps), None),
            };
            let sigma = assemble_sigma(est, rms.as_ref(), self.config.sigma_floor);
            updates.push((key, est.enu, position));
            estimates.push(SmoothedEstimate {
                position,
                sigma,
                infrastructure: spec.infrastructure,
                subset_index: spec.index,
                members: spec.members.clone(),
            });
        }

        let lbs = enu.to_enu(&frame.lbs_position);
        let mut verdict = detect(frame.timestamp, &lbs, &estimates, self.config.lambda_f);
        verdict.solve_count = sampled.len();
        let fused = fused_position(&estimates).or(predicted);

        self.advance(updates, fused);
        self.prev_timestamp = Some(frame.timestamp);
        Ok(EpochOutcome {
            verdict,
            estimates,
            fused,
        })
    }

    fn advance(
        &mut self,
        updates: Vec<(StreamKey, Vector3<f64>, Vector3<f64>)>,
        fused: Option<Vector3<f64>>,
    ) {
        let w = self.config.window;
        let epoch = self.epoch;
        for (key, raw, smoothed) in updates {
            let s = self.streams.entry(key).or_insert_with(|| Stream {
                entries: VecDeque::with_capacity(w),
                smoothed,
                raw,
                last_seen: epoch,
            });
            s.smoothed = smoothed;
            s.raw = raw;
            s.last_seen = epoch;
            s.entries.push_back(StreamEntry {
                raw: Some(raw),
                dead_reckoned: smoothed,
            });
        }
        let stale = 2 * w as u64;
        self.streams.retain(|_, s| {
            if s.last_seen != epoch {
                s.entries.push_back(StreamEntry {
                    raw: None,
                    dead_reckoned: s.smoothed,
                });
            }
            while s.entries.len() > w {
                s.entries.pop_front();
            }
            epoch - s.last_seen <= stale
        });
        self.fused_history.push_back(fused);
        while self.fused_history.len() > w {
            self.fused_history.pop_front();
        }
        self.fused = fused;
        self.epoch += 1;
    }
}

fn clamp_box(p: &Vector3<f64>, center: &Vector3<f64>, eps: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|i, _| p[i].clamp(center[i] - eps[i], center[i] + eps[i]))
}

/// Runs a fresh detector over a whole trace.
pub fn run_detector(
    frames: &[TraceFrame],
    db: &AnchorDatabase,
    config: &DetectorConfig,
    sampling: &SamplingPolicy,
    params: &RangingModelParams,
) -> Result<Vec<DetectionVerdict>, DetectorError> {
    let mut det = Detector::new(config.clone(), sampling.clone(), params.clone(), db)?;
    frames
        .iter()
        .map(|f| det.step(f).map(|o| o.verdict))
        .collect()
}
