//! Labels, detection metrics, ROC sweeps and baseline detectors.

mod baselines;

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

pub use baselines::{
    baseline_scores, pooled_network_fix, run_baseline, BaselineConfig, BaselineKind,
    BaselineVerdict,
};

use crate::geo::distance;
use crate::trace::{TraceFrame, ATTACK_LABEL_DISTANCE_M};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no frame carries ground truth")]
    NoGroundTruth,
    #[error("{what}: {left} vs {right} entries")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("threshold grid must be finite and strictly increasing")]
    InvalidGrid,
    #[error("{kind} baseline: {reason}")]
    MissingInput { kind: BaselineKind, reason: String },
}

/// `Some(distance(lbs, truth) > 30 m)`, or `None` for frames without truth.
pub fn label_epochs(frames: &[TraceFrame]) -> Result<Vec<Option<bool>>, EvalError> {
    let labels: Vec<Option<bool>> = frames
        .iter()
        .map(|f| {
            f.ground_truth
                .map(|g| distance(&f.lbs_position, &g) > ATTACK_LABEL_DISTANCE_M)
        })
        .collect();
    if !frames.is_empty() && labels.iter().all(Option::is_none) {
        return Err(EvalError::NoGroundTruth);
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub lambda: f64,
    pub ptp: f64,
    pub pfp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct TraceMetrics {
    pub name: String,
    pub ptp: Option<f64>,
    pub pfp: Option<f64>,
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct MetricsReport {
    /// Absent when there are no attack epochs.
    pub ptp: Option<f64>,
    /// Absent when there are no benign epochs.
    pub pfp: Option<f64>,
    /// Mean over attack episodes; absent when there are none.
    pub latency_s: Option<f64>,
    pub attack_epochs: usize,
    pub benign_epochs: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Epochs left out for a missing verdict or label.
    pub excluded_epochs: usize,
    pub episodes: usize,
    pub detected_episodes: usize,
    pub roc: Vec<RocPoint>,
    pub per_trace: Vec<TraceMetrics>,
    pub runtime_per_epoch_s: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn check_len(what: &'static str, left: usize, right: usize) -> Result<(), EvalError> {
    if left == right {
        Ok(())
    } else {
        Err(EvalError::LengthMismatch { what, left, right })
    }
}

/// Counts, rates and episode latency. `flags[i] = None` marks an
/// indeterminate verdict, excluded from every count.
///
/// An episode is a maximal run of consecutive epochs labeled attack. Its
/// latency is the time from its first epoch to its first flagged epoch; an
/// episode never flagged contributes its full duration.
pub fn compute_metrics(
    flags: &[Option<bool>],
    labels: &[Option<bool>],
    timestamps: &[f64],
) -> Result<MetricsReport, EvalError> {
    check_len("flags/labels", flags.len(), labels.len())?;
    check_len("flags/timestamps", flags.len(), timestamps.len())?;
    let mut r = MetricsReport::default();
    for (f, l) in flags.iter().zip(labels) {
        match (f, l) {
            (Some(f), Some(true)) => {
                r.attack_epochs += 1;
                r.true_positives += usize::from(*f);
            }
            (Some(f), Some(false)) => {
                r.benign_epochs += 1;
                r.false_positives += usize::from(*f);
            }
            _ => r.excluded_epochs += 1,
        }
    }
    r.ptp = ratio(r.true_positives, r.attack_epochs);
    r.pfp = ratio(r.false_positives, r.benign_epochs);

    let spacing = |i: usize| -> f64 {
        if i + 1 < timestamps.len() {
            timestamps[i + 1] - timestamps[i]
        } else if i > 0 {
            timestamps[i] - timestamps[i - 1]
        } else {
            0.0
        }
    };
    let mut total = 0.0;
    let mut i = 0;
    while i < labels.len() {
        if labels[i] != Some(true) {
            i += 1;
            continue;
        }
        let start = i;
        while i < labels.len() && labels[i] == Some(true) {
            i += 1;
        }
        let end = i - 1;
        r.episodes += 1;
        match (start..=end).find(|&k| flags[k] == Some(true)) {
            Some(k) => {
                r.detected_episodes += 1;
                total += timestamps[k] - timestamps[start];
            }
            None => total += timestamps[end] - timestamps[start] + spacing(end),
        }
    }
    r.latency_s = (r.episodes > 0).then(|| total / r.episodes as f64);
    Ok(r)
}

/// Flags as `score > threshold`; a missing score stays indeterminate.
pub fn threshold_scores(scores: &[Option<f64>], threshold: f64) -> Vec<Option<bool>> {
    scores.iter().map(|s| s.map(|s| s > threshold)).collect()
}

/// Re-thresholds stored scores at every grid value.
pub fn roc_sweep(
    scores: &[Option<f64>],
    labels: &[Option<bool>],
    grid: &[f64],
) -> Result<Vec<RocPoint>, EvalError> {
    check_len("scores/labels", scores.len(), labels.len())?;
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if !grid.iter().all(|g| g.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::InvalidGrid);
    }
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (s, l) in scores.iter().zip(labels) {
        match (s, l) {
            (Some(s), Some(true)) => pos.push(*s),
            (Some(s), Some(false)) => neg.push(*s),
            _ => {}
        }
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let above = |v: &[f64], t: f64| v.len() - v.partition_point(|x| *x <= t);
    Ok(grid
        .iter()
        .map(|&lambda| RocPoint {
            lambda,
            ptp: ratio(above(&pos, lambda), pos.len()).unwrap_or(0.0),
            pfp: ratio(above(&neg, lambda), neg.len()).unwrap_or(0.0),
        })
        .collect())
}

/// Evenly spaced grid of `n` points strictly inside `(lo, hi)`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| lo + (hi - lo) * i as f64 / (n + 1) as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub ptp: f64,
    pub pfp: f64,
}

/// Lowest threshold whose empirical false-positive rate does not exceed
/// `target_pfp`, with the detection rate it achieves.
pub fn operating_point(
    scores: &[Option<f64>],
    labels: &[Option<bool>],
    target_pfp: f64,
) -> Result<OperatingPoint, EvalError> {
    check_len("scores/labels", scores.len(), labels.len())?;
    let mut neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter_map(|(s, l)| (*l == Some(false)).then_some(*s).flatten())
        .collect();
    neg.sort_by(|a, b| b.total_cmp(a));
    let allowed = (target_pfp * neg.len() as f64).floor() as usize;
    let threshold = if allowed < neg.len() {
        neg[allowed]
    } else {
        f64::NEG_INFINITY
    };
    let flags = threshold_scores(scores, threshold);
    let (mut tp, mut p, mut fp, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (f, l) in flags.iter().zip(labels) {
        match (f, l) {
            (Some(f), Some(true)) => {
                p += 1;
                tp += usize::from(*f);
            }
            (Some(f), Some(false)) => {
                n += 1;
                fp += usize::from(*f);
            }
            _ => {}
        }
    }
    Ok(OperatingPoint {
        threshold,
        ptp: ratio(tp, p).unwrap_or(0.0),
        pfp: ratio(fp, n).unwrap_or(0.0),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    /// `key: value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ptp: {}", opt(self.ptp));
        let _ = writeln!(s, "pfp: {}", opt(self.pfp));
        let _ = writeln!(s, "latency_s: {}", opt(self.latency_s));
        let _ = writeln!(s, "attack_epochs: {}", self.attack_epochs);
        let _ = writeln!(s, "benign_epochs: {}", self.benign_epochs);
        let _ = writeln!(s, "true_positives: {}", self.true_positives);
        let _ = writeln!(s, "false_positives: {}", self.false_positives);
        let _ = writeln!(s, "excluded_epochs: {}", self.excluded_epochs);
        let _ = writeln!(s, "episodes: {}", self.episodes);
        let _ = writeln!(s, "detected_episodes: {}", self.detected_episodes);
        let _ = writeln!(s, "runtime_per_epoch_s: {}", opt(self.runtime_per_epoch_s));
        let _ = writeln!(s, "roc_points: {}", self.roc.len());
        for t in &self.per_trace {
            let _ = writeln!(
                s,
                "trace.{}: ptp={} pfp={} latency_s={}",
                t.name,
                opt(t.ptp),
                opt(t.pfp),
                opt(t.latency_s)
            );
        }
        s
    }
}

/// `lambda,ptp,pfp` CSV.
pub fn roc_to_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("lambda,ptp,pfp\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.lambda, p.ptp, p.pfp);
    }
    s
}
