use serde::{Deserialize, Serialize};

use super::DetectorError;

pub const MIN_CALIBRATION_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ThresholdMethod {
    /// `mean + k·std` over the benign samples.
    Zscore { k: f64 },
    /// Empirical `q`-quantile (linear interpolation between order statistics).
    Quantile { q: f64 },
}

impl ThresholdMethod {
    pub fn zscore() -> Self {
        ThresholdMethod::Zscore { k: 3.0 }
    }

    pub fn quantile() -> Self {
        ThresholdMethod::Quantile { q: 0.99 }
    }
}

/// Threshold from benign likelihood samples, clamped into the open unit
/// interval.
pub fn calibrate_threshold(samples: &[f64], method: ThresholdMethod) -> Result<f64, DetectorError> {
    let xs: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if xs.len() < MIN_CALIBRATION_SAMPLES {
        return Err(DetectorError::InsufficientSamples {
            needed: MIN_CALIBRATION_SAMPLES,
            got: xs.len(),
        });
    }
    let raw = match method {
        ThresholdMethod::Zscore { k } => {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            mean + k * var.sqrt()
        }
        ThresholdMethod::Quantile { q } => {
            if !(0.0..=1.0).contains(&q) {
                return Err(DetectorError::InvalidConfig(format!(
                    "quantile {q} outside [0, 1]"
                )));
            }
            let mut sorted = xs;
            sorted.sort_by(f64::total_cmp);
            let h = (sorted.len() - 1) as f64 * q;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    };
    Ok(raw.clamp(f64::MIN_POSITIVE, super::likelihood::MAX_LIKELIHOOD))
}
