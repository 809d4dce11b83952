//! Location-integrity monitoring from opportunistic ranging signals.
//!
//! Every available infrastructure (GNSS constellations, Wi-Fi, cellular,
//! Bluetooth and IP geolocation) is solved over many member subsets. Each
//! subset's position stream is smoothed by a motion-constrained local
//! polynomial regression, and the smoothed estimates are scored against the
//! position the platform reports. A low composite likelihood of agreement
//! flags a spoofed location.

pub mod config;
pub mod detector;
pub mod eval;
pub mod geo;
pub mod positioning;
pub mod sim;
pub mod subsets;
pub mod trace;

use thiserror::Error;

pub use config::{ConfigError, RunConfig};
pub use detector::{
    calibrate_threshold, run_detector, CenterSource, Decision, DetectionVerdict, Detector,
    DetectorConfig, DetectorError, ThresholdMethod,
};
pub use eval::{
    baseline_scores, compute_metrics, label_epochs, operating_point, roc_sweep, BaselineConfig,
    BaselineKind, EvalError, MetricsReport, RocPoint,
};
pub use geo::{EnuFrame, GeoError, GeodeticPosition};
pub use positioning::{PositionEstimate, PositioningError, RangingModelParams};
pub use sim::{
    simulate, AttackKind, AttackSpec, NoiseModel, ScenarioConfig, SimError, SimulatedTrace,
};
pub use subsets::{SamplingPolicy, SubsetMembers, SubsetSpec};
pub use trace::{AnchorDatabase, Infrastructure, RangingObservation, TraceError, TraceFrame};

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Positioning(#[from] PositioningError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
