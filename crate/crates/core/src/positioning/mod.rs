//! Per-infrastructure positioning: GNSS trilateration with a clock unknown,
//! RSSI-ranged weighted least squares, GeoIP delay/tabulation, and DOP.
//!
//! All solvers work in the trace's local ENU frame.

mod dop;
mod geoip;
mod gnss;
mod ranging;
mod solver;
mod wls;

pub use dop::{compute_dop, Dop};
pub use geoip::{geoip_position, geoip_solve};
pub use gnss::{gnss_fix, gnss_trilateration};
pub use ranging::{
    fit_rtt_model, rssi_to_distance, rtt_to_distance, RangingModelParams, RttModel, SPEED_OF_LIGHT,
};
pub use wls::{geolocation_wls, network_fix, wls_objective};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{EnuFrame, GeoError, GeodeticPosition};
use crate::trace::Infrastructure;

/// Condition number of the normal matrix above which geometry is rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PositioningError {
    #[error("insufficient anchors: need {needed}, got {got}")]
    InsufficientAnchors { needed: usize, got: usize },
    #[error("singular anchor geometry")]
    SingularGeometry,
    #[error("solver did not converge")]
    NoConvergence,
    #[error("degenerate RTT training data")]
    DegenerateFit,
    #[error("no RTT observations and no table entry for the client address")]
    NoGeoipData,
    #[error("anchor '{0}' has no known position")]
    UnknownAnchor(String),
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PositioningMethod {
    Trilateration,
    WeightedLeastSquares,
    GeoIpDelay,
    GeoIpTable,
}

/// A solver output in the local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnuFix {
    pub position: Vector3<f64>,
    /// Per-axis one-sigma, meters.
    pub sigma: Vector3<f64>,
    pub clock_bias: Option<f64>,
    pub clock_sigma: Option<f64>,
    pub residual_rms: f64,
    pub iterations: usize,
}

/// A subset solution with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionEstimate {
    pub position: GeodeticPosition,
    pub enu: Vector3<f64>,
    pub sigma: Vector3<f64>,
    pub clock_sigma: Option<f64>,
    pub clock_bias: Option<f64>,
    pub residual_rms: f64,
    pub method: PositioningMethod,
    pub infrastructure: Infrastructure,
    pub subset_index: usize,
}

impl PositionEstimate {
    pub fn from_fix(
        fix: &EnuFix,
        frame: &EnuFrame,
        method: PositioningMethod,
        infrastructure: Infrastructure,
        subset_index: usize,
    ) -> Result<Self, PositioningError> {
        Ok(Self {
            position: frame.to_geodetic(&fix.position)?,
            enu: fix.position,
            sigma: fix.sigma,
            clock_sigma: fix.clock_sigma,
            clock_bias: fix.clock_bias,
            residual_rms: fix.residual_rms,
            method,
            infrastructure,
            subset_index,
        })
    }
}
