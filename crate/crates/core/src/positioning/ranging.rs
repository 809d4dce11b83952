use serde::{Deserialize, Serialize};

use super::PositioningError;
use crate::trace::{Constellation, Infrastructure};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const MIN_RSSI_DISTANCE: f64 = 0.1;
const MAX_RSSI_DISTANCE: f64 = 1e5;

/// Linear RTT-to-distance map `d = max(0, slope·(rtt − intercept))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RttModel {
    /// km per ms.
    pub slope_km_per_ms: f64,
    /// ms.
    pub intercept_ms: f64,
}

impl RttModel {
    /// Half the fiber propagation speed per millisecond of RTT.
    pub fn from_fiber_factor(kappa: f64, intercept_ms: f64) -> Self {
        Self {
            slope_km_per_ms: SPEED_OF_LIGHT * kappa / 2.0 / 1e6,
            intercept_ms,
        }
    }
}

impl Default for RttModel {
    fn default() -> Self {
        Self::from_fiber_factor(0.5, 10.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangingModelParams {
    /// Received power at 1 m, dBm.
    pub rssi_p0_dbm: f64,
    pub path_loss_wifi: f64,
    pub path_loss_cell: f64,
    pub path_loss_bt: f64,
    /// Log-normal shadowing of RSSI, dB; sets the relative range-error prior.
    pub rssi_shadowing_db: f64,
    pub rtt: RttModel,
    /// RTT jitter, ms; floors the horizontal sigma of delay-based GeoIP.
    pub rtt_sigma_ms: f64,
    pub fiber_factor: f64,
    /// Pseudorange noise prior, meters.
    pub pseudorange_sigma: f64,
    /// Per-constellation pseudorange bias removed before solving, meters,
    /// indexed as GPS, Galileo, GLONASS, BeiDou.
    pub constellation_bias: [f64; 4],
    /// Sigma reported for table-based IP geolocation, meters.
    pub geoip_table_sigma: f64,
}

impl Default for RangingModelParams {
    fn default() -> Self {
        Self {
            rssi_p0_dbm: -40.0,
            path_loss_wifi: 3.0,
            path_loss_cell: 3.5,
            path_loss_bt: 3.0,
            rssi_shadowing_db: 4.0,
            rtt: RttModel::default(),
            rtt_sigma_ms: 5.0,
            fiber_factor: 0.5,
            pseudorange_sigma: 3.0,
            constellation_bias: [0.0; 4],
            geoip_table_sigma: 25_000.0,
        }
    }
}

impl RangingModelParams {
    pub fn path_loss(&self, infra: Infrastructure) -> f64 {
        match infra {
            Infrastructure::Cellular => self.path_loss_cell,
            Infrastructure::Bluetooth => self.path_loss_bt,
            _ => self.path_loss_wifi,
        }
    }

    pub fn constellation_bias(&self, c: Constellation) -> f64 {
        self.constellation_bias[c.index()]
    }

    /// One-sigma relative distance error implied by the shadowing spread.
    pub fn relative_range_sigma(&self, infra: Infrastructure) -> f64 {
        self.rssi_shadowing_db * std::f64::consts::LN_10 / (10.0 * self.path_loss(infra))
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, n) in [
            ("path_loss_wifi", self.path_loss_wifi),
            ("path_loss_cell", self.path_loss_cell),
            ("path_loss_bt", self.path_loss_bt),
        ] {
            if !(1.5..=6.0).contains(&n) {
                return Err(format!("{name} = {n} outside [1.5, 6]"));
            }
        }
        if !(self.rtt.slope_km_per_ms > 0.0) || !self.rtt.intercept_ms.is_finite() {
            return Err("RTT slope must be positive and intercept finite".into());
        }
        if !(self.fiber_factor > 0.0 && self.fiber_factor <= 1.0) {
            return Err(format!("fiber_factor {} outside (0, 1]", self.fiber_factor));
        }
        for (name, s) in [
            ("rssi_shadowing_db", self.rssi_shadowing_db),
            ("pseudorange_sigma", self.pseudorange_sigma),
            ("rtt_sigma_ms", self.rtt_sigma_ms),
            ("geoip_table_sigma", self.geoip_table_sigma),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(format!("{name} must be a finite non-negative value"));
            }
        }
        if !self.rssi_p0_dbm.is_finite() || self.constellation_bias.iter().any(|b| !b.is_finite()) {
            return Err("non-finite ranging parameter".into());
        }
        Ok(())
    }
}

/// Inverts the log-distance path-loss model; result clamped to [0.1, 1e5] m.
pub fn rssi_to_distance(rssi_dbm: f64, p0_dbm: f64, path_loss: f64) -> f64 {
    let d = 10f64.powf((p0_dbm - rssi_dbm) / (10.0 * path_loss));
    d.clamp(MIN_RSSI_DISTANCE, MAX_RSSI_DISTANCE)
}

/// Distance in meters for an RTT in milliseconds.
pub fn rtt_to_distance(rtt_ms: f64, model: &RttModel) -> f64 {
    (model.slope_km_per_ms * 1000.0 * (rtt_ms - model.intercept_ms)).max(0.0)
}

/// Ordinary least squares of distance (m) on RTT (ms).
pub fn fit_rtt_model(pairs: &[(f64, f64)]) -> Result<RttModel, PositioningError> {
    if pairs.len() < 2 {
        return Err(PositioningError::DegenerateFit);
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if !(sxx > 0.0) {
        return Err(PositioningError::DegenerateFit);
    }
    let slope = sxy / sxx;
    if !(slope > 0.0) {
        return Err(PositioningError::DegenerateFit);
    }
    let offset = mean_y - slope * mean_x;
    Ok(RttModel {
        slope_km_per_ms: slope / 1000.0,
        intercept_ms: -offset / slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn rssi_reference_points() {
        assert!((rssi_to_distance(-40.0, -40.0, 3.0) - 1.0).abs() < 1e-12);
        assert!((rssi_to_distance(-70.0, -40.0, 3.0) - 10.0).abs() < 1e-12);
        assert!((rssi_to_distance(-100.0, -40.0, 3.0) - 100.0).abs() < 1e-10);
        assert_eq!(rssi_to_distance(0.0, -40.0, 3.0), 0.1);
        assert_eq!(rssi_to_distance(-500.0, -40.0, 3.0), 1e5);
    }

    #[test]
    fn rssi_inversion_is_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let rssi = -150.0 + 0.5 * k as f64;
            let d = rssi_to_distance(rssi, -40.0, 3.0);
            if d > 0.1 && d < 1e5 {
                assert!(d < prev);
            }
            prev = d;
        }
    }

    #[test]
    fn default_slope_matches_fiber_speed() {
        let m = RttModel::default();
        assert!((m.slope_km_per_ms - 74.948_114_5).abs() < 1e-6);
        assert_eq!(rtt_to_distance(10.0, &m), 0.0);
        assert_eq!(rtt_to_distance(5.0, &m), 0.0);
    }

    #[test]
    fn exact_linear_data_is_recovered() {
        let pairs: Vec<(f64, f64)> = (0..20)
            .map(|k| {
                let rtt = 11.0 + k as f64 * 3.7;
                (rtt, 75_000.0 * (rtt - 10.0))
            })
            .collect();
        let m = fit_rtt_model(&pairs).unwrap();
        assert!((m.slope_km_per_ms - 75.0).abs() < 1e-9);
        assert!((m.intercept_ms - 10.0).abs() < 1e-9);
    }

    #[test]
    fn equal_rtts_are_degenerate() {
        assert_eq!(
            fit_rtt_model(&[(5.0, 1.0), (5.0, 2.0)]),
            Err(PositioningError::DegenerateFit)
        );
        assert_eq!(
            fit_rtt_model(&[(5.0, 1.0)]),
            Err(PositioningError::DegenerateFit)
        );
    }

    #[test]
    fn noisy_fit_is_within_ten_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let jitter = Normal::new(0.0, 5.0).unwrap();
        let pairs: Vec<(f64, f64)> = (0..100)
            .map(|_| {
                let d: f64 = rng.random_range(100e3..10_000e3);
                let rtt = d / 75_000.0 + 10.0 + jitter.sample(&mut rng);
                (rtt, d)
            })
            .collect();
        let m = fit_rtt_model(&pairs).unwrap();
        assert!((m.slope_km_per_ms / 75.0 - 1.0).abs() < 0.1, "{m:?}");
    }

    #[test]
    fn validation_bounds() {
        let mut p = RangingModelParams::default();
        assert!(p.validate().is_ok());
        p.path_loss_cell = 7.0;
        assert!(p.validate().is_err());
    }
}
