//! Shared fixtures for the criterion benches.

use nalgebra::Vector3;
use oppraim_core::{simulate, RangingModelParams, ScenarioConfig, SimulatedTrace};

/// Satellites spread over the sky at GNSS range, with exact pseudoranges
/// (plus a clock offset) from `truth`.
pub fn gnss_instance(n: usize, truth: Vector3<f64>, clock: f64) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let sats: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let az = (i as f64 * 137.5f64).to_radians();
            let el = (15.0 + 70.0 * ((i * 7) % n) as f64 / n as f64).to_radians();
            truth + Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin()) * 2.2e7
        })
        .collect();
    let ranges = sats.iter().map(|s| (s - truth).norm() + clock).collect();
    (sats, ranges)
}

/// Anchors on a ring around the origin with exact ranges to `truth`.
pub fn wls_instance(n: usize, truth: Vector3<f64>) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let anchors: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64 + 0.1 * i as f64;
            Vector3::new(150.0 * a.cos(), 150.0 * a.sin(), 3.0)
        })
        .collect();
    let dist = anchors.iter().map(|a| (a - truth).norm()).collect();
    (anchors, dist)
}

/// Default benign scenario shortened to `epochs`.
pub fn default_trace(epochs: usize) -> (SimulatedTrace, RangingModelParams) {
    let cfg = ScenarioConfig {
        epochs: Some(epochs),
        ..ScenarioConfig::default()
    };
    let params = RangingModelParams::default();
    let sim = simulate(&cfg, &[], &params).expect("default scenario simulates");
    (sim, params)
}
