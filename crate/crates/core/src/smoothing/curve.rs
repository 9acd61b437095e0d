use serde::{Deserialize, Serialize};

use super::SampleCertification;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub radius: f64,
    pub accuracy: f64,
}

/// Certified accuracy at each radius in `radii`: the fraction of samples
/// that are predicted correctly with a certified radius of at least `r`.
/// Abstentions count as errors at every radius.
pub fn certified_accuracy_curve(results: &[SampleCertification], radii: &[f64]) -> Vec<CurvePoint> {
    radii
        .iter()
        .map(|&r| {
            let hits = results
                .iter()
                .filter(|s| s.correct() && s.result.radius >= r)
                .count();
            CurvePoint {
                radius: r,
                accuracy: if results.is_empty() {
                    0.0
                } else {
                    hits as f64 / results.len() as f64
                },
            }
        })
        .collect()
}

/// `steps + 1` evenly spaced radii from 0 to `max`.
pub fn radius_grid(max: f64, steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    (0..=steps).map(|i| max * i as f64 / steps as f64).collect()
}
