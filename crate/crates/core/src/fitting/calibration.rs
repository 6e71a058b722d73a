//! Affine map from a raw sweep axis (ramp voltage, sample index, ...) to Hz,
//! fitted to features with known reference frequencies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    /// Hz per raw-axis unit.
    pub scale: f64,
    /// Hz
    pub offset: f64,
    /// `mapped - reference` per feature, Hz.
    pub residuals: Vec<f64>,
    pub rms_residual: f64,
}

impl CalibrationMap {
    pub fn apply(&self, raw: f64) -> f64 {
        self.scale * raw + self.offset
    }
}

/// Ordinary least squares `f = scale * raw + offset`.
pub fn calibrate_frequency_axis(raw_features: &[f64], reference: &[f64]) -> Result<CalibrationMap> {
    if raw_features.len() != reference.len() {
        return Err(Error::InvalidParameters(format!(
            "{} raw features but {} reference frequencies",
            raw_features.len(),
            reference.len()
        )));
    }
    if raw_features.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} feature pairs, need at least 2",
            raw_features.len()
        )));
    }
    if raw_features.iter().chain(reference).any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameters("non-finite calibration feature".into()));
    }
    for (i, a) in raw_features.iter().enumerate() {
        if raw_features[i + 1..].contains(a) {
            return Err(Error::InvalidParameters(format!("duplicate raw feature position {a}")));
        }
    }
    let n = raw_features.len() as f64;
    let mx = raw_features.iter().sum::<f64>() / n;
    let my = reference.iter().sum::<f64>() / n;
    let sxx: f64 = raw_features.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = raw_features
        .iter()
        .zip(reference)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let scale = sxy / sxx;
    if !(scale.is_finite() && scale != 0.0) {
        return Err(Error::InconsistentData(format!(
            "calibration scale {scale} is zero or not finite"
        )));
    }
    let offset = my - scale * mx;
    let residuals: Vec<f64> = raw_features
        .iter()
        .zip(reference)
        .map(|(x, y)| scale * x + offset - y)
        .collect();
    let rms_residual = (residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    Ok(CalibrationMap {
        scale,
        offset,
        residuals,
        rms_residual,
    })
}
