//! Power broadening `Gamma = Gamma_0 sqrt(1 + P / P_sat)`, weighted by the
//! per-point width uncertainties.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{jacobian_mismatch, minimize, CurveModel, LmOptions, ParameterSpec, Transform};
use super::FitResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroadeningPoint {
    /// Pump power or intensity, any unit; `i_sat` comes back in the same unit.
    pub power: f64,
    /// Measured homogeneous FWHM, Hz.
    pub width: f64,
    /// 1-sigma of `width`, Hz.
    pub width_sigma: f64,
}

struct BroadeningCurve {
    powers: Vec<f64>,
    specs: Vec<ParameterSpec>,
}

impl CurveModel for BroadeningCurve {
    fn parameters(&self) -> &[ParameterSpec] {
        &self.specs
    }

    fn n_points(&self) -> usize {
        self.powers.len()
    }

    fn evaluate(&self, p: &[f64], values: &mut [f64], jacobian: Option<&mut DMatrix<f64>>) {
        let (gamma0, i_sat) = (p[0], p[1]);
        for (v, &x) in values.iter_mut().zip(&self.powers) {
            *v = gamma0 * (1.0 + x / i_sat).sqrt();
        }
        if let Some(j) = jacobian {
            for (i, &x) in self.powers.iter().enumerate() {
                let root = (1.0 + x / i_sat).sqrt();
                j[(i, 0)] = root;
                j[(i, 1)] = -gamma0 * x / (2.0 * i_sat * i_sat * root);
            }
        }
    }
}

/// Starting point that scales with the data: `i_sat` moves with the power axis.
fn initial_guess(points: &[BroadeningPoint]) -> (f64, f64) {
    let lowest = points
        .iter()
        .min_by(|a, b| a.power.total_cmp(&b.power))
        .expect("non-empty");
    let highest = points
        .iter()
        .max_by(|a, b| a.power.total_cmp(&b.power))
        .expect("non-empty");
    let gamma0 = lowest.width;
    let ratio = (highest.width / gamma0).powi(2) - 1.0;
    let i_sat = if ratio > 1e-3 && highest.power > 0.0 {
        highest.power / ratio
    } else {
        highest.power.max(f64::MIN_POSITIVE)
    };
    (gamma0, i_sat)
}

/// Fits `Gamma_0` and the saturation power to measured dip widths.
pub fn fit_power_broadening(points: &[BroadeningPoint], options: &LmOptions) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} points, need at least 3",
            points.len()
        )));
    }
    for (i, p) in points.iter().enumerate() {
        if !(p.power >= 0.0 && p.power.is_finite()) {
            return Err(Error::InvalidParameters(format!(
                "point {i}: power {} must be >= 0",
                p.power
            )));
        }
        if !(p.width > 0.0 && p.width.is_finite()) {
            return Err(Error::InvalidParameters(format!(
                "point {i}: width {} must be > 0",
                p.width
            )));
        }
        if !(p.width_sigma > 0.0 && p.width_sigma.is_finite()) {
            return Err(Error::InvalidParameters(format!(
                "point {i}: width_sigma {} must be > 0",
                p.width_sigma
            )));
        }
    }
    let model = BroadeningCurve {
        powers: points.iter().map(|p| p.power).collect(),
        specs: vec![
            ParameterSpec::new("gamma0", Transform::Log),
            ParameterSpec::new("i_sat", Transform::Log),
        ],
    };
    let observed: Vec<f64> = points.iter().map(|p| p.width).collect();
    let weights: Vec<f64> = points.iter().map(|p| 1.0 / p.width_sigma).collect();
    let (gamma0, i_sat) = initial_guess(points);
    let outcome = minimize(&model, &observed, Some(&weights), &[gamma0, i_sat], options)?;
    Ok(FitResult::from_outcome(&model, &outcome, true))
}

/// Jacobian check of the broadening law at the given powers.
pub fn jacobian_self_check(powers: &[f64], gamma0: f64, i_sat: f64) -> f64 {
    let model = BroadeningCurve {
        powers: powers.to_vec(),
        specs: vec![
            ParameterSpec::new("gamma0", Transform::Log),
            ParameterSpec::new("i_sat", Transform::Log),
        ],
    };
    jacobian_mismatch(&model, &[gamma0, i_sat])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::lm::jacobian_mismatch;
    use crate::model::power_broadened_width;

    fn exact_points(gamma0: f64, i_sat: f64, powers: &[f64]) -> Vec<BroadeningPoint> {
        powers
            .iter()
            .map(|&p| BroadeningPoint {
                power: p,
                width: power_broadened_width(gamma0, p / i_sat),
                width_sigma: 0.1 * gamma0,
            })
            .collect()
    }

    #[test]
    fn exact_recovery_of_fibre_values() {
        let pts = exact_points(6e6, 50e-9, &[5e-9, 20e-9, 50e-9, 120e-9, 300e-9, 500e-9]);
        let fit = fit_power_broadening(&pts, &LmOptions::default()).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!((fit.value("gamma0") / 6e6 - 1.0).abs() < 1e-9);
        assert!((fit.value("i_sat") / 50e-9 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn three_exact_points_suffice() {
        let pts = exact_points(5.2e6, 1.0, &[0.0, 1.0, 3.0]);
        let fit = fit_power_broadening(&pts, &LmOptions::default()).unwrap();
        assert!((fit.value("gamma0") / 5.2e6 - 1.0).abs() < 1e-9);
        assert!((fit.value("i_sat") - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_power_width_is_gamma0() {
        assert_eq!(power_broadened_width(6e6, 0.0), 6e6);
    }

    #[test]
    fn equal_powers_are_singular() {
        let pts = exact_points(6e6, 50e-9, &[50e-9, 50e-9, 50e-9, 50e-9]);
        let err = fit_power_broadening(&pts, &LmOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SingularJacobian(ref a, ref b) if a == "gamma0" && b == "i_sat"));
    }

    #[test]
    fn too_few_points() {
        let pts = exact_points(6e6, 50e-9, &[1e-9, 2e-9]);
        assert!(matches!(
            fit_power_broadening(&pts, &LmOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn scaling_powers_scales_i_sat_only() {
        let mut pts = exact_points(6e6, 50e-9, &[5e-9, 20e-9, 50e-9, 120e-9, 300e-9]);
        // perturb so the fit is not an exact interpolation
        for (k, p) in pts.iter_mut().enumerate() {
            p.width *= 1.0 + 0.03 * if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        let base = fit_power_broadening(&pts, &LmOptions::default()).unwrap();
        let k = 1234.5;
        let scaled: Vec<_> = pts
            .iter()
            .map(|p| BroadeningPoint {
                power: p.power * k,
                ..*p
            })
            .collect();
        let fit = fit_power_broadening(&scaled, &LmOptions::default()).unwrap();
        assert!((fit.value("i_sat") / (k * base.value("i_sat")) - 1.0).abs() < 1e-9);
        assert!((fit.value("gamma0") / base.value("gamma0") - 1.0).abs() < 1e-9);
    }

    #[test]
    fn analytic_jacobian_agrees_with_differences() {
        let model = BroadeningCurve {
            powers: vec![0.0, 0.1, 1.0, 4.0, 10.0],
            specs: vec![
                ParameterSpec::new("gamma0", Transform::Log),
                ParameterSpec::new("i_sat", Transform::Log),
            ],
        };
        assert!(jacobian_mismatch(&model, &[6e6, 0.8]) < 1e-4);
    }
}
