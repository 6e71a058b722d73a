//! Fit of the Doppler transmission model: `d*`, `sigma`, line-set offset and
//! baseline free; line strengths and spacings fixed by the atomic data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{jacobian_mismatch, minimize, CurveModel, LmOptions, ParameterSpec, Transform};
use super::FitResult;
use crate::atomic::AtomicSystem;
use crate::constants::{BOLTZMANN, GAUSSIAN_FWHM_PER_SIGMA};
use crate::error::{Error, Result};
use crate::model::{doppler_profile, doppler_profile_with_gradient, line_table, TransmissionModelParams, MAX_BASELINE};
use crate::spectrum::Spectrum;

pub const MAX_EFFECTIVE_OD: f64 = 1e4;
pub const MIN_DOPPLER_SIGMA: f64 = 1e6;
pub const MAX_DOPPLER_SIGMA: f64 = 1e10;
const MIN_POINTS: usize = 10;
const MAX_MASK_PASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionFitOptions {
    pub lm: LmOptions,
    /// Points whose predicted transmission falls below `mask * baseline` are
    /// dropped: the line centre is saturated there and carries no
    /// information on `d*`. The mask is re-evaluated after each fit pass.
    pub saturation_mask: Option<f64>,
}

impl Default for TransmissionFitOptions {
    fn default() -> Self {
        TransmissionFitOptions {
            lm: LmOptions::default(),
            saturation_mask: Some(0.02),
        }
    }
}

pub(crate) struct TransmissionCurve {
    lines: Vec<(f64, f64)>,
    freqs: Vec<f64>,
    specs: Vec<ParameterSpec>,
}

impl TransmissionCurve {
    pub(crate) fn new(lines: Vec<(f64, f64)>, freqs: Vec<f64>, offset_scale: f64) -> Self {
        TransmissionCurve {
            lines,
            freqs,
            specs: vec![
                ParameterSpec::new("effective_od", Transform::Log),
                ParameterSpec::new("doppler_sigma", Transform::Log),
                ParameterSpec::new("global_offset", Transform::Identity { scale: offset_scale }),
                ParameterSpec::new(
                    "baseline",
                    Transform::Logistic {
                        lo: 0.0,
                        hi: MAX_BASELINE,
                    },
                ),
            ],
        }
    }
}

impl CurveModel for TransmissionCurve {
    fn parameters(&self) -> &[ParameterSpec] {
        &self.specs
    }

    fn n_points(&self) -> usize {
        self.freqs.len()
    }

    fn evaluate(&self, p: &[f64], values: &mut [f64], jacobian: Option<&mut DMatrix<f64>>) {
        let [od, sigma, offset, baseline] = [p[0], p[1], p[2], p[3]];
        match jacobian {
            None => {
                for (v, &f) in values.iter_mut().zip(&self.freqs) {
                    *v = baseline * (-od * doppler_profile(&self.lines, f, sigma, offset)).exp();
                }
            }
            Some(j) => {
                for (i, &f) in self.freqs.iter().enumerate() {
                    let (g, dg_sigma, dg_offset) = doppler_profile_with_gradient(&self.lines, f, sigma, offset);
                    let t = baseline * (-od * g).exp();
                    values[i] = t;
                    j[(i, 0)] = -g * t;
                    j[(i, 1)] = -od * dg_sigma * t;
                    j[(i, 2)] = -od * dg_offset * t;
                    j[(i, 3)] = t / baseline;
                }
            }
        }
    }
}

/// Points whose predicted transmission stays above `mask * baseline`.
fn saturation_keep(lines: &[(f64, f64)], freqs: &[f64], p: &[f64], mask: Option<f64>) -> Vec<bool> {
    let Some(mask) = mask else {
        return vec![true; freqs.len()];
    };
    let [od, sigma, offset] = [p[0], p[1], p[2]];
    freqs
        .iter()
        .map(|&f| (-od * doppler_profile(lines, f, sigma, offset)).exp() >= mask)
        .collect()
}

/// Data-driven starting point for [`fit_transmission`].
pub fn initial_guess(system: &AtomicSystem, ground_f: u32, spectrum: &Spectrum) -> Result<TransmissionModelParams> {
    let lines = line_table(system, ground_f)?;
    if spectrum.len() < 3 {
        return Err(Error::InsufficientData(
            "need at least 3 points for an initial guess".into(),
        ));
    }
    let freqs = spectrum.frequencies();
    let t = spectrum.transmissions();
    let baseline = t
        .iter()
        .copied()
        .fold(f64::MIN_POSITIVE, f64::max)
        .min(MAX_BASELINE * 0.999);
    let absorbance: Vec<f64> = t.iter().map(|&x| -(x.max(1e-6) / baseline).ln()).collect();
    let (peak_idx, &peak) = absorbance
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let above: Vec<usize> = (0..absorbance.len()).filter(|&i| absorbance[i] >= 0.5 * peak).collect();
    let width = match (above.first(), above.last()) {
        (Some(&a), Some(&b)) if b > a => freqs[b] - freqs[a],
        _ => spectrum.span() / 4.0,
    };
    let step = spectrum.span() / (spectrum.len() - 1) as f64;
    let sigma = (width / GAUSSIAN_FWHM_PER_SIGMA)
        .max(2.0 * step)
        .clamp(MIN_DOPPLER_SIGMA, MAX_DOPPLER_SIGMA);
    // line-set profile peak at zero offset, located on the same grid
    let profile: Vec<f64> = freqs.iter().map(|&f| doppler_profile(&lines, f, sigma, 0.0)).collect();
    let (model_idx, &model_peak) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let offset = freqs[peak_idx] - freqs[model_idx];
    let effective_od = if model_peak > 0.0 {
        (peak / model_peak).max(1e-3)
    } else {
        1.0
    };
    Ok(TransmissionModelParams {
        effective_od: effective_od.min(MAX_EFFECTIVE_OD),
        doppler_sigma: sigma,
        global_offset: offset,
        baseline,
    })
}

/// Weighted least-squares fit of the Doppler transmission model.
///
/// Non-convergence is reported through [`FitResult::converged`], not as an error.
pub fn fit_transmission(
    system: &AtomicSystem,
    ground_f: u32,
    spectrum: &Spectrum,
    init: &TransmissionModelParams,
    options: &TransmissionFitOptions,
) -> Result<FitResult> {
    let lines = line_table(system, ground_f)?;
    init.validate()?;
    if init.effective_od > MAX_EFFECTIVE_OD {
        return Err(Error::InvalidParameters(format!(
            "initial effective_od {} exceeds {MAX_EFFECTIVE_OD}",
            init.effective_od
        )));
    }
    if !(MIN_DOPPLER_SIGMA..=MAX_DOPPLER_SIGMA).contains(&init.doppler_sigma) {
        return Err(Error::InvalidParameters(format!(
            "initial doppler_sigma {} Hz is outside [1 MHz, 10 GHz]",
            init.doppler_sigma
        )));
    }
    if spectrum.len() < MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points, need at least {MIN_POINTS}",
            spectrum.len()
        )));
    }
    if spectrum.span() < init.doppler_sigma {
        return Err(Error::InsufficientData(format!(
            "sweep spans {:.3e} Hz, less than one Doppler width ({:.3e} Hz)",
            spectrum.span(),
            init.doppler_sigma
        )));
    }

    let all_freqs = spectrum.frequencies();
    let weights_all: Option<Vec<f64>> = spectrum.sigmas().map(|s| s.iter().map(|x| 1.0 / x).collect());
    let observed_all = spectrum.transmissions();
    let mut start = [
        init.effective_od.max(1e-6),
        init.doppler_sigma,
        init.global_offset,
        init.baseline.min(MAX_BASELINE * (1.0 - 1e-9)),
    ];
    // The mask is decided on the model prediction, never on the noisy data:
    // selecting on observed values biases the kept points upwards.
    let mut kept = saturation_keep(&lines, &all_freqs, &start, options.saturation_mask);
    let mut passes = 0;
    let (model, outcome) = loop {
        passes += 1;
        if kept.iter().filter(|&&k| k).count() < MIN_POINTS {
            return Err(Error::InsufficientData(format!(
                "only {} points remain above the saturation mask",
                kept.iter().filter(|&&k| k).count()
            )));
        }
        let pick = |v: &[f64]| -> Vec<f64> { v.iter().zip(&kept).filter(|(_, &k)| k).map(|(x, _)| *x).collect() };
        let model = TransmissionCurve::new(lines.clone(), pick(&all_freqs), init.doppler_sigma);
        let weights = weights_all.as_deref().map(pick);
        let outcome = minimize(&model, &pick(&observed_all), weights.as_deref(), &start, &options.lm)?;
        let refined = saturation_keep(&lines, &all_freqs, &outcome.params, options.saturation_mask);
        if refined == kept || passes == MAX_MASK_PASSES {
            break (model, outcome);
        }
        kept = refined;
        start.copy_from_slice(&outcome.params);
    };
    let masked = kept.iter().filter(|&&k| !k).count();
    let mut result = FitResult::from_outcome(&model, &outcome, weights_all.is_some());

    let sigma = result.value("doppler_sigma");
    let sigma_err = result.uncertainty("doppler_sigma");
    result
        .derived
        .insert("doppler_fwhm".into(), GAUSSIAN_FWHM_PER_SIGMA * sigma);
    result
        .derived
        .insert("doppler_fwhm_uncertainty".into(), GAUSSIAN_FWHM_PER_SIGMA * sigma_err);
    let temperature = system.mass * (sigma * system.d2_wavelength).powi(2) / BOLTZMANN;
    result.derived.insert("temperature".into(), temperature);
    result.derived.insert("masked_points".into(), masked as f64);
    if masked > 0 {
        result.warnings.push(format!(
            "{masked} saturated points below the mask were excluded; d* is extrapolated from the wings"
        ));
    }
    if result.value("doppler_sigma") < MIN_DOPPLER_SIGMA || result.value("doppler_sigma") > MAX_DOPPLER_SIGMA {
        result.warnings.push("doppler_sigma left [1 MHz, 10 GHz]".into());
    }
    if result.value("effective_od") > MAX_EFFECTIVE_OD {
        result.warnings.push("effective_od exceeds 1e4".into());
    }
    Ok(result)
}

/// Largest relative column difference between the analytic Jacobian of the
/// transmission model and central differences at `params`.
pub fn jacobian_self_check(
    system: &AtomicSystem,
    ground_f: u32,
    freqs: &[f64],
    params: &TransmissionModelParams,
) -> Result<f64> {
    params.validate()?;
    let model = TransmissionCurve::new(line_table(system, ground_f)?, freqs.to_vec(), params.doppler_sigma);
    let x = [
        params.effective_od,
        params.doppler_sigma,
        params.global_offset,
        params.baseline,
    ];
    Ok(jacobian_mismatch(&model, &x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::lm::jacobian_mismatch;
    use crate::model::transmission_spectrum;
    use crate::spectrum::SpectrumPoint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| -800e6 + 1.2e9 * i as f64 / (n - 1) as f64).collect()
    }

    fn synthetic(truth: &TransmissionModelParams, noise: f64, seed: u64) -> Spectrum {
        let cs = AtomicSystem::cesium_d2();
        let clean = transmission_spectrum(&cs, 3, truth, &grid(500)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise).unwrap();
        Spectrum::new(
            clean
                .points()
                .iter()
                .map(|p| SpectrumPoint {
                    transmission: (p.transmission + normal.sample(&mut rng)).max(0.0),
                    ..*p
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_recovery_is_exact() {
        let cs = AtomicSystem::cesium_d2();
        let truth = TransmissionModelParams {
            effective_od: 5.7,
            doppler_sigma: 177e6,
            global_offset: 3e6,
            baseline: 0.98,
        };
        let data = synthetic(&truth, 0.0, 0);
        let init = TransmissionModelParams::new(3.0, 150e6);
        let fit = fit_transmission(&cs, 3, &data, &init, &TransmissionFitOptions::default()).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!(fit.residual_norm < 1e-10, "{}", fit.residual_norm);
        assert!((fit.value("effective_od") - 5.7).abs() < 1e-6);
        assert!((fit.value("doppler_sigma") - 177e6).abs() < 1e-6 * 177e6);
        assert!((fit.value("global_offset") - 3e6).abs() < 1.0);
        assert!((fit.value("baseline") - 0.98).abs() < 1e-6);
    }

    #[test]
    fn noisy_recovery_within_quoted_uncertainty() {
        let cs = AtomicSystem::cesium_d2();
        let truth = TransmissionModelParams::new(5.7, 177e6);
        let data = synthetic(&truth, 0.01, 42);
        let init = initial_guess(&cs, 3, &data).unwrap();
        let fit = fit_transmission(&cs, 3, &data, &init, &TransmissionFitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.value("effective_od") - 5.7).abs() < 0.1, "{fit:?}");
        assert!((fit.value("doppler_sigma") - 177e6).abs() < 3e6);
        let t = fit.derived["temperature"];
        assert!((t - 363.0).abs() < 20.0, "T = {t}");
    }

    #[test]
    fn flat_spectrum_gives_zero_od() {
        let cs = AtomicSystem::cesium_d2();
        let data = synthetic(&TransmissionModelParams::new(0.0, 177e6), 0.01, 7);
        let fit = fit_transmission(
            &cs,
            3,
            &data,
            &TransmissionModelParams::new(1.0, 177e6),
            &TransmissionFitOptions::default(),
        )
        .unwrap();
        let od = fit.value("effective_od");
        let err = fit.uncertainty("effective_od");
        assert!(err.is_finite() && err > 0.0);
        assert!(od <= 3.0 * err, "d* = {od} +- {err}");
    }

    #[test]
    fn saturated_centre_is_masked() {
        let cs = AtomicSystem::cesium_d2();
        let truth = TransmissionModelParams::new(300.0, 203e6);
        let wide: Vec<f64> = (0..1000).map(|i| -3e9 + 5e9 * i as f64 / 999.0).collect();
        let data = transmission_spectrum(&cs, 3, &truth, &wide).unwrap();
        let init = TransmissionModelParams::new(100.0, 180e6);
        let fit = fit_transmission(&cs, 3, &data, &init, &TransmissionFitOptions::default()).unwrap();
        assert!(fit.derived["masked_points"] > 0.0);
        assert!(!fit.warnings.is_empty());
        assert!((fit.value("effective_od") / 300.0 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_too_few_points_and_bad_init() {
        let cs = AtomicSystem::cesium_d2();
        let short = Spectrum::from_pairs(&[0.0, 1e9], &[1.0, 1.0]).unwrap();
        let init = TransmissionModelParams::new(1.0, 177e6);
        assert!(matches!(
            fit_transmission(&cs, 3, &short, &init, &TransmissionFitOptions::default()),
            Err(Error::InsufficientData(_))
        ));
        let data = synthetic(&init, 0.0, 0);
        let wide = TransmissionModelParams::new(1.0, 20e9);
        assert!(fit_transmission(&cs, 3, &data, &wide, &TransmissionFitOptions::default()).is_err());
    }

    #[test]
    fn analytic_jacobian_agrees_with_differences() {
        let cs = AtomicSystem::cesium_d2();
        let model = TransmissionCurve::new(line_table(&cs, 3).unwrap(), grid(200), 177e6);
        let err = jacobian_mismatch(&model, &[5.7, 177e6, 2e6, 0.97]);
        assert!(err < 1e-4, "mismatch {err}");
    }
}
