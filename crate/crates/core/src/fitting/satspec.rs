//! Fit of the pump-probe (Lamb dip) model: Doppler background, one shared dip
//! width and a contrast per resonance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{jacobian_mismatch, minimize, CurveModel, LmOptions, ParameterSpec, Transform};
use super::FitResult;
use crate::atomic::AtomicSystem;
use crate::error::{Error, Result};
use crate::model::{doppler_profile_with_gradient, line_table, resolve_dips, SatSpecModelParams, MAX_BASELINE};
use crate::spectrum::Spectrum;

const MIN_POINTS: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SatSpecFitOptions {
    pub lm: LmOptions,
    /// Resonance ids whose contrast is fitted. `None` fits the ids present in
    /// the initial contrasts, or every line and crossover if that map is empty.
    pub resonances: Option<Vec<String>>,
}

struct SatSpecCurve {
    lines: Vec<(f64, f64)>,
    /// Sweep-frame centres of the fitted dips.
    centres: Vec<f64>,
    freqs: Vec<f64>,
    specs: Vec<ParameterSpec>,
}

impl SatSpecCurve {
    fn new(lines: Vec<(f64, f64)>, ids: &[String], centres: Vec<f64>, freqs: Vec<f64>, offset_scale: f64) -> Self {
        let mut specs = vec![
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
            ParameterSpec::new("dip_fwhm", Transform::Log),
        ];
        specs.extend(
            ids.iter()
                .map(|id| ParameterSpec::new(format!("contrast_{id}"), Transform::Logistic { lo: 0.0, hi: 1.0 })),
        );
        SatSpecCurve {
            lines,
            centres,
            freqs,
            specs,
        }
    }
}

const FIXED: usize = 5;

impl CurveModel for SatSpecCurve {
    fn parameters(&self) -> &[ParameterSpec] {
        &self.specs
    }

    fn n_points(&self) -> usize {
        self.freqs.len()
    }

    fn evaluate(&self, p: &[f64], values: &mut [f64], mut jacobian: Option<&mut DMatrix<f64>>) {
        let [od, sigma, offset, baseline, width] = [p[0], p[1], p[2], p[3], p[4]];
        let contrasts = &p[FIXED..];
        let mut lor = vec![0.0; self.centres.len()];
        let mut u = vec![0.0; self.centres.len()];
        for (i, &f) in self.freqs.iter().enumerate() {
            let (g, dg_sigma, dg_offset) = doppler_profile_with_gradient(&self.lines, f, sigma, offset);
            let mut burned = 0.0;
            for (k, &r) in self.centres.iter().enumerate() {
                u[k] = 2.0 * (f - r - offset) / width;
                lor[k] = 1.0 / (1.0 + u[k] * u[k]);
                burned += contrasts[k] * lor[k];
            }
            let raw_hole = 1.0 - burned;
            let hole = raw_hole.max(0.0);
            let absorbance = od * g;
            let t = baseline * (-absorbance * hole).exp();
            values[i] = t;
            let Some(j) = jacobian.as_deref_mut() else { continue };
            // derivatives of the hole factor vanish where it is clamped
            let live = if raw_hole > 0.0 { 1.0 } else { 0.0 };
            let (mut dh_offset, mut dh_width) = (0.0, 0.0);
            for k in 0..self.centres.len() {
                let l2 = lor[k] * lor[k];
                dh_offset -= contrasts[k] * 4.0 * u[k] * l2 / width;
                dh_width -= contrasts[k] * 2.0 * u[k] * u[k] * l2 / width;
            }
            j[(i, 0)] = -g * hole * t;
            j[(i, 1)] = -od * dg_sigma * hole * t;
            j[(i, 2)] = -t * (od * dg_offset * hole + live * absorbance * dh_offset);
            j[(i, 3)] = t / baseline;
            j[(i, 4)] = -t * live * absorbance * dh_width;
            for k in 0..self.centres.len() {
                j[(i, FIXED + k)] = live * t * absorbance * lor[k];
            }
        }
    }
}

/// Weighted fit of the saturated-absorption model.
///
/// `init.pump_saturation` is not fitted; it converts the fitted dip width into
/// the unbroadened linewidth reported as `gamma0` in the derived quantities.
pub fn fit_satspec(
    system: &AtomicSystem,
    ground_f: u32,
    spectrum: &Spectrum,
    init: &SatSpecModelParams,
    options: &SatSpecFitOptions,
) -> Result<FitResult> {
    init.validate()?;
    let lines = line_table(system, ground_f)?;
    let all = resolve_dips(system, ground_f, &init.dip_contrasts)?;
    let ids: Vec<String> = match &options.resonances {
        Some(ids) => ids.clone(),
        None if init.dip_contrasts.is_empty() => all.iter().map(|(r, _)| r.id.clone()).collect(),
        None => init.dip_contrasts.keys().cloned().collect(),
    };
    let mut centres = Vec::with_capacity(ids.len());
    let mut start_contrasts = Vec::with_capacity(ids.len());
    for id in &ids {
        let (r, c) = all
            .iter()
            .find(|(r, _)| &r.id == id)
            .ok_or_else(|| Error::InvalidParameters(format!("no resonance named `{id}` for ground F={ground_f}")))?;
        centres.push(r.frequency);
        start_contrasts.push(if *c > 0.0 { c.clamp(1e-3, 0.999) } else { 0.1 });
    }
    if spectrum.len() < MIN_POINTS.max(FIXED + ids.len()) {
        return Err(Error::InsufficientData(format!(
            "{} points for {} free parameters",
            spectrum.len(),
            FIXED + ids.len()
        )));
    }

    let bg = &init.background;
    let model = SatSpecCurve::new(lines, &ids, centres, spectrum.frequencies(), bg.doppler_sigma);
    let observed = spectrum.transmissions();
    let weights = spectrum.sigmas().map(|s| s.iter().map(|x| 1.0 / x).collect::<Vec<_>>());
    let mut start = vec![
        bg.effective_od.max(1e-6),
        bg.doppler_sigma,
        bg.global_offset,
        bg.baseline.min(MAX_BASELINE * (1.0 - 1e-9)),
        init.dip_fwhm(),
    ];
    start.extend(start_contrasts);
    let outcome = minimize(&model, &observed, weights.as_deref(), &start, &options.lm)?;
    let mut result = FitResult::from_outcome(&model, &outcome, weights.is_some());

    let width = result.value("dip_fwhm");
    let root = (1.0 + init.pump_saturation).sqrt();
    result.derived.insert("gamma0".into(), width / root);
    result
        .derived
        .insert("gamma0_uncertainty".into(), result.uncertainty("dip_fwhm") / root);
    Ok(result)
}

/// Jacobian check of the sat-spec model with one free contrast per dip in
/// `params.dip_contrasts`.
pub fn jacobian_self_check(
    system: &AtomicSystem,
    ground_f: u32,
    freqs: &[f64],
    params: &SatSpecModelParams,
) -> Result<f64> {
    params.validate()?;
    let dips = resolve_dips(system, ground_f, &params.dip_contrasts)?;
    let dips: Vec<_> = dips
        .into_iter()
        .filter(|(r, _)| params.dip_contrasts.contains_key(&r.id))
        .collect();
    let ids: Vec<String> = dips.iter().map(|(r, _)| r.id.clone()).collect();
    let centres = dips.iter().map(|(r, _)| r.frequency).collect();
    let bg = &params.background;
    let model = SatSpecCurve::new(
        line_table(system, ground_f)?,
        &ids,
        centres,
        freqs.to_vec(),
        bg.doppler_sigma,
    );
    let mut x = vec![
        bg.effective_od,
        bg.doppler_sigma,
        bg.global_offset,
        bg.baseline,
        params.dip_fwhm(),
    ];
    x.extend(dips.iter().map(|(_, c)| *c));
    Ok(jacobian_mismatch(&model, &x))
}
