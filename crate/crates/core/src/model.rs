//! Forward models for probe transmission through the vapour.
//!
//! The Doppler model is
//!
//! ```text
//! T(f) = B * exp(-d* * sum_F' S_FF' * exp(-(f - f_F' - f_off)^2 / (2 sigma^2)))
//! ```
//!
//! and the pump-probe (saturated absorption) model multiplies the absorbance by
//! a hole factor `1 - sum_k c_k L_k(f)`, one unit-peak Lorentzian of FWHM
//! `Gamma_0 sqrt(1 + s)` per line and per crossover, clamped at zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::atomic::AtomicSystem;
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::spectrum::Spectrum;

/// Largest baseline accepted; recorded traces are normalised to ~1.
pub const MAX_BASELINE: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionModelParams {
    /// `d*`
    pub effective_od: f64,
    /// Hz
    pub doppler_sigma: f64,
    /// Calibration shift applied to every line, Hz.
    pub global_offset: f64,
    /// Off-resonance transmission.
    pub baseline: f64,
}

impl TransmissionModelParams {
    pub fn new(effective_od: f64, doppler_sigma: f64) -> Self {
        TransmissionModelParams {
            effective_od,
            doppler_sigma,
            global_offset: 0.0,
            baseline: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("effective_od", self.effective_od)?;
        ensure_positive("doppler_sigma", self.doppler_sigma)?;
        if !self.global_offset.is_finite() {
            return Err(Error::Domain {
                quantity: "global_offset",
                requirement: "finite",
                value: self.global_offset,
            });
        }
        if !(self.baseline > 0.0 && self.baseline <= MAX_BASELINE) {
            return Err(Error::Domain {
                quantity: "baseline",
                requirement: "in (0, 1.2]",
                value: self.baseline,
            });
        }
        Ok(())
    }
}

/// A Lamb dip or crossover resonance position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub id: String,
    /// Hz in the sweep frame (before `global_offset`).
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatSpecModelParams {
    pub background: TransmissionModelParams,
    /// `s = I / I_sat` of the pump.
    pub pump_saturation: f64,
    /// Unbroadened homogeneous FWHM `Gamma_0`, Hz.
    pub homogeneous_linewidth: f64,
    /// Contrast per resonance id (`L4`, `CO_34`, ...); absent ids have no dip.
    pub dip_contrasts: BTreeMap<String, f64>,
}

impl SatSpecModelParams {
    pub fn validate(&self) -> Result<()> {
        self.background.validate()?;
        ensure_non_negative("pump_saturation", self.pump_saturation)?;
        ensure_positive("homogeneous_linewidth", self.homogeneous_linewidth)?;
        for (id, &c) in &self.dip_contrasts {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidParameters(format!(
                    "dip contrast `{id}` = {c} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Power-broadened dip FWHM `Gamma_0 sqrt(1 + s)`, Hz.
    pub fn dip_fwhm(&self) -> f64 {
        power_broadened_width(self.homogeneous_linewidth, self.pump_saturation)
    }
}

/// `Gamma_0 sqrt(1 + s)`.
pub fn power_broadened_width(gamma0: f64, saturation: f64) -> f64 {
    gamma0 * (1.0 + saturation).sqrt()
}

/// (offset, strength) of every line from `ground_f`.
pub(crate) fn line_table(system: &AtomicSystem, ground_f: u32) -> Result<Vec<(f64, f64)>> {
    Ok(system
        .require_lines(ground_f)?
        .into_iter()
        .map(|l| (l.offset, l.strength))
        .collect())
}

/// Doppler-profile sum `sum S exp(-x^2/2 sigma^2)` at one frequency.
#[inline]
pub(crate) fn doppler_profile(lines: &[(f64, f64)], f: f64, sigma: f64, offset: f64) -> f64 {
    lines
        .iter()
        .map(|&(f0, s)| {
            let x = f - f0 - offset;
            s * (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .sum()
}

/// Profile and its derivatives with respect to sigma and the offset.
#[inline]
pub(crate) fn doppler_profile_with_gradient(lines: &[(f64, f64)], f: f64, sigma: f64, offset: f64) -> (f64, f64, f64) {
    let (mut g, mut d_sigma, mut d_offset) = (0.0, 0.0, 0.0);
    for &(f0, s) in lines {
        let x = f - f0 - offset;
        let term = s * (-x * x / (2.0 * sigma * sigma)).exp();
        g += term;
        d_sigma += term * x * x / (sigma * sigma * sigma);
        d_offset += term * x / (sigma * sigma);
    }
    (g, d_sigma, d_offset)
}

fn checked_frequencies(freqs: &[f64]) -> Result<()> {
    if freqs.is_empty() {
        return Err(Error::InvalidSpectrum("no frequencies requested".into()));
    }
    Ok(())
}

/// Doppler-broadened probe transmission of the lines from `ground_f`.
pub fn transmission_spectrum(
    system: &AtomicSystem,
    ground_f: u32,
    params: &TransmissionModelParams,
    freqs: &[f64],
) -> Result<Spectrum> {
    params.validate()?;
    checked_frequencies(freqs)?;
    let lines = line_table(system, ground_f)?;
    let t: Vec<f64> = freqs
        .iter()
        .map(|&f| {
            let g = doppler_profile(&lines, f, params.doppler_sigma, params.global_offset);
            params.baseline * (-params.effective_od * g).exp()
        })
        .collect();
    Spectrum::from_pairs(freqs, &t)
}

/// Crossover resonances: one per unordered pair of lines sharing `ground_f`,
/// at the midpoint of the two line offsets.
pub fn crossover_frequencies(system: &AtomicSystem, ground_f: u32) -> Result<Vec<Resonance>> {
    let lines = system.require_lines(ground_f)?;
    let mut out = Vec::new();
    for (i, a) in lines.iter().enumerate() {
        for b in &lines[i + 1..] {
            out.push(Resonance {
                id: format!("CO_{}{}", a.excited_f, b.excited_f),
                frequency: 0.5 * (a.offset + b.offset),
            });
        }
    }
    Ok(out)
}

/// All sub-Doppler resonances (lines first, then crossovers), sweep frame.
pub fn satspec_resonances(system: &AtomicSystem, ground_f: u32) -> Result<Vec<Resonance>> {
    let mut out: Vec<Resonance> = system
        .require_lines(ground_f)?
        .into_iter()
        .map(|l| Resonance {
            id: l.id(),
            frequency: l.offset,
        })
        .collect();
    out.extend(crossover_frequencies(system, ground_f)?);
    Ok(out)
}

/// Unit-peak Lorentzian with full width `fwhm`.
#[inline]
pub fn lorentzian(detuning: f64, fwhm: f64) -> f64 {
    let u = 2.0 * detuning / fwhm;
    1.0 / (1.0 + u * u)
}

/// Resonances paired with their contrasts; unknown ids are an error.
pub(crate) fn resolve_dips(
    system: &AtomicSystem,
    ground_f: u32,
    contrasts: &BTreeMap<String, f64>,
) -> Result<Vec<(Resonance, f64)>> {
    let resonances = satspec_resonances(system, ground_f)?;
    for id in contrasts.keys() {
        if !resonances.iter().any(|r| &r.id == id) {
            return Err(Error::InvalidParameters(format!(
                "no resonance named `{id}` for ground F={ground_f}"
            )));
        }
    }
    Ok(resonances
        .into_iter()
        .map(|r| {
            let c = contrasts.get(&r.id).copied().unwrap_or(0.0);
            (r, c)
        })
        .collect())
}

/// Pump-probe transmission with Lamb dips and crossovers.
pub fn satspec_spectrum(
    system: &AtomicSystem,
    ground_f: u32,
    params: &SatSpecModelParams,
    freqs: &[f64],
) -> Result<Spectrum> {
    params.validate()?;
    checked_frequencies(freqs)?;
    let lines = line_table(system, ground_f)?;
    let dips = resolve_dips(system, ground_f, &params.dip_contrasts)?;
    let bg = &params.background;
    let width = params.dip_fwhm();
    let t: Vec<f64> = freqs
        .iter()
        .map(|&f| {
            let absorbance = bg.effective_od * doppler_profile(&lines, f, bg.doppler_sigma, bg.global_offset);
            let burned: f64 = dips
                .iter()
                .filter(|(_, c)| *c != 0.0)
                .map(|(r, c)| c * lorentzian(f - r.frequency - bg.global_offset, width))
                .sum();
            let hole = (1.0 - burned).max(0.0);
            bg.baseline * (-absorbance * hole).exp()
        })
        .collect();
    Spectrum::from_pairs(freqs, &t)
}

/// Resonant optical depth `d = d* gamma_i / gamma` from the effective one.
pub fn effective_to_resonant_od(effective_od: f64, homogeneous_fwhm: f64, inhomogeneous_fwhm: f64) -> Result<f64> {
    ensure_non_negative("effective_od", effective_od)?;
    ensure_positive("homogeneous_fwhm", homogeneous_fwhm)?;
    ensure_positive("inhomogeneous_fwhm", inhomogeneous_fwhm)?;
    Ok(effective_od * inhomogeneous_fwhm / homogeneous_fwhm)
}

/// Inverse of [`effective_to_resonant_od`].
pub fn resonant_to_effective_od(resonant_od: f64, homogeneous_fwhm: f64, inhomogeneous_fwhm: f64) -> Result<f64> {
    ensure_non_negative("resonant_od", resonant_od)?;
    ensure_positive("homogeneous_fwhm", homogeneous_fwhm)?;
    ensure_positive("inhomogeneous_fwhm", inhomogeneous_fwhm)?;
    Ok(resonant_od * homogeneous_fwhm / inhomogeneous_fwhm)
}
