//! Optical pumping efficiency of a transit-limited, Doppler-broadened ensemble.
//!
//! Each velocity class is a two-level system driven at Rabi frequency `Omega`
//! and detuning `delta(v)`. It scatters at
//!
//! ```text
//! R = (pi Gamma) s / (1 + s + (2 delta / Gamma)^2),   s = 2 Omega^2 / Gamma^2
//! ```
//!
//! (`Gamma`, `Omega`, `delta` in Hz; `pi Gamma` is half the decay rate in
//! s^-1). A fraction `beta` of decays lands in the dark manifold, so an atom
//! that spends `t` in the beam is pumped with probability `1 - exp(-beta R t)`.
//! Wall collisions depolarise fully: every atom enters the beam thermal.
//!
//! Because `R` saturates at `pi Gamma`, the pumped fraction tends to
//! `1 - <exp(-beta pi Gamma t)>`, not to one, as `Omega` grows.

use serde::{Deserialize, Serialize};

use crate::atomic::{AtomicSystem, ThermalState};
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::transit::TransitStats;

/// Velocity classes in the Doppler average, spread over +-5 sigma.
pub const VELOCITY_CLASSES: usize = 401;
const VELOCITY_SPAN_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpConfig {
    /// Hz
    pub rabi_frequency: f64,
    /// Pump detuning from the pumped transition, Hz.
    pub detuning: f64,
    /// Fraction of spontaneous decays that end in the dark ground manifold.
    pub branching_to_dark: f64,
    /// K
    pub temperature: f64,
}

impl PumpConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("rabi_frequency", self.rabi_frequency)?;
        ensure_positive("temperature", self.temperature)?;
        if !self.detuning.is_finite() {
            return Err(Error::Domain {
                quantity: "detuning",
                requirement: "finite",
                value: self.detuning,
            });
        }
        if !(self.branching_to_dark > 0.0 && self.branching_to_dark <= 1.0) {
            return Err(Error::Domain {
                quantity: "branching_to_dark",
                requirement: "in (0, 1]",
                value: self.branching_to_dark,
            });
        }
        Ok(())
    }
}

/// Time spent in the beam, as an equally weighted set of durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitDistribution {
    /// Equally probable durations, s (typically quantiles of a Monte Carlo run).
    Quantiles(Vec<f64>),
    /// Every atom stays the same time, s.
    Fixed(f64),
}

impl TransitDistribution {
    fn durations(&self) -> Result<&[f64]> {
        let d: &[f64] = match self {
            TransitDistribution::Quantiles(q) => q,
            TransitDistribution::Fixed(t) => std::slice::from_ref(t),
        };
        if d.is_empty() || d.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidParameters(
                "transit durations must be a non-empty set of finite, non-negative times".into(),
            ));
        }
        Ok(d)
    }

    pub fn mean(&self) -> f64 {
        match self {
            TransitDistribution::Quantiles(q) => q.iter().sum::<f64>() / q.len() as f64,
            TransitDistribution::Fixed(t) => *t,
        }
    }
}

impl From<&TransitStats> for TransitDistribution {
    fn from(stats: &TransitStats) -> Self {
        TransitDistribution::Quantiles(stats.quantiles.clone())
    }
}

/// Scattering rate of one velocity class, s^-1.
pub fn scattering_rate(natural_linewidth: f64, rabi: f64, detuning: f64) -> f64 {
    let s = 2.0 * rabi * rabi / (natural_linewidth * natural_linewidth);
    let x = 2.0 * detuning / natural_linewidth;
    std::f64::consts::PI * natural_linewidth * s / (1.0 + s + x * x)
}

/// Doppler shifts and normalised Gaussian weights of the velocity classes.
fn velocity_classes(doppler_sigma: f64) -> impl Iterator<Item = (f64, f64)> {
    let n = VELOCITY_CLASSES;
    let step = 2.0 * VELOCITY_SPAN_SIGMAS / (n - 1) as f64;
    let raw: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let z = -VELOCITY_SPAN_SIGMAS + step * i as f64;
            (z * doppler_sigma, (-0.5 * z * z).exp())
        })
        .collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    raw.into_iter().map(move |(shift, w)| (shift, w / total))
}

/// Probability that an atom from the pumped-from manifold ends up dark.
pub fn pump_out_probability(
    system: &AtomicSystem,
    config: &PumpConfig,
    transit: &TransitDistribution,
    doppler_sigma: f64,
) -> Result<f64> {
    config.validate()?;
    ensure_positive("doppler_sigma", doppler_sigma)?;
    let durations = transit.durations()?;
    let gamma = system.natural_linewidth_gamma0;
    let beta = config.branching_to_dark;
    let per_t = 1.0 / durations.len() as f64;
    let mut total = 0.0;
    for (shift, weight) in velocity_classes(doppler_sigma) {
        let rate = beta * scattering_rate(gamma, config.rabi_frequency, config.detuning + shift);
        let pumped: f64 = durations.iter().map(|&t| -(-rate * t).exp_m1()).sum();
        total += weight * per_t * pumped;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Fraction of all atoms in the dark manifold after one transit:
/// `p_dark + p_from <pump-out>`.
pub fn pumping_efficiency(
    system: &AtomicSystem,
    config: &PumpConfig,
    transit: &TransitDistribution,
    doppler_sigma: f64,
    initial: &ThermalState,
    pumped_from_f: u32,
) -> Result<f64> {
    let p_from = initial
        .population(pumped_from_f)
        .ok_or(Error::UnknownManifold(pumped_from_f))?;
    let p_dark = 1.0 - p_from;
    Ok(p_dark + p_from * pump_out_probability(system, config, transit, doppler_sigma)?)
}

/// Efficiency once the drive saturates every velocity class.
pub fn saturated_efficiency_limit(
    system: &AtomicSystem,
    branching_to_dark: f64,
    transit: &TransitDistribution,
    initial: &ThermalState,
    pumped_from_f: u32,
) -> Result<f64> {
    let p_from = initial
        .population(pumped_from_f)
        .ok_or(Error::UnknownManifold(pumped_from_f))?;
    let durations = transit.durations()?;
    let rate = branching_to_dark * std::f64::consts::PI * system.natural_linewidth_gamma0;
    let pumped = durations.iter().map(|&t| -(-rate * t).exp_m1()).sum::<f64>() / durations.len() as f64;
    Ok(1.0 - p_from + p_from * pumped)
}

/// `(rabi, efficiency)` for each Rabi frequency in `rabis`.
pub fn efficiency_sweep(
    system: &AtomicSystem,
    base: &PumpConfig,
    rabis: &[f64],
    transit: &TransitDistribution,
    doppler_sigma: f64,
    initial: &ThermalState,
    pumped_from_f: u32,
) -> Result<Vec<(f64, f64)>> {
    rabis
        .iter()
        .map(|&rabi| {
            let config = PumpConfig {
                rabi_frequency: rabi,
                ..*base
            };
            pumping_efficiency(system, &config, transit, doppler_sigma, initial, pumped_from_f).map(|e| (rabi, e))
        })
        .collect()
}
