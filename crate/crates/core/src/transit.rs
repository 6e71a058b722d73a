//! Fibre geometry, Rabi frequency from guided power, and Monte Carlo transit
//! times of thermal atoms across the guided mode.
//!
//! Geometry convention: the quoted Gaussian beam width is the mode-field
//! radius `w`, and the interaction region is the disc of radius `w`. Atoms
//! cross it on straight chords with the impact parameter uniform on
//! `[0, w)`, so `chord = 2 w sqrt(1 - u^2)`.
//!
//! Speeds are those of atoms crossing a line in the transverse plane, i.e. the
//! 2D Maxwell-Boltzmann distribution weighted by flux: `p(v) ~ v^2
//! exp(-v^2 / 2 s^2)` with `s = sqrt(k_B T / m)`. That is the norm of three
//! independent normals of width `s`. Weighting by flux also keeps `<1/v>`
//! finite; the unweighted 2D distribution has a divergent `<1/v^2>`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atomic::AtomicSystem;
use crate::constants::{BOLTZMANN, PLANCK, SPEED_OF_LIGHT, VACUUM_PERMITTIVITY};
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};

pub const MIN_SAMPLES: usize = 1000;
/// Number of equally spaced quantiles kept in [`TransitStats`].
pub const N_QUANTILES: usize = 200;
/// Samples per independently seeded RNG stream.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FibreGeometry {
    /// m
    pub core_diameter: f64,
    /// Gaussian mode-field radius, m.
    pub mode_width: f64,
    /// m
    pub length: f64,
    /// dB/m
    pub loss_db_per_m: f64,
    /// Free-space to fibre in-coupling, fraction.
    #[serde(default = "unit")]
    pub coupling_efficiency: f64,
}

fn unit() -> f64 {
    1.0
}

impl FibreGeometry {
    /// 26 um core kagome fibre, 12 um mode, 20 cm at 1 dB/m, 65 % in-coupling.
    pub fn kagome_reference() -> Self {
        FibreGeometry {
            core_diameter: 26e-6,
            mode_width: 12e-6,
            length: 0.2,
            loss_db_per_m: 1.0,
            coupling_efficiency: 0.65,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("mode_width", self.mode_width)?;
        ensure_positive("core_diameter", self.core_diameter)?;
        ensure_positive("length", self.length)?;
        ensure_non_negative("loss_db_per_m", self.loss_db_per_m)?;
        if 2.0 * self.mode_width > self.core_diameter {
            return Err(Error::InvalidParameters(format!(
                "mode diameter {} m exceeds core diameter {} m",
                2.0 * self.mode_width,
                self.core_diameter
            )));
        }
        if !(self.coupling_efficiency > 0.0 && self.coupling_efficiency <= 1.0) {
            return Err(Error::Domain {
                quantity: "coupling_efficiency",
                requirement: "in (0, 1]",
                value: self.coupling_efficiency,
            });
        }
        Ok(())
    }

    /// Propagation loss over the full length, dB.
    pub fn propagation_loss_db(&self) -> f64 {
        self.loss_db_per_m * self.length
    }

    /// Power transmission of the fibre alone.
    pub fn propagation_transmission(&self) -> f64 {
        10f64.powf(-self.propagation_loss_db() / 10.0)
    }

    /// In-coupling times propagation.
    pub fn total_transmission(&self) -> f64 {
        self.coupling_efficiency * self.propagation_transmission()
    }
}

/// Peak Rabi frequency `d E / h` (Hz) of `power` watts in the Gaussian mode,
/// with `I0 = 2P / (pi w^2)` and `E = sqrt(2 I0 / (eps0 c))`.
pub fn rabi_from_power(power: f64, geometry: &FibreGeometry, dipole_moment: f64) -> Result<f64> {
    ensure_non_negative("power", power)?;
    ensure_positive("mode_width", geometry.mode_width)?;
    ensure_positive("dipole_moment", dipole_moment)?;
    let w = geometry.mode_width;
    let intensity = 2.0 * power / (std::f64::consts::PI * w * w);
    let field = (2.0 * intensity / (VACUUM_PERMITTIVITY * SPEED_OF_LIGHT)).sqrt();
    Ok(dipole_moment * field / PLANCK)
}

/// Guided power (W) giving the peak Rabi frequency `rabi` (Hz).
pub fn power_for_rabi(rabi: f64, geometry: &FibreGeometry, dipole_moment: f64) -> Result<f64> {
    ensure_non_negative("rabi_frequency", rabi)?;
    ensure_positive("mode_width", geometry.mode_width)?;
    ensure_positive("dipole_moment", dipole_moment)?;
    let field = rabi * PLANCK / dipole_moment;
    let intensity = 0.5 * VACUUM_PERMITTIVITY * SPEED_OF_LIGHT * field * field;
    let w = geometry.mode_width;
    Ok(0.5 * intensity * std::f64::consts::PI * w * w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitSample {
    /// m
    pub chord: f64,
    /// m/s
    pub speed: f64,
    /// s
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitStats {
    /// s
    pub mean: f64,
    /// s
    pub median: f64,
    /// Standard error of `mean`, s.
    pub std_error: f64,
    /// Durations at probabilities `(i + 0.5) / N_QUANTILES`, s.
    pub quantiles: Vec<f64>,
    /// m
    pub mean_chord: f64,
    /// m/s
    pub mean_speed: f64,
    pub n_samples: usize,
    pub rng_seed: u64,
    /// K
    pub temperature: f64,
}

/// Draws `n` crossings. Chunk `k` uses ChaCha stream `k` of `seed`, so the
/// samples do not depend on how rayon schedules the chunks.
pub fn transit_samples(
    geometry: &FibreGeometry,
    system: &AtomicSystem,
    temperature: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<TransitSample>> {
    geometry.validate()?;
    ensure_positive("temperature", temperature)?;
    if n_samples < MIN_SAMPLES {
        return Err(Error::InvalidParameters(format!(
            "n_samples {n_samples} is below the minimum of {MIN_SAMPLES}"
        )));
    }
    let s = (BOLTZMANN * temperature / system.mass).sqrt();
    let radius = geometry.mode_width;
    let mut out = vec![
        TransitSample {
            chord: 0.0,
            speed: 0.0,
            duration: 0.0
        };
        n_samples
    ];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(k, chunk)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        for sample in chunk {
            let u: f64 = rand::Rng::random(&mut rng);
            let chord = 2.0 * radius * (1.0 - u * u).sqrt();
            let (a, b, c): (f64, f64, f64) = (
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let speed = s * (a * a + b * b + c * c).sqrt();
            *sample = TransitSample {
                chord,
                speed,
                duration: chord / speed,
            };
        }
    });
    Ok(out)
}

/// Summary statistics of [`transit_samples`].
pub fn transit_time_mc(
    geometry: &FibreGeometry,
    system: &AtomicSystem,
    temperature: f64,
    n_samples: usize,
    seed: u64,
) -> Result<TransitStats> {
    let samples = transit_samples(geometry, system, temperature, n_samples, seed)?;
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.duration).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.duration - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mean_chord = samples.iter().map(|s| s.chord).sum::<f64>() / n;
    let mean_speed = samples.iter().map(|s| s.speed).sum::<f64>() / n;
    let mut durations: Vec<f64> = samples.iter().map(|s| s.duration).collect();
    durations.par_sort_unstable_by(f64::total_cmp);
    let quantiles = (0..N_QUANTILES)
        .map(|i| empirical_quantile(&durations, (i as f64 + 0.5) / N_QUANTILES as f64))
        .collect();
    Ok(TransitStats {
        mean,
        median: empirical_quantile(&durations, 0.5),
        std_error: (var / n).sqrt(),
        quantiles,
        mean_chord,
        mean_speed,
        n_samples,
        rng_seed: seed,
        temperature,
    })
}

/// Linear interpolation between order statistics of sorted data.
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
