//! Species constants, hyperfine structure and thermal bookkeeping.
//!
//! Atomic constants are read from a TOML data file rather than compiled in;
//! cesium D2 ships as the bundled reference dataset (see
//! [`AtomicSystem::cesium_d2`]). All frequencies handed to the spectral models
//! are taken from [`HyperfineLine::offset`], i.e. they live in the sweep frame
//! of one ground manifold.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN, SPEED_OF_LIGHT};
use crate::error::{ensure_positive, Error, Result};

/// Data-file schema understood by this version.
pub const SCHEMA_VERSION: u32 = 1;

const CESIUM_D2: &str = include_str!("../data/cesium_d2.toml");

/// Tolerance for `1/(2 pi tau)` versus the tabulated natural linewidth.
const LIFETIME_LINEWIDTH_TOLERANCE: f64 = 0.05;

/// Line offsets must agree with the manifold table to this many Hz.
const OFFSET_CONSISTENCY_HZ: f64 = 1.0e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Ground,
    Excited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperfineManifold {
    #[serde(rename = "F")]
    pub f: u32,
    pub degeneracy: u32,
    /// Hz relative to the fine-structure centroid of the level.
    #[serde(rename = "frequency_offset_hz")]
    pub frequency_offset: f64,
}

/// A dipole-allowed `F -> F'` line and where it sits in the sweep frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperfineLine {
    #[serde(rename = "ground_F")]
    pub ground_f: u32,
    #[serde(rename = "excited_F")]
    pub excited_f: u32,
    /// Hz, relative to the reference line of the ground manifold's sweep frame.
    #[serde(rename = "offset_hz")]
    pub offset: f64,
    /// Relative transition strength `S_FF'`.
    pub strength: f64,
}

impl HyperfineLine {
    /// Identifier used for Lamb dips, e.g. `L4` for `F -> F'=4`.
    pub fn id(&self) -> String {
        format!("L{}", self.excited_f)
    }
}

/// Which excited manifold defines zero frequency for a ground manifold's sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepFrame {
    #[serde(rename = "ground_F")]
    pub ground_f: u32,
    #[serde(rename = "reference_excited_F")]
    pub reference_excited_f: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrengthNormalization {
    /// `sum_F' S_FF' = 1` for every ground `F`.
    PerGroundSum,
    /// Strengths carry an absolute scale; no sum rule is enforced.
    Absolute,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifoldRecord {
    level: Level,
    #[serde(flatten)]
    manifold: HyperfineManifold,
}

/// On-disk representation of an atomic data file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomicDataFile {
    schema_version: u32,
    species: String,
    mass_kg: f64,
    d2_wavelength_m: f64,
    natural_linewidth_hz: f64,
    excited_lifetime_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dipole_moment_cm: Option<f64>,
    strength_normalization: StrengthNormalization,
    manifolds: Vec<ManifoldRecord>,
    sweep_frames: Vec<SweepFrame>,
    lines: Vec<HyperfineLine>,
}

/// A validated atomic species with its hyperfine line table.
///
/// Immutable after construction; every invariant is checked by
/// [`AtomicSystem::from_toml_str`].
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicSystem {
    pub species_name: String,
    /// kg
    pub mass: f64,
    /// Vacuum wavelength of the D2 line, m.
    pub d2_wavelength: f64,
    /// Natural linewidth `Gamma_0 / 2 pi` (FWHM), Hz.
    pub natural_linewidth_gamma0: f64,
    /// s
    pub excited_lifetime: f64,
    /// Transition dipole moment used to convert optical field to Rabi frequency, C m.
    pub dipole_moment: Option<f64>,
    pub strength_normalization: StrengthNormalization,
    pub ground_manifolds: Vec<HyperfineManifold>,
    pub excited_manifolds: Vec<HyperfineManifold>,
    pub sweep_frames: Vec<SweepFrame>,
    pub lines: Vec<HyperfineLine>,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidAtomicData {
        field: field.into(),
        reason: reason.into(),
    }
}

impl AtomicSystem {
    /// The bundled cesium D2 dataset.
    pub fn cesium_d2() -> Self {
        Self::from_toml_str(CESIUM_D2).expect("bundled cesium data is valid")
    }

    /// Raw text of the bundled cesium data file.
    pub fn cesium_d2_source() -> &'static str {
        CESIUM_D2
    }

    /// Loads and validates an atomic data file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse {
                what: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: AtomicDataFile = toml::from_str(text).map_err(|e| Error::Parse {
            what: "atomic data".into(),
            reason: e.to_string(),
        })?;
        Self::from_file(file)
    }

    /// Serializes back to the data-file format. `from_toml_str(to_toml())`
    /// reproduces every value bit-for-bit.
    pub fn to_toml(&self) -> String {
        let manifolds = self
            .ground_manifolds
            .iter()
            .map(|m| (Level::Ground, m))
            .chain(self.excited_manifolds.iter().map(|m| (Level::Excited, m)))
            .map(|(level, m)| ManifoldRecord {
                level,
                manifold: m.clone(),
            })
            .collect();
        let file = AtomicDataFile {
            schema_version: SCHEMA_VERSION,
            species: self.species_name.clone(),
            mass_kg: self.mass,
            d2_wavelength_m: self.d2_wavelength,
            natural_linewidth_hz: self.natural_linewidth_gamma0,
            excited_lifetime_s: self.excited_lifetime,
            dipole_moment_cm: self.dipole_moment,
            strength_normalization: self.strength_normalization,
            manifolds,
            sweep_frames: self.sweep_frames.clone(),
            lines: self.lines.clone(),
        };
        toml::to_string(&file).expect("atomic data always serializes")
    }

    fn from_file(file: AtomicDataFile) -> Result<Self> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", file.schema_version),
            ));
        }
        let (ground, excited): (Vec<_>, Vec<_>) = file.manifolds.into_iter().partition(|r| r.level == Level::Ground);
        let system = AtomicSystem {
            species_name: file.species,
            mass: file.mass_kg,
            d2_wavelength: file.d2_wavelength_m,
            natural_linewidth_gamma0: file.natural_linewidth_hz,
            excited_lifetime: file.excited_lifetime_s,
            dipole_moment: file.dipole_moment_cm,
            strength_normalization: file.strength_normalization,
            ground_manifolds: ground.into_iter().map(|r| r.manifold).collect(),
            excited_manifolds: excited.into_iter().map(|r| r.manifold).collect(),
            sweep_frames: file.sweep_frames,
            lines: file.lines,
        };
        system.validate()?;
        Ok(system)
    }

    fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("mass_kg", self.mass),
            ("d2_wavelength_m", self.d2_wavelength),
            ("natural_linewidth_hz", self.natural_linewidth_gamma0),
            ("excited_lifetime_s", self.excited_lifetime),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid(field, format!("must be positive, got {value}")));
            }
        }
        if let Some(d) = self.dipole_moment {
            if !(d > 0.0 && d.is_finite()) {
                return Err(invalid("dipole_moment_cm", format!("must be positive, got {d}")));
            }
        }

        let from_lifetime = 1.0 / (2.0 * std::f64::consts::PI * self.excited_lifetime);
        let mismatch = (from_lifetime / self.natural_linewidth_gamma0 - 1.0).abs();
        if mismatch > LIFETIME_LINEWIDTH_TOLERANCE {
            return Err(invalid(
                "natural_linewidth_hz",
                format!(
                    "1/(2 pi tau) = {from_lifetime:.6e} Hz differs by {:.1}% (> 5%)",
                    mismatch * 100.0
                ),
            ));
        }

        if self.ground_manifolds.is_empty() {
            return Err(invalid("manifolds", "no ground manifolds"));
        }
        if self.excited_manifolds.is_empty() {
            return Err(invalid("manifolds", "no excited manifolds"));
        }
        for (label, set) in [("ground", &self.ground_manifolds), ("excited", &self.excited_manifolds)] {
            for m in set {
                if m.degeneracy != 2 * m.f + 1 {
                    return Err(invalid(
                        "manifolds.degeneracy",
                        format!(
                            "{label} F={} has degeneracy {}, expected {}",
                            m.f,
                            m.degeneracy,
                            2 * m.f + 1
                        ),
                    ));
                }
                if !m.frequency_offset.is_finite() {
                    return Err(invalid(
                        "manifolds.frequency_offset_hz",
                        format!("{label} F={} offset is not finite", m.f),
                    ));
                }
            }
            for pair in set.windows(2) {
                if pair[1].f <= pair[0].f || pair[1].frequency_offset <= pair[0].frequency_offset {
                    return Err(invalid(
                        "manifolds",
                        format!(
                            "{label} manifolds must be listed with strictly increasing F and offset \
                             (F={} then F={})",
                            pair[0].f, pair[1].f
                        ),
                    ));
                }
            }
        }

        for line in &self.lines {
            let name = format!("{} -> {}'", line.ground_f, line.excited_f);
            if !(line.strength >= 0.0 && line.strength.is_finite()) {
                return Err(invalid(
                    "lines.strength",
                    format!("line {name} has strength {}", line.strength),
                ));
            }
            if !line.offset.is_finite() {
                return Err(invalid("lines.offset_hz", format!("line {name} offset is not finite")));
            }
            if line.ground_f.abs_diff(line.excited_f) > 1 {
                return Err(invalid(
                    "lines",
                    format!("line {name} violates the dipole selection rule |F - F'| <= 1"),
                ));
            }
            if self.ground(line.ground_f).is_none() {
                return Err(invalid("lines.ground_F", format!("line {name}: unknown ground F")));
            }
            if self.excited(line.excited_f).is_none() {
                return Err(invalid("lines.excited_F", format!("line {name}: unknown excited F'")));
            }
        }
        for pair in self.lines.windows(2) {
            if pair[0].ground_f == pair[1].ground_f && pair[1].offset <= pair[0].offset {
                return Err(invalid(
                    "lines.offset_hz",
                    format!("lines of ground F={} must be strictly ordered", pair[0].ground_f),
                ));
            }
        }

        for frame in &self.sweep_frames {
            let reference = self
                .lines
                .iter()
                .find(|l| l.ground_f == frame.ground_f && l.excited_f == frame.reference_excited_f)
                .ok_or_else(|| {
                    invalid(
                        "sweep_frames",
                        format!(
                            "reference line {} -> {}' is not in the line table",
                            frame.ground_f, frame.reference_excited_f
                        ),
                    )
                })?;
            if reference.offset != 0.0 {
                return Err(invalid(
                    "lines.offset_hz",
                    format!(
                        "reference line {} -> {}' must sit at offset 0",
                        frame.ground_f, frame.reference_excited_f
                    ),
                ));
            }
            let ref_excited = self.excited(frame.reference_excited_f).expect("checked above");
            for line in self.lines_for(frame.ground_f) {
                let expected = self.excited(line.excited_f).expect("checked above").frequency_offset
                    - ref_excited.frequency_offset;
                if (line.offset - expected).abs() > OFFSET_CONSISTENCY_HZ {
                    return Err(invalid(
                        "lines.offset_hz",
                        format!(
                            "line {} -> {}' at {} Hz disagrees with the manifold table ({} Hz)",
                            line.ground_f, line.excited_f, line.offset, expected
                        ),
                    ));
                }
            }
        }

        for g in &self.ground_manifolds {
            let lines: Vec<_> = self.lines_for(g.f).collect();
            if lines.is_empty() {
                continue;
            }
            if !self.sweep_frames.iter().any(|s| s.ground_f == g.f) {
                return Err(invalid(
                    "sweep_frames",
                    format!("ground F={} has lines but no sweep frame", g.f),
                ));
            }
            if self.strength_normalization == StrengthNormalization::PerGroundSum {
                let sum: f64 = lines.iter().map(|l| l.strength).sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(invalid(
                        "lines.strength",
                        format!("strengths of ground F={} sum to {sum}, expected 1", g.f),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn ground(&self, f: u32) -> Option<&HyperfineManifold> {
        self.ground_manifolds.iter().find(|m| m.f == f)
    }

    pub fn excited(&self, f: u32) -> Option<&HyperfineManifold> {
        self.excited_manifolds.iter().find(|m| m.f == f)
    }

    /// Lines starting from ground manifold `ground_f`, in increasing offset.
    pub fn lines_for(&self, ground_f: u32) -> impl Iterator<Item = &HyperfineLine> {
        self.lines.iter().filter(move |l| l.ground_f == ground_f)
    }

    /// Like [`lines_for`](Self::lines_for) but errors on an unknown manifold.
    pub fn require_lines(&self, ground_f: u32) -> Result<Vec<&HyperfineLine>> {
        if self.ground(ground_f).is_none() {
            return Err(Error::UnknownManifold(ground_f));
        }
        Ok(self.lines_for(ground_f).collect())
    }

    /// Optical frequency of the D2 line, Hz.
    pub fn d2_frequency(&self) -> f64 {
        SPEED_OF_LIGHT / self.d2_wavelength
    }

    /// Ground-state hyperfine splitting between the outermost ground manifolds, Hz.
    pub fn ground_splitting(&self) -> f64 {
        let first = self.ground_manifolds.first().expect("validated non-empty");
        let last = self.ground_manifolds.last().expect("validated non-empty");
        last.frequency_offset - first.frequency_offset
    }
}

/// 1-sigma Gaussian Doppler width of the D2 line at `temperature`, Hz.
///
/// `sigma = (f0 / c) sqrt(k_B T / m)`.
pub fn doppler_sigma(system: &AtomicSystem, temperature: f64) -> Result<f64> {
    ensure_positive("temperature", temperature)?;
    let thermal_speed = (BOLTZMANN * temperature / system.mass).sqrt();
    Ok(thermal_speed / system.d2_wavelength)
}

/// Doppler FWHM at `temperature`, Hz.
pub fn doppler_fwhm(system: &AtomicSystem, temperature: f64) -> Result<f64> {
    Ok(crate::constants::GAUSSIAN_FWHM_PER_SIGMA * doppler_sigma(system, temperature)?)
}

/// How thermal ground populations are apportioned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationWeighting {
    /// `p_F = (2F+1) / sum (2F'+1)`.
    #[default]
    Degeneracy,
    /// Every ground manifold equally populated.
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub temperature: f64,
    pub ground_populations: BTreeMap<u32, f64>,
}

impl ThermalState {
    pub fn population(&self, f: u32) -> Option<f64> {
        self.ground_populations.get(&f).copied()
    }
}

/// Thermal ground-state populations.
///
/// At any temperature of interest the ground splitting (~9 GHz for Cs) is tiny
/// next to `k_B T / h` (~7 THz at 363 K), so the Boltzmann factor is dropped.
pub fn thermal_ground_populations(
    system: &AtomicSystem,
    temperature: f64,
    weighting: PopulationWeighting,
) -> Result<ThermalState> {
    ensure_positive("temperature", temperature)?;
    debug_assert!(system.ground_splitting() * crate::constants::PLANCK < 1e-2 * BOLTZMANN * temperature);
    let weight = |m: &HyperfineManifold| match weighting {
        PopulationWeighting::Degeneracy => f64::from(m.degeneracy),
        PopulationWeighting::Equal => 1.0,
    };
    let total: f64 = system.ground_manifolds.iter().map(weight).sum();
    let ground_populations = system
        .ground_manifolds
        .iter()
        .map(|m| (m.f, weight(m) / total))
        .collect();
    Ok(ThermalState {
        temperature,
        ground_populations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bundled_cesium_has_expected_structure() {
        let cs = AtomicSystem::cesium_d2();
        let ground: Vec<_> = cs.ground_manifolds.iter().map(|m| m.f).collect();
        let excited: Vec<_> = cs.excited_manifolds.iter().map(|m| m.f).collect();
        assert_eq!(ground, [3, 4]);
        assert_eq!(excited, [2, 3, 4, 5]);
        assert_relative_eq!(cs.ground_splitting(), 9.192_631_77e9, max_relative = 1e-12);
        assert_eq!(cs.lines_for(3).count(), 3);
        assert_eq!(cs.lines_for(4).count(), 3);
    }

    #[test]
    fn cesium_lifetime_matches_linewidth() {
        let cs = AtomicSystem::cesium_d2();
        let from_tau = 1.0 / (2.0 * std::f64::consts::PI * cs.excited_lifetime);
        assert!((from_tau / cs.natural_linewidth_gamma0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn doppler_width_at_cell_temperature() {
        let cs = AtomicSystem::cesium_d2();
        let sigma = doppler_sigma(&cs, 363.0).unwrap();
        assert!((sigma - 177e6).abs() < 1e6, "sigma = {sigma}");
        let fwhm = doppler_fwhm(&cs, 363.0).unwrap();
        assert!((fwhm - 416e6).abs() < 2e6, "fwhm = {fwhm}");
        // independent: (f0/c) sqrt(kT/m) evaluated by hand = 203.306 MHz
        let hot = doppler_sigma(&cs, 480.0).unwrap();
        assert_relative_eq!(hot, 203.3058e6, max_relative = 1e-5);
    }

    #[test]
    fn doppler_sigma_scales_as_sqrt_t() {
        let cs = AtomicSystem::cesium_d2();
        let a = doppler_sigma(&cs, 100.0).unwrap();
        let b = doppler_sigma(&cs, 400.0).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-14);
    }

    #[test]
    fn doppler_rejects_non_positive_temperature() {
        let cs = AtomicSystem::cesium_d2();
        assert!(matches!(doppler_sigma(&cs, 0.0), Err(Error::Domain { .. })));
        assert!(matches!(doppler_sigma(&cs, -3.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn populations_by_degeneracy_and_equal() {
        let cs = AtomicSystem::cesium_d2();
        let deg = thermal_ground_populations(&cs, 363.0, PopulationWeighting::Degeneracy).unwrap();
        assert_eq!(deg.population(3), Some(7.0 / 16.0));
        assert_eq!(deg.population(4), Some(9.0 / 16.0));
        let eq = thermal_ground_populations(&cs, 363.0, PopulationWeighting::Equal).unwrap();
        assert_eq!(eq.population(3), Some(0.5));
        assert_eq!(eq.population(4), Some(0.5));
        let total: f64 = deg.ground_populations.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_manifold_system_is_fully_populated() {
        let mut cs = AtomicSystem::cesium_d2();
        cs.ground_manifolds.truncate(1);
        let p = thermal_ground_populations(&cs, 300.0, PopulationWeighting::Degeneracy).unwrap();
        assert_eq!(p.population(3), Some(1.0));
    }

    #[test]
    fn negative_strength_is_rejected_by_name() {
        let text = AtomicSystem::cesium_d2_source().replacen("strength = 0.375", "strength = -1.0", 1);
        let err = AtomicSystem::from_toml_str(&text).unwrap_err();
        match err {
            Error::InvalidAtomicData { field, .. } => assert_eq!(field, "lines.strength"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_degeneracy_is_rejected_by_name() {
        let text = AtomicSystem::cesium_d2_source().replacen("degeneracy = 7", "degeneracy = 8", 1);
        let err = AtomicSystem::from_toml_str(&text).unwrap_err();
        match err {
            Error::InvalidAtomicData { field, .. } => assert_eq!(field, "manifolds.degeneracy"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        assert!(matches!(
            AtomicSystem::from_toml_str("mass_kg = \"heavy\""),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn selection_rule_is_enforced() {
        let text =
            AtomicSystem::cesium_d2_source().replacen("ground_F = 3\nexcited_F = 2", "ground_F = 3\nexcited_F = 5", 1);
        assert!(AtomicSystem::from_toml_str(&text).is_err());
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let cs = AtomicSystem::cesium_d2();
        let again = AtomicSystem::from_toml_str(&cs.to_toml()).unwrap();
        assert_eq!(cs, again);
        assert_eq!(cs.mass.to_bits(), again.mass.to_bits());
        for (a, b) in cs.lines.iter().zip(&again.lines) {
            assert_eq!(a.strength.to_bits(), b.strength.to_bits());
            assert_eq!(a.offset.to_bits(), b.offset.to_bits());
        }
    }
}
