//! Run configuration: one TOML file, paths resolved against its directory,
//! individual fields overridable from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hcfmem_core::atomic::PopulationWeighting;
use hcfmem_core::fitting::LiadModelForm;
use hcfmem_core::memory::MemoryInputs;
use hcfmem_core::transit::FibreGeometry;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Atomic data file; the bundled caesium D2 table when absent.
    pub atomic_data: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub thermal: ThermalConfig,
    pub fibre: FibreGeometry,
    pub fit: FitConfig,
    pub mc: McConfig,
    pub spectrum: SpectrumConfig,
    pub pump: PumpSection,
    pub memory: MemorySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            atomic_data: None,
            output_dir: PathBuf::from("out"),
            thermal: ThermalConfig::default(),
            fibre: FibreGeometry::kagome_reference(),
            fit: FitConfig::default(),
            mc: McConfig::default(),
            spectrum: SpectrumConfig::default(),
            pump: PumpSection::default(),
            memory: MemorySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalConfig {
    /// K
    pub temperature: f64,
    pub population_weighting: PopulationWeighting,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        ThermalConfig {
            temperature: 363.0,
            population_weighting: PopulationWeighting::Degeneracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Transmission below which points are excluded; `0` disables the mask.
    pub saturation_mask: f64,
    pub liad_model: LiadModelForm,
    /// Pump `s = I/I_sat` used to turn the fitted dip width into `Gamma_0`.
    pub pump_saturation: f64,
    pub allow_unconverged: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iterations: 200,
            saturation_mask: 0.02,
            liad_model: LiadModelForm::SaturatingRiseDecay,
            pump_saturation: 0.0,
            allow_unconverged: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_samples: Option<usize>,
    /// Required by every randomised command; there is no clock-based default.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub ground_f: u32,
    pub effective_od: f64,
    /// Hz; derived from the thermal temperature when absent.
    pub doppler_sigma: Option<f64>,
    pub global_offset: f64,
    pub baseline: f64,
    /// Hz, sweep frame.
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    /// Additive Gaussian noise on transmission (needs `mc.seed` when > 0).
    pub noise: f64,
    /// Sat-spec only: dip contrasts by resonance id.
    pub dip_contrasts: BTreeMap<String, f64>,
    /// Sat-spec only: unbroadened dip width, Hz.
    pub homogeneous_linewidth: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            ground_f: 3,
            effective_od: 5.7,
            doppler_sigma: None,
            global_offset: 0.0,
            baseline: 1.0,
            start: -800e6,
            stop: 400e6,
            points: 500,
            noise: 0.0,
            dip_contrasts: BTreeMap::new(),
            homogeneous_linewidth: 6e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpSection {
    /// Hz
    pub rabi_frequency: f64,
    /// Hz
    pub detuning: f64,
    pub branching_to_dark: f64,
    pub pumped_from_f: u32,
    /// Sweep grid, Hz.
    pub sweep_max: f64,
    pub sweep_points: usize,
    /// Transit report from `transit-mc`; a fresh simulation runs when absent.
    pub transit_report: Option<PathBuf>,
}

impl Default for PumpSection {
    fn default() -> Self {
        PumpSection {
            rabi_frequency: 700e6,
            detuning: 0.0,
            branching_to_dark: 0.5,
            pumped_from_f: 3,
            sweep_max: 1e9,
            sweep_points: 21,
            transit_report: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemorySection {
    /// Directly configured values; upstream reports take precedence.
    pub budget: MemoryInputs,
    /// Upstream reports whose results fill in the inputs above.
    pub reports: UpstreamReports,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpstreamReports {
    /// `fit-spectrum` report: supplies `effective_od`.
    pub transmission_fit: Option<PathBuf>,
    /// `transit-mc` report: supplies `transit_mean`.
    pub transit: Option<PathBuf>,
    /// `pump-efficiency` report: supplies `pump_efficiency`.
    pub pump: Option<PathBuf>,
    /// `fit-power` or `fit-satspec` report: supplies `homogeneous_gamma`.
    pub linewidth_fit: Option<PathBuf>,
}

impl RunConfig {
    /// Reads `path`, or returns the defaults rooted at the working directory.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Failure::input(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.atomic_data.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
        if let Some(p) = self.pump.transit_report.as_mut() {
            fix(p);
        }
        let r = &mut self.memory.reports;
        for p in [
            &mut r.transmission_fit,
            &mut r.transit,
            &mut r.pump,
            &mut r.linewidth_fit,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Checks that every referenced input path exists.
    pub fn validate_paths(&self) -> Result<(), Failure> {
        if let Some(p) = &self.atomic_data {
            if !p.is_file() {
                return Err(Failure::input(format!("atomic_data: no such file {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64, Failure> {
        self.mc
            .seed
            .ok_or_else(|| Failure::input("mc.seed is required for randomised commands (set it or pass --seed)"))
    }
}
