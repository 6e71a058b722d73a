//! Parameter estimation for every model in the analysis chain.
//!
//! All curve fits share the damped least-squares engine in [`lm`] and report a
//! [`FitResult`]. Uncertainties are 1-sigma from the linearised covariance; when
//! the data carry no per-point sigmas the covariance is scaled by the reduced
//! chi-square.

pub mod calibration;
pub mod efficiency;
pub mod liad;
pub mod lm;
pub mod power;
pub mod satspec;
pub mod transmission;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use calibration::{calibrate_frequency_axis, CalibrationMap};
pub use efficiency::{extract_pumping_efficiency, EfficiencyEstimate};
pub use liad::{fit_liad_transient, LiadModelForm, LiadPoint, LiadTransientParams};
pub use lm::{LmOptions, Termination};
pub use power::{fit_power_broadening, BroadeningPoint};
pub use satspec::{fit_satspec, SatSpecFitOptions};
pub use transmission::{fit_transmission, initial_guess, TransmissionFitOptions};

use lm::{covariance, CurveModel, LmOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: IndexMap<String, f64>,
    /// 1-sigma; infinite (serialized as `null`) when the data do not constrain
    /// the parameter.
    pub uncertainties: IndexMap<String, f64>,
    /// Quantities computed from the fitted parameters (peak values, widths, ...).
    pub derived: IndexMap<String, f64>,
    /// `sqrt(sum r_i^2)` of the weighted residuals.
    pub residual_norm: f64,
    pub reduced_chi_square: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// Fitted value of `name`; panics on an unknown name.
    pub fn value(&self, name: &str) -> f64 {
        *self
            .parameters
            .get(name)
            .unwrap_or_else(|| panic!("no fitted parameter `{name}`"))
    }

    pub fn uncertainty(&self, name: &str) -> f64 {
        *self
            .uncertainties
            .get(name)
            .unwrap_or_else(|| panic!("no fitted parameter `{name}`"))
    }

    pub(crate) fn from_outcome<M: CurveModel>(model: &M, outcome: &LmOutcome, has_sigmas: bool) -> Self {
        let specs = model.parameters();
        let n = specs.len();
        let m = model.n_points();
        let cov = covariance(&outcome.jacobian, outcome.cost, !has_sigmas);
        let dof = m.saturating_sub(n).max(1) as f64;
        let mut warnings = Vec::new();
        for &k in &outcome.pinned {
            warnings.push(format!("`{}` finished on the boundary of its range", specs[k].name));
        }
        if !outcome.converged() {
            warnings.push(format!("fit did not converge ({:?})", outcome.termination));
        }
        FitResult {
            parameters: specs
                .iter()
                .zip(&outcome.params)
                .map(|(s, &v)| (s.name.clone(), v))
                .collect(),
            uncertainties: specs
                .iter()
                .enumerate()
                .map(|(k, s)| (s.name.clone(), cov[(k, k)].max(0.0).sqrt()))
                .collect(),
            derived: IndexMap::new(),
            residual_norm: (2.0 * outcome.cost).sqrt(),
            reduced_chi_square: 2.0 * outcome.cost / dof,
            n_points: m,
            iterations: outcome.iterations,
            converged: outcome.converged(),
            termination: outcome.termination,
            warnings,
        }
    }
}
