//! Raman-memory figures of merit and a feasibility verdict built from them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::transit::FibreGeometry;

pub const DEFAULT_MARGIN: f64 = 10.0;
/// `Omega / Delta` above which the adiabatic-regime warning is raised.
pub const ADIABATIC_WARNING_RATIO: f64 = 0.5;

/// Inputs of the memory figures of merit. All rates and widths in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryBudget {
    /// Resonant optical depth `d`.
    pub od: f64,
    /// `gamma`
    pub homogeneous_gamma: f64,
    /// `gamma_i`
    pub inhomogeneous_gamma: f64,
    /// Signal bandwidth `delta`.
    pub bandwidth_delta: f64,
    /// Control Rabi frequency `Omega`.
    pub rabi_omega: f64,
    /// Raman detuning `Delta`.
    pub detuning_delta: f64,
    /// s
    pub storage_time: f64,
    /// s
    pub pulse_duration: f64,
}

impl MemoryBudget {
    /// `d* = d gamma / gamma_i`.
    pub fn effective_od(&self) -> f64 {
        self.od * self.homogeneous_gamma / self.inhomogeneous_gamma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamanCoupling {
    pub c_squared: f64,
    /// `C^2 >= 1`
    pub efficient: bool,
    pub omega_over_delta: f64,
    pub warnings: Vec<String>,
}

/// `C^2 = d (gamma / delta) (Omega / Delta)^2`.
pub fn raman_coupling(budget: &MemoryBudget) -> Result<RamanCoupling> {
    ensure_non_negative("od", budget.od)?;
    ensure_positive("homogeneous_gamma", budget.homogeneous_gamma)?;
    ensure_positive("bandwidth_delta", budget.bandwidth_delta)?;
    ensure_positive("detuning_delta", budget.detuning_delta)?;
    ensure_non_negative("rabi_omega", budget.rabi_omega)?;
    let ratio = budget.rabi_omega / budget.detuning_delta;
    let c_squared = budget.od * budget.homogeneous_gamma / budget.bandwidth_delta * ratio * ratio;
    let mut warnings = Vec::new();
    if ratio > ADIABATIC_WARNING_RATIO {
        warnings.push(format!(
            "Omega/Delta = {ratio:.3} exceeds {ADIABATIC_WARNING_RATIO}; far-detuned Raman regime is questionable"
        ));
    }
    Ok(RamanCoupling {
        c_squared,
        efficient: c_squared >= 1.0,
        omega_over_delta: ratio,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdThreshold {
    /// `delta / gamma_i`
    pub ratio: f64,
    pub margin: f64,
    /// `margin delta / gamma_i`
    pub threshold: f64,
    pub effective_od: Option<f64>,
    /// `d* / threshold`
    pub headroom: Option<f64>,
    pub passes: Option<bool>,
}

/// Effective optical depth needed to cover the signal bandwidth,
/// `d* >> delta / gamma_i`, made concrete with `margin`.
pub fn required_effective_od(
    bandwidth_delta: f64,
    inhomogeneous_gamma: f64,
    margin: f64,
    effective_od: Option<f64>,
) -> Result<OdThreshold> {
    ensure_positive("bandwidth_delta", bandwidth_delta)?;
    ensure_positive("inhomogeneous_gamma", inhomogeneous_gamma)?;
    if !(margin >= 1.0 && margin.is_finite()) {
        return Err(Error::Domain {
            quantity: "margin",
            requirement: ">= 1",
            value: margin,
        });
    }
    if let Some(d) = effective_od {
        ensure_non_negative("effective_od", d)?;
    }
    let ratio = bandwidth_delta / inhomogeneous_gamma;
    let threshold = margin * ratio;
    Ok(OdThreshold {
        ratio,
        margin,
        threshold,
        effective_od,
        headroom: effective_od.map(|d| d / threshold),
        passes: effective_od.map(|d| d >= threshold),
    })
}

/// `B = storage_time / pulse_duration`.
pub fn time_bandwidth_product(storage_time: f64, pulse_duration: f64) -> Result<f64> {
    ensure_positive("storage_time", storage_time)?;
    ensure_positive("pulse_duration", pulse_duration)?;
    Ok(storage_time / pulse_duration)
}

/// Partially known inputs, as read from presets and upstream reports.
///
/// `sources` names the measurement or fit behind each field; fields without
/// an entry are reported as `"configured"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryInputs {
    pub effective_od: Option<f64>,
    pub resonant_od: Option<f64>,
    pub homogeneous_gamma: Option<f64>,
    pub inhomogeneous_gamma: Option<f64>,
    pub bandwidth_delta: Option<f64>,
    pub rabi_omega: Option<f64>,
    pub detuning_delta: Option<f64>,
    /// Falls back to `transit_mean` when absent.
    pub storage_time: Option<f64>,
    pub pulse_duration: Option<f64>,
    /// Mean time in the beam before a wall collision, s.
    pub transit_mean: Option<f64>,
    pub pump_efficiency: Option<f64>,
    pub margin: Option<f64>,
    #[serde(default)]
    pub sources: BTreeMap<String, String>,
}

impl MemoryInputs {
    fn source(&self, field: &str) -> String {
        self.sources.get(field).cloned().unwrap_or_else(|| "configured".into())
    }

    /// Completes the budget, listing every missing field at once.
    pub fn budget(&self) -> Result<MemoryBudget> {
        let mut missing = Vec::new();
        let mut need = |name: &str, v: Option<f64>| {
            if v.is_none() {
                missing.push(name.to_string());
            }
            v.unwrap_or(f64::NAN)
        };
        let gamma = need("homogeneous_gamma", self.homogeneous_gamma);
        let gamma_i = need("inhomogeneous_gamma", self.inhomogeneous_gamma);
        let delta = need("bandwidth_delta", self.bandwidth_delta);
        let omega = need("rabi_omega", self.rabi_omega);
        let big_delta = need("detuning_delta", self.detuning_delta);
        let pulse = need("pulse_duration", self.pulse_duration);
        if self.storage_time.is_none() && self.transit_mean.is_none() {
            missing.push("storage_time (or transit_mean)".into());
        }
        if self.effective_od.is_none() && self.resonant_od.is_none() {
            missing.push("effective_od (or resonant_od)".into());
        }
        if !missing.is_empty() {
            return Err(Error::MissingInputs(missing));
        }
        if let (Some(_), Some(_)) = (self.effective_od, self.resonant_od) {
            return Err(Error::InvalidParameters(
                "give either effective_od or resonant_od, not both".into(),
            ));
        }
        ensure_positive("homogeneous_gamma", gamma)?;
        ensure_positive("inhomogeneous_gamma", gamma_i)?;
        let od = match (self.effective_od, self.resonant_od) {
            (Some(d_star), _) => {
                ensure_non_negative("effective_od", d_star)?;
                d_star * gamma_i / gamma
            }
            (None, Some(d)) => d,
            (None, None) => unreachable!("checked above"),
        };
        Ok(MemoryBudget {
            od,
            homogeneous_gamma: gamma,
            inhomogeneous_gamma: gamma_i,
            bandwidth_delta: delta,
            rabi_omega: omega,
            detuning_delta: big_delta,
            storage_time: self.storage_time.or(self.transit_mean).expect("checked above"),
            pulse_duration: pulse,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    Infeasible,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Feasible => "feasible",
            Verdict::Infeasible => "infeasible",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub name: String,
    pub value: f64,
    pub requirement: Option<String>,
    /// `None` for informational lines that do not enter the verdict.
    pub passed: Option<bool>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub verdict: Verdict,
    pub failing: Vec<String>,
    pub budget: MemoryBudget,
    pub coupling: RamanCoupling,
    pub od_threshold: OdThreshold,
    pub time_bandwidth_product: f64,
    pub lines: Vec<ReportLine>,
    pub warnings: Vec<String>,
}

/// Checks `C^2 >= 1` and `d* >= margin delta / gamma_i`; everything else is
/// reported alongside for context.
pub fn feasibility_report(inputs: &MemoryInputs, geometry: Option<&FibreGeometry>) -> Result<FeasibilityReport> {
    let budget = inputs.budget()?;
    let margin = inputs.margin.unwrap_or(DEFAULT_MARGIN);
    let coupling = raman_coupling(&budget)?;
    let d_star = budget.effective_od();
    let od_threshold = required_effective_od(budget.bandwidth_delta, budget.inhomogeneous_gamma, margin, Some(d_star))?;
    let tbp = time_bandwidth_product(budget.storage_time, budget.pulse_duration)?;

    let od_source = if inputs.effective_od.is_some() {
        inputs.source("effective_od")
    } else {
        inputs.source("resonant_od")
    };
    let storage_source = if inputs.storage_time.is_some() {
        inputs.source("storage_time")
    } else {
        inputs.source("transit_mean")
    };
    let mut lines = vec![
        ReportLine {
            name: "raman_coupling_c2".into(),
            value: coupling.c_squared,
            requirement: Some(">= 1".into()),
            passed: Some(coupling.efficient),
            source: format!("{od_source}; rabi_omega: {}", inputs.source("rabi_omega")),
        },
        ReportLine {
            name: "effective_od".into(),
            value: d_star,
            requirement: Some(format!(">= {:.4} ({margin} x delta/gamma_i)", od_threshold.threshold)),
            passed: od_threshold.passes,
            source: od_source.clone(),
        },
        ReportLine {
            name: "resonant_od".into(),
            value: budget.od,
            requirement: None,
            passed: None,
            source: od_source,
        },
        ReportLine {
            name: "time_bandwidth_product".into(),
            value: tbp,
            requirement: None,
            passed: None,
            source: format!("{storage_source}; pulse_duration: {}", inputs.source("pulse_duration")),
        },
    ];
    if let Some(t) = inputs.transit_mean {
        ensure_positive("transit_mean", t)?;
        lines.push(ReportLine {
            name: "transit_limited_lifetime_s".into(),
            value: t,
            requirement: None,
            passed: None,
            source: inputs.source("transit_mean"),
        });
    }
    if let Some(e) = inputs.pump_efficiency {
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::Domain {
                quantity: "pump_efficiency",
                requirement: "in [0, 1]",
                value: e,
            });
        }
        lines.push(ReportLine {
            name: "pump_efficiency".into(),
            value: e,
            requirement: None,
            passed: None,
            source: inputs.source("pump_efficiency"),
        });
    }
    if let Some(g) = geometry {
        g.validate()?;
        lines.push(ReportLine {
            name: "fibre_propagation_transmission".into(),
            value: g.propagation_transmission(),
            requirement: None,
            passed: None,
            source: format!("{} m x {} dB/m", g.length, g.loss_db_per_m),
        });
        lines.push(ReportLine {
            name: "fibre_total_transmission".into(),
            value: g.total_transmission(),
            requirement: None,
            passed: None,
            source: format!("propagation x {} in-coupling", g.coupling_efficiency),
        });
    }

    let failing: Vec<String> = lines
        .iter()
        .filter(|l| l.passed == Some(false))
        .map(|l| l.name.clone())
        .collect();
    Ok(FeasibilityReport {
        verdict: if failing.is_empty() {
            Verdict::Feasible
        } else {
            Verdict::Infeasible
        },
        failing,
        budget,
        warnings: coupling.warnings.clone(),
        coupling,
        od_threshold,
        time_bandwidth_product: tbp,
        lines,
    })
}

impl FeasibilityReport {
    pub fn render_text(&self) -> String {
        let mut out = format!("verdict: {}\n", self.verdict);
        if !self.failing.is_empty() {
            out += &format!("failing: {}\n", self.failing.join(", "));
        }
        for l in &self.lines {
            let status = match l.passed {
                Some(true) => "pass",
                Some(false) => "FAIL",
                None => "info",
            };
            out += &format!("[{status}] {} = {:.6e}", l.name, l.value);
            if let Some(r) = &l.requirement {
                out += &format!(" (need {r})");
            }
            out += &format!("  <- {}\n", l.source);
        }
        for w in &self.warnings {
            out += &format!("warning: {w}\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn budget() -> MemoryBudget {
        MemoryBudget {
            od: 1e4,
            homogeneous_gamma: 5.2e6,
            inhomogeneous_gamma: 420e6,
            bandwidth_delta: 1.5e9,
            rabi_omega: 3e9,
            detuning_delta: 10e9,
            storage_time: 100e-9,
            pulse_duration: 300e-12,
        }
    }

    fn reference_inputs() -> MemoryInputs {
        MemoryInputs {
            effective_od: Some(300.0),
            homogeneous_gamma: Some(5.2e6),
            inhomogeneous_gamma: Some(420e6),
            bandwidth_delta: Some(1.5e9),
            rabi_omega: Some(3e9),
            detuning_delta: Some(15.2e9),
            pulse_duration: Some(300e-12),
            transit_mean: Some(100e-9),
            pump_efficiency: Some(0.9),
            ..Default::default()
        }
    }

    #[test]
    fn coupling_examples() {
        let c = raman_coupling(&budget()).unwrap();
        assert!((c.c_squared - 3.12).abs() < 1e-12, "{}", c.c_squared);
        assert!(c.efficient);
        let zero = raman_coupling(&MemoryBudget {
            rabi_omega: 0.0,
            ..budget()
        })
        .unwrap();
        assert_eq!(zero.c_squared, 0.0);
        let twice_d = raman_coupling(&MemoryBudget { od: 2e4, ..budget() }).unwrap();
        assert!((twice_d.c_squared / c.c_squared - 2.0).abs() < 1e-12);
        let twice_detuning = raman_coupling(&MemoryBudget {
            detuning_delta: 20e9,
            ..budget()
        })
        .unwrap();
        assert!((twice_detuning.c_squared / c.c_squared - 0.25).abs() < 1e-12);
        assert!(raman_coupling(&MemoryBudget {
            bandwidth_delta: 0.0,
            ..budget()
        })
        .is_err());
        assert!(raman_coupling(&MemoryBudget {
            detuning_delta: 0.0,
            ..budget()
        })
        .is_err());
    }

    #[test]
    fn adiabatic_warning() {
        let c = raman_coupling(&MemoryBudget {
            rabi_omega: 6e9,
            ..budget()
        })
        .unwrap();
        assert_eq!(c.warnings.len(), 1);
        assert!(raman_coupling(&budget()).unwrap().warnings.is_empty());
    }

    #[test]
    fn threshold_examples() {
        let t = required_effective_od(1.5e9, 420e6, 1.0, None).unwrap();
        assert!((t.ratio - 3.5714).abs() < 1e-4);
        assert_eq!(t.ratio.round(), 4.0);
        let same = required_effective_od(420e6, 420e6, 10.0, None).unwrap();
        assert_eq!(same.threshold, 10.0);
        let pass = required_effective_od(1.5e9, 420e6, 10.0, Some(300.0)).unwrap();
        assert_eq!(pass.passes, Some(true));
        assert!(required_effective_od(1.5e9, 420e6, 0.5, None).is_err());
    }

    #[test]
    fn tbp_examples() {
        let b = time_bandwidth_product(100e-9, 300e-12).unwrap();
        assert!((b - 333.333).abs() < 1e-3);
        assert_eq!(time_bandwidth_product(1e-6, 1e-6).unwrap(), 1.0);
        assert!(time_bandwidth_product(0.0, 1.0).is_err());
    }

    #[test]
    fn reference_preset_is_feasible() {
        let r = feasibility_report(&reference_inputs(), Some(&FibreGeometry::kagome_reference())).unwrap();
        assert_eq!(r.verdict, Verdict::Feasible);
        assert!(r.coupling.efficient);
        assert!(r.od_threshold.headroom.unwrap() > 1.0);
        let fibre = r
            .lines
            .iter()
            .find(|l| l.name == "fibre_propagation_transmission")
            .unwrap();
        assert!((fibre.value - 0.955).abs() < 1e-3);
        assert!(r.render_text().starts_with("verdict: feasible"));
    }

    #[test]
    fn zero_od_is_infeasible_and_named() {
        let inputs = MemoryInputs {
            effective_od: Some(0.0),
            ..reference_inputs()
        };
        let r = feasibility_report(&inputs, None).unwrap();
        assert_eq!(r.verdict, Verdict::Infeasible);
        assert!(r.failing.contains(&"effective_od".to_string()));
        assert!(r.failing.contains(&"raman_coupling_c2".to_string()));
    }

    #[test]
    fn missing_inputs_are_enumerated() {
        let inputs = MemoryInputs {
            effective_od: Some(300.0),
            ..Default::default()
        };
        match feasibility_report(&inputs, None) {
            Err(Error::MissingInputs(names)) => {
                assert!(names.contains(&"rabi_omega".to_string()));
                assert!(names.contains(&"pulse_duration".to_string()));
                assert!(names.iter().any(|n| n.starts_with("storage_time")));
                assert!(!names.iter().any(|n| n.starts_with("effective_od")));
            }
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn coupling_is_homogeneous(k in 1e-3..1e3f64) {
            let b = budget();
            let c = raman_coupling(&b).unwrap().c_squared;
            let widths = raman_coupling(&MemoryBudget {
                homogeneous_gamma: k * b.homogeneous_gamma,
                bandwidth_delta: k * b.bandwidth_delta,
                ..b
            }).unwrap().c_squared;
            let drive = raman_coupling(&MemoryBudget {
                rabi_omega: k * b.rabi_omega,
                detuning_delta: k * b.detuning_delta,
                ..b
            }).unwrap().c_squared;
            prop_assert!((widths / c - 1.0).abs() < 1e-12);
            prop_assert!((drive / c - 1.0).abs() < 1e-12);
        }

        #[test]
        fn verdict_is_monotone_in_od_and_omega(
            d1 in 0.0..1e3f64, d2 in 0.0..1e3f64, w1 in 0.0..1e10f64, w2 in 0.0..1e10f64,
        ) {
            let verdict = |d: f64, w: f64| {
                let inputs = MemoryInputs { effective_od: Some(d), rabi_omega: Some(w), ..reference_inputs() };
                feasibility_report(&inputs, None).unwrap().verdict
            };
            let (dl, dh) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            let (wl, wh) = if w1 < w2 { (w1, w2) } else { (w2, w1) };
            if verdict(dl, wl) == Verdict::Feasible {
                prop_assert_eq!(verdict(dh, wl), Verdict::Feasible);
                prop_assert_eq!(verdict(dl, wh), Verdict::Feasible);
            }
        }
    }
}
