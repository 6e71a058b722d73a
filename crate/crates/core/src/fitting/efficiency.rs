//! Pumping efficiency from the drop of the probed manifold's optical depth.
//!
//! With the Doppler width unchanged by pumping, the optical depth on lines
//! from `F` is proportional to the population of `F`; the fraction left behind
//! is `r = d*_pumped / d*_unpumped` and the efficiency is `1 - p_F r`.

use serde::{Deserialize, Serialize};

use crate::atomic::ThermalState;
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};

/// Relative excess of `od_pumped` over `od_unpumped` tolerated as noise.
pub const OD_EXCESS_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEstimate {
    pub efficiency: f64,
    /// `od_pumped / od_unpumped` as measured, before any clamping.
    pub remaining_fraction: f64,
    pub initial_population: f64,
    pub warnings: Vec<String>,
}

pub fn extract_pumping_efficiency(
    od_unpumped: f64,
    od_pumped: f64,
    initial: &ThermalState,
    pumped_from_f: u32,
) -> Result<EfficiencyEstimate> {
    ensure_positive("od_unpumped", od_unpumped)?;
    ensure_non_negative("od_pumped", od_pumped)?;
    let p = initial
        .population(pumped_from_f)
        .ok_or(Error::UnknownManifold(pumped_from_f))?;
    let r = od_pumped / od_unpumped;
    let mut warnings = Vec::new();
    let used = if r > 1.0 + OD_EXCESS_TOLERANCE {
        return Err(Error::InconsistentData(format!(
            "pumped optical depth {od_pumped} exceeds unpumped {od_unpumped} by more than 1%"
        )));
    } else if r > 1.0 {
        warnings.push(format!(
            "pumped optical depth exceeds unpumped by {:.3}%; treated as no pumping",
            100.0 * (r - 1.0)
        ));
        1.0
    } else {
        r
    };
    Ok(EfficiencyEstimate {
        efficiency: (1.0 - p * used).clamp(0.0, 1.0),
        remaining_fraction: r,
        initial_population: p,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomic::{thermal_ground_populations, AtomicSystem, PopulationWeighting};
    use proptest::prelude::*;

    fn thermal() -> ThermalState {
        thermal_ground_populations(&AtomicSystem::cesium_d2(), 363.0, PopulationWeighting::Degeneracy).unwrap()
    }

    #[test]
    fn limits() {
        let s = thermal();
        assert_eq!(extract_pumping_efficiency(5.7, 0.0, &s, 3).unwrap().efficiency, 1.0);
        assert!((extract_pumping_efficiency(5.7, 5.7, &s, 3).unwrap().efficiency - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn ninety_percent_round_trip() {
        let r: f64 = (1.0 - 0.9) / (7.0 / 16.0);
        assert!((r - 0.228571).abs() < 1e-6);
        let e = extract_pumping_efficiency(5.7, 5.7 * r, &thermal(), 3).unwrap();
        assert!((e.efficiency - 0.9).abs() < 1e-12);
    }

    #[test]
    fn excess_handling() {
        let s = thermal();
        let e = extract_pumping_efficiency(5.7, 5.7 * 1.005, &s, 3).unwrap();
        assert_eq!(e.warnings.len(), 1);
        assert!((e.efficiency - 0.5625).abs() < 1e-15);
        assert!(matches!(
            extract_pumping_efficiency(5.7, 5.7 * 1.02, &s, 3),
            Err(Error::InconsistentData(_))
        ));
        assert!(matches!(
            extract_pumping_efficiency(5.7, 1.0, &s, 7),
            Err(Error::UnknownManifold(7))
        ));
        assert!(extract_pumping_efficiency(0.0, 0.0, &s, 3).is_err());
    }

    proptest! {
        #[test]
        fn monotone_decreasing_in_pumped_od(a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let s = thermal();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let e_lo = extract_pumping_efficiency(5.7, 5.7 * lo, &s, 3).unwrap().efficiency;
            let e_hi = extract_pumping_efficiency(5.7, 5.7 * hi, &s, 3).unwrap().efficiency;
            prop_assert!(e_hi <= e_lo);
        }
    }
}
