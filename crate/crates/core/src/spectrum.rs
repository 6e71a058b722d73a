//! Sampled transmission traces and their CSV form.
//!
//! CSV layout: header `frequency_hz,transmission` or
//! `frequency_hz,transmission,sigma`, one point per line, ascending frequency.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    /// Hz
    pub frequency: f64,
    pub transmission: f64,
    /// 1-sigma uncertainty of `transmission`, if known.
    pub sigma: Option<f64>,
}

/// A transmission trace with strictly increasing frequencies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Spectrum {
    points: Vec<SpectrumPoint>,
}

impl Spectrum {
    pub fn new(points: Vec<SpectrumPoint>) -> Result<Self> {
        let with_sigma = points.iter().filter(|p| p.sigma.is_some()).count();
        if with_sigma != 0 && with_sigma != points.len() {
            return Err(Error::InvalidSpectrum(
                "either every point or no point must carry a sigma".into(),
            ));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.frequency.is_finite() {
                return Err(Error::InvalidSpectrum(format!("point {i}: frequency is not finite")));
            }
            if !(p.transmission.is_finite() && p.transmission >= 0.0) {
                return Err(Error::InvalidSpectrum(format!(
                    "point {i}: transmission {} must be finite and >= 0",
                    p.transmission
                )));
            }
            if let Some(s) = p.sigma {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::InvalidSpectrum(format!("point {i}: sigma {s} must be positive")));
                }
            }
        }
        if let Some(i) = points.windows(2).position(|w| w[1].frequency <= w[0].frequency) {
            return Err(Error::InvalidSpectrum(format!(
                "frequencies must be strictly increasing (rows {} and {})",
                i,
                i + 1
            )));
        }
        Ok(Spectrum { points })
    }

    /// Builds a spectrum without per-point uncertainties.
    pub fn from_pairs(frequencies: &[f64], transmission: &[f64]) -> Result<Self> {
        if frequencies.len() != transmission.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} frequencies but {} transmission values",
                frequencies.len(),
                transmission.len()
            )));
        }
        Self::new(
            frequencies
                .iter()
                .zip(transmission)
                .map(|(&frequency, &transmission)| SpectrumPoint {
                    frequency,
                    transmission,
                    sigma: None,
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[SpectrumPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.frequency).collect()
    }

    pub fn transmissions(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.transmission).collect()
    }

    pub fn sigmas(&self) -> Option<Vec<f64>> {
        self.points.iter().map(|p| p.sigma).collect()
    }

    pub fn has_sigmas(&self) -> bool {
        self.points.first().is_some_and(|p| p.sigma.is_some())
    }

    pub fn span(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.frequency - a.frequency,
            _ => 0.0,
        }
    }

    /// Index of the lowest-transmission point.
    pub fn argmin(&self) -> Option<usize> {
        self.points
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.transmission.total_cmp(&b.1.transmission))
            .map(|(i, _)| i)
    }

    /// Replaces the frequency axis by `map(frequency)`; the map must be increasing.
    pub fn map_frequencies(&self, map: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.points
                .iter()
                .map(|p| SpectrumPoint {
                    frequency: map(p.frequency),
                    ..*p
                })
                .collect(),
        )
    }

    /// Adds independent Gaussian noise of standard deviation `sigma` to every
    /// transmission (clipped at zero) and records `sigma` as the uncertainty.
    pub fn with_gaussian_noise(&self, sigma: f64, seed: u64) -> Result<Self> {
        crate::error::ensure_positive("noise sigma", sigma)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(
            self.points
                .iter()
                .map(|p| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    SpectrumPoint {
                        frequency: p.frequency,
                        transmission: (p.transmission + sigma * z).max(0.0),
                        sigma: Some(sigma),
                    }
                })
                .collect(),
        )
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(csv_error)?.clone();
        let columns: Vec<&str> = headers.iter().collect();
        let with_sigma = match columns.as_slice() {
            ["frequency_hz", "transmission"] => false,
            ["frequency_hz", "transmission", "sigma"] => true,
            _ => {
                return Err(Error::Parse {
                    what: "spectrum CSV".into(),
                    reason: format!(
                        "expected header `frequency_hz,transmission[,sigma]`, found `{}`",
                        columns.join(",")
                    ),
                })
            }
        };
        let mut points = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(csv_error)?;
            let field = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .ok_or_else(|| parse_error(format!("row {}: missing column {i}", row + 1)))?
                    .parse::<f64>()
                    .map_err(|e| parse_error(format!("row {}: {e}", row + 1)))
            };
            points.push(SpectrumPoint {
                frequency: field(0)?,
                transmission: field(1)?,
                sigma: if with_sigma { Some(field(2)?) } else { None },
            });
        }
        if points.is_empty() {
            return Err(Error::InvalidSpectrum("no data rows".into()));
        }
        Self::new(points)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let with_sigma = self.has_sigmas();
        let io = |e: csv::Error| Error::Io(e.into());
        if with_sigma {
            wtr.write_record(["frequency_hz", "transmission", "sigma"])
                .map_err(io)?;
        } else {
            wtr.write_record(["frequency_hz", "transmission"]).map_err(io)?;
        }
        for p in &self.points {
            let mut row = vec![fmt_f64(p.frequency), fmt_f64(p.transmission)];
            if let Some(s) = p.sigma {
                row.push(fmt_f64(s));
            }
            wtr.write_record(&row).map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_error(reason: String) -> Error {
    Error::Parse {
        what: "spectrum CSV".into(),
        reason,
    }
}

fn csv_error(e: csv::Error) -> Error {
    parse_error(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_unsorted_frequencies() {
        let err = Spectrum::from_pairs(&[0.0, 2.0, 1.0], &[1.0, 1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidSpectrum(_)));
    }

    #[test]
    fn rejects_negative_transmission() {
        assert!(Spectrum::from_pairs(&[0.0, 1.0], &[1.0, -0.1]).is_err());
    }

    #[test]
    fn empty_csv_is_an_error() {
        assert!(Spectrum::read_csv("frequency_hz,transmission\n".as_bytes()).is_err());
        assert!(Spectrum::read_csv("".as_bytes()).is_err());
    }

    #[test]
    fn wrong_header_is_a_parse_error() {
        let err = Spectrum::read_csv("freq,t\n1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn reads_optional_sigma_column() {
        let s = Spectrum::read_csv("frequency_hz,transmission,sigma\n0,0.5,0.01\n1,0.6,0.01\n".as_bytes()).unwrap();
        assert_eq!(s.sigmas(), Some(vec![0.01, 0.01]));
    }

    proptest! {
        #[test]
        fn csv_round_trip(values in prop::collection::vec((1e-3f64..1e3, 0.0f64..1.2), 1..50),
                          start in -1e10f64..1e10) {
            let mut f = start;
            let points: Vec<_> = values.iter().map(|&(step, t)| {
                f += step;
                SpectrumPoint { frequency: f, transmission: t, sigma: None }
            }).collect();
            let s = Spectrum::new(points).unwrap();
            let mut buf = Vec::new();
            s.write_csv(&mut buf).unwrap();
            let back = Spectrum::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(s, back);
        }
    }
}
