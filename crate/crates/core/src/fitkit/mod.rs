//! Fitting machinery: a damped Gauss-Newton (Levenberg-Marquardt) engine,
//! the circle fit for bare resonator traces, Lorentzian and polynomial curve
//! fits, and the staged calibration/measurement fit of the full chain model.

mod circle;
mod curves;
mod lm;
mod staged;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ParamError;

pub use circle::{circle_fit, CircleFit};
pub use curves::{lorentzian_fit, polynomial_fit, LorentzianFit, Polynomial};
pub use lm::{least_squares, least_squares_xy, FitOptions, FitResult, FitWarning, ParamSpec, StopReason};
pub use staged::{
    fit_base_calibration, fit_base_calibration_with, fit_measurement, fit_measurement_from, fit_measurement_with,
    nearest_comb_line, BaseCalibration, FullModelParams, FullParam, MeasurementFit, FROZEN_PARAMS, MEASUREMENT_PARAMS,
    SIGMA_MAX_HZ,
};

/// Minimum number of samples accepted by sweep-based fit entry points.
pub const MIN_FIT_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("initial value of {name} = {value} lies outside [{lower}, {upper}]")]
    InitOutOfBounds { name: String, value: f64, lower: f64, upper: f64 },
    #[error("non-finite model output or initial value for {0}")]
    NonFinite(String),
    #[error("normal equations are singular along {}", format_directions(.directions))]
    RankDeficient { directions: Vec<Vec<(String, f64)>> },
    #[error("points are collinear; no circle fits them")]
    DegenerateCircle,
    #[error("polynomial of degree {degree} needs more than {degree} points, got {points}")]
    Underdetermined { points: usize, degree: usize },
    #[error(transparent)]
    Param(#[from] ParamError),
}

fn format_directions(dirs: &[Vec<(String, f64)>]) -> String {
    dirs.iter()
        .map(|d| {
            let terms: Vec<String> = d.iter().map(|(n, w)| format!("{w:+.3}·{n}")).collect();
            format!("[{}]", terms.join(" "))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Probe-frequency grid with one complex reflection sample per frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSweep", into = "RawSweep")]
pub struct ComplexSweep {
    freqs: Vec<f64>,
    values: Vec<Complex64>,
}

impl ComplexSweep {
    pub fn new(freqs: Vec<f64>, values: Vec<Complex64>) -> Result<Self, FitError> {
        if freqs.len() != values.len() {
            return Err(FitError::InvalidSweep(format!(
                "{} frequencies but {} values",
                freqs.len(),
                values.len()
            )));
        }
        if let Some(i) = freqs.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(FitError::InvalidSweep(format!("frequencies not strictly increasing at index {}", i + 1)));
        }
        if let Some(i) = freqs.iter().position(|f| !f.is_finite()) {
            return Err(FitError::InvalidSweep(format!("non-finite frequency at index {i}")));
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(FitError::InvalidSweep(format!("non-finite value at index {i}")));
        }
        Ok(Self { freqs, values })
    }

    /// Evaluate `f` on an evenly spaced grid of `points` frequencies.
    pub fn linspace(start: f64, stop: f64, points: usize, f: impl Fn(f64) -> Complex64) -> Result<Self, FitError> {
        let freqs = linspace(start, stop, points);
        let values = freqs.iter().map(|&x| f(x)).collect();
        Self::new(freqs, values)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.freqs[0], self.freqs[self.freqs.len() - 1])
    }

    pub(crate) fn require_points(&self, need: usize) -> Result<(), FitError> {
        if self.len() < need {
            Err(FitError::TooFewPoints { need, got: self.len() })
        } else {
            Ok(())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawSweep {
    freqs: Vec<f64>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl TryFrom<RawSweep> for ComplexSweep {
    type Error = FitError;
    fn try_from(raw: RawSweep) -> Result<Self, FitError> {
        if raw.re.len() != raw.im.len() {
            return Err(FitError::InvalidSweep("re and im lengths differ".into()));
        }
        let values = raw.re.iter().zip(&raw.im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        ComplexSweep::new(raw.freqs, values)
    }
}

impl From<ComplexSweep> for RawSweep {
    fn from(s: ComplexSweep) -> Self {
        RawSweep {
            re: s.values.iter().map(|v| v.re).collect(),
            im: s.values.iter().map(|v| v.im).collect(),
            freqs: s.freqs,
        }
    }
}

pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![start],
        _ => {
            let step = (stop - start) / (points - 1) as f64;
            (0..points).map(|i| if i == points - 1 { stop } else { start + step * i as f64 }).collect()
        }
    }
}

/// Wrap an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}
