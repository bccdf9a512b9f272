use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::lm::{least_squares_xy, FitOptions, ParamSpec};
use super::{wrap_angle, ComplexSweep, FitError, MIN_FIT_POINTS};
use crate::response::ResonatorParams;

/// Geometry and resonator parameters extracted from a bare reflection trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFit {
    pub center: Complex64,
    pub radius: f64,
    pub params: ResonatorParams,
}

/// Circle fit of a bare reflection trace.
///
/// `S11 = 1 - e^{iφ} γ_c / (γ/2 + iΔ)` traces a circle of radius `γ_c/γ`
/// centred at `1 - e^{iφ} γ_c/γ`, passing through the off-resonant point 1.
/// The algebraic fit gives the centre and radius; φ follows from the
/// direction of `1 - centre`. The angle about the centre obeys
/// `θ(f) = θ0 - 2 atan(4π (f_r - f) / γ)`, which is fitted for `f_r` and `γ`.
/// Finally `γ_c = radius · γ`.
pub fn circle_fit(sweep: &ComplexSweep) -> Result<CircleFit, FitError> {
    sweep.require_points(MIN_FIT_POINTS)?;
    let (center, radius) = algebraic_circle(sweep.values())?;
    let phi = wrap_angle((Complex64::new(1.0, 0.0) - center).arg());

    let freqs = sweep.freqs();
    let angles = unwrap(sweep.values().iter().map(|v| (v - center).arg()));

    // resonance sits where the trace is farthest from the off-resonant point
    let depth: Vec<f64> = sweep.values().iter().map(|v| (Complex64::new(1.0, 0.0) - v).norm()).collect();
    let i_peak = argmax(&depth);
    let f0 = freqs[i_peak];
    let gamma0 = initial_linewidth(freqs, &depth, i_peak) * 2.0 * PI;
    let theta0 = angles[i_peak];

    let model = |p: &[f64], f: f64| Complex64::new(p[0] - 2.0 * (4.0 * PI * (p[1] - f) / p[2]).atan(), 0.0);
    let (lo, hi) = sweep.span();
    let specs = [
        ParamSpec::free("theta0", 1.0),
        ParamSpec::bounded("f_r", lo, hi, gamma0 / (2.0 * PI)),
        ParamSpec::bounded("gamma", 0.0, f64::INFINITY, gamma0),
    ];
    let y: Vec<Complex64> = angles.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    let fit = least_squares_xy(model, freqs, &y, &[theta0, f0, gamma0], &specs, &FitOptions::default())?;
    let f_r = fit.params[1];
    let gamma = fit.params[2];
    let params = ResonatorParams::new(f_r, radius * gamma, gamma, phi)?;
    Ok(CircleFit { center, radius, params })
}

/// Least-squares fit of `|z|^2 + D x + E y + F = 0` (Kasa).
fn algebraic_circle(points: &[Complex64]) -> Result<(Complex64, f64), FitError> {
    let n = points.len();
    // centre the cloud so the design matrix is well scaled
    let mean: Complex64 = points.iter().sum::<Complex64>() / n as f64;
    let spread = points.iter().map(|p| (p - mean).norm()).fold(0.0, f64::max);
    if !(spread > 0.0) {
        return Err(FitError::DegenerateCircle);
    }
    let local: Vec<Complex64> = points.iter().map(|p| (p - mean) / spread).collect();

    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => local[i].re,
        1 => local[i].im,
        _ => 1.0,
    });
    let sv = design.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-9 * sv.max() {
        return Err(FitError::DegenerateCircle);
    }
    let rhs = DVector::from_iterator(n, local.iter().map(|p| -p.norm_sqr()));
    let sol = design
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|_| FitError::DegenerateCircle)?;
    let (d, e, f) = (sol[0], sol[1], sol[2]);
    let c_local = Complex64::new(-d / 2.0, -e / 2.0);
    let r2 = c_local.norm_sqr() - f;
    // near-collinear points give an enormous circle
    if !(r2 > 0.0) || r2.sqrt() > 1e6 {
        return Err(FitError::DegenerateCircle);
    }
    Ok((mean + c_local * spread, r2.sqrt() * spread))
}

fn unwrap(angles: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for a in angles {
        match out.last() {
            None => out.push(a),
            Some(&prev) => {
                let mut d = a - prev;
                d -= 2.0 * PI * (d / (2.0 * PI)).round();
                out.push(prev + d);
            }
        }
    }
    out
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Full width at half maximum of `|1 - S11|^2` about the peak, in Hz, with a
/// grid-spacing floor.
pub(super) fn initial_linewidth(freqs: &[f64], depth: &[f64], i_peak: usize) -> f64 {
    let half = depth[i_peak].powi(2) / 2.0;
    let left = (0..i_peak).rev().find(|&i| depth[i].powi(2) < half).unwrap_or(0);
    let right = (i_peak + 1..freqs.len()).find(|&i| depth[i].powi(2) < half).unwrap_or(freqs.len() - 1);
    let step = (freqs[freqs.len() - 1] - freqs[0]) / (freqs.len() - 1) as f64;
    (freqs[right] - freqs[left]).max(2.0 * step)
}
