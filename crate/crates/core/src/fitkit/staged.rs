//! Two-stage fit of the full measured reflection: a base-temperature
//! calibration of all twelve scalars, then per-measurement fits in which the
//! six chain parameters in [`FROZEN_PARAMS`] are held at their calibrated
//! values.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::circle::initial_linewidth;
use super::lm::{least_squares, FitOptions, FitResult, FitWarning, ParamSpec};
use super::{ComplexSweep, FitError};
use crate::response::{
    averaged_lineshape, background_transfer, line_factor, sigma_min, BackgroundParams, FreqDistribution, LineParams,
    ResonatorParams, SPURIOUS_SPACING_HZ,
};

/// Upper bound on the fitted frequency spread, Hz.
pub const SIGMA_MAX_HZ: f64 = 20e6;

/// The twelve scalars of the full model, in vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FullParam {
    Mu,
    Sigma,
    GammaC,
    Gamma,
    Phi,
    SB,
    FB,
    GammaBc,
    GammaB,
    PhiB,
    Tau,
    Varphi,
}

impl FullParam {
    pub const ALL: [FullParam; 12] = [
        FullParam::Mu,
        FullParam::Sigma,
        FullParam::GammaC,
        FullParam::Gamma,
        FullParam::Phi,
        FullParam::SB,
        FullParam::FB,
        FullParam::GammaBc,
        FullParam::GammaB,
        FullParam::PhiB,
        FullParam::Tau,
        FullParam::Varphi,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FullParam::Mu => "mu",
            FullParam::Sigma => "sigma",
            FullParam::GammaC => "gamma_c",
            FullParam::Gamma => "gamma",
            FullParam::Phi => "phi",
            FullParam::SB => "s_b",
            FullParam::FB => "f_b",
            FullParam::GammaBc => "gamma_bc",
            FullParam::GammaB => "gamma_b",
            FullParam::PhiB => "phi_b",
            FullParam::Tau => "tau",
            FullParam::Varphi => "varphi",
        }
    }

    pub fn is_angle(self) -> bool {
        matches!(self, FullParam::Phi | FullParam::PhiB | FullParam::Varphi)
    }
}

/// Chain parameters fixed after the base-temperature calibration.
pub const FROZEN_PARAMS: [FullParam; 6] =
    [FullParam::Gamma, FullParam::SB, FullParam::GammaBc, FullParam::GammaB, FullParam::Tau, FullParam::Varphi];

/// Parameters refitted for every measurement; (μ, σ) are the targets.
pub const MEASUREMENT_PARAMS: [FullParam; 6] =
    [FullParam::Mu, FullParam::Sigma, FullParam::GammaC, FullParam::Phi, FullParam::FB, FullParam::PhiB];

/// Parameters of the measured reflection
/// `e^{i(f_p τ + ϕ)} H(f_p) <S11(f_p)>`. `res.f_r` is not used; the
/// resonance frequency is described by `dist`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullModelParams {
    pub res: ResonatorParams,
    pub dist: FreqDistribution,
    pub bg: BackgroundParams,
    pub line: LineParams,
}

impl FullModelParams {
    pub fn to_vec(&self) -> [f64; 12] {
        [
            self.dist.mu,
            self.dist.sigma,
            self.res.gamma_c,
            self.res.gamma,
            self.res.phi,
            self.bg.s_b,
            self.bg.f_b,
            self.bg.gamma_bc,
            self.bg.gamma_b,
            self.bg.phi_b,
            self.line.tau,
            self.line.varphi,
        ]
    }

    /// Inverse of [`to_vec`](Self::to_vec); `modes` is carried over from
    /// `self`. No validation.
    pub fn with_vec(&self, p: &[f64; 12]) -> Self {
        Self {
            res: ResonatorParams { f_r: p[0], gamma_c: p[2], gamma: p[3], phi: p[4] },
            dist: FreqDistribution { mu: p[0], sigma: p[1] },
            bg: BackgroundParams {
                s_b: p[5],
                f_b: p[6],
                gamma_bc: p[7],
                gamma_b: p[8],
                phi_b: p[9],
                modes: self.bg.modes,
            },
            line: LineParams { tau: p[10], varphi: p[11] },
        }
    }

    pub fn get(&self, param: FullParam) -> f64 {
        self.to_vec()[param.index()]
    }

    pub fn validate(&self) -> Result<(), crate::ParamError> {
        self.dist.validate()?;
        ResonatorParams { f_r: self.dist.mu, ..self.res }.validate()?;
        self.bg.validate()?;
        self.line.validate()
    }

    pub fn response(&self, f_p: f64) -> Complex64 {
        eval(&self.to_vec(), self.bg.modes, f_p)
    }
}

fn eval(p: &[f64; 12], modes: usize, f_p: f64) -> Complex64 {
    let s11 = averaged_lineshape(p[0], p[1], p[2], p[3], p[4], f_p);
    let bg = BackgroundParams { s_b: p[5], f_b: p[6], gamma_bc: p[7], gamma_b: p[8], phi_b: p[9], modes };
    let line = LineParams { tau: p[10], varphi: p[11] };
    line_factor(&line, f_p) * background_transfer(&bg, f_p) * s11
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseCalibration {
    pub params: FullModelParams,
    pub fit: FitResult,
}

impl BaseCalibration {
    pub fn frozen_values(&self) -> [(FullParam, f64); 6] {
        FROZEN_PARAMS.map(|p| (p, self.params.get(p)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFit {
    /// Mean resonance frequency, Hz.
    pub mu: f64,
    /// Standard deviation of the resonance frequency, Hz.
    pub sigma: f64,
    pub params: FullModelParams,
    pub fit: FitResult,
}

/// Comb line `anchor + k·80 MHz` closest to `target`.
pub fn nearest_comb_line(anchor: f64, target: f64) -> f64 {
    anchor + ((target - anchor) / SPURIOUS_SPACING_HZ).round() * SPURIOUS_SPACING_HZ
}

fn spec_for(param: FullParam, base: &FullModelParams, span: (f64, f64), sigma_floor: f64) -> ParamSpec {
    let linewidth = base.res.gamma / (2.0 * PI);
    let bg_width = base.bg.gamma_b / (2.0 * PI);
    let name = param.name();
    match param {
        FullParam::Mu => ParamSpec::bounded(name, span.0, span.1, linewidth),
        FullParam::Sigma => ParamSpec::bounded(name, sigma_floor, SIGMA_MAX_HZ, linewidth),
        FullParam::GammaC => ParamSpec::bounded(name, 0.0, f64::INFINITY, base.res.gamma),
        FullParam::Gamma => ParamSpec::bounded(name, 0.0, f64::INFINITY, base.res.gamma),
        FullParam::SB => ParamSpec::free(name, 1.0),
        FullParam::FB => ParamSpec::free(name, bg_width),
        FullParam::GammaBc => ParamSpec::bounded(name, 0.0, f64::INFINITY, base.bg.gamma_b),
        FullParam::GammaB => ParamSpec::bounded(name, 0.0, f64::INFINITY, base.bg.gamma_b),
        // one radian of delay phase across the window
        FullParam::Tau => ParamSpec::bounded(name, 0.0, f64::INFINITY, 1.0 / span.1.abs().max(1.0)),
        FullParam::Phi | FullParam::PhiB | FullParam::Varphi => ParamSpec::angle(name),
    }
}

fn fit_subset(
    sweep: &ComplexSweep,
    base: &FullModelParams,
    free: &[FullParam],
    sigma_floor: f64,
    opts: &FitOptions,
) -> Result<(FullModelParams, FitResult), FitError> {
    let full = base.to_vec();
    let modes = base.bg.modes;
    let span = sweep.span();
    let specs: Vec<ParamSpec> = free.iter().map(|&p| spec_for(p, base, span, sigma_floor)).collect();
    let init: Vec<f64> = free.iter().map(|&p| full[p.index()]).collect();
    let idx: Vec<usize> = free.iter().map(|p| p.index()).collect();
    let model = |q: &[f64], f: f64| {
        let mut p = full;
        for (&i, &v) in idx.iter().zip(q) {
            p[i] = v;
        }
        eval(&p, modes, f)
    };
    let mut fit = least_squares(model, sweep, &init, &specs, opts)?;
    let mut out = full;
    for (&i, &v) in idx.iter().zip(&fit.params) {
        out[i] = v;
    }
    // within a decade of the floor the lineshape differs from the bare line
    // by ~(σ/linewidth)^2 < 1e-9, so σ is unresolved and reported at the floor
    if free.contains(&FullParam::Sigma) && out[FullParam::Sigma.index()] <= 10.0 * sigma_floor {
        out[FullParam::Sigma.index()] = sigma_floor;
        let k = free.iter().position(|&p| p == FullParam::Sigma).expect("sigma is free");
        fit.params[k] = sigma_floor;
        fit.warnings.retain(|w| *w != FitWarning::AtBound("sigma".into()));
        fit.warnings.push(FitWarning::SigmaAtLowerBound);
    }
    debug_assert!(free.iter().all(|p| !p.is_angle() || out[p.index()].abs() <= PI));
    Ok((base.with_vec(&out), fit))
}

/// Fit all twelve scalars to a base-temperature trace.
pub fn fit_base_calibration(sweep: &ComplexSweep, init: &FullModelParams) -> Result<BaseCalibration, FitError> {
    fit_base_calibration_with(sweep, init, &FitOptions::default())
}

pub fn fit_base_calibration_with(
    sweep: &ComplexSweep,
    init: &FullModelParams,
    opts: &FitOptions,
) -> Result<BaseCalibration, FitError> {
    init.validate()?;
    let floor = sigma_min(init.res.gamma);
    let start = FullModelParams { dist: FreqDistribution { sigma: init.dist.sigma.max(floor), ..init.dist }, ..*init };
    let (params, fit) = fit_subset(sweep, &start, &FullParam::ALL, floor, opts)?;
    Ok(BaseCalibration { params, fit })
}

/// Fit (μ, σ) and the four per-measurement nuisance parameters, holding the
/// calibrated chain fixed.
///
/// Initialisation: μ at the minimum of `|trace / (line · H)|` under the
/// calibrated chain; σ at 10% of the apparent linewidth of that
/// de-embedded trace; f_b at the calibrated comb line nearest the window
/// centre; γ_c, φ and φ_b at their calibrated values.
pub fn fit_measurement(sweep: &ComplexSweep, cal: &BaseCalibration) -> Result<MeasurementFit, FitError> {
    fit_measurement_with(sweep, cal, &FitOptions::default())
}

pub fn fit_measurement_with(
    sweep: &ComplexSweep,
    cal: &BaseCalibration,
    opts: &FitOptions,
) -> Result<MeasurementFit, FitError> {
    let init = measurement_init(sweep, &cal.params);
    fit_measurement_from(sweep, cal, &init, opts)
}

/// Per-measurement fit from an explicit starting point. Frozen parameters
/// are taken from `cal`, whatever `init` holds for them.
pub fn fit_measurement_from(
    sweep: &ComplexSweep,
    cal: &BaseCalibration,
    init: &FullModelParams,
    opts: &FitOptions,
) -> Result<MeasurementFit, FitError> {
    let mut start = init.to_vec();
    let frozen = cal.params.to_vec();
    for p in FROZEN_PARAMS {
        start[p.index()] = frozen[p.index()];
    }
    let base = cal.params.with_vec(&start);
    let floor = sigma_min(base.res.gamma);
    let mut start = base;
    start.dist.sigma = start.dist.sigma.clamp(floor, SIGMA_MAX_HZ);
    let (lo, hi) = sweep.span();
    start.dist.mu = start.dist.mu.clamp(lo, hi);
    let (params, fit) = fit_subset(sweep, &start, &MEASUREMENT_PARAMS, floor, opts)?;
    Ok(MeasurementFit { mu: params.dist.mu, sigma: params.dist.sigma, params, fit })
}

fn measurement_init(sweep: &ComplexSweep, cal: &FullModelParams) -> FullModelParams {
    let freqs = sweep.freqs();
    let (lo, hi) = sweep.span();
    let mut init = *cal;
    init.bg.f_b = nearest_comb_line(cal.bg.f_b, 0.5 * (lo + hi));
    let deembedded: Vec<Complex64> = freqs
        .iter()
        .zip(sweep.values())
        .map(|(&f, &v)| v / (line_factor(&init.line, f) * background_transfer(&init.bg, f)))
        .collect();
    let magnitude: Vec<f64> = deembedded.iter().map(|v| v.norm()).collect();
    let i_min = (0..magnitude.len()).fold(0, |best, i| if magnitude[i] < magnitude[best] { i } else { best });
    let dip: Vec<f64> = deembedded.iter().map(|v| (Complex64::new(1.0, 0.0) - v).norm()).collect();
    let i_peak = (0..dip.len()).fold(0, |best, i| if dip[i] > dip[best] { i } else { best });
    init.dist.mu = freqs[i_min];
    init.dist.sigma = 0.1 * initial_linewidth(freqs, &dip, i_peak);
    init
}
