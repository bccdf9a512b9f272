//! Forward models of the thermometer reflection and of the measurement chain
//! around it.
//!
//! Units: frequencies (`f_r`, `f_p`, `mu`, `sigma`, `f_b`) are ordinary Hz,
//! decay rates (`gamma`, `gamma_c`, `gamma_b`, `gamma_bc`) are rad/s, and all
//! detunings carry the explicit 2π, e.g. `Δ = 2π (f_r - f_p)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::par::{self, Execution};
use crate::specfun::erfcx_right_half;

/// Spacing of the spurious standing-wave resonances in the output path.
pub const SPURIOUS_SPACING_HZ: f64 = 80.0e6;

/// Below `SIGMA_MIN_FRACTION * gamma / 2π` the Gaussian average is replaced
/// by the bare Lorentzian at `mu`.
pub const SIGMA_MIN_FRACTION: f64 = 1e-6;

/// Samples per independently seeded Monte-Carlo batch.
const MC_BATCH: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    /// Resonance frequency, Hz.
    pub f_r: f64,
    /// External (coupling) energy decay rate, rad/s.
    pub gamma_c: f64,
    /// Total energy decay rate, rad/s.
    pub gamma: f64,
    /// Asymmetry angle, rad.
    pub phi: f64,
}

impl ResonatorParams {
    pub fn new(f_r: f64, gamma_c: f64, gamma: f64, phi: f64) -> Result<Self, ParamError> {
        let p = Self { f_r, gamma_c, gamma, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        ParamError::check("f_r", self.f_r, self.f_r > 0.0, "> 0")?;
        ParamError::check("gamma_c", self.gamma_c, self.gamma_c > 0.0, "> 0")?;
        ParamError::check("gamma", self.gamma, self.gamma >= self.gamma_c, ">= gamma_c")?;
        ParamError::check("phi", self.phi, self.phi > -PI && self.phi <= PI, "in (-pi, pi]")
    }

    /// Linewidth γ/2π in Hz.
    pub fn linewidth_hz(&self) -> f64 {
        self.gamma / (2.0 * PI)
    }
}

/// Gaussian law of the resonance frequency, `f_r ~ N(mu, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqDistribution {
    pub mu: f64,
    pub sigma: f64,
}

impl FreqDistribution {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, ParamError> {
        let d = Self { mu, sigma };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        ParamError::check("mu", self.mu, self.mu > 0.0, "> 0")?;
        ParamError::check("sigma", self.sigma, self.sigma >= 0.0, ">= 0")
    }
}

/// Lorentzian model of the output-path transfer function, optionally a comb
/// of `modes` identical resonances spaced [`SPURIOUS_SPACING_HZ`] apart
/// starting at `f_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundParams {
    pub s_b: f64,
    pub f_b: f64,
    pub gamma_bc: f64,
    pub gamma_b: f64,
    pub phi_b: f64,
    #[serde(default = "one")]
    pub modes: usize,
}

fn one() -> usize {
    1
}

impl BackgroundParams {
    /// H(f) = 1 everywhere.
    pub fn identity() -> Self {
        Self { s_b: 1.0, f_b: 1.0e9, gamma_bc: 0.0, gamma_b: 1.0, phi_b: 0.0, modes: 1 }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        ParamError::check("s_b", self.s_b, self.s_b.is_finite(), "finite")?;
        ParamError::check("f_b", self.f_b, self.f_b.is_finite(), "finite")?;
        ParamError::check("gamma_bc", self.gamma_bc, self.gamma_bc.is_finite(), "finite")?;
        ParamError::check("gamma_b", self.gamma_b, self.gamma_b > 0.0, "> 0")?;
        ParamError::check("phi_b", self.phi_b, self.phi_b.is_finite(), "finite")?;
        ParamError::check("modes", self.modes as f64, self.modes >= 1, ">= 1")
    }
}

/// Cable delay and phase offset. The delay phase is `f_p * tau` (no 2π), so
/// `tau` carries rad/Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub tau: f64,
    pub varphi: f64,
}

impl LineParams {
    pub fn identity() -> Self {
        Self { tau: 0.0, varphi: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        ParamError::check("tau", self.tau, self.tau >= 0.0, ">= 0")?;
        ParamError::check("varphi", self.varphi, self.varphi.is_finite(), "finite")
    }
}

/// `S11 = 1 - e^{iφ} γ_c / (γ/2 + iΔ)`, `Δ = 2π (f_r - f_p)`.
pub fn bare_reflection(res: &ResonatorParams, f_p: f64) -> Complex64 {
    lorentzian_reflection(res.f_r, res.gamma_c, res.gamma, res.phi, f_p)
}

#[inline]
fn lorentzian_reflection(f_r: f64, gamma_c: f64, gamma: f64, phi: f64, f_p: f64) -> Complex64 {
    let delta = 2.0 * PI * (f_r - f_p);
    Complex64::new(1.0, 0.0) - Complex64::from_polar(gamma_c, phi) / Complex64::new(0.5 * gamma, delta)
}

/// Lower bound on sigma below which the closed form is not evaluated.
pub fn sigma_min(gamma: f64) -> f64 {
    SIGMA_MIN_FRACTION * gamma / (2.0 * PI)
}

/// Reflection averaged over `f_r ~ N(mu, sigma^2)` in closed form:
///
/// `<S11> = 1 - e^{iφ} γ_c / (2 sqrt(2π) σ) · erfcx((γ/2 + iΔ') / (2 sqrt(2) π σ))`
///
/// with `Δ' = 2π (mu - f_p)`. The resonance frequency is taken from `dist`;
/// `res.f_r` is ignored. For `sigma <= sigma_min(gamma)` the bare line at
/// `mu` is returned.
pub fn averaged_reflection(res: &ResonatorParams, dist: &FreqDistribution, f_p: f64) -> Complex64 {
    averaged_lineshape(dist.mu, dist.sigma, res.gamma_c, res.gamma, res.phi, f_p)
}

#[inline]
pub(crate) fn averaged_lineshape(
    mu: f64,
    sigma: f64,
    gamma_c: f64,
    gamma: f64,
    phi: f64,
    f_p: f64,
) -> Complex64 {
    if !(sigma > sigma_min(gamma)) {
        return lorentzian_reflection(mu, gamma_c, gamma, phi, f_p);
    }
    let scale = 2.0 * std::f64::consts::SQRT_2 * PI * sigma;
    let arg = Complex64::new(0.5 * gamma / scale, 2.0 * PI * (mu - f_p) / scale);
    let prefactor = gamma_c / (2.0 * (2.0 * PI).sqrt() * sigma);
    Complex64::new(1.0, 0.0) - Complex64::from_polar(prefactor, phi) * erfcx_right_half(arg)
}

/// Monte-Carlo estimate of [`averaged_reflection`]: the mean of
/// [`bare_reflection`] over `n_samples` draws of `f_r ~ N(mu, sigma^2)`.
///
/// Samples are split into fixed-size batches; batch `b` draws from a ChaCha8
/// stream `b` seeded with `seed`, and batch sums are reduced in index order,
/// so the result does not depend on the thread count.
pub fn averaged_reflection_mc(
    res: &ResonatorParams,
    dist: &FreqDistribution,
    f_p: f64,
    n_samples: usize,
    seed: u64,
) -> Complex64 {
    averaged_reflection_mc_with(Execution::default(), res, dist, f_p, n_samples, seed)
}

pub fn averaged_reflection_mc_with(
    exec: Execution,
    res: &ResonatorParams,
    dist: &FreqDistribution,
    f_p: f64,
    n_samples: usize,
    seed: u64,
) -> Complex64 {
    assert!(n_samples >= 1, "n_samples must be at least 1");
    if dist.sigma == 0.0 {
        return lorentzian_reflection(dist.mu, res.gamma_c, res.gamma, res.phi, f_p);
    }
    let n_batches = n_samples.div_ceil(MC_BATCH);
    let sums = par::map_range(exec, n_batches, |b| {
        let len = MC_BATCH.min(n_samples - b * MC_BATCH);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let mut acc = Complex64::new(0.0, 0.0);
        for _ in 0..len {
            let z: f64 = StandardNormal.sample(&mut rng);
            let f_r = dist.mu + dist.sigma * z;
            acc += lorentzian_reflection(f_r, res.gamma_c, res.gamma, res.phi, f_p);
        }
        acc
    });
    let total: Complex64 = sums.into_iter().sum();
    total / n_samples as f64
}

/// `H(f_p) = s_b + Σ_j e^{iφ_b} γ_bc / (γ_b/2 + iΔ_bj)`,
/// `Δ_bj = 2π (f_b + j·80 MHz - f_p)`.
pub fn background_transfer(bg: &BackgroundParams, f_p: f64) -> Complex64 {
    let numerator = Complex64::from_polar(bg.gamma_bc, bg.phi_b);
    let mut h = Complex64::new(bg.s_b, 0.0);
    for j in 0..bg.modes {
        let f_b = bg.f_b + j as f64 * SPURIOUS_SPACING_HZ;
        h += numerator / Complex64::new(0.5 * bg.gamma_b, 2.0 * PI * (f_b - f_p));
    }
    h
}

/// `e^{i(f_p τ + ϕ)}`.
pub fn line_factor(line: &LineParams, f_p: f64) -> Complex64 {
    Complex64::from_polar(1.0, f_p * line.tau + line.varphi)
}

/// Measured reflection `e^{i(f_p τ + ϕ)} H(f_p) <S11(f_p)>`.
pub fn full_chain_response(
    res: &ResonatorParams,
    dist: &FreqDistribution,
    bg: &BackgroundParams,
    line: &LineParams,
    f_p: f64,
) -> Complex64 {
    line_factor(line, f_p) * background_transfer(bg, f_p) * averaged_reflection(res, dist, f_p)
}

/// Parallel RLC thermometer capacitively coupled to the feedline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlcParams {
    /// Characteristic impedance sqrt(L/C), Ω.
    pub z: f64,
    /// Coupling capacitance, F.
    pub c_g: f64,
    /// Internal quality factor.
    pub q_i: f64,
    /// Resonance frequency, Hz.
    pub f_r: f64,
    /// Feedline impedance, Ω.
    pub z0: f64,
}

impl RlcParams {
    /// Requires the small-coupling regime `2π f_r Z C_g < 0.1`.
    pub fn new(z: f64, c_g: f64, q_i: f64, f_r: f64, z0: f64) -> Result<Self, ParamError> {
        for (name, v) in [("z", z), ("c_g", c_g), ("q_i", q_i), ("f_r", f_r), ("z0", z0)] {
            ParamError::check(name, v, v > 0.0 && v.is_finite(), "> 0")?;
        }
        let coupling = 2.0 * PI * f_r * z * c_g;
        ParamError::check("c_g", c_g, coupling < 0.1, "2π f_r Z C_g < 0.1")?;
        Ok(Self { z, c_g, q_i, f_r, z0 })
    }

    pub fn with_default_feedline(z: f64, c_g: f64, q_i: f64, f_r: f64) -> Result<Self, ParamError> {
        Self::new(z, c_g, q_i, f_r, 50.0)
    }

    /// R' = 1 / (8π Z C_g² Q_i f_r²)
    pub fn r_prime(&self) -> f64 {
        1.0 / (8.0 * PI * self.z * self.c_g * self.c_g * self.q_i * self.f_r * self.f_r)
    }

    /// L' = 1 / (8π Z C_g² f_r³)
    pub fn l_prime(&self) -> f64 {
        1.0 / (8.0 * PI * self.z * self.c_g * self.c_g * self.f_r.powi(3))
    }

    /// Q_e = Q_i R' / Z0
    pub fn external_quality_factor(&self) -> f64 {
        self.q_i * self.r_prime() / self.z0
    }
}

/// Input impedance near resonance, `Z_in = R' - i 2 L' Δf`.
pub fn rlc_input_impedance(circuit: &RlcParams, delta_f: f64) -> Complex64 {
    Complex64::new(circuit.r_prime(), -2.0 * circuit.l_prime() * delta_f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlcRates {
    /// γ_i = 2π f_r / Q_i, rad/s.
    pub gamma_i: f64,
    /// The coupling-rate expression `4 Z Z0 C_g² f_r` as commonly printed.
    /// Dimensionally this is seconds, not rad/s, so it is reported for
    /// reference and never fed back into the response models.
    pub gamma_c_printed: f64,
}

pub fn rlc_rates(circuit: &RlcParams) -> RlcRates {
    RlcRates {
        gamma_i: 2.0 * PI * circuit.f_r / circuit.q_i,
        gamma_c_printed: 4.0 * circuit.z * circuit.z0 * circuit.c_g * circuit.c_g * circuit.f_r,
    }
}
