//! Photon-number statistics of thermal, coherent and mixed microwave fields,
//! and the conversions between frequency broadening, photon flux and power.
//!
//! Photon fluxes are photon/(s·Hz) throughout; the only conversion to watts
//! happens in [`flux_to_power`] and [`bath_corrected_power`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ParamError;

/// Planck constant, J·s (exact SI).
pub const PLANCK_H: f64 = 6.626_070_15e-34;
/// Boltzmann constant, J/K (exact SI).
pub const BOLTZMANN_K: f64 = 1.380_649e-23;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("g2(0) is undefined for zero mean photon number")]
    ZeroMean,
    #[error("need at least 2 samples, got {0}")]
    InsufficientData(usize),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Mean and variance of the photon flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonMoments {
    pub mean: f64,
    pub variance: f64,
}

impl PhotonMoments {
    pub fn new(mean: f64, variance: f64) -> Result<Self, ParamError> {
        ParamError::check("mean", mean, mean >= 0.0, ">= 0")?;
        ParamError::check("variance", variance, variance >= 0.0, ">= 0")?;
        Ok(Self { mean, variance })
    }

    pub fn thermal(mean: f64) -> Self {
        Self { mean, variance: thermal_variance(mean) }
    }

    pub fn coherent(mean: f64) -> Self {
        Self { mean, variance: coherent_variance(mean) }
    }

    pub fn g2(&self) -> Result<f64, StatsError> {
        g2_zero(self)
    }
}

/// Blackbody radiator at temperature `t` (K) observed at frequency `f` (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiatorState {
    pub t: f64,
    pub f: f64,
}

impl RadiatorState {
    pub fn new(t: f64, f: f64) -> Result<Self, ParamError> {
        ParamError::check("t", t, t >= 0.0, ">= 0")?;
        ParamError::check("f", f, f > 0.0, "> 0")?;
        Ok(Self { t, f })
    }
}

/// Coherent and thermal parts of a field, photon/(s·Hz) each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedField {
    pub n_coh: f64,
    pub n_th: f64,
}

impl MixedField {
    pub fn new(n_coh: f64, n_th: f64) -> Result<Self, ParamError> {
        ParamError::check("n_coh", n_coh, n_coh >= 0.0, ">= 0")?;
        ParamError::check("n_th", n_th, n_th >= 0.0, ">= 0")?;
        Ok(Self { n_coh, n_th })
    }
}

/// Linear map from frequency broadening to photon-number spread,
/// `Δn = alpha * sigma`. `alpha` is photon/(s·Hz) per Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationScale {
    pub alpha: f64,
}

impl CalibrationScale {
    pub fn new(alpha: f64) -> Result<Self, ParamError> {
        ParamError::check("alpha", alpha, alpha > 0.0 && alpha.is_finite(), "> 0")?;
        Ok(Self { alpha })
    }

    /// From the customary photon/MHz figure.
    pub fn per_mhz(alpha_per_mhz: f64) -> Result<Self, ParamError> {
        Self::new(alpha_per_mhz * 1e-6)
    }

    pub fn per_mhz_value(&self) -> f64 {
        self.alpha * 1e6
    }
}

/// Phonon-bath heating coefficient `beta` (W/K) and input bandwidth (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathCorrection {
    pub beta: f64,
    pub bandwidth: f64,
}

impl BathCorrection {
    pub fn new(beta: f64, bandwidth: f64) -> Result<Self, ParamError> {
        ParamError::check("beta", beta, beta >= 0.0, ">= 0")?;
        ParamError::check("bandwidth", bandwidth, bandwidth > 0.0, "> 0")?;
        Ok(Self { beta, bandwidth })
    }
}

/// Bose-Einstein occupation `1 / (exp(hf / k_B T) - 1)`; zero at T = 0.
pub fn planck_mean_photon(state: &RadiatorState) -> f64 {
    if state.t == 0.0 {
        return 0.0;
    }
    let x = PLANCK_H * state.f / (BOLTZMANN_K * state.t);
    1.0 / x.exp_m1()
}

/// Temperature at which the occupation at `f` equals `mean`.
pub fn planck_temperature(mean: f64, f: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    PLANCK_H * f / (BOLTZMANN_K * (1.0 / mean).ln_1p())
}

/// `n (n + 1)`
pub fn thermal_variance(mean: f64) -> f64 {
    mean * (mean + 1.0)
}

/// Poissonian: variance equals the mean.
pub fn coherent_variance(mean: f64) -> f64 {
    mean
}

/// Moments of a displaced thermal state:
/// mean `n_c + n_t`, variance `n_c (2 n_t + 1) + n_t (n_t + 1)`.
pub fn mixed_moments(field: &MixedField) -> PhotonMoments {
    let MixedField { n_coh, n_th } = *field;
    if n_coh == 0.0 {
        return PhotonMoments::thermal(n_th);
    }
    if n_th == 0.0 {
        return PhotonMoments::coherent(n_coh);
    }
    PhotonMoments {
        mean: n_coh + n_th,
        variance: n_coh * (2.0 * n_th + 1.0) + thermal_variance(n_th),
    }
}

/// `g2(0) = 1 + (var - mean) / mean^2`.
pub fn g2_zero(m: &PhotonMoments) -> Result<f64, StatsError> {
    if !(m.mean > 0.0) {
        return Err(StatsError::ZeroMean);
    }
    Ok(1.0 + (m.variance - m.mean) / (m.mean * m.mean))
}

/// `(alpha * sigma)^2`
pub fn sigma_to_variance(sigma: f64, scale: &CalibrationScale) -> f64 {
    let dn = scale.alpha * sigma;
    dn * dn
}

/// Inverse of [`sigma_to_variance`].
pub fn variance_to_sigma(variance: f64, scale: &CalibrationScale) -> f64 {
    variance.max(0.0).sqrt() / scale.alpha
}

/// Beam splitter with coherent-port transmissivity `gamma`: the coherent
/// input is transmitted with `gamma`, the thermal input with `1 - gamma`.
pub fn beamsplitter_combine(coh_in: f64, th_in: f64, gamma: f64) -> Result<MixedField, ParamError> {
    ParamError::check("gamma", gamma, (0.0..=1.0).contains(&gamma), "in [0, 1]")?;
    MixedField::new(gamma * coh_in, (1.0 - gamma) * th_in)
}

/// `<n> h f B`, W.
pub fn flux_to_power(mean: f64, f: f64, bandwidth: f64) -> f64 {
    mean * PLANCK_H * f * bandwidth
}

/// Inverse of [`flux_to_power`].
pub fn power_to_flux(power: f64, f: f64, bandwidth: f64) -> f64 {
    power / (PLANCK_H * f * bandwidth)
}

/// Net heating power `beta T_b + B k_B T` with a linear phonon-bath term and
/// the Rayleigh-Jeans radiator term. `f` is accepted for symmetry with the
/// other power conversions; the Rayleigh-Jeans form does not depend on it.
pub fn bath_corrected_power(t_b: f64, t: f64, _f: f64, corr: &BathCorrection) -> f64 {
    corr.beta * t_b + corr.bandwidth * BOLTZMANN_K * t
}

/// Sample mean, unbiased standard deviation, and coefficient of variation
/// `std / |mean|` of a set of frequency shifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionMetrics {
    pub mean: f64,
    pub std: f64,
    pub cv: f64,
}

pub fn resolution_metrics(shift_samples: &[f64]) -> Result<ResolutionMetrics, StatsError> {
    let n = shift_samples.len();
    if n < 2 {
        return Err(StatsError::InsufficientData(n));
    }
    let mean = shift_samples.iter().sum::<f64>() / n as f64;
    let ss: f64 = shift_samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    let std = (ss / (n - 1) as f64).sqrt();
    Ok(ResolutionMetrics { mean, std, cv: std / mean.abs() })
}

#[cfg(test)]
mod tests {
    use super::*;

    const F_H: f64 = 8.428e9;

    #[test]
    fn planck_values() {
        assert_eq!(planck_mean_photon(&RadiatorState::new(0.0, F_H).unwrap()), 0.0);
        let n = planck_mean_photon(&RadiatorState::new(1.0, F_H).unwrap());
        assert!((n - 2.01).abs() < 0.01, "{n}");
        // hf = k_B T ln 2 gives exactly one photon
        let t = PLANCK_H * F_H / (BOLTZMANN_K * std::f64::consts::LN_2);
        let one = planck_mean_photon(&RadiatorState::new(t, F_H).unwrap());
        assert!((one - 1.0).abs() < 1e-14);
        assert!((planck_temperature(one, F_H) - t).abs() < 1e-14 * t);
    }

    #[test]
    fn planck_monotone_and_classical_limit() {
        let mut prev = 0.0;
        for i in 1..200 {
            let n = planck_mean_photon(&RadiatorState::new(0.01 * i as f64, F_H).unwrap());
            assert!(n > prev);
            prev = n;
        }
        let hot = planck_mean_photon(&RadiatorState::new(1.0, 8e9).unwrap());
        let cold = planck_mean_photon(&RadiatorState::new(1.0, 9e9).unwrap());
        assert!(hot > cold);
        let t = 10.0 * PLANCK_H * F_H / BOLTZMANN_K;
        let n = planck_mean_photon(&RadiatorState::new(t, F_H).unwrap());
        assert!((n * PLANCK_H * F_H / (BOLTZMANN_K * t) - 1.0).abs() < 0.05);
    }

    #[test]
    fn variances() {
        assert_eq!(thermal_variance(0.0), 0.0);
        assert_eq!(thermal_variance(1.0), 2.0);
        assert_eq!(thermal_variance(2.0), 6.0);
        assert!((thermal_variance(1e-6) / 1e-6 - 1.0).abs() < 1e-5);
        assert!((thermal_variance(1e6) / 1e12 - 1.0).abs() < 1e-5);
        for m in [0.0, 1.0, 19.0] {
            assert_eq!(coherent_variance(m), m);
        }
    }

    #[test]
    fn mixed_limits_are_exact() {
        for n in [0.0, 0.3, 1.0, 7.5] {
            let th = mixed_moments(&MixedField::new(0.0, n).unwrap());
            assert_eq!(th, PhotonMoments { mean: n, variance: thermal_variance(n) });
            let coh = mixed_moments(&MixedField::new(n, 0.0).unwrap());
            assert_eq!(coh, PhotonMoments { mean: n, variance: coherent_variance(n) });
        }
        let m = mixed_moments(&MixedField::new(1.0, 1.0).unwrap());
        assert_eq!(m, PhotonMoments { mean: 2.0, variance: 5.0 });
        assert_eq!(g2_zero(&m).unwrap(), 1.75);
    }

    #[test]
    fn g2_reference_states() {
        for n in [0.01, 0.5, 2.0, 40.0] {
            assert!((g2_zero(&PhotonMoments::thermal(n)).unwrap() - 2.0).abs() < 1e-12);
            assert_eq!(g2_zero(&PhotonMoments::coherent(n)).unwrap(), 1.0);
        }
        assert!(g2_zero(&PhotonMoments { mean: 2.0, variance: 1.0 }).unwrap() < 1.0);
        assert_eq!(g2_zero(&PhotonMoments { mean: 0.0, variance: 0.0 }), Err(StatsError::ZeroMean));
    }

    #[test]
    fn sigma_calibration() {
        let scale = CalibrationScale::per_mhz(1.92).unwrap();
        assert_eq!(sigma_to_variance(0.0, &scale), 0.0);
        assert!((sigma_to_variance(1e6, &scale) - 3.6864).abs() < 1e-12);
        assert!((sigma_to_variance(0.52e6, &scale) - 1.0).abs() < 0.01);
        assert!((variance_to_sigma(3.6864, &scale) - 1e6).abs() < 1e-6);
        assert!(CalibrationScale::new(0.0).is_err());
    }

    #[test]
    fn beamsplitter() {
        assert_eq!(beamsplitter_combine(3.0, 5.0, 1.0).unwrap(), MixedField { n_coh: 3.0, n_th: 0.0 });
        assert_eq!(beamsplitter_combine(3.0, 5.0, 0.0).unwrap(), MixedField { n_coh: 0.0, n_th: 5.0 });
        let m = beamsplitter_combine(100.0, 1.0, 0.01).unwrap();
        assert!((m.n_coh - 1.0).abs() < 1e-15 && (m.n_th - 0.99).abs() < 1e-15);
        assert!(beamsplitter_combine(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn power_conversions() {
        assert_eq!(flux_to_power(0.0, F_H, 133e6), 0.0);
        let p = flux_to_power(0.16, F_H, 133e6);
        assert!((p / 119e-18 - 1.0).abs() < 0.01, "{p}");
        let p2 = flux_to_power(2.0, F_H, 133e6);
        assert!((p2 / 1.49e-15 - 1.0).abs() < 0.01);
        assert!((power_to_flux(p2, F_H, 133e6) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn bath_power() {
        let corr = BathCorrection::new(440e-15, 133e6).unwrap();
        assert_eq!(bath_corrected_power(0.0, 0.0, F_H, &corr), 0.0);
        assert!((bath_corrected_power(0.1, 0.0, F_H, &corr) - 44e-15).abs() < 1e-27);
        let p = bath_corrected_power(0.0, 1.0, F_H, &corr);
        assert!((p - 1.836e-15).abs() < 1e-18);
    }

    #[test]
    fn resolution() {
        let m = resolution_metrics(&[1.5, 1.5, 1.5]).unwrap();
        assert_eq!((m.std, m.cv), (0.0, 0.0));
        assert_eq!(resolution_metrics(&[1.0]), Err(StatsError::InsufficientData(1)));
        // negative shifts give the same CV
        let m = resolution_metrics(&[-1.0, -2.0, -3.0]).unwrap();
        assert!((m.cv - 0.5).abs() < 1e-15);
    }
}
