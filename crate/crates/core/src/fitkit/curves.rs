use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::circle::initial_linewidth;
use super::lm::{least_squares_xy, FitOptions, FitResult, ParamSpec};
use super::FitError;

#[derive(Debug, Clone, PartialEq)]
pub struct LorentzianFit {
    pub center: f64,
    /// Full width at half maximum, in x units.
    pub fwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub fit: FitResult,
}

impl LorentzianFit {
    pub fn eval(&self, x: f64) -> f64 {
        lorentzian(self.center, self.fwhm, self.amplitude, self.offset, x)
    }
}

fn lorentzian(center: f64, fwhm: f64, amplitude: f64, offset: f64, x: f64) -> f64 {
    let u = 2.0 * (x - center) / fwhm;
    amplitude / (1.0 + u * u) + offset
}

/// Least-squares fit of `A / (1 + (2 (x - x0) / FWHM)^2) + c`.
pub fn lorentzian_fit(x: &[f64], y: &[f64]) -> Result<LorentzianFit, FitError> {
    if x.len() != y.len() {
        return Err(FitError::InvalidSweep(format!("{} abscissae but {} ordinates", x.len(), y.len())));
    }
    if x.len() < 5 {
        return Err(FitError::TooFewPoints { need: 5, got: x.len() });
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FitError::InvalidSweep("abscissae not strictly increasing".into()));
    }
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let i_peak = y.iter().position(|&v| v == hi).unwrap_or(0);
    let height: Vec<f64> = y.iter().map(|v| (v - lo).max(0.0).sqrt()).collect();
    let fwhm0 = initial_linewidth(x, &height, i_peak);
    let span = x[x.len() - 1] - x[0];

    let specs = [
        ParamSpec::free("center", fwhm0),
        ParamSpec::bounded("fwhm", 0.0, f64::INFINITY, fwhm0),
        ParamSpec::free("amplitude", (hi - lo).abs().max(f64::MIN_POSITIVE)),
        ParamSpec::free("offset", (hi - lo).abs().max(lo.abs()).max(f64::MIN_POSITIVE)),
    ];
    let init = [x[i_peak], fwhm0.min(span), hi - lo, lo];
    let yc: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let model = |p: &[f64], x: f64| Complex64::new(lorentzian(p[0], p[1], p[2], p[3], x), 0.0);
    let fit = least_squares_xy(model, x, &yc, &init, &specs, &FitOptions::default())?;
    Ok(LorentzianFit { center: fit.params[0], fwhm: fit.params[1], amplitude: fit.params[2], offset: fit.params[3], fit })
}

/// Polynomial with coefficients in ascending order of power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        let coeffs = self.coeffs.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect::<Vec<_>>();
        Polynomial { coeffs: if coeffs.is_empty() { vec![0.0] } else { coeffs } }
    }

    /// Solve `p(x) = y` on `[lo, hi]` by bisection. `None` unless `p(lo)` and
    /// `p(hi)` bracket `y`; on a monotone interval the root is unique.
    pub fn invert(&self, y: f64, lo: f64, hi: f64) -> Option<f64> {
        let (mut a, mut b) = (lo, hi);
        let (fa, fb) = (self.eval(a) - y, self.eval(b) - y);
        if fa == 0.0 {
            return Some(a);
        }
        if fb == 0.0 {
            return Some(b);
        }
        if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
            return None;
        }
        let rising = fb > 0.0;
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if (self.eval(m) - y > 0.0) == rising {
                b = m;
            } else {
                a = m;
            }
        }
        Some(0.5 * (a + b))
    }
}

/// Least-squares polynomial of the given degree.
///
/// The fit is done in the centred and scaled variable `t = (x - m) / s` via
/// SVD, then expanded back to coefficients of `x`.
pub fn polynomial_fit(x: &[f64], y: &[f64], degree: usize) -> Result<Polynomial, FitError> {
    if x.len() != y.len() {
        return Err(FitError::InvalidSweep(format!("{} abscissae but {} ordinates", x.len(), y.len())));
    }
    if x.len() <= degree {
        return Err(FitError::Underdetermined { points: x.len(), degree });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite("polynomial data".into()));
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let s = x.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
    let s = if s > 0.0 { s } else { 1.0 };
    let n_coef = degree + 1;
    let design = DMatrix::from_fn(x.len(), n_coef, |i, k| ((x[i] - m) / s).powi(k as i32));
    let sv = design.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-12 * sv.max() {
        return Err(FitError::Underdetermined { points: distinct(x), degree });
    }
    let scaled = design
        .svd(true, true)
        .solve(&DVector::from_column_slice(y), 1e-14)
        .map_err(|_| FitError::Underdetermined { points: distinct(x), degree })?;

    // p(x) = Σ_k b_k ((x - m)/s)^k = Σ_k b_k s^-k Σ_j C(k,j) x^j (-m)^(k-j)
    let mut coeffs = vec![0.0; n_coef];
    for k in 0..n_coef {
        let bk = scaled[k] / s.powi(k as i32);
        let mut binom = 1.0;
        for j in 0..=k {
            coeffs[j] += bk * binom * (-m).powi((k - j) as i32);
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
    }
    Ok(Polynomial { coeffs })
}

fn distinct(x: &[f64]) -> usize {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitkit::linspace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn lorentzian_passband_round_trip() {
        let x = linspace(8.0e9, 8.9e9, 181);
        let y: Vec<f64> = x.iter().map(|&v| lorentzian(8.428e9, 133e6, 2.5, 0.1, v)).collect();
        let fit = lorentzian_fit(&x, &y).unwrap();
        assert!(fit.fit.converged);
        assert!(((fit.center - 8.428e9) / 8.428e9).abs() < 1e-6);
        assert!(((fit.fwhm - 133e6) / 133e6).abs() < 1e-6);
        assert!(((fit.amplitude - 2.5) / 2.5).abs() < 1e-6);
        assert!(((fit.offset - 0.1) / 0.1).abs() < 1e-6);
    }

    #[test]
    fn symmetric_data_centre_at_peak() {
        let x = linspace(-10.0, 10.0, 41);
        let y: Vec<f64> = x.iter().map(|&v| lorentzian(0.0, 3.0, 1.0, 0.0, v)).collect();
        let fit = lorentzian_fit(&x, &y).unwrap();
        assert!(fit.center.abs() <= 0.5);
    }

    #[test]
    fn flat_data_rank_deficient() {
        let x = linspace(0.0, 1.0, 20);
        let y = vec![3.0; 20];
        assert!(matches!(lorentzian_fit(&x, &y), Err(FitError::RankDeficient { .. })));
    }

    #[test]
    fn cubic_exact() {
        let x = linspace(-2.0, 3.0, 10);
        let y: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        let p = polynomial_fit(&x, &y, 3).unwrap();
        for (c, e) in p.coeffs.iter().zip([0.0, 0.0, 0.0, 1.0]) {
            assert!((c - e).abs() < 1e-10, "{:?}", p.coeffs);
        }
    }

    #[test]
    fn affine_exact() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| -0.5 * v + 3.0).collect();
        let p = polynomial_fit(&x, &y, 1).unwrap();
        assert!((p.coeffs[0] - 3.0).abs() < 1e-12);
        assert!((p.coeffs[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn cubic_residual_below_noise() {
        let x = linspace(0.0, 10.0, 60);
        let truth = Polynomial { coeffs: vec![1.0, -0.8, 0.012, 0.001] };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let y: Vec<f64> = x.iter().map(|&v| truth.eval(v) + noise.sample(&mut rng)).collect();
        let p = polynomial_fit(&x, &y, 3).unwrap();
        let rms = (x.iter().zip(&y).map(|(&a, &b)| (p.eval(a) - b).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        assert!(rms < 0.05);
    }

    #[test]
    fn underdetermined() {
        assert!(matches!(polynomial_fit(&[1.0, 2.0], &[1.0, 2.0], 2), Err(FitError::Underdetermined { .. })));
        assert!(matches!(
            polynomial_fit(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], 1),
            Err(FitError::Underdetermined { .. })
        ));
    }

    #[test]
    fn inversion() {
        let p = Polynomial { coeffs: vec![0.0, -0.8, 0.012] };
        let x = p.invert(p.eval(7.0), 0.0, 20.0).unwrap();
        assert!((x - 7.0).abs() < 1e-12);
        assert!(p.invert(100.0, 0.0, 20.0).is_none());
        assert_eq!(p.derivative().coeffs, vec![-0.8, 0.024]);
    }
}
