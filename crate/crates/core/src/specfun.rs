//! Scaled complementary error function and Faddeeva function for complex
//! arguments.
//!
//! The evaluation is region-switched. Far from the origin a Laplace continued
//! fraction is used (truncated to one or two terms for very large |z|). Near
//! the real axis and in the intermediate region an exponentially convergent
//! series in the style of Zaghloul & Ali (ACM TOMS 916, with Johnson's
//! modifications) is summed to machine precision. Along the imaginary axis the
//! real scaled error function supplies the dominant term.
//!
//! Both entry points reject non-finite input and refuse arguments for which
//! the reflection formula would have to produce a non-representable
//! `exp(z^2)`.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SpecFunError {
    #[error("non-finite argument {0}")]
    NonFinite(Complex64),
    #[error("exp(z^2) is not representable for z = {0}")]
    Range(Complex64),
}

/// 1/sqrt(pi)
const ISPI: f64 = 0.564_189_583_547_756_3;
/// ln(f64::MAX) - ln(2); the reflection adds 2 exp(..).
const LN_REFLECT_MAX: f64 = 709.782_712_893_384 - std::f64::consts::LN_2;

// Series constants for double precision: a = pi / sqrt(-ln(eps / 2)),
// c = 2a / pi.
const SERIES_A: f64 = 0.518_321_480_430_085_929_872;
const SERIES_A2: f64 = 0.268_657_157_075_235_951_582;
const SERIES_C: f64 = 0.329_973_702_884_629_072_537;
const SERIES_RELERR: f64 = f64::EPSILON;

/// `exp(z^2) * erfc(z)`.
pub fn erfcx(z: Complex64) -> Result<Complex64, SpecFunError> {
    check_finite(z)?;
    faddeeva(Complex64::new(-z.im, z.re)).map_err(|_| SpecFunError::Range(z))
}

/// Faddeeva function `w(z) = exp(-z^2) erfc(-iz) = erfcx(-iz)`.
pub fn faddeeva_w(z: Complex64) -> Result<Complex64, SpecFunError> {
    check_finite(z)?;
    faddeeva(z)
}

/// erfcx for arguments with non-negative real part, where no overflow is
/// possible. Used by the forward models on their hot path.
pub(crate) fn erfcx_right_half(z: Complex64) -> Complex64 {
    debug_assert!(z.re >= 0.0 && z.re.is_finite() && z.im.is_finite());
    match faddeeva(Complex64::new(-z.im, z.re)) {
        Ok(v) => v,
        Err(_) => unreachable!("erfcx is bounded on the closed right half-plane"),
    }
}

/// Real scaled complementary error function.
pub fn erfcx_real(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        if x < -26.7 {
            return f64::INFINITY;
        }
        return 2.0 * (x * x).exp() - erfcx_real(-x);
    }
    if x < 26.0 {
        (x * x).exp() * libm::erfc(x)
    } else if x < 1.0e8 {
        // Asymptotic series, converged to double precision for x >= 26.
        let t = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..12 {
            term *= -((2 * k - 1) as f64) * t;
            sum += term;
        }
        ISPI / x * sum
    } else {
        ISPI / x
    }
}

fn check_finite(z: Complex64) -> Result<(), SpecFunError> {
    if z.re.is_finite() && z.im.is_finite() {
        Ok(())
    } else {
        Err(SpecFunError::NonFinite(z))
    }
}

fn faddeeva(z: Complex64) -> Result<Complex64, SpecFunError> {
    let x = z.re.abs();
    let y = z.im;
    let ya = y.abs();

    if x == 0.0 && ya <= 7.0 {
        // Pure imaginary argument: w(iy) = erfcx(y), real.
        return Ok(Complex64::new(erfcx_real(y), z.re));
    }

    let far = ya > 7.0 || (x > 6.0 && (ya > 0.1 || (x > 8.0 && ya > 1e-10) || x > 28.0));
    if far {
        continued_fraction(z)
    } else if x < 10.0 {
        Ok(near_series(z))
    } else {
        Ok(axis_series(z))
    }
}

/// Laplace continued fraction, evaluated in the upper half-plane and
/// reflected with `w(z) = 2 exp(-z^2) - w(-z)` below it.
fn continued_fraction(z: Complex64) -> Result<Complex64, SpecFunError> {
    let x = z.re.abs();
    let y = z.im;
    let ya = y.abs();
    if y < 0.0 && (ya - x) * (ya + x) > LN_REFLECT_MAX {
        return Err(SpecFunError::Range(z));
    }
    // Evaluate at z for y >= 0, at -z otherwise (both in the upper half-plane).
    let xs = if y < 0.0 { -z.re } else { z.re };

    let upper = if x + ya > 4000.0 {
        if x + ya > 1.0e7 {
            // w(z) ~ i / (sqrt(pi) z), scaled to avoid overflow.
            if x > ya {
                let yax = ya / xs;
                let denom = ISPI / (xs + yax * ya);
                Complex64::new(denom * yax, denom)
            } else {
                let xya = xs / ya;
                let denom = ISPI / (xya * xs + ya);
                Complex64::new(denom, denom * xya)
            }
        } else {
            // w(z) ~ i z / (sqrt(pi) (z^2 - 1/2))
            let dr = xs * xs - ya * ya - 0.5;
            let di = 2.0 * xs * ya;
            let denom = ISPI / (dr * dr + di * di);
            Complex64::new(denom * (xs * di - ya * dr), denom * (xs * dr + ya * di))
        }
    } else {
        // Term count from a fit of the number needed for double precision.
        let nu = (3.9 + 11.398 / (0.08254 * x + 0.1421 * ya + 0.2023)).floor();
        let mut wr = xs;
        let mut wi = ya;
        let mut k = 0.5 * (nu - 1.0);
        while k > 0.4 {
            let denom = k / (wr * wr + wi * wi);
            wr = xs - wr * denom;
            wi = ya + wi * denom;
            k -= 0.5;
        }
        let denom = ISPI / (wr * wr + wi * wi);
        Complex64::new(denom * wi, denom * wr)
    };

    if y < 0.0 {
        let minus_z2 = Complex64::new((ya - xs) * (xs + ya), 2.0 * xs * y);
        Ok(2.0 * minus_z2.exp() - upper)
    } else {
        Ok(upper)
    }
}

fn sinh_taylor(x: f64) -> f64 {
    x * (1.0 + (x * x) * (1.0 / 6.0 + (1.0 / 120.0) * (x * x)))
}

/// sin(x)/x given a precomputed sin(x).
fn sinc(x: f64, sinx: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - (1.0 / 6.0) * (x * x)
    } else {
        sinx / x
    }
}

#[derive(Default)]
struct Sums {
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
    s5: f64,
}

impl Sums {
    fn finish(&self, z: Complex64, base: Complex64) -> Complex64 {
        base + Complex64::new(
            0.5 * SERIES_C * z.im * (self.s2 + self.s3),
            0.5 * SERIES_C * (self.s5 - self.s4).copysign(z.re),
        )
    }
}

/// Exponentially convergent series for |Im z| <= 7 and |Re z| < 10.
fn near_series(z: Complex64) -> Complex64 {
    let x = z.re.abs();
    let y = z.im;
    let a = SERIES_A;
    let a2 = SERIES_A2;
    let mut s = Sums::default();
    let mut prod2ax = 1.0;
    let mut prodm2ax = 1.0;

    let expx2 = if x < 5e-4 {
        // sum4 and sum5 are accumulated together as sum5 - sum4 to avoid
        // cancellation; exponentials via Taylor series.
        let x2 = x * x;
        let expx2 = 1.0 - x2 * (1.0 - 0.5 * x2);
        let ax2 = 2.0 * a * x;
        let exp2ax = 1.0 + ax2 * (1.0 + ax2 * (0.5 + ax2 / 6.0));
        let expm2ax = 1.0 - ax2 * (1.0 - ax2 * (0.5 - ax2 / 6.0));
        let mut n = 1.0_f64;
        loop {
            let coef = (-a2 * n * n).exp() * expx2 / (a2 * n * n + y * y);
            prod2ax *= exp2ax;
            prodm2ax *= expm2ax;
            s.s1 += coef;
            s.s2 += coef * prodm2ax;
            s.s3 += coef * prod2ax;
            s.s5 += coef * (2.0 * a) * n * sinh_taylor((2.0 * a) * n * x);
            if coef * prod2ax < SERIES_RELERR * s.s3 {
                break;
            }
            n += 1.0;
        }
        expx2
    } else {
        let expx2 = (-x * x).exp();
        let exp2ax = (2.0 * a * x).exp();
        let expm2ax = 1.0 / exp2ax;
        let mut n = 1.0_f64;
        loop {
            let coef = (-a2 * n * n).exp() * expx2 / (a2 * n * n + y * y);
            prod2ax *= exp2ax;
            prodm2ax *= expm2ax;
            s.s1 += coef;
            s.s2 += coef * prodm2ax;
            s.s4 += coef * prodm2ax * (a * n);
            s.s3 += coef * prod2ax;
            s.s5 += coef * prod2ax * (a * n);
            // sum5 decays slowest
            if coef * prod2ax * (a * n) < SERIES_RELERR * s.s5 {
                break;
            }
            n += 1.0;
        }
        expx2
    };

    let expx2erfcxy = if y > -6.0 {
        expx2 * erfcx_real(y)
    } else {
        2.0 * (y * y - x * x).exp()
    };

    let base = if y > 5.0 {
        // imaginary contributions cancel here
        let sinxy = (x * y).sin();
        Complex64::new(
            (expx2erfcxy - SERIES_C * y * s.s1) * (2.0 * x * y).cos()
                + (SERIES_C * x * expx2) * sinxy * sinc(x * y, sinxy),
            0.0,
        )
    } else {
        let xs = z.re;
        let sinxy = (xs * y).sin();
        let sin2xy = (2.0 * xs * y).sin();
        let cos2xy = (2.0 * xs * y).cos();
        let coef1 = expx2erfcxy - SERIES_C * y * s.s1;
        let coef2 = SERIES_C * xs * expx2;
        Complex64::new(
            coef1 * cos2xy + coef2 * sinxy * sinc(xs * y, sinxy),
            coef2 * sinc(2.0 * xs * y, sin2xy) - coef1 * sin2xy,
        )
    };
    s.finish(z, base)
}

/// Series for 10 <= |Re z| <= 28 with |Im z| <= 1e-10: only the terms
/// centred on n0 = x / a contribute, summed outward in both directions.
fn axis_series(z: Complex64) -> Complex64 {
    let x = z.re.abs();
    let y = z.im;
    let a = SERIES_A;
    let a2 = SERIES_A2;
    let base = Complex64::new((-x * x).exp(), 0.0);
    let mut s = Sums::default();

    let n0 = (x / a + 0.5).floor();
    let dx = a * n0 - x;
    s.s3 = (-dx * dx).exp() / (a2 * (n0 * n0) + y * y);
    s.s5 = a * n0 * s.s3;
    let exp1 = (4.0 * a * dx).exp();
    let mut exp1dn = 1.0;
    let mut dn = 1.0_f64;
    while dn < n0 {
        let np = n0 + dn;
        let nm = n0 - dn;
        let mut tp = (-(a * dn + dx) * (a * dn + dx)).exp();
        exp1dn *= exp1;
        let mut tm = tp * exp1dn;
        tp /= a2 * (np * np) + y * y;
        tm /= a2 * (nm * nm) + y * y;
        s.s3 += tp + tm;
        s.s5 += a * (np * tp + nm * tm);
        if a * (np * tp + nm * tm) < SERIES_RELERR * s.s5 {
            return s.finish(z, base);
        }
        dn += 1.0;
    }
    loop {
        let np = n0 + dn;
        let tp = (-(a * dn + dx) * (a * dn + dx)).exp() / (a2 * (np * np) + y * y);
        s.s3 += tp;
        s.s5 += a * np * tp;
        if a * np * tp < SERIES_RELERR * s.s5 {
            return s.finish(z, base);
        }
        dn += 1.0;
    }
}
