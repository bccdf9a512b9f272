#![allow(dead_code)]

use std::f64::consts::PI;

use bolostat::fitkit::{ComplexSweep, FullModelParams, FullParam};
use bolostat::response::{BackgroundParams, FreqDistribution, LineParams, ResonatorParams};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub const WINDOW: (f64, f64, usize) = (490e6, 560e6, 351);

pub fn paper_resonator(phi: f64) -> ResonatorParams {
    ResonatorParams { f_r: 524e6, gamma_c: 4.8e6, gamma: 18.7e6, phi }
}

pub fn reference_model() -> FullModelParams {
    FullModelParams {
        res: paper_resonator(0.1),
        dist: FreqDistribution { mu: 524e6, sigma: 0.2e6 },
        bg: BackgroundParams {
            s_b: 0.9,
            f_b: 545e6,
            gamma_bc: 0.25 * 2.0 * PI * 25e6,
            gamma_b: 2.0 * PI * 25e6,
            phi_b: 0.6,
            modes: 1,
        },
        line: LineParams { tau: 1e-8, varphi: 0.4 },
    }
}

pub fn with_dist(p: &FullModelParams, mu: f64, sigma: f64) -> FullModelParams {
    let mut q = *p;
    q.res.f_r = mu;
    q.dist = FreqDistribution { mu, sigma };
    q
}

pub fn trace(p: &FullModelParams) -> ComplexSweep {
    ComplexSweep::linspace(WINDOW.0, WINDOW.1, WINDOW.2, |f| p.response(f)).unwrap()
}

/// Every parameter moved by 5%: relative for magnitudes, 5% of the relevant
/// linewidth for absolute frequencies, 0.05 rad for angles. `sign`
/// alternates the direction between neighbouring parameters.
pub fn perturbed(p: &FullModelParams, sign: f64) -> FullModelParams {
    let mut v = p.to_vec();
    for (k, param) in FullParam::ALL.iter().enumerate() {
        let s = if k % 2 == 0 { sign } else { -sign };
        v[k] = match param {
            FullParam::Mu => v[k] + s * 0.05 * p.res.gamma / (2.0 * PI),
            FullParam::FB => v[k] + s * 0.05 * p.bg.gamma_b / (2.0 * PI),
            _ if param.is_angle() => v[k] + s * 0.05,
            _ => v[k] * (1.0 + s * 0.05),
        };
    }
    p.with_vec(&v)
}

pub fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm()
}

/// Physicists' Gauss-Hermite rule: nodes and weights for `∫ f(x) e^{-x²} dx`.
/// Golub-Welsch eigenvalues seed a Newton refinement on the orthonormal
/// recurrence, which also yields the weights.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let jacobi = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64 / 2.0).sqrt() } else { 0.0 });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    nodes
        .into_iter()
        .map(|mut x| {
            for _ in 0..100 {
                let (p, d) = hermite_orthonormal(n, x);
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
            let dp = hermite_orthonormal(n, x).1;
            (x, 2.0 / (dp * dp))
        })
        .collect()
}

/// Orthonormal Hermite function value p_n(x) and derivative, normalised so
/// that the Gauss weights are 2 / p_n'(x)².
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = x * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

/// Gaussian average of the bare line by `n`-node Gauss-Hermite quadrature.
pub fn gauss_hermite_average(res: &ResonatorParams, dist: &FreqDistribution, f_p: f64, rule: &[(f64, f64)]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &(x, w) in rule {
        let f_r = dist.mu + std::f64::consts::SQRT_2 * dist.sigma * x;
        acc += w * bare(res, f_r, f_p);
    }
    acc / PI.sqrt()
}

fn bare(res: &ResonatorParams, f_r: f64, f_p: f64) -> Complex64 {
    Complex64::new(1.0, 0.0) - Complex64::from_polar(res.gamma_c, res.phi) / Complex64::new(0.5 * res.gamma, 2.0 * PI * (f_r - f_p))
}

/// Gaussian average of the bare line by adaptive Gauss-Legendre quadrature.
///
/// With `2π(f_r - f_p) = (γ/2) tan θ` the Lorentzian factor becomes
/// `e^{-iθ} / (2π cos θ)`, smooth on (-π/2, π/2) for any σ. Breakpoints at
/// the Gaussian's centre and flanks keep narrow distributions resolved.
pub fn adaptive_average(res: &ResonatorParams, dist: &FreqDistribution, f_p: f64) -> Complex64 {
    let g = res.gamma;
    let theta_of = |f: f64| (4.0 * PI * (f - f_p) / g).atan();
    let integrand = |theta: f64| {
        let f_r = f_p + g * theta.tan() / (4.0 * PI);
        let z = (f_r - dist.mu) / dist.sigma;
        let density = (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * dist.sigma);
        Complex64::from_polar(density * g / (2.0 * PI * theta.cos()), -theta)
    };
    let mut cuts = vec![-PI / 2.0, PI / 2.0];
    for k in [-40.0, -12.0, -6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0, 12.0, 40.0] {
        cuts.push(theta_of(dist.mu + k * dist.sigma));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let rule = gauss_legendre(15);
    let mut total = Complex64::new(0.0, 0.0);
    for w in cuts.windows(2) {
        total += adaptive(&integrand, w[0], w[1], &rule, 0);
    }
    Complex64::new(1.0, 0.0) - Complex64::from_polar(res.gamma_c / g, res.phi) * total
}

fn panel(f: &impl Fn(f64) -> Complex64, a: f64, b: f64, rule: &[(f64, f64)]) -> Complex64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    rule.iter().map(|&(x, w)| w * f(c + h * x)).sum::<Complex64>() * h
}

fn adaptive(f: &impl Fn(f64) -> Complex64, a: f64, b: f64, rule: &[(f64, f64)], depth: usize) -> Complex64 {
    let m = 0.5 * (a + b);
    let whole = panel(f, a, b, rule);
    let halves = panel(f, a, m, rule) + panel(f, m, b, rule);
    if depth >= 30 || (whole - halves).norm() <= 1e-14 {
        halves
    } else {
        adaptive(f, a, m, rule, depth + 1) + adaptive(f, m, b, rule, depth + 1)
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let dp = legendre(n, x).1;
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}
