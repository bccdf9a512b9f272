use bolostat::specfun::{erfcx, faddeeva_w};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn reference_grid() -> Vec<(Complex64, Complex64)> {
    let text = include_str!("data/erfcx_reference.csv");
    text.lines()
        .skip(1)
        .map(|line| {
            let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
            (Complex64::new(v[0], v[1]), Complex64::new(v[2], v[3]))
        })
        .collect()
}

#[test]
fn matches_high_precision_reference_grid() {
    let grid = reference_grid();
    assert_eq!(grid.len(), 2500);
    let mut worst = (0.0, Complex64::new(0.0, 0.0));
    for (z, expect) in grid {
        let got = erfcx(z).unwrap();
        let err = (got - expect).norm() / expect.norm();
        if err > worst.0 {
            worst = (err, z);
        }
    }
    println!("worst relative error {:.3e} at {}", worst.0, worst.1);
    assert!(worst.0 < 1e-10);
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (mut q0, mut q1) = (1.0, x);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * x * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let dq = n as f64 * (x * q1 - q0) / (x * x - 1.0);
                out.push((x, 2.0 / ((1.0 - x * x) * dq * dq)));
                break;
            }
        }
    }
    out
}

/// erfcx(z) = 2/sqrt(pi) * int_0^inf exp(-t^2 - 2 z t) dt, by composite
/// Gauss-Legendre quadrature. Stable for Re z >= 0.
fn erfcx_quadrature(z: Complex64) -> Complex64 {
    let rule = gauss_legendre(20);
    // integrand is below 1e-300 beyond t = 27
    let panels = 2000;
    let width = 27.0 / panels as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * width;
        for &(x, w) in &rule {
            let t = mid + 0.5 * width * x;
            acc += w * (-(t * t) - 2.0 * z * t).exp();
        }
    }
    acc * (0.5 * width) * 2.0 / PI.sqrt()
}

#[test]
fn matches_quadrature_in_right_half_plane() {
    let mut worst: f64 = 0.0;
    for (z, _) in reference_grid().into_iter().filter(|(z, _)| z.re >= 0.0).step_by(7) {
        let q = erfcx_quadrature(z);
        worst = worst.max((erfcx(z).unwrap() - q).norm() / q.norm());
    }
    let big = erfcx_quadrature(Complex64::new(100.0, 0.0));
    assert!((big.re - 0.005_641_61).abs() < 1e-8);
    worst = worst.max((erfcx(Complex64::new(100.0, 0.0)).unwrap() - big).norm() / big.norm());
    println!("worst relative deviation from quadrature {worst:.3e}");
    assert!(worst < 1e-10);
}

#[test]
fn derivative_identity_against_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let two_over_sqrt_pi = 2.0 / PI.sqrt();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let z = Complex64::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
        let h = 1e-5 * (1.0 + z.norm());
        let fd = (erfcx(z + h).unwrap() - erfcx(z - h).unwrap()) / (2.0 * h);
        let exact = 2.0 * z * erfcx(z).unwrap() - two_over_sqrt_pi;
        worst = worst.max((fd - exact).norm() / exact.norm());
    }
    println!("worst derivative deviation {worst:.3e}");
    assert!(worst < 1e-6);
}

#[test]
fn reflection_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..500 {
        let r = rng.gen_range(0.0..3.0_f64);
        let t = rng.gen_range(0.0..2.0 * PI);
        let z = Complex64::from_polar(r, t);
        let lhs = erfcx(-z).unwrap();
        let rhs = 2.0 * (z * z).exp() - erfcx(z).unwrap();
        assert!((lhs - rhs).norm() / lhs.norm() < 1e-9, "z = {z}");
    }
}

#[test]
fn faddeeva_is_rotated_erfcx() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let z = Complex64::new(rng.gen_range(-12.0..12.0), rng.gen_range(-5.0..12.0));
        let w = faddeeva_w(z).unwrap();
        assert_eq!(w, erfcx(Complex64::new(z.im, -z.re)).unwrap());
        let mirrored = faddeeva_w(-z.conj()).unwrap();
        assert!((mirrored - w.conj()).norm() <= 1e-14 * w.norm());
    }
    // w(i) = erfcx(1)
    let w = faddeeva_w(Complex64::new(0.0, 1.0)).unwrap();
    assert!((w.re - 0.427_58).abs() < 1e-5);
}
