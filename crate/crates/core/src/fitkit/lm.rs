use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{wrap_angle, ComplexSweep, FitError, MIN_FIT_POINTS};
use crate::par::{self, Execution};

/// Upper bound on the undamped Gauss-Newton steps taken after the damped loop stops.
const POLISH_STEPS: usize = 8;

/// Relative cost change treated as summation rounding.
const ROUNDING: f64 = 1e-12;

/// Name, bounds and natural scale of one fitted parameter.
///
/// `scale` is the parameter's typical magnitude. It sets the floor of the
/// finite-difference step (`fd_rel_step * max(|p|, scale)`) and the initial
/// damping metric. Angles are fitted unbounded and wrapped into (-π, π] on
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: f64,
    pub angle: bool,
}

impl ParamSpec {
    pub fn free(name: impl Into<String>, scale: f64) -> Self {
        Self { name: name.into(), lower: f64::NEG_INFINITY, upper: f64::INFINITY, scale, angle: false }
    }

    pub fn bounded(name: impl Into<String>, lower: f64, upper: f64, scale: f64) -> Self {
        Self { name: name.into(), lower, upper, scale, angle: false }
    }

    pub fn angle(name: impl Into<String>) -> Self {
        Self { angle: true, ..Self::free(name, 1.0) }
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop when an accepted step lowers the residual sum of squares by less
    /// than this fraction.
    pub ftol: f64,
    /// Stop when every free column of the Jacobian is this close to
    /// orthogonal to the residual (cosine measure).
    pub gtol: f64,
    pub fd_rel_step: f64,
    /// RMS residual, relative to the RMS of the data, treated as an exact fit.
    pub zero_residual: f64,
    /// Flag (not fail) fits whose RMS residual exceeds this.
    pub residual_threshold: Option<f64>,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            ftol: 1e-10,
            gtol: 1e-8,
            fd_rel_step: 1e-6,
            zero_residual: 1e-12,
            residual_threshold: None,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    ZeroResidual,
    Gradient,
    ResidualChange,
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitWarning {
    /// The broadening parameter ended on its lower bound.
    SigmaAtLowerBound,
    /// Some parameter ended on a bound.
    AtBound(String),
    /// The residual is larger than the configured threshold.
    ResidualAboveThreshold { rms: f64, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// Root-mean-square magnitude of the complex residual.
    pub residual_norm: f64,
    /// Parameter covariance `s^2 (J^T J)^+` with `s^2 = SSR / (2N - p)`.
    pub covariance: DMatrix<f64>,
    pub n_iter: usize,
    pub converged: bool,
    /// Cosine gradient measure at the returned point.
    pub gradient_norm: f64,
    pub stop: StopReason,
    /// Sum of squared residuals after the initial point and each accepted
    /// step.
    pub cost_history: Vec<f64>,
    pub warnings: Vec<FitWarning>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.params.len()).map(|i| self.covariance[(i, i)].max(0.0).sqrt()).collect()
    }

    pub fn has_warning(&self, w: &FitWarning) -> bool {
        self.warnings.iter().any(|x| std::mem::discriminant(x) == std::mem::discriminant(w))
    }
}

/// Least-squares fit of a complex model to a sweep:
/// minimise `Σ |model(p, f_i) - value_i|^2`.
pub fn least_squares<M>(
    model: M,
    sweep: &ComplexSweep,
    init: &[f64],
    params: &[ParamSpec],
    opts: &FitOptions,
) -> Result<FitResult, FitError>
where
    M: Fn(&[f64], f64) -> Complex64 + Sync,
{
    sweep.require_points(MIN_FIT_POINTS)?;
    least_squares_xy(model, sweep.freqs(), sweep.values(), init, params, opts)
}

/// Same as [`least_squares`] on bare abscissa/ordinate slices, with no
/// ordering or minimum-length requirement beyond identifiability.
pub fn least_squares_xy<M>(
    model: M,
    x: &[f64],
    y: &[Complex64],
    init: &[f64],
    params: &[ParamSpec],
    opts: &FitOptions,
) -> Result<FitResult, FitError>
where
    M: Fn(&[f64], f64) -> Complex64 + Sync,
{
    assert_eq!(init.len(), params.len(), "one ParamSpec per parameter");
    assert_eq!(x.len(), y.len());
    let n_par = params.len();
    if 2 * x.len() < n_par {
        return Err(FitError::TooFewPoints { need: n_par.div_ceil(2), got: x.len() });
    }
    for (spec, &v) in params.iter().zip(init) {
        if !v.is_finite() {
            return Err(FitError::NonFinite(spec.name.clone()));
        }
        if v < spec.lower || v > spec.upper {
            return Err(FitError::InitOutOfBounds {
                name: spec.name.clone(),
                value: v,
                lower: spec.lower,
                upper: spec.upper,
            });
        }
    }

    let problem = Problem { model: &model, x, y, params, opts };
    problem.solve(init.to_vec())
}

struct Problem<'a, M> {
    model: &'a M,
    x: &'a [f64],
    y: &'a [Complex64],
    params: &'a [ParamSpec],
    opts: &'a FitOptions,
}

impl<M> Problem<'_, M>
where
    M: Fn(&[f64], f64) -> Complex64 + Sync,
{
    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        let mut r = DVector::zeros(2 * self.x.len());
        for (i, (&xi, &yi)) in self.x.iter().zip(self.y).enumerate() {
            let d = (self.model)(p, xi) - yi;
            r[2 * i] = d.re;
            r[2 * i + 1] = d.im;
        }
        r
    }

    fn step(&self, j: usize, p: &[f64]) -> f64 {
        self.opts.fd_rel_step * p[j].abs().max(self.params[j].scale)
    }

    /// Central-difference Jacobian, one column per parameter.
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let m = 2 * self.x.len();
        let cols = par::map_range(self.opts.exec, p.len(), |j| {
            let h = self.step(j, p);
            let mut plus = p.to_vec();
            let mut minus = p.to_vec();
            plus[j] += h;
            minus[j] -= h;
            let width = plus[j] - minus[j];
            let mut col = vec![0.0; m];
            for (i, &xi) in self.x.iter().enumerate() {
                let d = ((self.model)(&plus, xi) - (self.model)(&minus, xi)) / width;
                col[2 * i] = d.re;
                col[2 * i + 1] = d.im;
            }
            col
        });
        DMatrix::from_fn(m, p.len(), |i, j| cols[j][i])
    }

    /// Columns normalised to unit length; singular directions of that matrix
    /// name the degenerate parameter combinations.
    fn rank_check(&self, jac: &DMatrix<f64>) -> Result<(), FitError> {
        let n = jac.ncols();
        let norms: Vec<f64> = (0..n).map(|j| jac.column(j).norm()).collect();
        // sensitivity to a change of one natural scale, comparable across units
        let sensitivity: Vec<f64> = norms.iter().zip(self.params).map(|(n, s)| n * s.scale).collect();
        let max_sens = sensitivity.iter().cloned().fold(0.0, f64::max);
        let mut directions = Vec::new();
        for (j, &nj) in norms.iter().enumerate() {
            if !(nj > 0.0) || !(sensitivity[j] > max_sens * 1e-12) {
                directions.push(vec![(self.params[j].name.clone(), 1.0)]);
            }
        }
        if !directions.is_empty() {
            return Err(FitError::RankDeficient { directions });
        }
        let scaled = DMatrix::from_fn(jac.nrows(), n, |i, j| jac[(i, j)] / norms[j]);
        let svd = scaled.svd(false, true);
        let smax = svd.singular_values.max();
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= smax * 1e-10 {
                let dir: Vec<(String, f64)> = (0..n)
                    .filter(|&j| v_t[(k, j)].abs() > 0.1)
                    .map(|j| (self.params[j].name.clone(), v_t[(k, j)]))
                    .collect();
                directions.push(dir);
            }
        }
        if directions.is_empty() {
            Ok(())
        } else {
            Err(FitError::RankDeficient { directions })
        }
    }

    fn gradient_measure(&self, jac: &DMatrix<f64>, r: &DVector<f64>, active: &[bool]) -> f64 {
        let rn = r.norm();
        if rn == 0.0 {
            return 0.0;
        }
        let g = jac.tr_mul(r);
        (0..jac.ncols())
            .filter(|&j| !active[j])
            .map(|j| {
                let cn = jac.column(j).norm();
                if cn == 0.0 {
                    0.0
                } else {
                    g[j].abs() / (cn * rn)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Parameters pinned at a bound with the descent direction pointing out.
    fn active_set(&self, p: &[f64], g: &DVector<f64>) -> Vec<bool> {
        self.params
            .iter()
            .zip(p)
            .enumerate()
            .map(|(j, (spec, &v))| (v <= spec.lower && g[j] > 0.0) || (v >= spec.upper && g[j] < 0.0))
            .collect()
    }

    fn solve(&self, mut p: Vec<f64>) -> Result<FitResult, FitError> {
        let n_par = p.len();
        let data_rms = (self.y.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.y.len() as f64).sqrt();
        let zero_cost = {
            let t = self.opts.zero_residual * data_rms.max(f64::MIN_POSITIVE);
            t * t * self.y.len() as f64
        };

        let mut r = self.residuals(&p);
        let mut cost = r.norm_squared();
        if !cost.is_finite() {
            return Err(FitError::NonFinite("model output at the initial point".into()));
        }
        let mut jac = self.jacobian(&p);
        self.rank_check(&jac)?;

        let mut history = vec![cost];
        let mut diag: Vec<f64> = (0..n_par).map(|j| jac.column(j).norm_squared()).collect();
        let mut lambda = 1e-3;
        let mut nu = 2.0;
        let mut n_iter = 0;
        let mut stop = StopReason::MaxIterations;

        if cost <= zero_cost {
            stop = StopReason::ZeroResidual;
        } else {
            while n_iter < self.opts.max_iter {
                n_iter += 1;
                let g = jac.tr_mul(&r);
                let active = self.active_set(&p, &g);
                if self.gradient_measure(&jac, &r, &active) < self.opts.gtol {
                    stop = StopReason::Gradient;
                    break;
                }
                let free: Vec<usize> = (0..n_par).filter(|&j| !active[j]).collect();
                let jtj = jac.tr_mul(&jac);

                let Some(delta_free) = damped_step(&jtj, &g, &diag, lambda, &free) else {
                    lambda *= nu;
                    nu *= 2.0;
                    continue;
                };
                let mut trial = p.clone();
                for (k, &j) in free.iter().enumerate() {
                    trial[j] = self.params[j].clamp(p[j] + delta_free[k]);
                }
                let delta = DVector::from_iterator(n_par, trial.iter().zip(&p).map(|(a, b)| a - b));
                let predicted = -(2.0 * delta.dot(&g) + (&jtj * &delta).dot(&delta));
                let r_trial = self.residuals(&trial);
                let cost_trial = r_trial.norm_squared();

                if cost_trial.is_finite() && cost_trial < cost {
                    let rho = if predicted > 0.0 { (cost - cost_trial) / predicted } else { 1.0 };
                    let rel_change = (cost - cost_trial) / cost;
                    p = trial;
                    r = r_trial;
                    cost = cost_trial;
                    history.push(cost);
                    jac = self.jacobian(&p);
                    for (j, d) in diag.iter_mut().enumerate() {
                        *d = d.max(jac.column(j).norm_squared());
                    }
                    lambda *= (1.0_f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                    nu = 2.0;
                    if cost <= zero_cost {
                        stop = StopReason::ZeroResidual;
                        break;
                    }
                    if rel_change < self.opts.ftol {
                        stop = StopReason::ResidualChange;
                        break;
                    }
                } else {
                    lambda *= nu;
                    nu *= 2.0;
                    if lambda > 1e32 {
                        stop = StopReason::Stalled;
                        break;
                    }
                }
            }
        }

        // undamped steps remove the residual bias left by the damping; near the
        // minimum the cost change drops below rounding, so acceptance there
        // rests on the gradient measure
        if matches!(stop, StopReason::Gradient | StopReason::ResidualChange) {
            let mut g = jac.tr_mul(&r);
            let mut active = self.active_set(&p, &g);
            let mut measure = self.gradient_measure(&jac, &r, &active);
            for _ in 0..POLISH_STEPS {
                let free: Vec<usize> = (0..n_par).filter(|&j| !active[j]).collect();
                let Some(delta) = damped_step(&jac.tr_mul(&jac), &g, &diag, 0.0, &free) else {
                    break;
                };
                let mut trial = p.clone();
                for (k, &j) in free.iter().enumerate() {
                    trial[j] = self.params[j].clamp(p[j] + delta[k]);
                }
                let r_trial = self.residuals(&trial);
                let cost_trial = r_trial.norm_squared();
                if !(cost_trial.is_finite() && cost_trial <= cost * (1.0 + ROUNDING)) {
                    break;
                }
                let jac_trial = self.jacobian(&trial);
                let g_trial = jac_trial.tr_mul(&r_trial);
                let active_trial = self.active_set(&trial, &g_trial);
                let measure_trial = self.gradient_measure(&jac_trial, &r_trial, &active_trial);
                if cost_trial < cost {
                    history.push(cost_trial);
                } else if measure_trial >= measure {
                    break;
                }
                p = trial;
                r = r_trial;
                cost = cost.min(cost_trial);
                jac = jac_trial;
                g = g_trial;
                active = active_trial;
                measure = measure_trial;
                if measure < self.opts.gtol {
                    break;
                }
            }
        }

        let g = jac.tr_mul(&r);
        let active = self.active_set(&p, &g);
        let gradient_norm = self.gradient_measure(&jac, &r, &active);
        let converged = stop == StopReason::ZeroResidual || gradient_norm < self.opts.gtol;

        let n_obs = 2 * self.x.len();
        let dof = n_obs.saturating_sub(n_par).max(1);
        let s2 = cost / dof as f64;
        let covariance = pseudo_inverse(&jac.tr_mul(&jac)) * s2;

        let mut warnings = Vec::new();
        for (spec, v) in self.params.iter().zip(p.iter_mut()) {
            if spec.angle {
                *v = wrap_angle(*v);
            } else if *v <= spec.lower || *v >= spec.upper {
                warnings.push(FitWarning::AtBound(spec.name.clone()));
            }
        }
        let residual_norm = (cost / self.x.len() as f64).sqrt();
        if let Some(threshold) = self.opts.residual_threshold {
            if residual_norm > threshold {
                warnings.push(FitWarning::ResidualAboveThreshold { rms: residual_norm, threshold });
            }
        }

        Ok(FitResult {
            names: self.params.iter().map(|s| s.name.clone()).collect(),
            params: p,
            residual_norm,
            covariance,
            n_iter,
            converged,
            gradient_norm,
            stop,
            cost_history: history,
            warnings,
        })
    }
}

/// Solve `(J^T J + λ D) δ = -g` restricted to the free parameters.
fn damped_step(jtj: &DMatrix<f64>, g: &DVector<f64>, diag: &[f64], lambda: f64, free: &[usize]) -> Option<Vec<f64>> {
    let k = free.len();
    if k == 0 {
        return None;
    }
    let mut a = DMatrix::from_fn(k, k, |i, j| jtj[(free[i], free[j])]);
    for (i, &j) in free.iter().enumerate() {
        a[(i, i)] += lambda * diag[j];
    }
    let rhs = DVector::from_iterator(k, free.iter().map(|&j| -g[j]));
    let chol = a.cholesky()?;
    let sol = chol.solve(&rhs);
    if sol.iter().all(|v| v.is_finite()) {
        Some(sol.iter().copied().collect())
    } else {
        None
    }
}

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    // symmetric scaling keeps the tolerance meaningful across units
    let scale: Vec<f64> = (0..n).map(|i| m[(i, i)].abs().sqrt().max(f64::MIN_POSITIVE)).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (scale[i] * scale[j]));
    let inv = scaled
        .pseudo_inverse(1e-14)
        .unwrap_or_else(|_| DMatrix::from_element(n, n, f64::NAN));
    DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (scale[i] * scale[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitkit::linspace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn linear_model(p: &[f64], x: f64) -> Complex64 {
        Complex64::new(p[0] * x + p[1], 0.0)
    }

    #[test]
    fn exact_init_stops_immediately() {
        let x = linspace(0.0, 1.0, 20);
        let y: Vec<Complex64> = x.iter().map(|&v| linear_model(&[2.0, -1.0], v)).collect();
        let specs = [ParamSpec::free("a", 1.0), ParamSpec::free("b", 1.0)];
        let fit = least_squares_xy(linear_model, &x, &y, &[2.0, -1.0], &specs, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.n_iter <= 2);
        assert_eq!(fit.residual_norm, 0.0);
    }

    #[test]
    fn linear_regression_matches_normal_equations() {
        let x = linspace(-3.0, 5.0, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let y: Vec<f64> = x.iter().map(|&v| 1.7 * v - 0.4 + noise.sample(&mut rng)).collect();
        // closed form
        let n = x.len() as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let icpt = (sy - slope * sx) / n;

        let yc: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let specs = [ParamSpec::free("a", 1.0), ParamSpec::free("b", 1.0)];
        let fit = least_squares_xy(linear_model, &x, &yc, &[0.0, 0.0], &specs, &FitOptions::default()).unwrap();
        assert!(fit.converged, "{:?}", fit.stop);
        assert!((fit.params[0] - slope).abs() < 1e-10, "{} {} {:?} {} {:?}", fit.params[0] - slope, fit.params[1] - icpt, fit.stop, fit.n_iter, fit.cost_history);
        assert!((fit.params[1] - icpt).abs() < 1e-10);
        for w in fit.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let x = linspace(0.0, 1.0, 10);
        let y = vec![Complex64::new(1.0, 0.0); 10];
        let model = |p: &[f64], x: f64| Complex64::new(p[0] + 0.0 * p[1] * x, 0.0);
        let specs = [ParamSpec::free("offset", 1.0), ParamSpec::free("ghost", 1.0)];
        match least_squares_xy(model, &x, &y, &[0.5, 1.0], &specs, &FitOptions::default()) {
            Err(FitError::RankDeficient { directions }) => {
                assert_eq!(directions[0][0].0, "ghost");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn collinear_parameters_are_named() {
        let x = linspace(0.0, 1.0, 10);
        let y: Vec<Complex64> = x.iter().map(|&v| Complex64::new(3.0 * v, 0.0)).collect();
        let model = |p: &[f64], x: f64| Complex64::new((p[0] + p[1]) * x, 0.0);
        let specs = [ParamSpec::free("a", 1.0), ParamSpec::free("b", 1.0)];
        let err = least_squares_xy(model, &x, &y, &[1.0, 1.0], &specs, &FitOptions::default()).unwrap_err();
        let FitError::RankDeficient { directions } = err else { panic!() };
        let names: Vec<&str> = directions[0].iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    fn bounds_are_respected() {
        // unconstrained optimum at a = -1, bound at 0
        let x = linspace(0.0, 1.0, 10);
        let y: Vec<Complex64> = x.iter().map(|&v| Complex64::new(-v, 0.0)).collect();
        let model = |p: &[f64], x: f64| Complex64::new(p[0] * x, 0.0);
        let specs = [ParamSpec::bounded("a", 0.0, 10.0, 1.0)];
        let fit = least_squares_xy(model, &x, &y, &[2.0], &specs, &FitOptions::default()).unwrap();
        assert_eq!(fit.params[0], 0.0);
        assert!(fit.converged);
        assert!(fit.warnings.contains(&FitWarning::AtBound("a".into())));
    }

    #[test]
    fn init_outside_bounds_rejected() {
        let x = linspace(0.0, 1.0, 10);
        let y = vec![Complex64::new(0.0, 0.0); 10];
        let model = |p: &[f64], x: f64| Complex64::new(p[0] * x, 0.0);
        let specs = [ParamSpec::bounded("a", 0.0, 1.0, 1.0)];
        assert!(matches!(
            least_squares_xy(model, &x, &y, &[2.0], &specs, &FitOptions::default()),
            Err(FitError::InitOutOfBounds { .. })
        ));
    }

    #[test]
    fn iteration_cap_gives_unconverged_result() {
        let x = linspace(-2.0, 2.0, 30);
        let y: Vec<Complex64> = x.iter().map(|&v| Complex64::new((1.3 * v).exp(), 0.0)).collect();
        let model = |p: &[f64], x: f64| Complex64::new((p[0] * x).exp(), 0.0);
        let specs = [ParamSpec::free("k", 1.0)];
        let opts = FitOptions { max_iter: 1, ..FitOptions::default() };
        let fit = least_squares_xy(model, &x, &y, &[0.1], &specs, &opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.stop, StopReason::MaxIterations);
    }

    #[test]
    fn deterministic() {
        let x = linspace(-2.0, 2.0, 30);
        let y: Vec<Complex64> = x.iter().map(|&v| Complex64::new((1.3 * v).exp(), 0.2 * v)).collect();
        let model = |p: &[f64], x: f64| Complex64::new((p[0] * x).exp(), p[1] * x);
        let specs = [ParamSpec::free("k", 1.0), ParamSpec::free("s", 1.0)];
        let a = least_squares_xy(model, &x, &y, &[0.1, 0.0], &specs, &FitOptions::default()).unwrap();
        let seq = FitOptions { exec: Execution::Sequential, ..FitOptions::default() };
        let b = least_squares_xy(model, &x, &y, &[0.1, 0.0], &specs, &seq).unwrap();
        assert_eq!(a.params, b.params);
    }
}
