//! Config-driven synthetic sweeps and end-to-end extraction of photon
//! statistics from fitted reflection traces.
//!
//! Forward model per control point: photon moments from [`photonstats`],
//! mean resonance `mu = mu_0 + shift(<n>)` through the configured shift
//! polynomial, spread `sigma^2 = sigma_0^2 + Var(n) / alpha^2`, rendered with
//! [`FullModelParams::response`] on the configured window.
//!
//! Extraction inverts it: one base calibration, one measurement fit per
//! trace, `<n> = shift^-1(mu - mu_base)` and
//! `Var(n) = alpha^2 (sigma^2 - sigma_base^2)`.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitkit::{
    fit_base_calibration_with, fit_measurement_with, polynomial_fit, FitOptions, BaseCalibration, ComplexSweep, FitError, FullModelParams,
    Polynomial,
};
use crate::par::{self, Execution};
use crate::photonstats::{
    beamsplitter_combine, flux_to_power, mixed_moments, planck_mean_photon, CalibrationScale, MixedField,
    PhotonMoments, RadiatorState,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        PipelineError::Config { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Control is the radiator temperature, K.
    Thermal,
    /// Control is the delivered coherent flux, photon/(s·Hz).
    Coherent,
    /// Control is the radiator temperature, K, combined on the beam splitter
    /// with a fixed coherent input flux.
    Mixed,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Thermal => "thermal",
            Mode::Coherent => "coherent",
            Mode::Mixed => "mixed",
        }
    }

    pub fn control_unit(self) -> &'static str {
        match self {
            Mode::Thermal | Mode::Mixed => "K",
            Mode::Coherent => "photon/(s*Hz)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterBand {
    pub f0_hz: f64,
    pub fwhm_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeWindow {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub points: usize,
}

fn default_n_max() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mode: Mode,
    /// Control grid, strictly increasing; units per [`Mode`].
    pub control: Vec<f64>,
    /// Coherent flux before the beam splitter in mixed mode, photon/(s·Hz).
    #[serde(default)]
    pub coherent_flux: f64,
    /// Radiator temperature of the reference trace, K.
    pub base_temperature_k: f64,
    pub radiator_freq_hz: f64,
    pub filter: FilterBand,
    /// Δn = alpha·σ, photon/MHz.
    pub alpha_per_mhz: f64,
    /// Beam-splitter transmissivity for the coherent arm.
    pub transmissivity: f64,
    /// Chain parameters of the reference trace; `dist.sigma` is the
    /// intrinsic spread and `dist.mu` the unshifted resonance.
    pub truth: FullModelParams,
    /// Resonance shift versus mean photon number, ascending coefficients,
    /// Hz. Only `shift(n) - shift(0)` is used.
    pub shift_poly_hz: Vec<f64>,
    /// Upper end of the photon-number range searched when inverting the
    /// shift.
    #[serde(default = "default_n_max")]
    pub n_max: f64,
    pub window: ProbeWindow,
    /// RMS magnitude of the complex noise, as a fraction of the span of
    /// `|S|` over the noiseless trace.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// Upper bound on concurrently running fits.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Starting point of the base calibration; `truth` when absent.
    #[serde(default)]
    pub fit_init: Option<FullModelParams>,
    /// Iteration cap for every fit; the engine default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: SweepConfig =
            serde_json::from_str(text).map_err(|e| PipelineError::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(PipelineError::config(field, format!("{v} is not finite")))
            }
        };
        if self.control.is_empty() {
            return Err(PipelineError::config("control", "grid is empty"));
        }
        for (i, &c) in self.control.iter().enumerate() {
            finite(&format!("control[{i}]"), c)?;
            if c < 0.0 {
                return Err(PipelineError::config(format!("control[{i}]"), format!("{c} is negative")));
            }
        }
        if let Some(i) = self.control.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(PipelineError::config(format!("control[{}]", i + 1), "grid must be strictly increasing"));
        }
        finite("coherent_flux", self.coherent_flux)?;
        if self.coherent_flux < 0.0 {
            return Err(PipelineError::config("coherent_flux", "must be >= 0"));
        }
        finite("base_temperature_k", self.base_temperature_k)?;
        if self.base_temperature_k < 0.0 {
            return Err(PipelineError::config("base_temperature_k", "must be >= 0"));
        }
        RadiatorState::new(self.base_temperature_k, self.radiator_freq_hz)
            .map_err(|e| PipelineError::config("radiator_freq_hz", e.to_string()))?;
        if !(self.filter.f0_hz > 0.0 && self.filter.fwhm_hz > 0.0) {
            return Err(PipelineError::config("filter", "f0_hz and fwhm_hz must be > 0"));
        }
        CalibrationScale::per_mhz(self.alpha_per_mhz).map_err(|e| PipelineError::config("alpha_per_mhz", e.to_string()))?;
        if !(0.0..=1.0).contains(&self.transmissivity) {
            return Err(PipelineError::config("transmissivity", format!("{} is outside [0, 1]", self.transmissivity)));
        }
        self.truth.validate().map_err(|e| PipelineError::config(format!("truth.{}", e.field), e.to_string()))?;
        if let Some(init) = &self.fit_init {
            init.validate().map_err(|e| PipelineError::config(format!("fit_init.{}", e.field), e.to_string()))?;
        }
        if self.shift_poly_hz.is_empty() || self.shift_poly_hz.iter().any(|c| !c.is_finite()) {
            return Err(PipelineError::config("shift_poly_hz", "needs at least one finite coefficient"));
        }
        if !(self.n_max > 0.0 && self.n_max.is_finite()) {
            return Err(PipelineError::config("n_max", "must be > 0"));
        }
        if !self.shift_is_monotone() {
            return Err(PipelineError::config("shift_poly_hz", "shift is not strictly monotone on [0, n_max]"));
        }
        let w = &self.window;
        if !(w.start_hz > 0.0 && w.stop_hz > w.start_hz && w.stop_hz.is_finite()) {
            return Err(PipelineError::config("window", "need 0 < start_hz < stop_hz"));
        }
        if w.points < crate::fitkit::MIN_FIT_POINTS {
            return Err(PipelineError::config(
                "window.points",
                format!("need at least {} points", crate::fitkit::MIN_FIT_POINTS),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(PipelineError::config("noise", "must be >= 0"));
        }
        if self.workers == Some(0) {
            return Err(PipelineError::config("workers", "must be >= 1"));
        }
        Ok(())
    }

    pub fn scale(&self) -> CalibrationScale {
        CalibrationScale::per_mhz(self.alpha_per_mhz).expect("validated")
    }

    pub fn shift_polynomial(&self) -> Polynomial {
        Polynomial { coeffs: self.shift_poly_hz.clone() }
    }

    /// `shift(n) - shift(0)`, Hz.
    pub fn shift(&self, n: f64) -> f64 {
        let p = self.shift_polynomial();
        p.eval(n) - p.eval(0.0)
    }

    fn shift_is_monotone(&self) -> bool {
        let samples: Vec<f64> = (0..=1000).map(|k| self.shift(self.n_max * k as f64 / 1000.0)).collect();
        samples.windows(2).all(|w| w[1] > w[0]) || samples.windows(2).all(|w| w[1] < w[0])
    }

    /// Mean photon number whose shift equals `delta_mu`, if within
    /// `[0, n_max]`.
    pub fn invert_shift(&self, delta_mu: f64) -> Option<f64> {
        let p = self.shift_polynomial();
        p.invert(delta_mu + p.eval(0.0), 0.0, self.n_max)
    }

    fn radiator(&self, t: f64) -> f64 {
        planck_mean_photon(&RadiatorState { t, f: self.radiator_freq_hz })
    }

    /// Field reaching the detector at `control`.
    pub fn field_at(&self, control: f64) -> Result<MixedField, PipelineError> {
        let field = match self.mode {
            Mode::Thermal => MixedField { n_coh: 0.0, n_th: self.radiator(control) },
            Mode::Coherent => MixedField { n_coh: control, n_th: 0.0 },
            Mode::Mixed => beamsplitter_combine(self.coherent_flux, self.radiator(control), self.transmissivity)
                .map_err(|e| PipelineError::config("transmissivity", e.to_string()))?,
        };
        Ok(field)
    }

    /// Field of the reference trace: radiator at base temperature, coherent
    /// drive off.
    pub fn reference_field(&self) -> MixedField {
        match self.mode {
            Mode::Coherent => MixedField { n_coh: 0.0, n_th: 0.0 },
            Mode::Thermal | Mode::Mixed => MixedField { n_coh: 0.0, n_th: self.radiator(self.base_temperature_k) },
        }
    }

    /// Full-model parameters of a trace taken with photon moments `m`.
    pub fn params_for(&self, m: &PhotonMoments) -> FullModelParams {
        let sigma0 = self.truth.dist.sigma;
        let excess = m.variance.max(0.0).sqrt() / self.scale().alpha;
        let mut p = self.truth;
        p.dist.mu = self.truth.dist.mu + self.shift(m.mean);
        p.dist.sigma = (sigma0 * sigma0 + excess * excess).sqrt();
        p.res.f_r = p.dist.mu;
        p
    }
}

/// True values behind one synthetic trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub n_coh: f64,
    pub n_th: f64,
    pub mean_n: f64,
    pub variance_n: f64,
    pub mu_hz: f64,
    pub sigma_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub control: f64,
    pub truth: Truth,
    pub trace: ComplexSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: SweepConfig,
    pub base: DataPoint,
    pub points: Vec<DataPoint>,
}

impl Dataset {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let ds: Dataset = serde_json::from_str(text).map_err(|e| PipelineError::Format(format!("dataset: {e}")))?;
        ds.config.validate()?;
        Ok(ds)
    }
}

/// Add circular complex Gaussian noise of RMS magnitude `rms`.
pub fn add_complex_noise(values: &mut [Complex64], rms: f64, rng: &mut ChaCha8Rng) {
    if rms == 0.0 {
        return;
    }
    let s = rms / std::f64::consts::SQRT_2;
    for v in values {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v += Complex64::new(s * re, s * im);
    }
}

/// Span of `|S|` over a trace.
pub fn magnitude_span(values: &[Complex64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .map(|v| v.norm())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), m| (a.min(m), b.max(m)));
    hi - lo
}

fn render(cfg: &SweepConfig, field: MixedField, control: f64, stream: u64) -> Result<DataPoint, PipelineError> {
    let m = mixed_moments(&field);
    let p = cfg.params_for(&m);
    let w = &cfg.window;
    if !(p.dist.mu > w.start_hz && p.dist.mu < w.stop_hz) {
        return Err(PipelineError::config(
            "window",
            format!("resonance at {} Hz for control {control} falls outside the probe window", p.dist.mu),
        ));
    }
    let clean = ComplexSweep::linspace(w.start_hz, w.stop_hz, w.points, |f| p.response(f))?;
    let mut values = clean.values().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let rms = cfg.noise * magnitude_span(&values);
    add_complex_noise(&mut values, rms, &mut rng);
    Ok(DataPoint {
        control,
        truth: Truth {
            n_coh: field.n_coh,
            n_th: field.n_th,
            mean_n: m.mean,
            variance_n: m.variance,
            mu_hz: p.dist.mu,
            sigma_hz: p.dist.sigma,
        },
        trace: ComplexSweep::new(clean.freqs().to_vec(), values)?,
    })
}

/// Synthesize the reference trace and one trace per control value.
/// Trace `k` (reference = 0) draws its noise from ChaCha8 stream `k` of the
/// configured seed.
pub fn simulate_sweep(cfg: &SweepConfig) -> Result<Dataset, PipelineError> {
    cfg.validate()?;
    let base = render(cfg, cfg.reference_field(), f64::NAN, 0)?;
    let base = DataPoint { control: if cfg.mode == Mode::Coherent { 0.0 } else { cfg.base_temperature_k }, ..base };
    let points = cfg
        .control
        .iter()
        .enumerate()
        .map(|(i, &c)| render(cfg, cfg.field_at(c)?, c, i as u64 + 1))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { config: cfg.clone(), base, points })
}

/// One row of extracted statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub mode: String,
    pub control: f64,
    pub control_unit: String,
    pub mu_hz: f64,
    pub sigma_hz: f64,
    /// photon/(s·Hz)
    pub mean_n: f64,
    pub variance_n: f64,
    pub g2: f64,
    pub power_w: f64,
    pub converged: bool,
    pub residual_rms: f64,
    pub iterations: usize,
}

impl StatsRecord {
    /// `1 + (variance - mean) / mean^2`; NaN for zero mean.
    pub fn g2_from_moments(mean: f64, variance: f64) -> f64 {
        if mean == 0.0 {
            return f64::NAN;
        }
        1.0 + (variance - mean) / (mean * mean)
    }
}

pub const STATS_HEADER: [&str; 12] = [
    "mode",
    "control",
    "control_unit",
    "mu_hz",
    "sigma_hz",
    "mean_n_photon_per_s_hz",
    "variance_n",
    "g2",
    "power_w",
    "converged",
    "residual_rms",
    "iterations",
];

/// Base calibration plus per-trace fits and conversion to statistics.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub calibration: BaseCalibration,
    pub records: Vec<StatsRecord>,
}

impl Extraction {
    pub fn all_converged(&self) -> bool {
        self.calibration.fit.converged && self.records.iter().all(|r| r.converged)
    }
}

pub fn extract_statistics(ds: &Dataset) -> Result<Extraction, PipelineError> {
    extract_statistics_with(ds, Execution::default())
}

/// Fits run concurrently, at most `config.workers` at a time; records
/// follow the order of `ds.points`.
pub fn extract_statistics_with(ds: &Dataset, exec: Execution) -> Result<Extraction, PipelineError> {
    let cfg = &ds.config;
    let init = cfg.fit_init.unwrap_or(cfg.truth);
    let mut opts = FitOptions { exec, ..FitOptions::default() };
    if let Some(n) = cfg.max_iter {
        opts.max_iter = n;
    }
    let calibration = fit_base_calibration_with(&ds.base.trace, &init, &opts)?;
    let mu_base = calibration.params.dist.mu;
    let sigma_base = calibration.params.dist.sigma;
    let alpha = cfg.scale().alpha;

    let fits = par::with_workers(exec, cfg.workers, || {
        par::map_slice(exec, &ds.points, |pt| fit_measurement_with(&pt.trace, &calibration, &opts))
    });
    let mut records = Vec::with_capacity(fits.len());
    for (pt, fit) in ds.points.iter().zip(fits) {
        let fit = fit?;
        let mean_n = cfg.invert_shift(fit.mu - mu_base).unwrap_or(f64::NAN);
        let variance_n = alpha * alpha * (fit.sigma * fit.sigma - sigma_base * sigma_base);
        records.push(StatsRecord {
            mode: cfg.mode.label().to_string(),
            control: pt.control,
            control_unit: cfg.mode.control_unit().to_string(),
            mu_hz: fit.mu,
            sigma_hz: fit.sigma,
            mean_n,
            variance_n,
            g2: StatsRecord::g2_from_moments(mean_n, variance_n),
            power_w: flux_to_power(mean_n, cfg.filter.f0_hz, cfg.filter.fwhm_hz),
            converged: fit.fit.converged,
            residual_rms: fit.fit.residual_norm,
            iterations: fit.fit.n_iter,
        });
    }
    Ok(Extraction { calibration, records })
}

/// Cubic shift calibration from photon numbers and fitted resonance shifts.
pub fn fit_shift_calibration(mean_n: &[f64], shift_hz: &[f64]) -> Result<Polynomial, PipelineError> {
    Ok(polynomial_fit(mean_n, shift_hz, 3)?)
}

fn csv_error(e: csv::Error) -> PipelineError {
    PipelineError::Format(format!("csv: {e}"))
}

pub fn write_stats_csv<W: Write>(out: W, records: &[StatsRecord]) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(STATS_HEADER).map_err(csv_error)?;
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stats_csv<R: Read>(input: R) -> Result<Vec<StatsRecord>, PipelineError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = rd.records();
    let header = rows.next().ok_or_else(|| PipelineError::Format("empty stats table".into()))?.map_err(csv_error)?;
    if header.iter().ne(STATS_HEADER) {
        return Err(PipelineError::Format(format!("unexpected stats header {:?}", header)));
    }
    rows.map(|row| row.map_err(csv_error)?.deserialize(None).map_err(csv_error)).collect()
}

pub const TRACE_HEADER: [&str; 3] = ["f_p_hz", "re", "im"];

pub fn write_trace_csv<W: Write>(out: W, sweep: &ComplexSweep) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER).map_err(csv_error)?;
    for (f, v) in sweep.freqs().iter().zip(sweep.values()) {
        w.serialize((f, v.re, v.im)).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<ComplexSweep, PipelineError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(csv_error)?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(PipelineError::Format(format!("unexpected trace header {:?}", header)));
    }
    let mut freqs = Vec::new();
    let mut values = Vec::new();
    for row in rd.deserialize() {
        let (f, re, im): (f64, f64, f64) = row.map_err(csv_error)?;
        freqs.push(f);
        values.push(Complex64::new(re, im));
    }
    Ok(ComplexSweep::new(freqs, values)?)
}

/// One row of a photon-statistics plot table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub series: String,
    pub mean_n: f64,
    pub variance_n: f64,
    pub g2: f64,
}

pub const REPORT_HEADER: [&str; 4] = ["series", "mean_n_photon_per_s_hz", "variance_n", "g2"];

/// Concatenate stats tables into a long-format table keyed by series.
pub fn report_rows(tables: &[(String, Vec<StatsRecord>)]) -> Vec<ReportRow> {
    tables
        .iter()
        .flat_map(|(series, recs)| {
            recs.iter().map(move |r| ReportRow {
                series: series.clone(),
                mean_n: r.mean_n,
                variance_n: r.variance_n,
                g2: r.g2,
            })
        })
        .collect()
}

pub fn write_report_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(REPORT_HEADER).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
