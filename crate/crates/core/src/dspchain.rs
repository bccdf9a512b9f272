//! Synthetic digitizer chain: real IF traces, digital down-conversion,
//! windowed-sinc FIR low-pass, decimation and trace averaging.
//!
//! Default constants: 250 Msps sampling, 62.5 MHz intermediate frequency,
//! 32 μs traces (8000 samples), 500 kHz low-pass and decimation by 4 to one
//! IQ point per 16 ns.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};

pub const SAMPLE_RATE_HZ: f64 = 250e6;
pub const IF_HZ: f64 = 62.5e6;
pub const TRACE_DURATION_S: f64 = 32e-6;
pub const LOWPASS_CUTOFF_HZ: f64 = 500e3;
pub const DECIMATION: usize = 4;
pub const AVERAGES: usize = 20_000;

/// Tap count and design rate of the default low-pass.
const DEFAULT_TAPS: usize = 129;
const DEFAULT_DESIGN_RATE_HZ: f64 = SAMPLE_RATE_HZ / DECIMATION as f64;

/// Traces summed per work unit when averaging; fixes the reduction order.
const AVERAGE_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("frequency {f} Hz is not below the Nyquist frequency of {fs} Hz sampling")]
    Aliasing { f: f64, fs: f64 },
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("stream of {len} samples is shorter than the {taps}-tap filter")]
    TooShort { len: usize, taps: usize },
    #[error("streams differ: {0}")]
    Mismatch(String),
    #[error("invalid {field} = {value}: {constraint}")]
    Invalid { field: &'static str, value: f64, constraint: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTrace {
    pub samples: Vec<f64>,
    /// Sampling rate, Hz.
    pub fs: f64,
    /// Time of the first sample, s.
    pub t0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqStream {
    pub iq: Vec<Complex64>,
    /// Sample rate, Hz.
    pub rate: f64,
    /// Time of the first sample, s.
    pub t0: f64,
}

impl IqStream {
    pub fn mean(&self) -> Complex64 {
        self.iq.iter().sum::<Complex64>() / self.iq.len() as f64
    }

    /// Root-mean-square magnitude about zero.
    pub fn rms(&self) -> f64 {
        (self.iq.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.iq.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    Hamming,
    Blackman,
}

impl Window {
    /// Window value at tap `n` of `len` (symmetric form).
    fn at(self, n: usize, len: usize) -> f64 {
        if len == 1 {
            return 1.0;
        }
        let x = 2.0 * PI * n as f64 / (len - 1) as f64;
        match self {
            Window::Rectangular => 1.0,
            Window::Hamming => 0.54 - 0.46 * x.cos(),
            Window::Blackman => 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
        }
    }
}

/// Windowed-sinc linear-phase low-pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirSpec {
    /// Cutoff frequency, Hz.
    pub cutoff: f64,
    pub n_taps: usize,
    pub window: Window,
}

impl Default for FirSpec {
    /// 500 kHz Blackman low-pass, 129 taps at the 62.5 Msps IQ rate.
    fn default() -> Self {
        Self { cutoff: LOWPASS_CUTOFF_HZ, n_taps: DEFAULT_TAPS, window: Window::Blackman }
    }
}

impl FirSpec {
    /// Default filter redesigned for `rate`, keeping its impulse-response
    /// duration (and hence its transition width) fixed.
    pub fn default_for_rate(rate: f64) -> Self {
        let half = ((DEFAULT_TAPS - 1) as f64 / 2.0 * rate / DEFAULT_DESIGN_RATE_HZ).round().max(1.0) as usize;
        Self { n_taps: 2 * half + 1, ..Self::default() }
    }

    pub fn validate(&self, rate: f64) -> Result<(), DspError> {
        if self.n_taps % 2 == 0 || self.n_taps == 0 {
            return Err(DspError::InvalidFilter(format!("n_taps = {} must be odd", self.n_taps)));
        }
        if !(self.cutoff > 0.0 && self.cutoff < rate / 2.0) {
            return Err(DspError::InvalidFilter(format!(
                "cutoff {} Hz must lie in (0, {}) for rate {} Hz",
                self.cutoff,
                rate / 2.0,
                rate
            )));
        }
        Ok(())
    }

    /// Samples of delay introduced by the filter.
    pub fn group_delay(&self) -> usize {
        (self.n_taps - 1) / 2
    }

    /// Tap vector for sample rate `rate`: palindromic, summing to one.
    pub fn taps(&self, rate: f64) -> Result<Vec<f64>, DspError> {
        self.validate(rate)?;
        let m = self.group_delay();
        let fc = self.cutoff / rate;
        let half: Vec<f64> = (0..=m)
            .map(|k| {
                // k is the distance from the centre tap
                let sinc = if k == 0 { 2.0 * fc } else { (2.0 * PI * fc * k as f64).sin() / (PI * k as f64) };
                sinc * self.window.at(m - k, self.n_taps)
            })
            .collect();
        let mut taps: Vec<f64> = (0..self.n_taps).map(|n| half[n.abs_diff(m)]).collect();
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        Ok(taps)
    }
}

/// Complex gain of a tap vector at frequency `f` for sample rate `rate`,
/// referenced to the centre tap.
pub fn frequency_response(taps: &[f64], f: f64, rate: f64) -> Complex64 {
    let m = (taps.len() - 1) as f64 / 2.0;
    taps.iter()
        .enumerate()
        .map(|(n, &h)| Complex64::from_polar(h, -2.0 * PI * f / rate * (n as f64 - m)))
        .sum()
}

/// Parameters of a synthetic IF tone with additive white noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneSpec {
    /// Amplitude, V.
    pub amp: f64,
    /// Phase, rad.
    pub phase: f64,
    /// Tone frequency, Hz.
    pub f_if: f64,
    /// Noise standard deviation per sample, V.
    pub noise_rms: f64,
    /// Trace length, s.
    pub duration: f64,
    /// Sampling rate, Hz.
    pub fs: f64,
}

impl ToneSpec {
    pub fn new(amp: f64, phase: f64, f_if: f64, noise_rms: f64, duration: f64, fs: f64) -> Result<Self, DspError> {
        let spec = Self { amp, phase, f_if, noise_rms, duration, fs };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let check = |field, value: f64, ok: bool, constraint| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(DspError::Invalid { field, value, constraint })
            }
        };
        check("fs", self.fs, self.fs > 0.0, "> 0")?;
        check("duration", self.duration, self.duration > 0.0, "> 0")?;
        check("noise_rms", self.noise_rms, self.noise_rms >= 0.0, ">= 0")?;
        check("amp", self.amp, true, "finite")?;
        check("phase", self.phase, true, "finite")?;
        if !(self.f_if >= 0.0 && self.f_if < self.fs / 2.0) {
            return Err(DspError::Aliasing { f: self.f_if, fs: self.fs });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.duration * self.fs).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Noiseless samples `amp cos(2π f_if t + phase)` at `t = n / fs`.
    fn add_tone(&self, out: &mut [f64]) {
        for (n, s) in out.iter_mut().enumerate() {
            *s += self.amp * (2.0 * PI * cycles(self.f_if, n as f64, self.fs) + self.phase).cos();
        }
    }

    /// Add the noise of repetition `index` of the experiment seeded with
    /// `seed`. Each repetition draws from its own ChaCha8 stream.
    fn add_noise(&self, out: &mut [f64], seed: u64, index: u64) {
        if self.noise_rms == 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        for s in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *s += self.noise_rms * z;
        }
    }

    /// Repetition `index` of the experiment seeded with `seed`.
    pub fn trace(&self, seed: u64, index: u64) -> RawTrace {
        let mut samples = vec![0.0; self.len()];
        self.add_tone(&mut samples);
        self.add_noise(&mut samples, seed, index);
        RawTrace { samples, fs: self.fs, t0: 0.0 }
    }
}

/// `amp cos(2π f_if t + phase)` plus seeded white Gaussian noise.
pub fn synth_raw_trace(
    amp: f64,
    phase: f64,
    f_if: f64,
    noise_rms: f64,
    duration: f64,
    fs: f64,
    seed: u64,
) -> Result<RawTrace, DspError> {
    Ok(ToneSpec::new(amp, phase, f_if, noise_rms, duration, fs)?.trace(seed, 0))
}

/// Fractional number of periods of `f` elapsed after `n` samples at `fs`;
/// reducing before scaling by 2π keeps long traces phase-exact.
fn cycles(f: f64, n: f64, fs: f64) -> f64 {
    (f * n / fs).fract()
}

/// Multiply by `e^{-2πi f_if t}`; one IQ sample per input sample.
pub fn digital_downconvert(trace: &RawTrace, f_if: f64) -> Result<IqStream, DspError> {
    if !(f_if >= 0.0 && f_if < trace.fs / 2.0) {
        return Err(DspError::Aliasing { f: f_if, fs: trace.fs });
    }
    let iq = trace
        .samples
        .iter()
        .enumerate()
        .map(|(n, &x)| Complex64::from_polar(x, -2.0 * PI * cycles(f_if, trace.t0 * trace.fs + n as f64, trace.fs)))
        .collect();
    Ok(IqStream { iq, rate: trace.fs, t0: trace.t0 })
}

/// Linear-phase FIR low-pass. Only fully overlapped outputs are kept, so the
/// result is `n_taps - 1` samples shorter; `t0` advances by the group delay.
pub fn fir_lowpass(stream: &IqStream, spec: &FirSpec) -> Result<IqStream, DspError> {
    fir_decimate(stream, spec, 1)
}

/// Keep every `factor`-th sample.
pub fn decimate(stream: &IqStream, factor: usize) -> Result<IqStream, DspError> {
    if factor == 0 {
        return Err(DspError::Invalid { field: "decimation", value: 0.0, constraint: ">= 1" });
    }
    Ok(IqStream {
        iq: stream.iq.iter().step_by(factor).copied().collect(),
        rate: stream.rate / factor as f64,
        t0: stream.t0,
    })
}

/// [`fir_lowpass`] followed by [`decimate`], evaluating only the kept
/// outputs.
pub fn fir_decimate(stream: &IqStream, spec: &FirSpec, factor: usize) -> Result<IqStream, DspError> {
    if factor == 0 {
        return Err(DspError::Invalid { field: "decimation", value: 0.0, constraint: ">= 1" });
    }
    let taps = spec.taps(stream.rate)?;
    let n = taps.len();
    if stream.iq.len() < n {
        return Err(DspError::TooShort { len: stream.iq.len(), taps: n });
    }
    let valid = stream.iq.len() - n + 1;
    let iq = (0..valid)
        .step_by(factor)
        .map(|k| {
            // palindromic taps: correlation equals convolution
            let window = &stream.iq[k..k + n];
            window.iter().zip(&taps).map(|(z, &h)| z * h).sum()
        })
        .collect();
    Ok(IqStream {
        iq,
        rate: stream.rate / factor as f64,
        t0: stream.t0 + spec.group_delay() as f64 / stream.rate,
    })
}

/// Pointwise mean of the first `n_rep` streams.
pub fn average_traces(streams: &[IqStream], n_rep: usize) -> Result<IqStream, DspError> {
    if n_rep == 0 || n_rep > streams.len() {
        return Err(DspError::Mismatch(format!("n_rep = {n_rep} with {} streams", streams.len())));
    }
    let first = &streams[0];
    let used = &streams[..n_rep];
    if let Some(s) = used.iter().find(|s| s.iq.len() != first.iq.len()) {
        return Err(DspError::Mismatch(format!("lengths {} and {}", first.iq.len(), s.iq.len())));
    }
    if let Some(s) = used.iter().find(|s| s.rate != first.rate) {
        return Err(DspError::Mismatch(format!("rates {} and {}", first.rate, s.rate)));
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); first.iq.len()];
    for s in used {
        for (a, z) in acc.iter_mut().zip(&s.iq) {
            *a += z;
        }
    }
    let scale = 1.0 / n_rep as f64;
    Ok(IqStream { iq: acc.into_iter().map(|z| z * scale).collect(), rate: first.rate, t0: first.t0 })
}

/// Demodulation settings: mixing frequency, low-pass and decimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demodulator {
    pub f_if: f64,
    pub fir: FirSpec,
    pub decimation: usize,
}

impl Demodulator {
    /// 62.5 MHz mixing, 500 kHz low-pass at the source rate `fs`,
    /// decimation by 4.
    pub fn standard(fs: f64) -> Self {
        Self { f_if: IF_HZ, fir: FirSpec::default_for_rate(fs), decimation: DECIMATION }
    }

    /// Down-convert, filter and decimate one trace.
    pub fn demodulate(&self, trace: &RawTrace) -> Result<IqStream, DspError> {
        fir_decimate(&digital_downconvert(trace, self.f_if)?, &self.fir, self.decimation)
    }

    /// Demodulate `n_rep` repetitions of `tone` and average them.
    ///
    /// Every stage is linear, so the raw traces are averaged first and the
    /// mean is demodulated once. Repetitions are summed in fixed-size
    /// batches and the batch sums reduced in index order, so the result does
    /// not depend on the execution mode.
    pub fn averaged(&self, exec: Execution, tone: &ToneSpec, n_rep: usize, seed: u64) -> Result<IqStream, DspError> {
        tone.validate()?;
        if n_rep == 0 {
            return Err(DspError::Invalid { field: "n_rep", value: 0.0, constraint: ">= 1" });
        }
        let len = tone.len();
        let n_batches = n_rep.div_ceil(AVERAGE_BATCH);
        let sums = par::map_range(exec, n_batches, |b| {
            let mut acc = vec![0.0; len];
            let lo = b * AVERAGE_BATCH;
            for i in lo..(lo + AVERAGE_BATCH).min(n_rep) {
                tone.add_noise(&mut acc, seed, i as u64);
            }
            acc
        });
        let mut mean = vec![0.0; len];
        for s in &sums {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n_rep as f64;
        }
        tone.add_tone(&mut mean);
        self.demodulate(&RawTrace { samples: mean, fs: tone.fs, t0: 0.0 })
    }
}
