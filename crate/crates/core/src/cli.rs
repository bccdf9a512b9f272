//! `bolostat` command-line surface.
//!
//! Exit status: 0 on success, 1 on usage or validation errors, 2 when a fit
//! did not converge (outputs are still written).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dspchain::{self, Demodulator, FirSpec, RawTrace, ToneSpec, Window};
use crate::photonstats::{self, MixedField, PhotonMoments, RadiatorState};
use crate::pipeline::{self, Dataset, PipelineError, StatsRecord, SweepConfig};
use crate::Execution;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

/// Environment variable supplying a default seed.
pub const SEED_ENV: &str = "BOLOSTAT_SEED";

#[derive(Debug, Parser)]
#[command(name = "bolostat", version, about = "Photon statistics from resonator line broadening")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a trace dataset from a sweep config.
    Simulate(SimulateArgs),
    /// Fit a dataset and write the statistics table.
    Fit(FitArgs),
    /// Evaluate photon-statistics formulas.
    Stats(StatsArgs),
    /// Down-convert, filter, decimate and average raw digitizer traces.
    Demod(DemodArgs),
    /// Merge statistics tables into a plot table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Sweep config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Dataset output (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed and BOLOSTAT_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write every trace as `<dir>/trace_<k>.csv` (k = 0 is the reference).
    #[arg(long)]
    csv_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Dataset (JSON) written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    /// Statistics table output (CSV); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config on the dataset before fitting (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Maximum number of concurrent fits.
    #[arg(long)]
    workers: Option<usize>,
    /// Accepted for interface uniformity; fitting is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Run fits sequentially.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Thermal state with this mean photon number.
    #[arg(long)]
    thermal_mean: Option<f64>,
    /// Coherent state with this mean photon number.
    #[arg(long)]
    coherent_mean: Option<f64>,
    /// Displaced thermal state: coherent and thermal photon numbers.
    #[arg(long, num_args = 2, value_names = ["N_COH", "N_TH"])]
    mixed: Option<Vec<f64>>,
    /// Planck occupation at this radiator temperature, K (needs --freq).
    #[arg(long)]
    temperature: Option<f64>,
    /// Mode frequency, Hz.
    #[arg(long)]
    freq: Option<f64>,
    /// Filter bandwidth, Hz; prints the power carried by the mean flux.
    #[arg(long)]
    bandwidth: Option<f64>,
}

#[derive(Debug, Args)]
struct DemodArgs {
    /// Raw trace CSV with header `t_s,v`; one trace per file.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Synthesize the traces instead: tone amplitude, V.
    #[arg(long)]
    tone_amp: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    tone_phase: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_rms: f64,
    #[arg(long, default_value_t = 1)]
    averages: usize,
    #[arg(long, default_value_t = dspchain::TRACE_DURATION_S)]
    duration: f64,
    #[arg(long, default_value_t = dspchain::SAMPLE_RATE_HZ)]
    fs: f64,
    #[arg(long, default_value_t = dspchain::IF_HZ)]
    f_if: f64,
    #[arg(long, default_value_t = dspchain::LOWPASS_CUTOFF_HZ)]
    cutoff: f64,
    /// Tap count; scaled from the default filter when absent.
    #[arg(long)]
    taps: Option<usize>,
    #[arg(long, default_value_t = dspchain::DECIMATION)]
    decimation: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// IQ output CSV (`t_s,i,q`); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Statistics tables written by `fit`; the series label is the mode
    /// column.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    NotConverged(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<dspchain::DspError> for Failure {
    fn from(e: dspchain::DspError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

/// Parse `argv` (program name first) and run; returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Stats(a) => stats(a),
        Command::Demod(a) => demod(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INVALID
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("warning: {msg}");
            EXIT_NOT_CONVERGED
        }
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Invalid(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut cfg = SweepConfig::from_json(&pipeline::read_text(&a.config)?)?;
    if let Some(seed) = a.seed.or(env_seed()?) {
        cfg.seed = seed;
    }
    let ds = pipeline::simulate_sweep(&cfg)?;
    let mut out = create(&a.out)?;
    out.write_all(ds.to_json().as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    if let Some(dir) = a.csv_dir {
        std::fs::create_dir_all(&dir)?;
        let traces = std::iter::once(&ds.base).chain(&ds.points);
        for (k, pt) in traces.enumerate() {
            let mut w = create(&dir.join(format!("trace_{k}.csv")))?;
            pipeline::write_trace_csv(&mut w, &pt.trace)?;
        }
    }
    Ok(())
}

fn fit(a: FitArgs) -> Result<(), Failure> {
    let mut ds = Dataset::from_json(&pipeline::read_text(&a.input)?)?;
    if let Some(path) = &a.config {
        ds.config = SweepConfig::from_json(&pipeline::read_text(path)?)?;
    }
    if a.workers.is_some() {
        ds.config.workers = a.workers;
        ds.config.validate()?;
    }
    let exec = if a.sequential { Execution::Sequential } else { Execution::default() };
    let ex = pipeline::extract_statistics_with(&ds, exec)?;
    let mut out = output(a.out.as_deref())?;
    pipeline::write_stats_csv(&mut out, &ex.records)?;
    out.flush()?;
    if !ex.all_converged() {
        let bad: Vec<String> = ex.records.iter().filter(|r| !r.converged).map(|r| r.control.to_string()).collect();
        let base = if ex.calibration.fit.converged { "" } else { "base calibration; " };
        return Err(Failure::NotConverged(format!("fits did not converge: {base}control {}", bad.join(", "))));
    }
    Ok(())
}

fn print_moments(out: &mut dyn Write, m: &PhotonMoments) -> Result<(), Failure> {
    writeln!(out, "mean {}", m.mean)?;
    writeln!(out, "variance {}", m.variance)?;
    match photonstats::g2_zero(m) {
        Ok(g2) => writeln!(out, "g2 {g2}")?,
        Err(e) => writeln!(out, "g2 undefined ({e})")?,
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<(), Failure> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut moments = Vec::new();
    if let Some(n) = a.thermal_mean {
        moments.push(PhotonMoments::new(n, photonstats::thermal_variance(n)).map_err(|e| Failure::Invalid(e.to_string()))?);
    }
    if let Some(n) = a.coherent_mean {
        moments.push(PhotonMoments::new(n, photonstats::coherent_variance(n)).map_err(|e| Failure::Invalid(e.to_string()))?);
    }
    if let Some(v) = &a.mixed {
        let field = MixedField::new(v[0], v[1]).map_err(|e| Failure::Invalid(e.to_string()))?;
        moments.push(photonstats::mixed_moments(&field));
    }
    if let Some(t) = a.temperature {
        let f = a.freq.ok_or_else(|| Failure::Invalid("--temperature needs --freq".into()))?;
        let state = RadiatorState::new(t, f).map_err(|e| Failure::Invalid(e.to_string()))?;
        let n = photonstats::planck_mean_photon(&state);
        moments.push(PhotonMoments::thermal(n));
    }
    if moments.is_empty() {
        return Err(Failure::Invalid(
            "give one of --thermal-mean, --coherent-mean, --mixed or --temperature".into(),
        ));
    }
    for m in &moments {
        print_moments(&mut out, m)?;
        if let Some(bw) = a.bandwidth {
            let f = a.freq.ok_or_else(|| Failure::Invalid("--bandwidth needs --freq".into()))?;
            writeln!(out, "power_w {}", photonstats::flux_to_power(m.mean, f, bw))?;
        }
    }
    Ok(())
}

fn read_raw_trace(path: &Path, fs: f64) -> Result<RawTrace, Failure> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    let header = rd.headers().map_err(|e| Failure::Invalid(e.to_string()))?.clone();
    if header.iter().ne(["t_s", "v"]) {
        return Err(Failure::Invalid(format!("{}: expected header t_s,v", path.display())));
    }
    let mut t0 = None;
    let mut samples = Vec::new();
    for row in rd.deserialize() {
        let (t, v): (f64, f64) = row.map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        t0.get_or_insert(t);
        samples.push(v);
    }
    Ok(RawTrace { samples, fs, t0: t0.unwrap_or(0.0) })
}

fn demod(a: DemodArgs) -> Result<(), Failure> {
    let fir = match a.taps {
        Some(n) => FirSpec { cutoff: a.cutoff, n_taps: n, window: Window::Blackman },
        None => FirSpec { cutoff: a.cutoff, ..FirSpec::default_for_rate(a.fs) },
    };
    let demod = Demodulator { f_if: a.f_if, fir, decimation: a.decimation };
    let iq = match (a.tone_amp, a.input.is_empty()) {
        (Some(amp), true) => {
            let tone = ToneSpec::new(amp, a.tone_phase, a.f_if, a.noise_rms, a.duration, a.fs)?;
            let seed = a.seed.or(env_seed()?).unwrap_or(0);
            demod.averaged(Execution::default(), &tone, a.averages.max(1), seed)?
        }
        (None, false) => {
            let streams = a
                .input
                .iter()
                .map(|p| Ok(demod.demodulate(&read_raw_trace(p, a.fs)?)?))
                .collect::<Result<Vec<_>, Failure>>()?;
            dspchain::average_traces(&streams, streams.len())?
        }
        _ => return Err(Failure::Invalid("give either --input files or --tone-amp".into())),
    };
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    let csv_err = |e: csv::Error| Failure::Invalid(e.to_string());
    w.write_record(["t_s", "i", "q"]).map_err(csv_err)?;
    for (k, z) in iq.iq.iter().enumerate() {
        w.serialize((iq.t0 + k as f64 / iq.rate, z.re, z.im)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let mut tables = Vec::new();
    for path in &a.input {
        let file = File::open(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        let recs: Vec<StatsRecord> = pipeline::read_stats_csv(file)?;
        let label = recs.first().map(|r| r.mode.clone()).unwrap_or_default();
        tables.push((label, recs));
    }
    let rows = pipeline::report_rows(&tables);
    let mut out = output(a.out.as_deref())?;
    pipeline::write_report_csv(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}
