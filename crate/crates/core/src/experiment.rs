//! Experiment configurations, named parameter presets and the sweep runners
//! behind the command-line tool.
//!
//! A sweep runs one job per `(1/T, seed)` pair on a dedicated rayon pool.
//! Jobs share nothing but the read-only propagators of their `1/T`, results
//! are collected in job order and all files are written afterwards from the
//! calling thread, so outputs do not depend on the worker count.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    aggregate_seeds, fit_exponential, fit_points, fit_power_law, thermalization_time, write_summary,
    Diagnostic, FitModel, ScalingFit, SweepPoint, ThermalizationTime, Thresholds, MIN_FIT_POINTS,
};
use crate::bounds::{bound_report, write_bound_report, BoundRow};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::observables::subharmonic_weight;
use crate::propagation::{
    content_hash, evolve_dtc, evolve_rmd_stream, evolve_tms_stream, make_propagators_in,
    ObservableTrace, PropagatorPair, RmdRun, Sampling, StopRule, TmsRun,
};
use crate::sequence::{
    ensemble_power_spectrum, generate_rmd, low_frequency_exponent, spectral_density_per_symbol,
};
use crate::spinchain::{all_down, Basis, SpinChainParams, StateVector};

pub const TOOL_NAME: &str = "rmd-lab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable holding the sweep worker count.
pub const THREADS_ENV: &str = "RMD_LAB_THREADS";

pub const PRESET_NAMES: [&str; 5] = ["fig2", "fig3", "fig4", "fig7", "fig8"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Rmd,
    Tms,
    Dtc,
    Spectrum,
    Bounds,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Rmd => "rmd",
            Protocol::Tms => "tms",
            Protocol::Dtc => "dtc",
            Protocol::Spectrum => "spectrum",
            Protocol::Bounds => "bounds",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmd" => Ok(Protocol::Rmd),
            "tms" => Ok(Protocol::Tms),
            "dtc" => Ok(Protocol::Dtc),
            "spectrum" => Ok(Protocol::Spectrum),
            "bounds" => Ok(Protocol::Bounds),
            other => invalid(format!("unknown protocol {other:?}")),
        }
    }
}

/// Basis the dynamics run in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisChoice {
    #[default]
    Full,
    /// Zero-momentum sector; exact only for translation-invariant states.
    ZeroMomentum,
}

impl BasisChoice {
    pub fn build(self, sites: usize) -> Result<Basis> {
        match self {
            BasisChoice::Full => Ok(Basis::Full),
            BasisChoice::ZeroMomentum => Basis::zero_momentum(sites),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmdSettings {
    /// Physical run time; runs may end earlier under the stop rule.
    pub t_max: f64,
    pub sampling: Sampling,
}

impl Default for RmdSettings {
    fn default() -> Self {
        Self {
            t_max: 1e4,
            sampling: Sampling::Geometric { per_decade: 20 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmsSettings {
    /// Final time `2^n_max T`.
    pub n_max: u32,
    /// `2^resolution` samples per doubling of time.
    pub resolution: u32,
}

impl Default for TmsSettings {
    fn default() -> Self {
        Self {
            n_max: 40,
            resolution: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtcSettings {
    /// Number of flips simulated; the subharmonic weight uses all of them.
    pub flips: usize,
    pub epsilon_flip: f64,
}

impl Default for DtcSettings {
    fn default() -> Self {
        Self {
            flips: 100,
            epsilon_flip: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumSettings {
    /// Symbols per realization.
    pub len: usize,
    pub ensemble: usize,
    pub seed: u64,
    /// Envelope fit window.
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for SpectrumSettings {
    fn default() -> Self {
        Self {
            len: 4096,
            ensemble: 200,
            seed: 0,
            omega_min: 2e-2,
            omega_max: std::f64::consts::FRAC_PI_4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsSettings {
    pub cells: usize,
    /// Multiplies every coupling before building the chain.
    pub coupling_scale: f64,
}

impl Default for BoundsSettings {
    fn default() -> Self {
        Self {
            cells: 50,
            coupling_scale: 1.0,
        }
    }
}

/// Everything a run needs. `params.T` is replaced by each sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub params: SpinChainParams,
    #[serde(default)]
    pub n: u32,
    /// Values of `1/T`.
    #[serde(default)]
    pub sweep: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub basis: BasisChoice,
    /// Product-state pattern such as `"dddd"`; all down when absent.
    #[serde(default)]
    pub initial_state: Option<String>,
    /// Stop each run once the far band edge has been crossed.
    #[serde(default = "default_true")]
    pub stop_early: bool,
    /// Fit model; power law for RMD and exponential for Thue–Morse sweeps
    /// when absent.
    #[serde(default)]
    pub fit: Option<FitModel>,
    #[serde(default = "default_true")]
    pub write_traces: bool,
    #[serde(default)]
    pub rmd: RmdSettings,
    #[serde(default)]
    pub tms: TmsSettings,
    #[serde(default)]
    pub dtc: DtcSettings,
    #[serde(default)]
    pub spectrum: SpectrumSettings,
    #[serde(default)]
    pub bounds: BoundsSettings,
}

fn default_thresholds() -> Thresholds {
    Thresholds::new(Diagnostic::Energy, 0.96, 0.01)
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol, params: SpinChainParams) -> Self {
        Self {
            protocol,
            params,
            n: 1,
            sweep: Vec::new(),
            seeds: Vec::new(),
            thresholds: default_thresholds(),
            output_dir: PathBuf::new(),
            basis: BasisChoice::Full,
            initial_state: None,
            stop_early: true,
            fit: None,
            write_traces: true,
            rmd: RmdSettings::default(),
            tms: TmsSettings::default(),
            dtc: DtcSettings::default(),
            spectrum: SpectrumSettings::default(),
            bounds: BoundsSettings::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hash of the configuration with `output_dir` cleared, so identical
    /// experiments hash identically wherever they are written.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        Ok(content_hash(serde_json::to_string(&c)?.as_bytes()))
    }

    pub fn fit_model(&self) -> FitModel {
        self.fit.unwrap_or(match self.protocol {
            Protocol::Tms => FitModel::Exponential,
            _ => FitModel::PowerLaw,
        })
    }

    pub fn params_at(&self, inv_t: f64) -> SpinChainParams {
        self.params.with_inverse_period(inv_t)
    }

    pub fn initial(&self) -> Result<StateVector> {
        match &self.initial_state {
            None => Ok(all_down(self.params.sites)),
            Some(pattern) => {
                let psi = StateVector::from_pattern_str(pattern)?;
                if psi.sites != self.params.sites {
                    return invalid(format!(
                        "initial state has {} sites, the chain has {}",
                        psi.sites, self.params.sites
                    ));
                }
                Ok(psi)
            }
        }
    }

    pub fn stop_rule(&self) -> StopRule {
        if !self.stop_early {
            return StopRule::default();
        }
        let edge = Some(self.thresholds.far_edge());
        match self.thresholds.diagnostic {
            Diagnostic::Energy => StopRule {
                energy_ratio_below: edge,
                entropy_ratio_above: None,
            },
            Diagnostic::Entropy => StopRule {
                energy_ratio_below: None,
                entropy_ratio_above: edge,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sweep_needed = !matches!(self.protocol, Protocol::Spectrum);
        if sweep_needed && self.sweep.is_empty() {
            return invalid("sweep of 1/T values is empty");
        }
        if let Some(bad) = self.sweep.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return invalid(format!("1/T values must be positive and finite, got {bad}"));
        }
        if matches!(self.protocol, Protocol::Rmd | Protocol::Dtc) && self.seeds.is_empty() {
            return invalid("seed list is empty");
        }
        let t = &self.thresholds;
        if !(t.center.is_finite() && t.band.is_finite() && t.band >= 0.0) {
            return invalid("threshold center and band must be finite with band >= 0");
        }
        match self.protocol {
            Protocol::Spectrum => {
                let s = &self.spectrum;
                if s.len == 0 || !s.len.is_multiple_of(1usize << self.n.min(40)) {
                    return invalid(format!(
                        "spectrum length {} must be a positive multiple of 2^n",
                        s.len
                    ));
                }
                if s.ensemble == 0 {
                    return invalid("ensemble size must be positive");
                }
            }
            Protocol::Dtc => {
                if self.n > 1 {
                    return invalid("the time-crystal protocol needs n = 0 or 1");
                }
                if self.dtc.flips < 8 {
                    return invalid("the time-crystal protocol needs at least 8 flips");
                }
            }
            Protocol::Bounds => {
                if self.bounds.cells == 0 {
                    return invalid("bounds need at least one cell");
                }
            }
            Protocol::Rmd => {
                if !(self.rmd.t_max.is_finite() && self.rmd.t_max > 0.0) {
                    return invalid("t_max must be positive and finite");
                }
            }
            Protocol::Tms => {}
        }
        if self.protocol != Protocol::Spectrum {
            for &inv_t in &self.sweep {
                self.params_at(inv_t).validate()?;
            }
            self.initial()?;
        }
        Ok(())
    }
}

/// A named parameter set, optionally at another chain length.
pub fn preset(name: &str, sites: Option<usize>) -> Result<ExperimentConfig> {
    let fig2 = SpinChainParams::new(1.0, 0.243, 0.809, 0.357, 0.21, 10, 1.0 / 20.0);
    let fig3 = SpinChainParams::new(1.0, 0.71, 3.2, 0.25, 0.21, 10, 1.0 / 20.0);
    let fig4 = SpinChainParams::new(1.0, 0.315, 0.75, 0.21, -0.05, 10, 1.0 / 50.0);
    let mut c = match name {
        "fig2" => {
            let mut c = ExperimentConfig::new(Protocol::Tms, fig2);
            c.sweep = (7..=15).map(|k| 2.0 * k as f64).collect();
            c.seeds = vec![0];
            c.thresholds = Thresholds::new(Diagnostic::Energy, 0.7, 0.1);
            c.fit = Some(FitModel::Exponential);
            c
        }
        "fig3" | "fig8" => {
            let params = if name == "fig8" { SpinChainParams { bx: 0.5, ..fig3 } } else { fig3 };
            let mut c = ExperimentConfig::new(Protocol::Rmd, params);
            c.sweep = vec![20.0, 30.0, 40.0, 50.0];
            c.seeds = (0..5).collect();
            c
        }
        "fig4" => {
            let mut c = ExperimentConfig::new(Protocol::Dtc, fig4);
            c.sweep = vec![50.0];
            c.seeds = vec![0];
            c
        }
        "fig7" => {
            let mut c = ExperimentConfig::new(Protocol::Dtc, SpinChainParams { bx: 0.25, ..fig4 });
            c.sweep = vec![30.0];
            c.seeds = vec![0];
            c.dtc.epsilon_flip = 0.1;
            c
        }
        other => {
            return invalid(format!(
                "unknown preset {other:?}; choose one of {}",
                PRESET_NAMES.join(", ")
            ))
        }
    };
    if let Some(l) = sites {
        c.params.sites = l;
    }
    c.params.period = 1.0 / c.sweep[0];
    Ok(c)
}

/// Explicit count, else the environment variable, else all cores.
pub fn worker_count(explicit: Option<usize>) -> Result<usize> {
    let n = match explicit {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV}={v:?} is not a count")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return invalid("worker count must be positive");
    }
    Ok(n)
}

/// Process exit status for an error: 1 for configuration and other
/// failures, 2 for exceeded resource caps, 3 when nothing crossed.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ResourceCap(_) => 2,
        Error::NoCrossing(_) => 3,
        _ => 1,
    }
}

/// Per-seed outcome of a sweep job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    #[serde(rename = "invT")]
    pub inv_t: f64,
    pub seed: Option<u64>,
    pub tau: Option<ThermalizationTime>,
    pub samples: usize,
    pub stopped_early: bool,
    pub final_time: f64,
}

/// Time-crystal outcome of one job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtcPoint {
    #[serde(rename = "invT")]
    pub inv_t: f64,
    pub seed: u64,
    pub flips: usize,
    pub epsilon_flip: f64,
    pub subharmonic_weight: f64,
}

/// Written as `manifest.json` in the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub protocol: Protocol,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Paths relative to the output directory, in write order.
    pub files: Vec<String>,
    /// Sweep values at which no seed crossed; they are not fitted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_inv_t: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// In-memory results of [`run`]; the same data is on disk.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub summary: Vec<SweepPoint>,
    pub per_seed: Vec<SeedResult>,
    pub fit: Option<ScalingFit>,
    pub dtc: Vec<DtcPoint>,
    pub spectrum_exponent: Option<f64>,
    pub bounds: Vec<BoundRow>,
    pub traces: Vec<ObservableTrace>,
    pub manifest: Option<Manifest>,
}

/// Runs a validated configuration with `workers` threads and writes its
/// files. A sweep with no crossing at all still writes everything before
/// returning [`Error::NoCrossing`].
pub fn run(config: &ExperimentConfig, workers: usize) -> Result<RunReport> {
    config.validate()?;
    linalg::init_single_threaded_blas();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))?;
    let hash = config.hash()?;
    let mut out = Output::create(&config.output_dir)?;
    let mut report = pool.install(|| match config.protocol {
        Protocol::Rmd | Protocol::Tms => run_sweep(config, &hash, &mut out),
        Protocol::Dtc => run_dtc(config, &hash, &mut out),
        Protocol::Spectrum => run_spectrum(config, &mut out),
        Protocol::Bounds => run_bounds(config, &mut out),
    })?;
    let excluded: Vec<f64> = config
        .sweep
        .iter()
        .copied()
        .filter(|v| {
            matches!(config.protocol, Protocol::Rmd | Protocol::Tms)
                && !report.summary.iter().any(|p| p.inv_t == *v)
        })
        .collect();
    let note = match config.protocol {
        Protocol::Rmd | Protocol::Tms if report.fit.is_none() => Some(format!(
            "no fit: {} of the needed {MIN_FIT_POINTS} sweep points crossed",
            report.summary.len()
        )),
        _ => None,
    };
    let manifest = Manifest {
        tool: TOOL_NAME.to_string(),
        version: TOOL_VERSION.to_string(),
        protocol: config.protocol,
        config_hash: hash,
        config: config.clone(),
        files: out.files.clone(),
        excluded_inv_t: excluded,
        note,
    };
    out.json("manifest.json", &manifest)?;
    report.manifest = Some(manifest);
    let sweeps = matches!(config.protocol, Protocol::Rmd | Protocol::Tms);
    if sweeps && report.summary.is_empty() {
        return Err(Error::NoCrossing(format!(
            "no {} crossing of {} +- {} at any 1/T in the sweep",
            config.thresholds.diagnostic.name(),
            config.thresholds.center,
            config.thresholds.band
        )));
    }
    Ok(report)
}

/// The output directory and the files written so far.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn trace(&mut self, stem: &str, trace: &ObservableTrace) -> Result<()> {
        let csv = format!("traces/{stem}.csv");
        let path = self.dir.join(&csv);
        fs::create_dir_all(path.parent().expect("trace path has a parent"))?;
        trace.save(&path)?;
        self.files.push(csv);
        self.files.push(format!("traces/{stem}.json"));
        Ok(())
    }
}

fn trace_stem(protocol: Protocol, inv_t: f64, seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("{}_invT{inv_t}_seed{s}", protocol.name()),
        None => format!("{}_invT{inv_t}", protocol.name()),
    }
}

fn propagators_for(config: &ExperimentConfig) -> Result<Vec<PropagatorPair>> {
    let basis = config.basis.build(config.params.sites)?;
    config
        .sweep
        .par_iter()
        .map(|&inv_t| make_propagators_in(&config.params_at(inv_t), &basis))
        .collect()
}

/// `(index into the sweep, seed)` for every job, in output order.
fn jobs(config: &ExperimentConfig) -> Vec<(usize, Option<u64>)> {
    let seeds: Vec<Option<u64>> = match config.protocol {
        Protocol::Tms => vec![None],
        _ => config.seeds.iter().copied().map(Some).collect(),
    };
    (0..config.sweep.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect()
}

fn run_sweep(config: &ExperimentConfig, hash: &str, out: &mut Output) -> Result<RunReport> {
    let psi0 = config.initial()?;
    let pairs = propagators_for(config)?;
    let stop = config.stop_rule();
    let t = config.thresholds;
    let traces = jobs(config)
        .par_iter()
        .map(|&(i, seed)| {
            let pair = &pairs[i];
            let mut trace = match seed {
                Some(seed) => evolve_rmd_stream(
                    &psi0,
                    pair,
                    &RmdRun {
                        order: config.n,
                        seed,
                        t_max: config.rmd.t_max,
                        sampling: config.rmd.sampling,
                        stop,
                    },
                )?,
                None => evolve_tms_stream(
                    &psi0,
                    pair,
                    &TmsRun {
                        n_max: config.tms.n_max,
                        resolution: config.tms.resolution,
                        stop,
                    },
                )?,
            };
            trace.meta.config_hash = Some(hash.to_string());
            Ok((i, seed, trace))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = RunReport::default();
    for (i, seed, trace) in &traces {
        let inv_t = config.sweep[*i];
        let tau = thermalization_time(trace, t.diagnostic, t.center, t.band);
        if let Err(e) = &tau {
            if !matches!(e, Error::NoCrossing(_)) {
                return Err(Error::InvalidArgument(format!("1/T = {inv_t}: {e}")));
            }
        }
        report.per_seed.push(SeedResult {
            inv_t,
            seed: *seed,
            tau: tau.ok(),
            samples: trace.len(),
            stopped_early: trace.meta.stopped_early,
            final_time: trace.last().map_or(0.0, |r| r.time),
        });
        if config.write_traces {
            out.trace(&trace_stem(config.protocol, inv_t, *seed), trace)?;
        }
    }
    for &inv_t in &config.sweep {
        let results: Vec<Result<ThermalizationTime>> = report
            .per_seed
            .iter()
            .filter(|r| r.inv_t == inv_t)
            .map(|r| r.tau.ok_or_else(|| Error::NoCrossing(String::new())))
            .collect();
        if let Some(point) = aggregate_seeds(inv_t, &results) {
            report.summary.push(point);
        }
    }
    write_per_seed(&report.per_seed, out.file("per_seed.csv")?)?;
    let mut w = out.file("summary.csv")?;
    write_summary(&report.summary, &mut w)?;
    w.flush()?;
    if report.summary.len() >= MIN_FIT_POINTS {
        let points = fit_points(&report.summary);
        let fit = match config.fit_model() {
            FitModel::PowerLaw => fit_power_law(&points),
            FitModel::Exponential => fit_exponential(&points),
        };
        if let Ok(fit) = fit {
            let fit = fit.with_diagnostic(t.diagnostic);
            let mut w = out.file("fit.json")?;
            fit.write_json(&mut w)?;
            w.flush()?;
            report.fit = Some(fit);
        }
    }
    report.traces = traces.into_iter().map(|(_, _, t)| t).collect();
    Ok(report)
}

fn write_per_seed<W: Write>(rows: &[SeedResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["invT", "seed", "tau", "tau_lo", "tau_hi", "samples", "final_time"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for r in rows {
        w.write_record([
            r.inv_t.to_string(),
            r.seed.map_or_else(String::new, |s| s.to_string()),
            opt(r.tau.map(|t| t.tau)),
            opt(r.tau.map(|t| t.tau_lo)),
            opt(r.tau.map(|t| t.tau_hi)),
            r.samples.to_string(),
            r.final_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_dtc(config: &ExperimentConfig, hash: &str, out: &mut Output) -> Result<RunReport> {
    let psi0 = config.initial()?;
    let pairs = propagators_for(config)?;
    let settings = config.dtc;
    let results = jobs(config)
        .par_iter()
        .map(|&(i, seed)| {
            let seed = seed.expect("time-crystal jobs carry seeds");
            let seq = generate_rmd(config.n, settings.flips, seed)?;
            let mut trace = evolve_dtc(&psi0, &seq, &pairs[i], settings.epsilon_flip)?;
            trace.meta.config_hash = Some(hash.to_string());
            let interval = trace.meta.flip_interval.expect("time-crystal traces record it");
            // Samples after each of the flips.
            let mut window = trace.clone();
            window.rows.remove(0);
            let point = DtcPoint {
                inv_t: config.sweep[i],
                seed,
                flips: settings.flips,
                epsilon_flip: settings.epsilon_flip,
                subharmonic_weight: subharmonic_weight(&window, interval)?,
            };
            Ok((point, trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = RunReport::default();
    for (point, trace) in results {
        if config.write_traces {
            out.trace(&trace_stem(Protocol::Dtc, point.inv_t, Some(point.seed)), &trace)?;
        }
        report.dtc.push(point);
        report.traces.push(trace);
    }
    let mut w = csv::Writer::from_writer(out.file("dtc_summary.csv")?);
    w.write_record(["invT", "seed", "flips", "epsilon_flip", "subharmonic_weight"])?;
    for p in &report.dtc {
        w.write_record([
            p.inv_t.to_string(),
            p.seed.to_string(),
            p.flips.to_string(),
            p.epsilon_flip.to_string(),
            p.subharmonic_weight.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(report)
}

/// Spectrum output: per-symbol power next to its closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub n: u32,
    pub len: usize,
    pub ensemble: usize,
    pub seed: u64,
    pub omega_min: f64,
    pub omega_max: f64,
    /// Envelope exponent of `|x(w)|` at low frequency.
    pub exponent: f64,
}

fn run_spectrum(config: &ExperimentConfig, out: &mut Output) -> Result<RunReport> {
    let s = config.spectrum;
    let blocks = s.len >> config.n;
    let est = ensemble_power_spectrum(config.n, blocks, s.ensemble, s.seed)?;
    let exponent = low_frequency_exponent(&est.mean, s.omega_min, s.omega_max)?;
    let mut w = csv::Writer::from_writer(out.file("spectrum.csv")?);
    w.write_record(["omega", "power", "std_error", "analytic"])?;
    for (k, &omega) in est.mean.frequencies.iter().enumerate() {
        w.write_record([
            omega.to_string(),
            est.mean.power[k].to_string(),
            est.std_error[k].to_string(),
            spectral_density_per_symbol(config.n, omega).to_string(),
        ])?;
    }
    w.flush()?;
    out.json(
        "spectrum.json",
        &SpectrumReport {
            n: config.n,
            len: s.len,
            ensemble: s.ensemble,
            seed: s.seed,
            omega_min: s.omega_min,
            omega_max: s.omega_max,
            exponent,
        },
    )?;
    Ok(RunReport {
        spectrum_exponent: Some(exponent),
        ..RunReport::default()
    })
}

fn run_bounds(config: &ExperimentConfig, out: &mut Output) -> Result<RunReport> {
    let seed = config.seeds.first().copied().unwrap_or(0);
    let seq = generate_rmd(config.n, config.bounds.cells, seed)?;
    let basis = config.basis.build(config.params.sites)?;
    let rows = config
        .sweep
        .par_iter()
        .map(|&inv_t| {
            let p = config.params_at(inv_t).scaled(config.bounds.coupling_scale);
            bound_report(&make_propagators_in(&p, &basis)?, &seq)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<BoundRow> = rows.into_iter().flatten().collect();
    let mut w = out.file("bounds.csv")?;
    write_bound_report(&rows, &mut w)?;
    w.flush()?;
    Ok(RunReport {
        bounds: rows,
        ..RunReport::default()
    })
}
