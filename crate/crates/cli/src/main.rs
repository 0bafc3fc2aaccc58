//! `rmd-lab`: command-line front end for drive sequences, heating sweeps,
//! time-crystal runs, error bounds, fits and drive spectra.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rmd_core::analysis::{
    fit_exponential, fit_points, fit_power_law, read_summary, Diagnostic, FitModel, Thresholds,
};
use rmd_core::experiment::{
    exit_code, preset, run, worker_count, BasisChoice, ExperimentConfig, Protocol, RunReport,
};
use rmd_core::sequence::{generate_rmd, thue_morse_cell};
use rmd_core::{Error, Result};

#[derive(Parser)]
#[command(name = "rmd-lab", version, about = "Random multipolar driving experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a random multipolar or Thue–Morse drive sequence.
    Sequence(SequenceArgs),
    /// Thermalization-time sweep over 1/T and seeds.
    Simulate(SimulateArgs),
    /// Thue–Morse sweep (the fig2 preset unless configured otherwise).
    Tms(SweepArgs),
    /// Random multipolar time crystal with global spin flips.
    Dtc(DtcArgs),
    /// Measured Magnus errors against the rigorous bounds.
    Bounds(BoundsArgs),
    /// Refit a sweep summary.
    Fit(FitArgs),
    /// Ensemble power spectrum of drive sequences.
    Spectrum(SpectrumArgs),
}

#[derive(Args)]
struct SequenceArgs {
    #[arg(long, default_value_t = 1)]
    n: u32,
    #[arg(long, default_value_t = 16)]
    blocks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit the order-n Thue–Morse cell instead of random cells.
    #[arg(long)]
    thue_morse: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Full,
    K0,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiagnosticArg {
    Energy,
    Entropy,
}

impl From<DiagnosticArg> for Diagnostic {
    fn from(d: DiagnosticArg) -> Self {
        match d {
            DiagnosticArg::Energy => Diagnostic::Energy,
            DiagnosticArg::Entropy => Diagnostic::Entropy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    PowerLaw,
    Exponential,
}

impl From<ModelArg> for FitModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::PowerLaw => FitModel::PowerLaw,
            ModelArg::Exponential => FitModel::Exponential,
        }
    }
}

/// Options shared by every simulation subcommand.
#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named parameter set: fig2, fig3, fig4, fig7 or fig8.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    n: Option<u32>,
    /// Chain length.
    #[arg(long = "L")]
    sites: Option<usize>,
    /// Comma-separated driving rates 1/T.
    #[arg(long = "invT", value_delimiter = ',')]
    inv_t: Option<Vec<f64>>,
    /// A count `k` (seeds 0..k), a range `a..b` or a list `a,b,c`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, value_enum)]
    diagnostic: Option<DiagnosticArg>,
    /// Threshold center of the normalized diagnostic.
    #[arg(long, allow_negative_numbers = true)]
    center: Option<f64>,
    /// Threshold half-width.
    #[arg(long)]
    band: Option<f64>,
    /// Initial product state such as `dddddddd`.
    #[arg(long)]
    initial: Option<String>,
    #[arg(long, value_enum)]
    basis: Option<BasisArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep workers (default: RMD_LAB_THREADS, else all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Skip per-run trace files.
    #[arg(long)]
    no_traces: bool,
    /// Run to the full time instead of stopping after the crossing.
    #[arg(long)]
    no_stop: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepProtocol {
    Rmd,
    Tms,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Physical run time of RMD runs.
    #[arg(long)]
    t_max: Option<f64>,
    /// Final Thue–Morse time is 2^n_max T.
    #[arg(long)]
    n_max: Option<u32>,
    /// 2^resolution Thue–Morse samples per doubling of time.
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long, value_enum)]
    fit: Option<ModelArg>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "rmd")]
    protocol: SweepProtocol,
    #[command(flatten)]
    sweep: SweepArgs,
}

#[derive(Args)]
struct DtcArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Rotation error of the global flip.
    #[arg(long, allow_negative_numbers = true)]
    eps_flip: Option<f64>,
    #[arg(long)]
    flips: Option<usize>,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    cells: Option<usize>,
    /// Factor applied to every coupling.
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Sweep summary CSV (invT,tau,tau_lo,tau_hi,seed_count).
    #[arg(long)]
    summary: PathBuf,
    #[arg(long, value_enum, default_value = "power-law")]
    model: ModelArg,
    #[arg(long, value_enum)]
    diagnostic: Option<DiagnosticArg>,
    /// Fit JSON path (default: fit.json next to the summary).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long, default_value_t = 1)]
    n: u32,
    /// Symbols per realization.
    #[arg(long, default_value_t = 4096)]
    len: usize,
    #[arg(long, default_value_t = 200)]
    ensemble: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    omega_min: Option<f64>,
    #[arg(long)]
    omega_max: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidArgument(format!("cannot parse seeds {text:?}"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        return if a < b { Ok((a..b).collect()) } else { Err(bad()) };
    }
    if text.contains(',') {
        return text.split(',').map(num).collect();
    }
    Ok((0..num(text)?).collect())
}

/// Loads the configuration or preset and applies command-line overrides.
fn build_config(args: &RunArgs, default_preset: &str) -> Result<ExperimentConfig> {
    let mut c = match (&args.config, &args.preset) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument("give either --config or --preset".into()))
        }
        (Some(path), None) => {
            let mut c = ExperimentConfig::load(path)?;
            if let Some(l) = args.sites {
                c.params.sites = l;
            }
            c
        }
        (None, name) => preset(name.as_deref().unwrap_or(default_preset), args.sites)?,
    };
    if let Some(n) = args.n {
        c.n = n;
    }
    if let Some(v) = &args.inv_t {
        c.sweep = v.clone();
    }
    if let Some(s) = &args.seeds {
        c.seeds = parse_seeds(s)?;
    }
    let t = c.thresholds;
    c.thresholds = Thresholds::new(
        args.diagnostic.map_or(t.diagnostic, Into::into),
        args.center.unwrap_or(t.center),
        args.band.unwrap_or(t.band),
    );
    if let Some(p) = &args.initial {
        c.initial_state = Some(p.clone());
    }
    if let Some(b) = args.basis {
        c.basis = match b {
            BasisArg::Full => BasisChoice::Full,
            BasisArg::K0 => BasisChoice::ZeroMomentum,
        };
    }
    c.write_traces &= !args.no_traces;
    c.stop_early &= !args.no_stop;
    if let Some(dir) = &args.out {
        c.output_dir = dir.clone();
    }
    Ok(c)
}

fn finish(mut c: ExperimentConfig, protocol: Protocol, workers: Option<usize>) -> Result<RunReport> {
    c.protocol = protocol;
    if c.output_dir.as_os_str().is_empty() {
        c.output_dir = PathBuf::from("rmd-out").join(protocol.name());
    }
    if let Some(&first) = c.sweep.first() {
        c.params.period = 1.0 / first;
    }
    let report = run(&c, worker_count(workers)?);
    if let Ok(r) = &report {
        print_report(&c, r);
    }
    report
}

fn print_report(c: &ExperimentConfig, r: &RunReport) {
    let mut out = io::stdout().lock();
    let _ = (|| -> io::Result<()> {
        if !r.summary.is_empty() {
            writeln!(out, "{:>8} {:>14} {:>14} {:>14} {:>6}", "1/T", "tau", "tau_lo", "tau_hi", "seeds")?;
            for p in &r.summary {
                writeln!(
                    out,
                    "{:>8} {:>14.6e} {:>14.6e} {:>14.6e} {:>6}",
                    p.inv_t, p.tau, p.tau_lo, p.tau_hi, p.seed_count
                )?;
            }
        }
        if let Some(f) = &r.fit {
            writeln!(out, "fit {:?}: exponent {:.4}, r2 {:.4}", f.model, f.exponent, f.r2)?;
        }
        for p in &r.dtc {
            writeln!(
                out,
                "1/T {} seed {} eps {}: subharmonic weight {:.4} over {} flips",
                p.inv_t, p.seed, p.epsilon_flip, p.subharmonic_weight, p.flips
            )?;
        }
        if let Some(e) = r.spectrum_exponent {
            writeln!(out, "low-frequency envelope exponent {e:.4}")?;
        }
        if !r.bounds.is_empty() {
            let worst = r
                .bounds
                .iter()
                .map(|row| row.measured_error / row.dipole_bound)
                .fold(0.0, f64::max);
            writeln!(out, "largest measured/bound ratio {worst:.4e} over {} rows", r.bounds.len())?;
        }
        if let Some(m) = &r.manifest {
            if let Some(note) = &m.note {
                writeln!(out, "{note}")?;
            }
            writeln!(out, "wrote {} files to {}", m.files.len(), c.output_dir.display())?;
        }
        Ok(())
    })();
}

fn apply_sweep(c: &mut ExperimentConfig, a: &SweepArgs) {
    if let Some(t) = a.t_max {
        c.rmd.t_max = t;
    }
    if let Some(n) = a.n_max {
        c.tms.n_max = n;
    }
    if let Some(r) = a.resolution {
        c.tms.resolution = r;
    }
    if let Some(m) = a.fit {
        c.fit = Some(m.into());
    }
}

fn sequence(a: &SequenceArgs) -> Result<()> {
    let seq = if a.thue_morse {
        thue_morse_cell(a.n)?
    } else {
        generate_rmd(a.n, a.blocks, a.seed)?
    };
    match &a.out {
        Some(path) => seq.write_text(io::BufWriter::new(fs::File::create(path)?)),
        None => seq.write_text(io::stdout().lock()),
    }
}

fn fit(a: &FitArgs) -> Result<()> {
    let summary = read_summary(fs::File::open(&a.summary)?)?;
    if summary.is_empty() {
        return Err(Error::NoCrossing(format!("{} has no sweep points", a.summary.display())));
    }
    let points = fit_points(&summary);
    let mut fit = match FitModel::from(a.model) {
        FitModel::PowerLaw => fit_power_law(&points)?,
        FitModel::Exponential => fit_exponential(&points)?,
    };
    if let Some(d) = a.diagnostic {
        fit = fit.with_diagnostic(d.into());
    }
    let path = a.out.clone().unwrap_or_else(|| {
        a.summary.parent().unwrap_or(Path::new(".")).join("fit.json")
    });
    fit.save(&path)?;
    println!(
        "fit {:?}: exponent {:.4}, intercept {:.4}, r2 {:.4}, n {}",
        fit.model, fit.exponent, fit.intercept, fit.r2, fit.n
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn spectrum(a: &SpectrumArgs) -> Result<()> {
    let mut c = preset("fig3", None)?;
    c.protocol = Protocol::Spectrum;
    c.n = a.n;
    c.spectrum.len = a.len;
    c.spectrum.ensemble = a.ensemble;
    c.spectrum.seed = a.seed;
    if let Some(w) = a.omega_min {
        c.spectrum.omega_min = w;
    }
    if let Some(w) = a.omega_max {
        c.spectrum.omega_max = w;
    }
    c.output_dir = a.out.clone().unwrap_or_default();
    finish(c, Protocol::Spectrum, a.workers).map(drop)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sequence(a) => sequence(&a),
        Command::Simulate(a) => {
            let (protocol, default) = match a.protocol {
                SweepProtocol::Rmd => (Protocol::Rmd, "fig3"),
                SweepProtocol::Tms => (Protocol::Tms, "fig2"),
            };
            let mut c = build_config(&a.sweep.run, default)?;
            apply_sweep(&mut c, &a.sweep);
            finish(c, protocol, a.sweep.run.workers).map(drop)
        }
        Command::Tms(a) => {
            let mut c = build_config(&a.run, "fig2")?;
            apply_sweep(&mut c, &a);
            finish(c, Protocol::Tms, a.run.workers).map(drop)
        }
        Command::Dtc(a) => {
            let mut c = build_config(&a.run, "fig4")?;
            if let Some(e) = a.eps_flip {
                c.dtc.epsilon_flip = e;
            }
            if let Some(f) = a.flips {
                c.dtc.flips = f;
            }
            finish(c, Protocol::Dtc, a.run.workers).map(drop)
        }
        Command::Bounds(a) => {
            let mut c = build_config(&a.run, "fig3")?;
            if let Some(k) = a.cells {
                c.bounds.cells = k;
            }
            if let Some(s) = a.scale {
                c.bounds.coupling_scale = s;
            }
            finish(c, Protocol::Bounds, a.run.workers).map(drop)
        }
        Command::Fit(a) => fit(&a),
        Command::Spectrum(a) => spectrum(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rmd-lab: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4..6").unwrap(), vec![4, 5]);
        assert_eq!(parse_seeds("9,2").unwrap(), vec![9, 2]);
        assert!(parse_seeds("6..4").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
