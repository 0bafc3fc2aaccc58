//! Thermalization times from traces and scaling-law fits of `tau` against
//! the driving rate `1/T`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::propagation::ObservableTrace;

/// Fewest sweep points accepted by the fits.
pub const MIN_FIT_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    /// `<H_F0>_t / <H_F0>_0`, falling.
    Energy,
    /// `S / (L/2)`, rising.
    Entropy,
}

impl Diagnostic {
    pub fn name(self) -> &'static str {
        match self {
            Diagnostic::Energy => "energy",
            Diagnostic::Entropy => "entropy",
        }
    }

    /// Normalized diagnostic along the trace.
    pub fn normalized(self, trace: &ObservableTrace) -> Result<Vec<f64>> {
        let first = trace
            .rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty trace".into()))?;
        match self {
            Diagnostic::Energy => {
                if first.energy == 0.0 {
                    return invalid("initial energy is zero; the energy ratio is undefined");
                }
                Ok(trace.rows.iter().map(|r| r.energy / first.energy).collect())
            }
            Diagnostic::Entropy => {
                let sites = trace
                    .meta
                    .params
                    .map(|p| p.sites)
                    .ok_or_else(|| Error::InvalidArgument("trace metadata lacks L".into()))?;
                let half = sites as f64 / 2.0;
                Ok(trace.rows.iter().map(|r| r.entropy / half).collect())
            }
        }
    }
}

impl std::str::FromStr for Diagnostic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy" => Ok(Diagnostic::Energy),
            "entropy" => Ok(Diagnostic::Entropy),
            other => invalid(format!("unknown diagnostic {other:?}")),
        }
    }
}

/// Threshold center and half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub diagnostic: Diagnostic,
    pub center: f64,
    pub band: f64,
}

impl Thresholds {
    pub fn new(diagnostic: Diagnostic, center: f64, band: f64) -> Self {
        Self {
            diagnostic,
            center,
            band,
        }
    }

    /// The band edge crossed last.
    pub fn far_edge(&self) -> f64 {
        match self.diagnostic {
            Diagnostic::Energy => self.center - self.band,
            Diagnostic::Entropy => self.center + self.band,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalizationTime {
    pub tau: f64,
    pub diagnostic: Diagnostic,
    pub threshold_center: f64,
    pub threshold_band: f64,
    /// Crossing time of the near band edge.
    pub tau_lo: f64,
    /// Crossing time of the far band edge.
    pub tau_hi: f64,
}

/// First time the normalized sequence passes `level` (downwards when
/// `falling`), interpolated linearly in `ln t` between the bracketing
/// samples (linearly in `t` if the earlier sample is at `t = 0`).
pub fn first_crossing(times: &[f64], values: &[f64], level: f64, falling: bool) -> Option<f64> {
    let past = |v: f64| if falling { v < level } else { v > level };
    let i = values.iter().position(|&v| past(v))?;
    if i == 0 {
        return None;
    }
    let (t0, t1) = (times[i - 1], times[i]);
    let (v0, v1) = (values[i - 1], values[i]);
    let frac = (level - v0) / (v1 - v0);
    if t0 > 0.0 {
        Some((t0.ln() + frac * (t1.ln() - t0.ln())).exp())
    } else {
        Some(t0 + frac * (t1 - t0))
    }
}

pub fn thermalization_time(
    trace: &ObservableTrace,
    diagnostic: Diagnostic,
    center: f64,
    band: f64,
) -> Result<ThermalizationTime> {
    if !(band >= 0.0) {
        return invalid("threshold band must be non-negative");
    }
    let values = diagnostic.normalized(trace)?;
    let times = trace.times();
    let falling = diagnostic == Diagnostic::Energy;
    let (near, far) = if falling {
        (center + band, center - band)
    } else {
        (center - band, center + band)
    };
    let cross = |level: f64| {
        first_crossing(&times, &values, level, falling).ok_or_else(|| {
            Error::NoCrossing(format!(
                "{} diagnostic never crosses {level} (trace ends at t = {})",
                diagnostic.name(),
                times.last().copied().unwrap_or(0.0)
            ))
        })
    };
    let tau = cross(center)?;
    Ok(ThermalizationTime {
        tau,
        diagnostic,
        threshold_center: center,
        threshold_band: band,
        tau_lo: cross(near)?,
        tau_hi: cross(far)?,
    })
}

/// Median of a non-empty slice (mean of the middle pair for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// One sweep point: medians over the seeds whose traces crossed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(rename = "invT")]
    pub inv_t: f64,
    pub tau: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub seed_count: usize,
}

/// Aggregates per-seed results; `None` when no seed crossed.
pub fn aggregate_seeds(inv_t: f64, per_seed: &[Result<ThermalizationTime>]) -> Option<SweepPoint> {
    let ok: Vec<&ThermalizationTime> = per_seed.iter().filter_map(|r| r.as_ref().ok()).collect();
    let pick = |f: fn(&ThermalizationTime) -> f64| {
        median(&ok.iter().map(|t| f(t)).collect::<Vec<_>>())
    };
    Some(SweepPoint {
        inv_t,
        tau: pick(|t| t.tau)?,
        tau_lo: pick(|t| t.tau_lo)?,
        tau_hi: pick(|t| t.tau_hi)?,
        seed_count: ok.len(),
    })
}

pub fn write_summary<W: Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["invT", "tau", "tau_lo", "tau_hi", "seed_count"])?;
    for p in points {
        w.write_record([
            p.inv_t.to_string(),
            p.tau.to_string(),
            p.tau_lo.to_string(),
            p.tau_hi.to_string(),
            p.seed_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary<R: std::io::Read>(input: R) -> Result<Vec<SweepPoint>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `ln tau = intercept + alpha ln(1/T)`
    PowerLaw,
    /// `ln tau = intercept + rate / T`
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub model: FitModel,
    /// `alpha` for the power law, the rate for the exponential model.
    pub exponent: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Residual sum of squares of `ln tau`.
    pub residual_ss: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<Diagnostic>,
    /// `(1/T, tau)` pairs.
    pub points: Vec<(f64, f64)>,
}

impl ScalingFit {
    pub fn predict(&self, inv_t: f64) -> f64 {
        let x = match self.model {
            FitModel::PowerLaw => inv_t.ln(),
            FitModel::Exponential => inv_t,
        };
        (self.intercept + self.exponent * x).exp()
    }

    pub fn with_diagnostic(mut self, d: Diagnostic) -> Self {
        self.diagnostic = Some(d);
        self
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_json(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

fn check_points(points: &[(f64, f64)]) -> Result<()> {
    if points.len() < MIN_FIT_POINTS {
        return invalid(format!(
            "fits need at least {MIN_FIT_POINTS} points, got {}",
            points.len()
        ));
    }
    if points
        .iter()
        .any(|&(x, tau)| !(x > 0.0 && tau > 0.0 && x.is_finite() && tau.is_finite()))
    {
        return invalid("fit inputs must be positive and finite");
    }
    Ok(())
}

/// Least squares of `ln(tau_i / tau_0)` on `x_i - x_0`.
///
/// Working with ratios to the first point makes the slope bit-identical
/// under exact rescaling of every `tau` (for instance by a power of two).
fn log_ratio_fit(model: FitModel, xs: Vec<f64>, points: &[(f64, f64)]) -> ScalingFit {
    let tau0 = points[0].1;
    let ys: Vec<f64> = points.iter().map(|&(_, tau)| (tau / tau0).ln()).collect();
    let dx: Vec<f64> = xs.iter().map(|x| x - xs[0]).collect();
    let n = points.len() as f64;
    let mx = dx.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = dx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = dx.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let residual_ss: f64 = dx
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - my - slope * (x - mx);
            r * r
        })
        .sum();
    let r2 = if syy > 0.0 {
        (1.0 - residual_ss / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    // ln tau = ln tau0 + my + slope (x - x0 - mx)
    let intercept = tau0.ln() + my - slope * (xs[0] + mx);
    ScalingFit {
        model,
        exponent: slope,
        intercept,
        r2,
        residual_ss,
        n: points.len(),
        diagnostic: None,
        points: points.to_vec(),
    }
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<ScalingFit> {
    check_points(points)?;
    let xs = points.iter().map(|&(x, _)| x.ln()).collect();
    check_spread(log_ratio_fit(FitModel::PowerLaw, xs, points))
}

pub fn fit_exponential(points: &[(f64, f64)]) -> Result<ScalingFit> {
    check_points(points)?;
    let xs = points.iter().map(|&(x, _)| x).collect();
    check_spread(log_ratio_fit(FitModel::Exponential, xs, points))
}

fn check_spread(fit: ScalingFit) -> Result<ScalingFit> {
    if !fit.exponent.is_finite() {
        return invalid("fit needs at least two distinct 1/T values");
    }
    Ok(fit)
}

/// Points of a sweep summary as `(1/T, tau)`.
pub fn fit_points(summary: &[SweepPoint]) -> Vec<(f64, f64)> {
    summary.iter().map(|p| (p.inv_t, p.tau)).collect()
}
