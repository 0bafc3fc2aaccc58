//! Magnus error-bound constants and inequalities, measured cell errors, and
//! golden-rule heating rates.
//!
//! For the driven Ising chain every site touches two `XX` bonds, two `ZZ`
//! bonds, both static fields and the drive, so the local energy scale is
//! `J = 2|Jx| + 2|Jz| + |B0| + |Bz| + |Bx|` with interaction range `k = 2` and
//! `lambda = 2 k J`. The driving norm `V0 = L |Bx|` is extensive.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{spectral_norm, HermitianSpectrum};
use crate::propagation::{unit_cell_level, PropagatorPair};
use crate::sequence::DriveSequence;
use crate::spinchain::SpinChainParams;
use crate::C64;

/// Largest chain for which dense operator norms are computed.
pub const MAX_NORM_SITES: usize = 10;

/// Largest multipole order accepted by [`fgr_rate`].
pub const MAX_FGR_ORDER: u32 = 80;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub k: u32,
    pub j: f64,
    pub lambda: f64,
    pub v0: f64,
    /// Optimal truncation order for the dipole bound; `None` when unbounded
    /// (`lambda = 0` or `T = 0`).
    pub n0: Option<u64>,
    pub n0_prime: Option<u64>,
}

pub fn bound_constants(p: &SpinChainParams) -> BoundConstants {
    let k = 2u32;
    let j = 2.0 * p.jx.abs() + 2.0 * p.jz.abs() + p.b0.abs() + p.bz.abs() + p.bx.abs();
    let lambda = 2.0 * k as f64 * j;
    let v0 = p.sites as f64 * p.bx.abs();
    let truncation = |duration: f64| {
        let x = 1.0 / (16.0 * lambda * duration);
        x.is_finite().then(|| x.floor() as u64)
    };
    BoundConstants {
        k,
        j,
        lambda,
        v0,
        n0: truncation(2.0 * p.period),
        n0_prime: truncation(4.0 * p.period),
    }
}

fn truncation_term(n0: Option<u64>) -> f64 {
    match n0 {
        Some(n) => 6.0 * 0.5f64.powi(n.min(2000) as i32),
        None => 0.0,
    }
}

/// `V0 [6 2^(-n0) + lambda T] t`, the accumulated dipole error bound.
pub fn dipole_bound(c: &BoundConstants, period: f64, t: f64) -> f64 {
    c.v0 * (truncation_term(c.n0) + c.lambda * period) * t
}

/// `V0 [6 2^(-n0') + (4/9)(4 T lambda)^2] t`, the improved quadrupole bound.
pub fn quadrupole_bound(c: &BoundConstants, period: f64, t: f64) -> f64 {
    let x = 4.0 * period * c.lambda;
    c.v0 * (truncation_term(c.n0_prime) + 4.0 / 9.0 * x * x) * t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// `U- U+`
    Dipole,
    /// `U+ U-`
    Antidipole,
    /// `U+ U- U- U+`
    Quadrupole,
    /// `U- U+ U+ U-`
    Antiquadrupole,
}

impl CellKind {
    pub fn level(self) -> u32 {
        match self {
            CellKind::Dipole | CellKind::Antidipole => 1,
            CellKind::Quadrupole | CellKind::Antiquadrupole => 2,
        }
    }

    pub fn flipped(self) -> bool {
        matches!(self, CellKind::Antidipole | CellKind::Antiquadrupole)
    }
}

fn check_norm_size(pair: &PropagatorPair) -> Result<()> {
    if pair.params.sites > MAX_NORM_SITES {
        return Err(Error::ResourceCap(format!(
            "operator norms are limited to L <= {MAX_NORM_SITES}, got {}",
            pair.params.sites
        )));
    }
    Ok(())
}

/// `|| cell - exp(-i H_F0 duration) ||` in the spectral norm.
pub fn measured_cell_error(pair: &PropagatorPair, cell: CellKind) -> Result<f64> {
    check_norm_size(pair)?;
    let cells = unit_cell_level(pair, cell.level());
    let duration = pair.params.period * (1u32 << cell.level()) as f64;
    let target = pair.effective_propagator(duration)?;
    spectral_norm(&(cells.cell(cell.flipped()) - &target))
}

/// Spectral-norm error after each cell of an RMD sequence:
/// `(t, || prod cells - exp(-i H_F0 t) ||)`.
pub fn cumulative_errors(pair: &PropagatorPair, seq: &DriveSequence) -> Result<Vec<(f64, f64)>> {
    check_norm_size(pair)?;
    let cells = unit_cell_level(pair, seq.order());
    let spectrum = HermitianSpectrum::new(&pair.h_f0.matrix)?;
    let cell_time = pair.params.period * seq.cell_len() as f64;
    let mut product: Array2<C64> = crate::linalg::identity(pair.dim());
    let mut out = Vec::with_capacity(seq.num_blocks());
    for i in 0..seq.num_blocks() {
        let flipped = seq.block(i)?[0] == -1;
        product = cells.cell(flipped).dot(&product);
        let t = (i + 1) as f64 * cell_time;
        out.push((t, spectral_norm(&(&product - &spectrum.exp_minus_i(t)))?));
    }
    Ok(out)
}

/// One line of a bound report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    #[serde(rename = "T")]
    pub period: f64,
    pub t: f64,
    pub measured_error: f64,
    pub dipole_bound: f64,
    pub quadrupole_bound: f64,
}

/// Cumulative errors of `seq` with both bounds evaluated at each time.
pub fn bound_report(pair: &PropagatorPair, seq: &DriveSequence) -> Result<Vec<BoundRow>> {
    let c = bound_constants(&pair.params);
    let period = pair.params.period;
    Ok(cumulative_errors(pair, seq)?
        .into_iter()
        .map(|(t, err)| BoundRow {
            period,
            t,
            measured_error: err,
            dipole_bound: dipole_bound(&c, period, t),
            quadrupole_bound: quadrupole_bound(&c, period, t),
        })
        .collect())
}

pub fn write_bound_report<W: Write>(rows: &[BoundRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["T", "t", "measured_error", "dipole_bound", "quadrupole_bound"])?;
    for r in rows {
        w.write_record([
            r.period.to_string(),
            r.t.to_string(),
            r.measured_error.to_string(),
            r.dipole_bound.to_string(),
            r.quadrupole_bound.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_bound_report(rows: &[BoundRow], path: &Path) -> Result<()> {
    write_bound_report(rows, BufWriter::new(File::create(path)?))
}

/// Inputs of the golden-rule rate integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgrParams {
    pub a: f64,
    pub eps: f64,
    pub omega: f64,
    pub n: u32,
    pub x0: f64,
}

impl FgrParams {
    pub fn new(a: f64, eps: f64, omega: f64, n: u32) -> Self {
        Self {
            a,
            eps,
            omega,
            n,
            x0: 1.0,
        }
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }
}

/// `A (2n)! (eps / Omega)^(2n+1)`, the closed form of
/// `int_0^inf x^(2n) A exp(-x Omega / eps) dx`.
pub fn fgr_rate(fp: &FgrParams) -> Result<f64> {
    if !(fp.a > 0.0 && fp.eps > 0.0 && fp.omega > 0.0) {
        return invalid("A, eps and Omega must be positive");
    }
    if fp.n > MAX_FGR_ORDER {
        return Err(Error::Range(format!(
            "(2n)! overflows for n = {} > {MAX_FGR_ORDER}",
            fp.n
        )));
    }
    let factorial: f64 = (1..=2 * fp.n).map(f64::from).product();
    let rate = fp.a * factorial * (fp.eps / fp.omega).powi(2 * fp.n as i32 + 1);
    if !rate.is_finite() {
        return Err(Error::Range(format!("rate overflows for {fp:?}")));
    }
    Ok(rate)
}

/// `A exp(-x0 Omega / eps)` for a drive whose spectrum is concentrated at
/// `x0 Omega`.
pub fn fgr_rate_tms(fp: &FgrParams) -> Result<f64> {
    if !(fp.a > 0.0 && fp.eps > 0.0 && fp.omega >= 0.0 && fp.x0 > 0.0) {
        return invalid("A, eps and x0 must be positive and Omega non-negative");
    }
    Ok(fp.a * (-fp.x0 * fp.omega / fp.eps).exp())
}

/// Thermalization time predicted by the golden rule, `1 / rate`.
pub fn fgr_time(fp: &FgrParams) -> Result<f64> {
    Ok(1.0 / fgr_rate(fp)?)
}
