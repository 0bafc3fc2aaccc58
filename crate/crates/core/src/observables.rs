//! Energy, half-chain entanglement entropy, local magnetization and the
//! period-doubling diagnostic.

use std::f64::consts::LN_2;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::propagation::ObservableTrace;
use crate::spinchain::{HamiltonianMatrix, StateVector};
use crate::C64;

/// Singular values below this are treated as numerical zeros.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-14;

/// Half-chain von Neumann entropy in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyValue {
    pub value: f64,
    /// Number of sites in the left block.
    pub cut: usize,
}

/// `Re <psi|H|psi>`; the imaginary part must vanish to `1e-10`.
pub fn energy_expectation(psi: &StateVector, h: &HamiltonianMatrix) -> Result<f64> {
    expectation(&psi.amps, &h.matrix)
}

/// `Re <v|M|v>` for raw coordinates, with the same Hermiticity witness.
pub fn expectation(amps: &Array1<C64>, matrix: &Array2<C64>) -> Result<f64> {
    if matrix.nrows() != amps.len() || matrix.ncols() != amps.len() {
        return Err(Error::DimensionMismatch {
            expected: matrix.nrows(),
            actual: amps.len(),
        });
    }
    let value = linalg::inner(amps, &matrix.dot(amps));
    if value.im.abs() > 1e-10 {
        return Err(Error::Linalg(format!(
            "expectation value has imaginary part {:e}",
            value.im
        )));
    }
    Ok(value.re)
}

/// Entropy of the reduced state of sites `0..L/2`.
pub fn half_chain_entropy(psi: &StateVector) -> Result<EntropyValue> {
    if !psi.sites.is_multiple_of(2) {
        return invalid(format!("half-chain cut needs even L, got {}", psi.sites));
    }
    let cut = psi.sites / 2;
    Ok(EntropyValue {
        value: bipartite_entropy(psi, cut)?,
        cut,
    })
}

/// Entropy across the cut between sites `0..left` and `left..L`.
pub fn bipartite_entropy(psi: &StateVector, left: usize) -> Result<f64> {
    if left > psi.sites {
        return Err(Error::OutOfRange {
            index: left,
            limit: psi.sites,
        });
    }
    // Index = a + 2^left * b, so a row-major (b, a) reshape puts the left
    // block along columns; singular values do not care about the transpose.
    let rows = 1usize << (psi.sites - left);
    let cols = 1usize << left;
    let m = Array2::from_shape_vec((rows, cols), psi.amps.to_vec())
        .map_err(|e| Error::Linalg(e.to_string()))?;
    let s = linalg::singular_values(&m)?;
    Ok(s.iter()
        .filter(|&&v| v > SINGULAR_VALUE_FLOOR)
        .map(|&v| {
            let p = v * v;
            -p * p.ln()
        })
        .sum())
}

/// Mean half-chain entropy of a random pure state, `(L ln 2 - 1) / 2`.
pub fn page_entropy(sites: usize) -> f64 {
    (sites as f64 * LN_2 - 1.0) / 2.0
}

/// Upper bound `(L/2) ln 2` of the half-chain entropy.
pub fn max_half_chain_entropy(sites: usize) -> f64 {
    (sites / 2) as f64 * LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// `<sigma^axis_site>`.
pub fn local_magnetization(psi: &StateVector, site: usize, axis: Axis) -> Result<f64> {
    if site >= psi.sites {
        return Err(Error::OutOfRange {
            index: site,
            limit: psi.sites,
        });
    }
    let bit = 1usize << site;
    let amps = &psi.amps;
    let value = match axis {
        Axis::Z => C64::new(
            amps.iter()
                .enumerate()
                .map(|(s, a)| if s & bit != 0 { a.norm_sqr() } else { -a.norm_sqr() })
                .sum(),
            0.0,
        ),
        Axis::X => amps
            .iter()
            .enumerate()
            .map(|(s, a)| amps[s ^ bit].conj() * a)
            .sum(),
        Axis::Y => amps
            .iter()
            .enumerate()
            .map(|(s, a)| {
                // sigma_y |up> = i |down>, sigma_y |down> = -i |up>
                let phase = if s & bit != 0 { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) };
                amps[s ^ bit].conj() * phase * a
            })
            .sum(),
    };
    if value.im.abs() > 1e-10 {
        return Err(Error::Linalg(format!(
            "magnetization has imaginary part {:e}",
            value.im
        )));
    }
    Ok(value.re)
}

/// The spin tracked in magnetization traces.
pub fn central_site(sites: usize) -> usize {
    sites / 2
}

/// `|sum_k (-1)^k m_k| / sum_k |m_k|` over the recorded central-spin
/// magnetizations of a flip-boundary trace.
///
/// The trace rows must be spaced exactly by `flip_interval`.
pub fn subharmonic_weight(trace: &ObservableTrace, flip_interval: f64) -> Result<f64> {
    if trace.rows.len() < 8 {
        return invalid(format!(
            "subharmonic weight needs at least 8 samples, got {}",
            trace.rows.len()
        ));
    }
    if !(flip_interval > 0.0) {
        return invalid("flip interval must be positive");
    }
    for (k, row) in trace.rows.iter().enumerate() {
        let expected = trace.rows[0].time + k as f64 * flip_interval;
        if (row.time - expected).abs() > 1e-9 * expected.abs().max(1.0) {
            return invalid(format!(
                "sample {k} at t = {} is not on the flip grid (expected {expected})",
                row.time
            ));
        }
    }
    Ok(alternating_weight(trace.rows.iter().map(|r| r.mz_center)))
}

/// Subharmonic weight of a raw series.
pub fn alternating_weight(values: impl IntoIterator<Item = f64>) -> f64 {
    let (signed, total, _) = values.into_iter().fold((0.0, 0.0, 1.0), |(s, t, sign), m: f64| {
        (s + sign * m, t + m.abs(), -sign)
    });
    if total == 0.0 {
        0.0
    } else {
        signed.abs() / total
    }
}
