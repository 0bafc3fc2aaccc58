//! Driven Ising chain with periodic boundaries:
//!
//! ```text
//! H± = sum_i Jx X_i X_{i+1} + Jz Z_i Z_{i+1} + (B0 ± Bx) X_i + Bz Z_i
//! ```
//!
//! and the static average `H_F0 = (H+ + H-) / 2`, which drops the `Bx` term.
//!
//! Basis convention: bit `i` of a basis index is site `i`; a set bit is spin
//! up (`Z = +1`), a clear bit is spin down (`Z = -1`). Matrices are assembled
//! column by column from the bitwise Pauli action.

pub mod momentum;

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::C64;

pub use momentum::ZeroMomentumBasis;

/// Largest chain length accepted by default (dimension 16384).
pub const DEFAULT_MAX_SITES: usize = 14;
pub const MIN_SITES: usize = 4;

/// Couplings, chain length and elementary interval of the driven chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinChainParams {
    #[serde(rename = "Jz")]
    pub jz: f64,
    #[serde(rename = "Jx")]
    pub jx: f64,
    #[serde(rename = "Bx")]
    pub bx: f64,
    #[serde(rename = "Bz")]
    pub bz: f64,
    #[serde(rename = "B0")]
    pub b0: f64,
    #[serde(rename = "L")]
    pub sites: usize,
    #[serde(rename = "T")]
    pub period: f64,
}

impl SpinChainParams {
    pub fn new(jz: f64, jx: f64, bx: f64, bz: f64, b0: f64, sites: usize, period: f64) -> Self {
        Self {
            jz,
            jx,
            bx,
            bz,
            b0,
            sites,
            period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_cap(DEFAULT_MAX_SITES)
    }

    /// `L` must be even and in `[4, max_sites]`; `T` must be finite and
    /// non-negative (`T = 0` gives identity propagators).
    pub fn validate_with_cap(&self, max_sites: usize) -> Result<()> {
        if !self.sites.is_multiple_of(2) || self.sites < MIN_SITES {
            return invalid(format!(
                "chain length must be even and at least {MIN_SITES}, got {}",
                self.sites
            ));
        }
        if self.sites > max_sites {
            return Err(Error::ResourceCap(format!(
                "chain length {} exceeds the cap of {max_sites} sites",
                self.sites
            )));
        }
        if !(self.period.is_finite() && self.period >= 0.0) {
            return invalid(format!("T must be finite and non-negative, got {}", self.period));
        }
        let couplings = [self.jz, self.jx, self.bx, self.bz, self.b0];
        if couplings.iter().any(|c| !c.is_finite()) {
            return invalid("couplings must be finite");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        1 << self.sites
    }

    pub fn with_sites(mut self, sites: usize) -> Self {
        self.sites = sites;
        self
    }

    pub fn with_period(mut self, period: f64) -> Self {
        self.period = period;
        self
    }

    pub fn with_inverse_period(self, inv_t: f64) -> Self {
        self.with_period(1.0 / inv_t)
    }

    /// Multiplies every coupling and field by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.jz *= factor;
        self.jx *= factor;
        self.bx *= factor;
        self.bz *= factor;
        self.b0 *= factor;
        self
    }

    /// Transverse field seen by the chain for a given drive sign.
    pub fn transverse_field(&self, sign: DriveSign) -> f64 {
        self.b0 + sign.factor() * self.bx
    }
}

/// Which of the two elementary Hamiltonians, or the static average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DriveSign {
    Plus,
    Minus,
    Static,
}

impl DriveSign {
    pub fn factor(self) -> f64 {
        match self {
            DriveSign::Plus => 1.0,
            DriveSign::Minus => -1.0,
            DriveSign::Static => 0.0,
        }
    }

    pub fn from_symbol(symbol: i8) -> Result<Self> {
        match symbol {
            1 => Ok(DriveSign::Plus),
            -1 => Ok(DriveSign::Minus),
            0 => Ok(DriveSign::Static),
            other => invalid(format!("drive sign must be +1, -1 or 0, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HamiltonianLabel {
    Plus,
    Minus,
    Effective,
    Other,
}

/// Dense Hermitian operator on the `2^L` spin basis (or a symmetry sector).
#[derive(Debug, Clone)]
pub struct HamiltonianMatrix {
    pub matrix: Array2<C64>,
    pub label: HamiltonianLabel,
    pub sites: usize,
}

impl HamiltonianMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        linalg::hermiticity_defect(&self.matrix)
    }

    pub fn trace(&self) -> C64 {
        self.matrix.diag().sum()
    }
}

fn label_for(sign: DriveSign) -> HamiltonianLabel {
    match sign {
        DriveSign::Plus => HamiltonianLabel::Plus,
        DriveSign::Minus => HamiltonianLabel::Minus,
        DriveSign::Static => HamiltonianLabel::Effective,
    }
}

/// Calls `emit(row, value)` for every nonzero of column `state` of `H`.
///
/// Diagonal first, then one entry per flipped bond and per flipped site.
pub fn for_each_hamiltonian_entry(
    p: &SpinChainParams,
    sign: DriveSign,
    state: usize,
    mut emit: impl FnMut(usize, f64),
) {
    let l = p.sites;
    let hx = p.transverse_field(sign);
    // From integer counts, so the diagonal is exactly translation invariant.
    let up = state.count_ones() as i64;
    let broken = (state ^ shift_index(state, l)).count_ones() as i64;
    let zz = l as i64 - 2 * broken;
    let z = 2 * up - l as i64;
    emit(state, p.jz * zz as f64 + p.bz * z as f64);
    for i in 0..l {
        let j = (i + 1) % l;
        if p.jx != 0.0 {
            emit(state ^ (1 << i) ^ (1 << j), p.jx);
        }
        if hx != 0.0 {
            emit(state ^ (1 << i), hx);
        }
    }
}

/// Builds `H+`, `H-` or `H_F0` in the full basis.
pub fn build_hamiltonian(p: &SpinChainParams, sign: DriveSign) -> Result<HamiltonianMatrix> {
    p.validate()?;
    let dim = p.dim();
    let mut matrix = Array2::<C64>::zeros((dim, dim));
    for col in 0..dim {
        for_each_hamiltonian_entry(p, sign, col, |row, v| matrix[[row, col]].re += v);
    }
    Ok(HamiltonianMatrix {
        matrix,
        label: label_for(sign),
        sites: p.sites,
    })
}

/// Matrix representation of `H± / H_F0` in the requested basis.
pub fn build_hamiltonian_in(
    p: &SpinChainParams,
    sign: DriveSign,
    basis: &Basis,
) -> Result<HamiltonianMatrix> {
    match basis {
        Basis::Full => build_hamiltonian(p, sign),
        Basis::ZeroMomentum(sector) => {
            p.validate()?;
            sector.check_sites(p.sites)?;
            let matrix = sector.project_operator(|state, emit| {
                for_each_hamiltonian_entry(p, sign, state, |row, v| emit(row, C64::new(v, 0.0)))
            });
            Ok(HamiltonianMatrix {
                matrix,
                label: label_for(sign),
                sites: p.sites,
            })
        }
    }
}

/// Applies `H` to a full-basis amplitude vector without forming the matrix.
pub fn apply_hamiltonian(p: &SpinChainParams, sign: DriveSign, amps: &Array1<C64>) -> Array1<C64> {
    let mut out = Array1::<C64>::zeros(amps.len());
    for (col, &a) in amps.iter().enumerate() {
        if a == C64::new(0.0, 0.0) {
            continue;
        }
        for_each_hamiltonian_entry(p, sign, col, |row, v| out[row] += a * v);
    }
    out
}

/// Working representation for dynamics.
#[derive(Debug, Clone)]
pub enum Basis {
    /// All `2^L` computational basis states.
    Full,
    /// Translation-invariant (zero-momentum) states only.
    ZeroMomentum(Arc<ZeroMomentumBasis>),
}

impl Basis {
    pub fn zero_momentum(sites: usize) -> Result<Self> {
        Ok(Basis::ZeroMomentum(Arc::new(ZeroMomentumBasis::new(sites)?)))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Basis::Full => "full",
            Basis::ZeroMomentum(_) => "k0",
        }
    }

    pub fn dim(&self, sites: usize) -> usize {
        match self {
            Basis::Full => 1 << sites,
            Basis::ZeroMomentum(sector) => sector.dim(),
        }
    }

    /// Coordinates of a full-basis state in this basis. For the momentum
    /// sector the state must be translation invariant to `1e-10`.
    pub fn coordinates(&self, psi: &StateVector) -> Result<Array1<C64>> {
        match self {
            Basis::Full => Ok(psi.amps.clone()),
            Basis::ZeroMomentum(sector) => {
                sector.check_sites(psi.sites)?;
                let coords = sector.project(&psi.amps);
                let kept = linalg::norm(&coords);
                let total = psi.norm();
                if (total * total - kept * kept).abs() > 1e-10 {
                    return invalid(
                        "state is not translation invariant; it cannot be evolved in the k=0 sector",
                    );
                }
                Ok(coords)
            }
        }
    }

    /// Full-basis state from coordinates in this basis.
    pub fn embed(&self, sites: usize, coords: &Array1<C64>) -> StateVector {
        match self {
            Basis::Full => StateVector {
                sites,
                amps: coords.clone(),
            },
            Basis::ZeroMomentum(sector) => StateVector {
                sites,
                amps: sector.embed(coords),
            },
        }
    }
}

/// Single-site spin orientation along `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spin {
    Up,
    Down,
}

/// Normalized amplitudes over the `2^L` computational basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub sites: usize,
    pub amps: Array1<C64>,
}

impl StateVector {
    pub fn new(sites: usize, amps: Array1<C64>) -> Result<Self> {
        if amps.len() != 1 << sites {
            return Err(Error::DimensionMismatch {
                expected: 1 << sites,
                actual: amps.len(),
            });
        }
        let state = Self { sites, amps };
        if (state.norm() - 1.0).abs() > 1e-10 {
            return invalid(format!("state norm {} differs from 1", state.norm()));
        }
        Ok(state)
    }

    pub fn basis_state(sites: usize, index: usize) -> Self {
        let mut amps = Array1::<C64>::zeros(1 << sites);
        amps[index] = C64::new(1.0, 0.0);
        Self { sites, amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.amps)
    }

    /// Parses `u`/`d` (or `U`/`D`, `1`/`0`) characters, site 0 first.
    pub fn from_pattern_str(pattern: &str) -> Result<Self> {
        let spins = pattern
            .chars()
            .map(|c| match c {
                'u' | 'U' | '1' => Ok(Spin::Up),
                'd' | 'D' | '0' => Ok(Spin::Down),
                other => invalid(format!("unexpected spin character {other:?}")),
            })
            .collect::<Result<Vec<_>>>()?;
        product_state_with_len(&spins, spins.len())
    }
}

/// Computational basis state for the given spin pattern (site 0 first).
pub fn product_state(pattern: &[Spin]) -> Result<StateVector> {
    product_state_with_len(pattern, pattern.len())
}

/// Like [`product_state`] but rejects patterns whose length is not `sites`.
pub fn product_state_with_len(pattern: &[Spin], sites: usize) -> Result<StateVector> {
    if pattern.len() != sites {
        return Err(Error::DimensionMismatch {
            expected: sites,
            actual: pattern.len(),
        });
    }
    if sites == 0 || sites > DEFAULT_MAX_SITES {
        return invalid(format!("pattern length {sites} outside 1..={DEFAULT_MAX_SITES}"));
    }
    let index = pattern
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == Spin::Up)
        .fold(0usize, |acc, (i, _)| acc | 1 << i);
    Ok(StateVector::basis_state(sites, index))
}

pub fn all_down(sites: usize) -> StateVector {
    StateVector::basis_state(sites, 0)
}

/// Single-site factor of `exp(i (pi + eps)/2 X)`: `[[c, i s], [i s, c]]`.
fn flip_factors(epsilon: f64) -> (C64, C64) {
    let half = (PI + epsilon) / 2.0;
    (C64::new(half.cos(), 0.0), C64::new(0.0, half.sin()))
}

/// Dense `exp(i (pi + eps)/2 sum_i X_i)`. For `eps = 0` this is
/// `i^L prod_i X_i`.
pub fn global_flip(sites: usize, epsilon: f64) -> Result<Array2<C64>> {
    check_flip_epsilon(epsilon)?;
    if sites == 0 || sites > DEFAULT_MAX_SITES {
        return invalid(format!("chain length {sites} outside 1..={DEFAULT_MAX_SITES}"));
    }
    let dim = 1usize << sites;
    let (c, s) = flip_factors(epsilon);
    let mut out = Array2::<C64>::zeros((dim, dim));
    for a in 0..dim {
        for b in 0..dim {
            let flips = (a ^ b).count_ones() as i32;
            out[[a, b]] = c.powi(sites as i32 - flips) * s.powi(flips);
        }
    }
    Ok(out)
}

fn check_flip_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon.abs() < PI / 2.0) {
        return invalid(format!("flip imperfection must satisfy |eps| < pi/2, got {epsilon}"));
    }
    Ok(())
}

/// Applies the global flip site by site in `O(L 2^L)`.
pub fn apply_global_flip(amps: &mut Array1<C64>, sites: usize, epsilon: f64) -> Result<()> {
    check_flip_epsilon(epsilon)?;
    if amps.len() != 1 << sites {
        return Err(Error::DimensionMismatch {
            expected: 1 << sites,
            actual: amps.len(),
        });
    }
    let (c, s) = flip_factors(epsilon);
    for i in 0..sites {
        let bit = 1usize << i;
        for a in 0..amps.len() {
            if a & bit == 0 {
                let (lo, hi) = (amps[a], amps[a | bit]);
                amps[a] = c * lo + s * hi;
                amps[a | bit] = s * lo + c * hi;
            }
        }
    }
    Ok(())
}

/// Basis index after moving every spin one site to the right (site `i` to
/// site `i + 1 mod L`).
pub fn shift_index(index: usize, sites: usize) -> usize {
    let mask = (1usize << sites) - 1;
    ((index << 1) | (index >> (sites - 1))) & mask
}

/// One-site cyclic translation of a full-basis state.
pub fn translate(psi: &StateVector) -> StateVector {
    let mut amps = Array1::<C64>::zeros(psi.dim());
    for (s, &a) in psi.amps.iter().enumerate() {
        amps[shift_index(s, psi.sites)] = a;
    }
    StateVector {
        sites: psi.sites,
        amps,
    }
}
