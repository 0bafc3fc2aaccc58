//! Zero-momentum sector of the periodic chain.
//!
//! A sector basis vector is the normalized orbit sum
//! `|r> = R^{-1/2} sum_{j<R} T^j |s_r>` of a representative `s_r` (the
//! smallest index in its translation orbit) with period `R`. Operators that
//! commute with translations are block diagonal, and their zero-momentum
//! block is what the dynamics of translation-invariant states sees.

use ndarray::{Array1, Array2};

use super::{shift_index, DEFAULT_MAX_SITES};
use crate::error::{invalid, Result};
use crate::C64;

#[derive(Debug, Clone)]
pub struct ZeroMomentumBasis {
    sites: usize,
    representatives: Vec<usize>,
    periods: Vec<usize>,
    /// Sector index of every full-basis state's orbit.
    orbit_of: Vec<u32>,
}

impl ZeroMomentumBasis {
    pub fn new(sites: usize) -> Result<Self> {
        if !(2..=DEFAULT_MAX_SITES).contains(&sites) {
            return invalid(format!("chain length {sites} outside 2..={DEFAULT_MAX_SITES}"));
        }
        let dim = 1usize << sites;
        let mut orbit_of = vec![u32::MAX; dim];
        let mut representatives = Vec::new();
        let mut periods = Vec::new();
        for s in 0..dim {
            if orbit_of[s] != u32::MAX {
                continue;
            }
            // Increasing scan order makes `s` the smallest member of its orbit.
            let idx = representatives.len() as u32;
            let mut t = s;
            let mut period = 0;
            loop {
                orbit_of[t] = idx;
                period += 1;
                t = shift_index(t, sites);
                if t == s {
                    break;
                }
            }
            representatives.push(s);
            periods.push(period);
        }
        Ok(Self {
            sites,
            representatives,
            periods,
            orbit_of,
        })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn dim(&self) -> usize {
        self.representatives.len()
    }

    pub fn representative(&self, index: usize) -> usize {
        self.representatives[index]
    }

    pub fn period(&self, index: usize) -> usize {
        self.periods[index]
    }

    pub(crate) fn check_sites(&self, sites: usize) -> Result<()> {
        if sites != self.sites {
            return invalid(format!(
                "sector built for L = {}, used with L = {sites}",
                self.sites
            ));
        }
        Ok(())
    }

    /// Orthogonal projection of a full-basis vector onto the sector.
    pub fn project(&self, amps: &Array1<C64>) -> Array1<C64> {
        let mut out = Array1::<C64>::zeros(self.dim());
        for (s, &a) in amps.iter().enumerate() {
            out[self.orbit_of[s] as usize] += a;
        }
        for (k, v) in out.iter_mut().enumerate() {
            *v /= (self.periods[k] as f64).sqrt();
        }
        out
    }

    /// Full-basis vector of sector coordinates.
    pub fn embed(&self, coords: &Array1<C64>) -> Array1<C64> {
        let mut out = Array1::<C64>::zeros(1 << self.sites);
        for (s, slot) in out.iter_mut().enumerate() {
            let k = self.orbit_of[s] as usize;
            *slot = coords[k] / (self.periods[k] as f64).sqrt();
        }
        out
    }

    /// Zero-momentum block of a translation-invariant operator given by its
    /// column action: `columns(state, emit)` must call `emit(row, value)` for
    /// the nonzeros of column `state` (repeated rows are summed).
    ///
    /// Uses `<a|O|b> = sqrt(R_b / R_a) sum_{s in orbit(a)} O[s, s_b]`, which
    /// holds only when `O` commutes with translations.
    pub fn project_operator(
        &self,
        mut columns: impl FnMut(usize, &mut dyn FnMut(usize, C64)),
    ) -> Array2<C64> {
        let dim = self.dim();
        let mut out = Array2::<C64>::zeros((dim, dim));
        for b in 0..dim {
            let rb = self.periods[b] as f64;
            let orbit_of = &self.orbit_of;
            let periods = &self.periods;
            let mut emit = |row: usize, v: C64| {
                let a = orbit_of[row] as usize;
                out[[a, b]] += v * (rb / periods[a] as f64).sqrt();
            };
            columns(self.representatives[b], &mut emit);
        }
        out
    }

    /// Zero-momentum block of a dense translation-invariant operator.
    pub fn project_dense(&self, op: &Array2<C64>) -> Array2<C64> {
        self.project_operator(|state, emit| {
            for (row, &v) in op.column(state).iter().enumerate() {
                if v != C64::new(0.0, 0.0) {
                    emit(row, v);
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::spinchain::{build_hamiltonian, build_hamiltonian_in, global_flip, Basis, DriveSign, SpinChainParams};

    #[test]
    fn necklace_counts() {
        // Number of binary necklaces of length L.
        for (sites, count) in [(4, 6), (6, 14), (8, 36), (10, 108), (12, 352)] {
            assert_eq!(ZeroMomentumBasis::new(sites).unwrap().dim(), count);
        }
    }

    #[test]
    fn embed_then_project_is_identity() {
        let b = ZeroMomentumBasis::new(8).unwrap();
        let coords = Array1::from_iter((0..b.dim()).map(|k| C64::new(k as f64, -(k as f64) / 3.0)));
        let back = b.project(&b.embed(&coords));
        assert!(coords.iter().zip(&back).all(|(x, y)| (x - y).norm() < 1e-12));
        // Embedding is an isometry.
        assert!((linalg::norm(&b.embed(&coords)) - linalg::norm(&coords)).abs() < 1e-9);
    }

    #[test]
    fn sector_block_matches_dense_conjugation() {
        let p = SpinChainParams::new(1.0, 0.71, 3.2, 0.25, 0.21, 6, 0.05);
        let sector = ZeroMomentumBasis::new(6).unwrap();
        let full = build_hamiltonian(&p, DriveSign::Plus).unwrap();
        let block = build_hamiltonian_in(&p, DriveSign::Plus, &Basis::ZeroMomentum(sector.clone().into())).unwrap();
        // Explicit isometry V with orbit-sum columns.
        let dim = sector.dim();
        let mut v = Array2::<C64>::zeros((64, dim));
        for k in 0..dim {
            let mut e = Array1::<C64>::zeros(dim);
            e[k] = C64::new(1.0, 0.0);
            v.column_mut(k).assign(&sector.embed(&e));
        }
        let reference = linalg::conj_transpose(&v).dot(&full.matrix).dot(&v);
        assert!(linalg::max_abs_diff(&reference, &block.matrix) < 1e-12);
        assert!(block.hermiticity_defect() < 1e-12);

        let flip = global_flip(6, 0.07).unwrap();
        let flip_ref = linalg::conj_transpose(&v).dot(&flip).dot(&v);
        assert!(linalg::max_abs_diff(&flip_ref, &sector.project_dense(&flip)) < 1e-12);
    }
}
