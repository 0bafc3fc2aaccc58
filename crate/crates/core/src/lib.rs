//! Exact-diagonalization toolkit for spin chains under random multipolar
//! driving.
//!
//! The crate is organised bottom-up:
//!
//! - [`sequence`]: random multipolar and Thue–Morse drive sequences, their
//!   autocorrelations and power spectra.
//! - [`spinchain`]: the driven Ising Hamiltonians, product states, the global
//!   spin flip and the zero-momentum sector.
//! - [`propagation`]: exact propagators, the recursive unit-cell ladder and
//!   the stroboscopic evolution protocols.
//! - [`observables`]: energy, half-chain entanglement entropy, magnetization
//!   and the subharmonic weight.
//! - [`bounds`]: Magnus error-bound constants, measured cell errors and the
//!   golden-rule heating rates.
//! - [`analysis`]: thermalization times and scaling-law fits.
//! - [`experiment`]: configuration, presets and parameter sweeps writing CSV
//!   and JSON artifacts.
//!
//! Time-order convention: drive sequences are stored in the order the
//! symbols act. The dipole whose operator product is `U- U+` (so `U+` acts
//! first) is the sequence `[+1, -1]`.

extern crate blas_src;

pub mod analysis;
pub mod bounds;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod observables;
pub mod propagation;
pub mod sequence;
pub mod spinchain;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
