//! Dense linear-algebra helpers on top of `ndarray-linalg`.
//!
//! Every Hamiltonian in this crate is Hermitian, and the driven Ising model is
//! in fact real symmetric in the computational basis, so exponentials go
//! through a spectral decomposition with a real fast path.

use std::sync::Once;

use ndarray::{Array1, Array2, ShapeBuilder, Zip};
use ndarray_linalg::{Eigh, SVD, UPLO};

use crate::error::{Error, Result};
use crate::C64;

extern "C" {
    fn openblas_set_num_threads(num_threads: std::os::raw::c_int);
}

static BLAS_INIT: Once = Once::new();

/// Pins the BLAS backend to a single thread. Parallelism in this crate lives
/// only at the level of independent trajectories.
pub fn init_single_threaded_blas() {
    BLAS_INIT.call_once(|| unsafe { openblas_set_num_threads(1) });
}

/// Eigenvectors of a Hermitian matrix, stored real when the input was real.
#[derive(Debug, Clone)]
enum Eigenvectors {
    Real(Array2<f64>),
    Complex(Array2<C64>),
}

/// Spectral decomposition `H = V diag(E) V†` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianSpectrum {
    values: Array1<f64>,
    vectors: Eigenvectors,
}

impl HermitianSpectrum {
    /// Diagonalizes `h`. Inputs with a non-negligible anti-Hermitian part are
    /// rejected.
    pub fn new(h: &Array2<C64>) -> Result<Self> {
        init_single_threaded_blas();
        let (rows, cols) = h.dim();
        if rows != cols {
            return Err(Error::DimensionMismatch {
                expected: rows,
                actual: cols,
            });
        }
        let scale = h.iter().fold(1.0f64, |m, z| m.max(z.norm()));
        let defect = hermiticity_defect(h);
        if defect > 1e-10 * scale {
            return Err(Error::Linalg(format!(
                "matrix is not Hermitian (max deviation {defect:e})"
            )));
        }
        if h.iter().all(|z| z.im == 0.0) {
            let re = h.mapv(|z| z.re);
            let (values, vectors) = re.eigh(UPLO::Lower)?;
            Ok(Self {
                values,
                vectors: Eigenvectors::Real(vectors),
            })
        } else {
            // Column-major copy: the row-major path hands LAPACK the
            // transpose, which for complex input is the conjugate matrix.
            let mut f = Array2::<C64>::zeros(h.dim().f());
            f.assign(h);
            let (values, vectors) = f.eigh(UPLO::Lower)?;
            Ok(Self {
                values,
                vectors: Eigenvectors::Complex(vectors),
            })
        }
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `exp(-i t H)`.
    pub fn exp_minus_i(&self, t: f64) -> Array2<C64> {
        match &self.vectors {
            Eigenvectors::Real(v) => {
                let mut vc = v.clone();
                let mut vs = v.clone();
                for (k, &e) in self.values.iter().enumerate() {
                    let (s, c) = (t * e).sin_cos();
                    vc.column_mut(k).mapv_inplace(|x| x * c);
                    vs.column_mut(k).mapv_inplace(|x| x * s);
                }
                let re = vc.dot(&v.t());
                let im = vs.dot(&v.t());
                let mut out = Array2::<C64>::zeros(re.dim());
                Zip::from(&mut out)
                    .and(&re)
                    .and(&im)
                    .for_each(|o, &r, &i| *o = C64::new(r, -i));
                out
            }
            Eigenvectors::Complex(v) => {
                let mut scaled = v.clone();
                for (k, &e) in self.values.iter().enumerate() {
                    let phase = C64::from_polar(1.0, -t * e);
                    scaled.column_mut(k).mapv_inplace(|x| x * phase);
                }
                scaled.dot(&conj_transpose(v))
            }
        }
    }
}

/// `exp(-i t H)` for Hermitian `H`.
pub fn expm_minus_i(h: &Array2<C64>, t: f64) -> Result<Array2<C64>> {
    Ok(HermitianSpectrum::new(h)?.exp_minus_i(t))
}

pub fn conj_transpose(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Max elementwise `|A - A†|`.
pub fn hermiticity_defect(a: &Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Max elementwise `|U† U - I|`.
pub fn unitarity_defect(u: &Array2<C64>) -> f64 {
    let prod = conj_transpose(u).dot(u);
    let mut worst = 0.0f64;
    for ((i, j), z) in prod.indexed_iter() {
        let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
        worst = worst.max((z - target).norm());
    }
    worst
}

pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0f64, |m, x, y| m.max((x - y).norm()))
}

/// Largest singular value.
pub fn spectral_norm(a: &Array2<C64>) -> Result<f64> {
    init_single_threaded_blas();
    let (_, s, _) = a.svd(false, false)?;
    Ok(s.iter().copied().fold(0.0, f64::max))
}

/// Singular values of a complex matrix, in decreasing order.
pub fn singular_values(a: &Array2<C64>) -> Result<Array1<f64>> {
    init_single_threaded_blas();
    let (_, s, _) = a.svd(false, false)?;
    Ok(s)
}

pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_diag_elem(n, C64::new(1.0, 0.0))
}

/// `<a|b>` with `a` conjugated.
pub fn inner(a: &Array1<C64>, b: &Array1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &Array1<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
