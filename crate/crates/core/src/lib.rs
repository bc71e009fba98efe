//! Numerically exact simulation of open quantum systems linearly coupled to
//! general Gaussian bosonic baths through multiple, possibly non-commuting,
//! hermitian coupling operators.
//!
//! The pipeline runs bath model → discretized memory kernels → influence
//! gates → uniform influence MPO (iTEBD contraction) → effective propagator →
//! dynamics, steady states, correlators, and response spectra. Independent
//! reference solvers (full Lindblad evolution, a single-excitation Volterra
//! solver, and a displacement-operator brute force) certify the pipeline.

pub mod bathkernel;
pub mod bessel;
pub mod couplings;
pub mod evolve;
pub mod ifcore;
pub mod oracle;
pub mod quad;
pub mod tempo;

// Force linkage of the BLAS backend used by `ndarray`'s gemm.
extern crate blas_src;
extern crate openblas_src;

pub use num_complex::Complex64 as C64;

/// Eigendecomposition of a hermitian matrix with properly oriented
/// eigenvectors (ascending eigenvalues, eigenvector k in column k satisfying
/// M v = λ v; the raw LAPACK result arrives conjugated for row-major data).
pub fn hermitian_eig(
    m: &ndarray::Array2<C64>,
) -> Result<(ndarray::Array1<f64>, ndarray::Array2<C64>), String> {
    use ndarray_linalg::{Eigh, UPLO};
    let (vals, vecs) = m.eigh(UPLO::Lower).map_err(|e| e.to_string())?;
    Ok((vals, vecs.mapv(|z| z.conj())))
}

/// Max-norm distance from hermiticity, `max |M - M†|`.
pub fn hermiticity_deviation(m: &ndarray::Array2<C64>) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Max-norm of a complex matrix.
pub fn max_norm(m: &ndarray::Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
