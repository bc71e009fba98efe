//! Spectral analysis of the hermitian coupling operators: distinct
//! eigenvalues, eigenspace projectors, and the flattened Keldysh multi-index
//! layout shared by all influence tensors.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::{hermiticity_deviation, max_norm};

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("coupling operator {index} is not hermitian: ‖S − S†‖_max = {deviation:.3e}")]
    NotHermitian { index: usize, deviation: f64 },
    #[error("coupling operator {index} is not square or has mismatched dimension")]
    BadShape { index: usize },
    #[error("no coupling operators given")]
    Empty,
    #[error("eigendecomposition failed: {0}")]
    Eig(String),
}

pub type CouplingResult<T> = Result<T, CouplingError>;

/// Default eigenvalue clustering tolerance.
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-9;

/// Hermitian coupling operators with their distinct-eigenvalue
/// decompositions. Immutable after construction.
#[derive(Clone, Debug)]
pub struct CouplingSet {
    /// System Hilbert-space dimension.
    pub dim: usize,
    ops: Vec<Array2<C64>>,
    /// Distinct (clustered) eigenvalues per channel, descending.
    eigenvalues: Vec<Vec<f64>>,
    /// Hermitian idempotent projectors onto each eigenspace.
    projectors: Vec<Vec<Array2<C64>>>,
    pub degeneracy_tol: f64,
}

impl CouplingSet {
    pub fn num_channels(&self) -> usize {
        self.ops.len()
    }

    pub fn operator(&self, l: usize) -> &Array2<C64> {
        &self.ops[l]
    }

    /// Number of distinct eigenvalues r_l of channel l.
    pub fn rank(&self, l: usize) -> usize {
        self.eigenvalues[l].len()
    }

    pub fn eigenvalues(&self, l: usize) -> &[f64] {
        &self.eigenvalues[l]
    }

    pub fn projector(&self, l: usize, i: usize) -> &Array2<C64> {
        &self.projectors[l][i]
    }

    /// Σ_i S_i P_i, for reconstruction checks.
    pub fn reconstruct(&self, l: usize) -> Array2<C64> {
        let mut acc = Array2::zeros((self.dim, self.dim));
        for (val, p) in self.eigenvalues[l].iter().zip(&self.projectors[l]) {
            acc.zip_mut_with(p, |a, b| *a += *val * b);
        }
        acc
    }
}

/// Eigendecompose each channel and merge eigenvalues closer than
/// tol·max(1, ‖S‖_max) into one eigenspace (single linkage).
pub fn analyze_couplings(ops: &[Array2<C64>], tol: f64) -> CouplingResult<CouplingSet> {
    if ops.is_empty() {
        return Err(CouplingError::Empty);
    }
    let dim = ops[0].nrows();
    let mut eigenvalues = Vec::with_capacity(ops.len());
    let mut projectors = Vec::with_capacity(ops.len());
    for (index, s) in ops.iter().enumerate() {
        if s.nrows() != dim || s.ncols() != dim {
            return Err(CouplingError::BadShape { index });
        }
        let deviation = hermiticity_deviation(s);
        if deviation > 1e-12 {
            return Err(CouplingError::NotHermitian { index, deviation });
        }
        let (vals, vecs) = crate::hermitian_eig(s).map_err(CouplingError::Eig)?;
        let gap = tol * max_norm(s).max(1.0);
        // ascending eigenvalues from LAPACK; single-linkage clustering
        let mut clusters: Vec<Vec<usize>> = vec![vec![0]];
        for i in 1..dim {
            if vals[i] - vals[i - 1] <= gap {
                clusters.last_mut().unwrap().push(i);
            } else {
                clusters.push(vec![i]);
            }
        }
        // descending eigenvalue order for deterministic tensor layouts
        clusters.reverse();
        let mut ch_vals = Vec::with_capacity(clusters.len());
        let mut ch_projs = Vec::with_capacity(clusters.len());
        for cluster in &clusters {
            let mean = cluster.iter().map(|&i| vals[i]).sum::<f64>() / cluster.len() as f64;
            let mut p = Array2::<C64>::zeros((dim, dim));
            for &i in cluster {
                let v = vecs.column(i);
                for r in 0..dim {
                    for c in 0..dim {
                        p[(r, c)] += v[r] * v[c].conj();
                    }
                }
            }
            ch_vals.push(mean);
            ch_projs.push(p);
        }
        eigenvalues.push(ch_vals);
        projectors.push(ch_projs);
    }
    Ok(CouplingSet {
        dim,
        ops: ops.to_vec(),
        eigenvalues,
        projectors,
        degeneracy_tol: tol,
    })
}

/// Flattened Keldysh multi-index μ = (i¹..i^L; j¹..j^L) with channel 1
/// fastest on forward indices, then backward indices, plus the grouping of μ
/// into difference classes (equal eigenvalue-difference vectors).
#[derive(Clone, Debug)]
pub struct KeldyshLayout {
    /// Distinct-eigenvalue counts r_l.
    pub ranks: Vec<usize>,
    /// Eigenvalues per channel (descending), copied from the coupling set.
    pub eigenvalues: Vec<Vec<f64>>,
    /// Total multi-index dimension Π r_l².
    pub dim_mu: usize,
    /// Forward eigenvalue S^l_{i^l(μ)} per μ and channel.
    pub fwd: Vec<Vec<f64>>,
    /// Backward eigenvalue S^l_{j^l(μ)} per μ and channel.
    pub bwd: Vec<Vec<f64>>,
    /// Difference class id per μ.
    pub class_of: Vec<usize>,
    /// Number of difference classes.
    pub num_classes: usize,
    /// A representative μ per class.
    pub class_rep: Vec<usize>,
}

const DIFF_CLASS_TOL: f64 = 1e-12;

/// Build the deterministic lexicographic layout for a coupling set.
pub fn build_layout(cs: &CouplingSet) -> KeldyshLayout {
    let ranks: Vec<usize> = (0..cs.num_channels()).map(|l| cs.rank(l)).collect();
    let eigenvalues: Vec<Vec<f64>> = (0..cs.num_channels())
        .map(|l| cs.eigenvalues(l).to_vec())
        .collect();
    layout_from_spectra(ranks, eigenvalues)
}

pub(crate) fn layout_from_spectra(ranks: Vec<usize>, eigenvalues: Vec<Vec<f64>>) -> KeldyshLayout {
    let dim_mu: usize = ranks.iter().map(|r| r * r).product();
    let nch = ranks.len();
    let mut fwd = Vec::with_capacity(dim_mu);
    let mut bwd = Vec::with_capacity(dim_mu);
    for mu in 0..dim_mu {
        let (is, js) = unflatten_indices(&ranks, mu);
        fwd.push((0..nch).map(|l| eigenvalues[l][is[l]]).collect::<Vec<f64>>());
        bwd.push((0..nch).map(|l| eigenvalues[l][js[l]]).collect::<Vec<f64>>());
    }
    // group by difference vector
    let mut order: Vec<usize> = (0..dim_mu).collect();
    let diff = |mu: usize, l: usize| fwd[mu][l] - bwd[mu][l];
    order.sort_by(|&a, &b| {
        for l in 0..nch {
            match diff(a, l).total_cmp(&diff(b, l)) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        a.cmp(&b)
    });
    let mut class_of = vec![0usize; dim_mu];
    let mut class_rep = Vec::new();
    let mut current = usize::MAX;
    for (pos, &mu) in order.iter().enumerate() {
        let new_class = pos == 0
            || (0..nch).any(|l| (diff(mu, l) - diff(order[pos - 1], l)).abs() > DIFF_CLASS_TOL);
        if new_class {
            current = class_rep.len();
            class_rep.push(mu);
        }
        class_of[mu] = current;
    }
    KeldyshLayout {
        ranks,
        eigenvalues,
        dim_mu,
        fwd,
        bwd,
        class_of,
        num_classes: class_rep.len(),
        class_rep,
    }
}

/// Flatten (i¹..i^L, j¹..j^L) with channel 1 fastest on forward indices.
pub fn flatten_indices(ranks: &[usize], is: &[usize], js: &[usize]) -> usize {
    let mut idx = 0usize;
    let mut stride = 1usize;
    for (l, &r) in ranks.iter().enumerate() {
        idx += is[l] * stride;
        stride *= r;
    }
    for (l, &r) in ranks.iter().enumerate() {
        idx += js[l] * stride;
        stride *= r;
    }
    idx
}

/// Inverse of [`flatten_indices`].
pub fn unflatten_indices(ranks: &[usize], mu: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rem = mu;
    let mut is = Vec::with_capacity(ranks.len());
    for &r in ranks {
        is.push(rem % r);
        rem /= r;
    }
    let mut js = Vec::with_capacity(ranks.len());
    for &r in ranks {
        js.push(rem % r);
        rem /= r;
    }
    (is, js)
}

/// Pauli and related preset operators.
pub mod presets {
    use super::*;

    pub fn sigma_x() -> Array2<C64> {
        ndarray::array![
            [C64::from(0.0), C64::from(1.0)],
            [C64::from(1.0), C64::from(0.0)]
        ]
    }

    pub fn sigma_y() -> Array2<C64> {
        ndarray::array![
            [C64::from(0.0), C64::new(0.0, -1.0)],
            [C64::new(0.0, 1.0), C64::from(0.0)]
        ]
    }

    pub fn sigma_z() -> Array2<C64> {
        ndarray::array![
            [C64::from(1.0), C64::from(0.0)],
            [C64::from(0.0), C64::from(-1.0)]
        ]
    }

    pub fn identity(d: usize) -> Array2<C64> {
        Array2::eye(d)
    }

    /// The hermitian pair (C + C†, i(C − C†)) representing a non-hermitian
    /// coupling operator C; the accompanying factor 1/2 lives in the bath
    /// correlation matrix.
    pub fn hermitian_pair(c: &Array2<C64>) -> (Array2<C64>, Array2<C64>) {
        let cd = c.t().mapv(|z| z.conj());
        let re = c + &cd;
        let im = (c - &cd).mapv(|z| C64::new(0.0, 1.0) * z);
        (re, im)
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn random_hermitian(d: usize, rng: &mut impl Rng) -> Array2<C64> {
        let a = Array2::from_shape_fn((d, d), |_| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let ad = a.t().mapv(|z| z.conj());
        a + ad
    }

    #[test]
    fn pauli_pair_analysis() {
        let cs = analyze_couplings(&[sigma_x(), sigma_y()], DEFAULT_DEGENERACY_TOL).unwrap();
        assert_eq!(cs.rank(0), 2);
        assert_eq!(cs.rank(1), 2);
        assert_eq!(cs.eigenvalues(0), &[1.0, -1.0]);
        let layout = build_layout(&cs);
        assert_eq!(layout.dim_mu, 16);
    }

    #[test]
    fn identity_is_fully_degenerate() {
        let cs = analyze_couplings(&[identity(3)], DEFAULT_DEGENERACY_TOL).unwrap();
        assert_eq!(cs.rank(0), 1);
        assert!(max_norm(&(cs.projector(0, 0) - &identity(3))) < 1e-12);
    }

    #[test]
    fn clustered_spectrum() {
        let s = array![
            [C64::from(1.0), C64::from(0.0), C64::from(0.0)],
            [C64::from(0.0), C64::from(1.0), C64::from(0.0)],
            [C64::from(0.0), C64::from(0.0), C64::from(-1.0)]
        ];
        let cs = analyze_couplings(&[s], 1e-8).unwrap();
        assert_eq!(cs.rank(0), 2);
        // descending order: +1 eigenspace first
        let p1 = cs.projector(0, 0);
        assert!((p1[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!((p1[(1, 1)].re - 1.0).abs() < 1e-12);
        assert!(p1[(2, 2)].norm() < 1e-12);
    }

    #[test]
    fn rejects_non_hermitian() {
        let s = array![
            [C64::from(0.0), C64::from(1.0)],
            [C64::from(0.5), C64::from(0.0)]
        ];
        match analyze_couplings(&[s], 1e-9) {
            Err(CouplingError::NotHermitian { deviation, .. }) => {
                assert!((deviation - 0.5).abs() < 1e-12)
            }
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn reconstruction_random_hermitian() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for d in 2..=8usize {
            let s = random_hermitian(d, &mut rng);
            let cs = analyze_couplings(std::slice::from_ref(&s), DEFAULT_DEGENERACY_TOL).unwrap();
            // projector algebra: completeness, idempotence, orthogonality
            let mut sum_p = Array2::<C64>::zeros((d, d));
            for i in 0..cs.rank(0) {
                sum_p = sum_p + cs.projector(0, i);
                for j in 0..cs.rank(0) {
                    let prod = cs.projector(0, i).dot(cs.projector(0, j));
                    if i == j {
                        assert!(max_norm(&(&prod - cs.projector(0, i))) < 1e-12);
                    } else {
                        assert!(max_norm(&prod) < 1e-12);
                    }
                }
            }
            assert!(max_norm(&(&sum_p - &Array2::<C64>::eye(d))) < 1e-12);
            assert!(max_norm(&(cs.reconstruct(0) - &s)) < 1e-12);
        }
    }

    #[test]
    fn degeneracy_merge_preserves_operator() {
        // eigenvalues {1, 1+1e-12, -1}: merged under tol=1e-9 scaled by max
        let s = array![
            [C64::from(1.0), C64::from(0.0), C64::from(0.0)],
            [C64::from(0.0), C64::from(1.0 + 1e-12), C64::from(0.0)],
            [C64::from(0.0), C64::from(0.0), C64::from(-1.0)]
        ];
        let cs = analyze_couplings(&[s.clone()], 1e-9).unwrap();
        assert_eq!(cs.rank(0), 2);
        assert!(max_norm(&(cs.reconstruct(0) - &s)) < 1e-11);
    }

    #[test]
    fn layout_single_channel_classes() {
        // L=1, r=2 (σ_z-like): 3 classes; the zero-difference class has 2 members
        let cs = analyze_couplings(&[sigma_z()], DEFAULT_DEGENERACY_TOL).unwrap();
        let layout = build_layout(&cs);
        assert_eq!(layout.dim_mu, 4);
        assert_eq!(layout.num_classes, 3);
        let zero_class_size = (0..4)
            .filter(|&mu| layout.fwd[mu][0] == layout.bwd[mu][0])
            .count();
        assert_eq!(zero_class_size, 2);
    }

    #[test]
    fn layout_two_channel_classes() {
        // brute-force enumeration: (Δ¹, Δ²) ∈ {−2, 0, 2}² gives 9 classes
        let cs = analyze_couplings(&[sigma_x(), sigma_y()], DEFAULT_DEGENERACY_TOL).unwrap();
        let layout = build_layout(&cs);
        let mut diffs: Vec<(i64, i64)> = (0..layout.dim_mu)
            .map(|mu| {
                (
                    (layout.fwd[mu][0] - layout.bwd[mu][0]).round() as i64,
                    (layout.fwd[mu][1] - layout.bwd[mu][1]).round() as i64,
                )
            })
            .collect();
        diffs.sort_unstable();
        diffs.dedup();
        assert_eq!(diffs.len(), 9);
        assert_eq!(layout.num_classes, 9);
    }

    #[test]
    fn flatten_roundtrip_all() {
        for ranks in [vec![2], vec![3, 2], vec![2, 2, 4], vec![4, 3, 2, 2]] {
            let dim: usize = ranks.iter().map(|r| r * r).product();
            for mu in 0..dim {
                let (is, js) = unflatten_indices(&ranks, mu);
                assert_eq!(flatten_indices(&ranks, &is, &js), mu);
            }
        }
    }

    #[test]
    fn hermitian_pair_of_sigma_minus() {
        let sm = array![
            [C64::from(0.0), C64::from(0.0)],
            [C64::from(1.0), C64::from(0.0)]
        ];
        let (sx, sy) = hermitian_pair(&sm);
        assert!(max_norm(&(&sx - &sigma_x())) < 1e-15);
        assert!(max_norm(&(&sy - &sigma_y())) < 1e-15);
    }
}
