//! Bath correlation function models and their conversion to the discretized
//! memory kernels that parametrize the influence functional.
//!
//! A model evaluates the L×L matrix α^{lm}(t). Negative times are always
//! routed through the hermitian symmetry α(−t) = conj(α(t)ᵀ); models only
//! implement t ≥ 0.
//!
//! Kernel conventions: for step separation k ≥ 1 the memory kernel is the
//! two-cell integral
//!   η_k^{lo} = ∫_{kδt}^{(k+1)δt} dt ∫_0^{δt} ds α^{lo}(t−s),
//! the time-local square cell is η₀ = ∫_0^{δt}dt∫_0^{δt}ds α(t−s), and the
//! causal triangle is η̃₀ = ∫_0^{δt}dt∫_0^t ds α(t−s). These satisfy
//! η̃₀^{lo} + conj(η̃₀^{ol}) = η₀^{lo}, which is asserted in tests.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bessel::bessel_j;
use crate::quad::{adaptive_gk, gauss_legendre, QuadError};

#[derive(Debug, Error)]
pub enum BathError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-integrable spectral density: {0}")]
    NonIntegrable(String),
    #[error("kernel quadrature failed at cell k={cell}: {source}")]
    Quadrature {
        cell: usize,
        #[source]
        source: QuadError,
    },
    #[error("bcf evaluation quadrature failed: {0}")]
    Evaluation(#[from] QuadError),
    #[error("format error: {0}")]
    Format(String),
}

pub type BathResult<T> = Result<T, BathError>;

/// Inverse temperature; `Infinite` tags zero temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Beta {
    Finite(f64),
    Infinite,
}

/// Bath spectral density J(ω) on ω ≥ 0 support.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SpectralDensity {
    /// J(ω) = α ω e^{−ω/ω_c}
    OhmicExpCutoff { alpha: f64, omega_c: f64 },
    /// Piecewise-linear samples on a sorted grid; zero outside.
    Tabulated { omega: Vec<f64>, j: Vec<f64> },
    /// Sampled local density of states of a d-dimensional hopping lattice,
    /// kept with its defining parameters for provenance.
    LatticeDos {
        dim: usize,
        j_hop: f64,
        g: f64,
        omega: Vec<f64>,
        j: Vec<f64>,
    },
}

impl SpectralDensity {
    pub fn value(&self, w: f64) -> f64 {
        match self {
            Self::OhmicExpCutoff { alpha, omega_c } => {
                if w <= 0.0 {
                    0.0
                } else {
                    alpha * w * (-w / omega_c).exp()
                }
            }
            Self::Tabulated { omega, j } | Self::LatticeDos { omega, j, .. } => {
                interp_linear(omega, j, w)
            }
        }
    }

    pub fn omega_max(&self) -> f64 {
        match self {
            // tail below machine precision relative to the peak
            Self::OhmicExpCutoff { omega_c, .. } => omega_c * (1.0 / f64::EPSILON).ln(),
            Self::Tabulated { omega, .. } | Self::LatticeDos { omega, .. } => {
                omega.last().copied().unwrap_or(0.0)
            }
        }
    }

    fn validate(&self) -> BathResult<()> {
        match self {
            Self::OhmicExpCutoff { alpha, omega_c } => {
                if *alpha < 0.0 || *omega_c <= 0.0 {
                    return Err(BathError::InvalidParameter(format!(
                        "ohmic density needs alpha >= 0, omega_c > 0 (got {alpha}, {omega_c})"
                    )));
                }
            }
            Self::Tabulated { omega, j } | Self::LatticeDos { omega, j, .. } => {
                if omega.len() != j.len() || omega.len() < 2 {
                    return Err(BathError::InvalidParameter(
                        "tabulated density needs matching grids of length >= 2".into(),
                    ));
                }
                if omega.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(BathError::InvalidParameter(
                        "tabulated density grid must be strictly increasing".into(),
                    ));
                }
                if j.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(BathError::NonIntegrable(
                        "tabulated density must be finite and non-negative".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.is_empty() || x < xs[0] || x > *xs.last().unwrap() {
        return 0.0;
    }
    let i = match xs.binary_search_by(|v| v.total_cmp(&x)) {
        Ok(i) => return ys[i],
        Err(i) => i,
    };
    let (x0, x1) = (xs[i - 1], xs[i]);
    let t = (x - x0) / (x1 - x0);
    ys[i - 1] * (1.0 - t) + ys[i] * t
}

/// One exponential term C e^{−iΩt − γt} of a matrix-valued correlation
/// function, valid for t ≥ 0.
#[derive(Clone, Debug)]
pub struct ExpTerm {
    pub coeff: Array2<C64>,
    pub freq: f64,
    pub decay: f64,
}

impl ExpTerm {
    /// Complex rate λ = γ + iΩ so that the term reads C e^{−λt}.
    fn lambda(&self) -> C64 {
        C64::new(self.decay, self.freq)
    }
}

/// Exact exponential-sum correlation function.
#[derive(Clone, Debug)]
pub struct ExponentialSumBcf {
    pub terms: Vec<ExpTerm>,
    channels: usize,
}

impl ExponentialSumBcf {
    pub fn new(terms: Vec<ExpTerm>) -> BathResult<Self> {
        let channels = terms
            .first()
            .map(|t| t.coeff.nrows())
            .ok_or_else(|| BathError::InvalidParameter("empty exponential sum".into()))?;
        for t in &terms {
            if t.coeff.nrows() != channels || t.coeff.ncols() != channels {
                return Err(BathError::InvalidParameter(
                    "exponential-sum coefficient matrices must share one square shape".into(),
                ));
            }
            if t.decay < 0.0 {
                return Err(BathError::InvalidParameter(format!(
                    "negative decay rate {}",
                    t.decay
                )));
            }
        }
        Ok(Self { terms, channels })
    }

    fn eval_pos(&self, t: f64) -> Array2<C64> {
        let mut out = Array2::zeros((self.channels, self.channels));
        for term in &self.terms {
            let phase = (-term.lambda() * t).exp();
            out = out + term.coeff.mapv(|c| c * phase);
        }
        out
    }
}

/// Quadrature-backed two-channel model for Jaynes–Cummings-type coupling to a
/// thermal reservoir: α_±(t) = ∫ J(ω)[(1+n_B)e^{−iωt} ± n_B e^{+iωt}] dω,
/// assembled as α = (1/4)[[α₊, −iα₋],[iα₋, α₊]].
#[derive(Clone, Debug)]
pub struct ThermalJcBcf {
    pub density: SpectralDensity,
    pub beta: Beta,
    /// Absolute evaluator tolerance; defaults to 1e-10 α₊(0).
    pub abs_tol: f64,
    alpha0_plus: f64,
    omega_upper: f64,
}

impl ThermalJcBcf {
    fn alpha_pm(&self, t: f64) -> BathResult<(C64, C64)> {
        let beta = self.beta;
        let dens = &self.density;
        let up = |w: f64| -> C64 {
            // (1 + n_B) e^{-iωt}
            let occ = 1.0 + bose_occupation(beta, w);
            C64::from(dens.value(w) * occ) * C64::new(0.0, -w * t).exp()
        };
        let dn = |w: f64| -> C64 {
            let occ = bose_occupation(beta, w);
            C64::from(dens.value(w) * occ) * C64::new(0.0, w * t).exp()
        };
        let i_up = adaptive_gk(up, 0.0, self.omega_upper, self.abs_tol, 20_000)?;
        let i_dn = match self.beta {
            Beta::Infinite => C64::new(0.0, 0.0),
            Beta::Finite(_) => adaptive_gk(dn, 0.0, self.omega_upper, self.abs_tol, 20_000)?,
        };
        Ok((i_up + i_dn, i_up - i_dn))
    }

    fn eval_pos(&self, t: f64) -> Array2<C64> {
        let (ap, am) = self
            .alpha_pm(t)
            .expect("thermal bcf evaluator quadrature failure");
        jc_matrix(ap, am)
    }
}

/// n_B(ω) = 1/(e^{βω} − 1), via expm1 to avoid cancellation at small βω.
pub fn bose_occupation(beta: Beta, omega: f64) -> f64 {
    match beta {
        Beta::Infinite => 0.0,
        Beta::Finite(b) => 1.0 / (b * omega).exp_m1(),
    }
}

fn jc_matrix(ap: C64, am: C64) -> Array2<C64> {
    let i = C64::new(0.0, 1.0);
    ndarray::array![[0.25 * ap, -0.25 * i * am], [0.25 * i * am, 0.25 * ap]]
}

/// Emitters on a d-dimensional cubic bosonic lattice at zero temperature.
/// Channels are ordered (σx, σy) per emitter.
#[derive(Clone, Debug)]
pub struct LatticeBcf {
    pub dim: usize,
    pub j_hop: f64,
    pub g: f64,
    pub emitters: Vec<Vec<i64>>,
}

impl LatticeBcf {
    /// Single-particle lattice propagator G(t, Δx) = Π_i i^{Δx_i} J_{Δx_i}(2Jt).
    pub fn propagator(&self, t: f64, dx: &[i64]) -> C64 {
        let x = 2.0 * self.j_hop * t;
        let mut out = C64::new(1.0, 0.0);
        for &d in dx {
            let i_pow = match d.rem_euclid(4) {
                0 => C64::new(1.0, 0.0),
                1 => C64::new(0.0, 1.0),
                2 => C64::new(-1.0, 0.0),
                _ => C64::new(0.0, -1.0),
            };
            out *= i_pow * bessel_j(d, x);
        }
        out
    }

    fn eval_pos(&self, t: f64) -> Array2<C64> {
        let ne = self.emitters.len();
        let mut out = Array2::zeros((2 * ne, 2 * ne));
        let g2 = self.g * self.g;
        for (a, xa) in self.emitters.iter().enumerate() {
            for (b, xb) in self.emitters.iter().enumerate() {
                let dx: Vec<i64> = xa.iter().zip(xb).map(|(p, q)| p - q).collect();
                let gab = g2 * self.propagator(t, &dx);
                // zero-temperature limit: α₊ = α₋ = g² G
                let block = jc_matrix(gab, gab);
                for r in 0..2 {
                    for c in 0..2 {
                        out[(2 * a + r, 2 * b + c)] = block[(r, c)];
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub enum BcfRepr {
    ExponentialSum(ExponentialSumBcf),
    Quadrature(ThermalJcBcf),
    LatticeBessel(LatticeBcf),
}

/// A matrix-valued bath correlation function α^{lm}(t).
#[derive(Clone, Debug)]
pub struct BcfModel {
    channels: usize,
    pub repr: BcfRepr,
}

impl BcfModel {
    pub fn from_exponential_sum(sum: ExponentialSumBcf) -> Self {
        Self {
            channels: sum.channels,
            repr: BcfRepr::ExponentialSum(sum),
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn representation_tag(&self) -> &'static str {
        match self.repr {
            BcfRepr::ExponentialSum(_) => "exponential_sum",
            BcfRepr::Quadrature(_) => "quadrature",
            BcfRepr::LatticeBessel(_) => "lattice_bessel",
        }
    }

    /// α(t) for any real t; t < 0 goes through α(−t) = conj(α(t)ᵀ).
    pub fn eval(&self, t: f64) -> Array2<C64> {
        if t < 0.0 {
            let m = self.eval_pos(-t);
            m.t().mapv(|z| z.conj())
        } else {
            self.eval_pos(t)
        }
    }

    fn eval_pos(&self, t: f64) -> Array2<C64> {
        match &self.repr {
            BcfRepr::ExponentialSum(m) => m.eval_pos(t),
            BcfRepr::Quadrature(m) => m.eval_pos(t),
            BcfRepr::LatticeBessel(m) => m.eval_pos(t),
        }
    }
}

/// Damped-mode bath for Jaynes–Cummings coupling (S¹ ↔ σ_x row, S² ↔ σ_y row):
/// α_±(t) = g²(1+n̄)e^{−iωt−γ|t|} ± g²n̄ e^{+iωt−γ|t|}, as a two-term
/// exponential sum.
pub fn make_damped_mode_bcf(g: f64, omega: f64, gamma: f64, nbar: f64) -> BathResult<BcfModel> {
    if nbar < 0.0 {
        return Err(BathError::InvalidParameter(format!("nbar = {nbar} < 0")));
    }
    if gamma < 0.0 {
        return Err(BathError::InvalidParameter(format!("gamma = {gamma} < 0")));
    }
    let i = C64::new(0.0, 1.0);
    let g2 = g * g;
    // rank-1 coefficient matrices v v† with v = (1, ±i)
    let c_down = ndarray::array![[C64::from(1.0), -i], [i, C64::from(1.0)]]
        .mapv(|z| z * 0.25 * g2 * (1.0 + nbar));
    let c_up = ndarray::array![[C64::from(1.0), i], [-i, C64::from(1.0)]]
        .mapv(|z| z * 0.25 * g2 * nbar);
    let mut terms = vec![ExpTerm {
        coeff: c_down,
        freq: omega,
        decay: gamma,
    }];
    if nbar > 0.0 {
        terms.push(ExpTerm {
            coeff: c_up,
            freq: -omega,
            decay: gamma,
        });
    }
    let sum = ExponentialSumBcf::new(terms)?;
    Ok(BcfModel {
        channels: 2,
        repr: BcfRepr::ExponentialSum(sum),
    })
}

/// Thermal Jaynes–Cummings bath backed by frequency quadrature.
pub fn make_thermal_jc_bcf(density: SpectralDensity, beta: Beta) -> BathResult<BcfModel> {
    density.validate()?;
    if let Beta::Finite(b) = beta {
        if b <= 0.0 {
            return Err(BathError::InvalidParameter(format!("beta = {b} <= 0")));
        }
        // J n_B ~ J(ω)/(βω) near zero must stay integrable
        let probe = 1e-9 * density.omega_max().max(1.0);
        if density.value(probe) / probe > 1e12 {
            return Err(BathError::NonIntegrable(
                "J(ω)/ω diverges at ω → 0 at finite temperature".into(),
            ));
        }
    }
    let omega_upper = density.omega_max();
    if !(omega_upper > 0.0) {
        return Err(BathError::NonIntegrable("empty spectral support".into()));
    }
    // α₊(0) = ∫ J (1 + 2 n_B) sets the evaluator tolerance scale
    let rough = adaptive_gk(
        |w| C64::from(density.value(w) * (1.0 + 2.0 * bose_occupation(beta, w))),
        0.0,
        omega_upper,
        1e-8,
        20_000,
    )?
    .re;
    let model = ThermalJcBcf {
        density,
        beta,
        abs_tol: 1e-10 * rough.abs().max(1e-300),
        alpha0_plus: rough,
        omega_upper,
    };
    if !model.alpha0_plus.is_finite() {
        return Err(BathError::NonIntegrable("∫J(1+2n_B) diverges".into()));
    }
    Ok(BcfModel {
        channels: 2,
        repr: BcfRepr::Quadrature(model),
    })
}

/// Bath of emitters coupled to sites of a d-dimensional bosonic lattice
/// (zero temperature); 2 channels (σx, σy) per emitter.
pub fn make_lattice_bcf(
    dim: usize,
    j_hop: f64,
    g: f64,
    emitters: &[Vec<i64>],
) -> BathResult<BcfModel> {
    if !(1..=3).contains(&dim) {
        return Err(BathError::InvalidParameter(format!(
            "lattice dimension {dim} not in 1..=3"
        )));
    }
    if emitters.is_empty() {
        return Err(BathError::InvalidParameter("no emitter sites given".into()));
    }
    for x in emitters {
        if x.len() != dim {
            return Err(BathError::InvalidParameter(format!(
                "offset {x:?} does not have {dim} components"
            )));
        }
    }
    let lat = LatticeBcf {
        dim,
        j_hop,
        g,
        emitters: emitters.to_vec(),
    };
    Ok(BcfModel {
        channels: 2 * lat.emitters.len(),
        repr: BcfRepr::LatticeBessel(lat),
    })
}

/// Histogram estimate of the local lattice spectral density
/// J(ω) = g² (2π)^{−d} ∫_BZ δ(ω − ω(k)) d^dk on the given ω grid.
pub fn local_spectral_density(
    dim: usize,
    j_hop: f64,
    g: f64,
    omega_grid: &[f64],
) -> BathResult<Vec<f64>> {
    if !(1..=3).contains(&dim) {
        return Err(BathError::InvalidParameter(format!(
            "lattice dimension {dim} not in 1..=3"
        )));
    }
    let band = 2.0 * dim as f64 * j_hop.abs();
    if omega_grid.len() < 2 || omega_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BathError::InvalidParameter(
            "omega grid must be sorted with at least two points".into(),
        ));
    }
    if omega_grid[0] < -band - 1e-12 || *omega_grid.last().unwrap() > band + 1e-12 {
        return Err(BathError::InvalidParameter(format!(
            "omega grid must lie inside the band [-{band}, {band}]"
        )));
    }
    // bin edges at midpoints, half-spacing extensions at the ends
    let n = omega_grid.len();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(omega_grid[0] - 0.5 * (omega_grid[1] - omega_grid[0]));
    for w in omega_grid.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(omega_grid[n - 1] + 0.5 * (omega_grid[n - 1] - omega_grid[n - 2]));

    let nk = match dim {
        1 => 65536usize,
        2 => 1024,
        _ => 160,
    };
    let mut counts = vec![0u64; n];
    let mut total = 0u64;
    let mut idx = vec![0usize; dim];
    loop {
        // midpoint grid over [-π, π)^d
        let omega: f64 = idx
            .iter()
            .map(|&i| {
                let k = -std::f64::consts::PI
                    + (i as f64 + 0.5) * (2.0 * std::f64::consts::PI / nk as f64);
                -2.0 * j_hop * k.cos()
            })
            .sum();
        total += 1;
        if omega >= edges[0] && omega < edges[n] {
            let bin = edges.partition_point(|&e| e <= omega) - 1;
            if bin < n {
                counts[bin] += 1;
            }
        }
        // odometer increment
        let mut carry = true;
        for d in 0..dim {
            if carry {
                idx[d] += 1;
                if idx[d] == nk {
                    idx[d] = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }
    Ok((0..n)
        .map(|i| g * g * (counts[i] as f64 / total as f64) / (edges[i + 1] - edges[i]))
        .collect())
}

/// Memory-cutoff selection for `discretize_kernel`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CutoffPolicy {
    /// Use exactly this many memory steps.
    Fixed(usize),
    /// Smallest k beyond which the kernel tail stays below tol × max ‖η‖,
    /// rounded up to the next power of two.
    Tolerance(f64),
}

/// Discretized memory kernels η_k (k = 0..N_c) and the Trotter-correction
/// triangle kernel η̃₀ at fixed step δt.
#[derive(Clone, Debug)]
pub struct KernelTable {
    pub dt: f64,
    pub n_c: usize,
    pub channels: usize,
    /// eta[k] for k = 0..=n_c; eta[0] is the square-cell η₀.
    eta: Vec<Array2<C64>>,
    pub eta0_tilde: Array2<C64>,
}

impl KernelTable {
    pub fn eta(&self, k: usize) -> &Array2<C64> {
        &self.eta[k]
    }

    pub fn eta0(&self) -> &Array2<C64> {
        &self.eta[0]
    }

    pub fn max_eta_norm(&self) -> f64 {
        self.eta
            .iter()
            .skip(1)
            .map(crate::max_norm)
            .fold(0.0, f64::max)
    }

    pub fn from_parts(
        dt: f64,
        channels: usize,
        eta: Vec<Array2<C64>>,
        eta0_tilde: Array2<C64>,
    ) -> Self {
        Self {
            dt,
            n_c: eta.len() - 1,
            channels,
            eta,
            eta0_tilde,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RawKernelTable::from(self)).expect("kernel table serialization")
    }

    pub fn from_json(s: &str) -> BathResult<Self> {
        let raw: RawKernelTable =
            serde_json::from_str(s).map_err(|e| BathError::Format(e.to_string()))?;
        raw.try_into()
    }

    /// Versioned little-endian binary blob.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"UTKT");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&self.dt.to_le_bytes());
        out.extend_from_slice(&(self.n_c as u64).to_le_bytes());
        out.extend_from_slice(&(self.channels as u64).to_le_bytes());
        for m in self.eta.iter().chain(std::iter::once(&self.eta0_tilde)) {
            for z in m.iter() {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> BathResult<Self> {
        let fail = |m: &str| BathError::Format(m.to_string());
        if data.len() < 32 || &data[0..4] != b"UTKT" {
            return Err(fail("missing kernel-table magic"));
        }
        let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
        if version != 1 {
            return Err(fail(&format!("unsupported kernel-table version {version}")));
        }
        let dt = f64::from_le_bytes(data[8..16].try_into().unwrap());
        let n_c = u64::from_le_bytes(data[16..24].try_into().unwrap()) as usize;
        let channels = u64::from_le_bytes(data[24..32].try_into().unwrap()) as usize;
        let per_mat = channels * channels * 16;
        let expect = 32 + (n_c + 2) * per_mat;
        if data.len() != expect {
            return Err(fail(&format!(
                "kernel-table payload length {} != expected {expect}",
                data.len()
            )));
        }
        let read_mat = |off: usize| -> Array2<C64> {
            Array2::from_shape_fn((channels, channels), |(r, c)| {
                let base = off + (r * channels + c) * 16;
                C64::new(
                    f64::from_le_bytes(data[base..base + 8].try_into().unwrap()),
                    f64::from_le_bytes(data[base + 8..base + 16].try_into().unwrap()),
                )
            })
        };
        let eta: Vec<Array2<C64>> = (0..=n_c).map(|k| read_mat(32 + k * per_mat)).collect();
        let eta0_tilde = read_mat(32 + (n_c + 1) * per_mat);
        Ok(Self {
            dt,
            n_c,
            channels,
            eta,
            eta0_tilde,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RawKernelTable {
    format: String,
    version: u32,
    dt: f64,
    n_c: usize,
    channels: usize,
    /// row-major [re, im] pairs per k = 0..=n_c
    eta: Vec<Vec<f64>>,
    eta0_tilde: Vec<f64>,
}

fn flatten_mat(m: &Array2<C64>) -> Vec<f64> {
    m.iter().flat_map(|z| [z.re, z.im]).collect()
}

fn unflatten_mat(v: &[f64], n: usize) -> BathResult<Array2<C64>> {
    if v.len() != 2 * n * n {
        return Err(BathError::Format(format!(
            "matrix payload length {} != {}",
            v.len(),
            2 * n * n
        )));
    }
    Ok(Array2::from_shape_fn((n, n), |(r, c)| {
        C64::new(v[2 * (r * n + c)], v[2 * (r * n + c) + 1])
    }))
}

impl From<&KernelTable> for RawKernelTable {
    fn from(t: &KernelTable) -> Self {
        Self {
            format: "kernel-table".into(),
            version: 1,
            dt: t.dt,
            n_c: t.n_c,
            channels: t.channels,
            eta: t.eta.iter().map(flatten_mat).collect(),
            eta0_tilde: flatten_mat(&t.eta0_tilde),
        }
    }
}

impl TryFrom<RawKernelTable> for KernelTable {
    type Error = BathError;

    fn try_from(raw: RawKernelTable) -> BathResult<Self> {
        if raw.eta.len() != raw.n_c + 1 {
            return Err(BathError::Format("eta list length != n_c + 1".into()));
        }
        let eta = raw
            .eta
            .iter()
            .map(|v| unflatten_mat(v, raw.channels))
            .collect::<BathResult<Vec<_>>>()?;
        Ok(Self {
            dt: raw.dt,
            n_c: raw.n_c,
            channels: raw.channels,
            eta,
            eta0_tilde: unflatten_mat(&raw.eta0_tilde, raw.channels)?,
        })
    }
}

/// e^x − 1 for complex x, series-backed at small |x|.
fn cexpm1(x: C64) -> C64 {
    if x.norm() < 1e-4 {
        x * (C64::from(1.0) + x * 0.5 + x * x / 6.0 + x * x * x / 24.0)
    } else {
        x.exp() - 1.0
    }
}

/// (1 − e^{−λδt})(e^{λδt} − 1)/λ², the separation-cell weight so that
/// η_k = Σ_j C_j e^{−λ_j k δt} pair_weight(λ_j).
fn pair_weight(lambda: C64, dt: f64) -> C64 {
    let x = lambda * dt;
    if x.norm() == 0.0 {
        return C64::from(dt * dt);
    }
    let u = cexpm1(x);
    let v = -cexpm1(-x);
    u * v / (lambda * lambda)
}

/// (λδt − 1 + e^{−λδt})/λ², the causal-triangle weight for η̃₀.
fn triangle_weight(lambda: C64, dt: f64) -> C64 {
    let x = lambda * dt;
    if x.norm() < 0.1 {
        // Σ_{k>=2} (−x)^k / k!, rescaled by δt²/x²
        let mut term = C64::from(0.5);
        let mut acc = term;
        let mut kfac = 2.0;
        let mut pow = C64::from(1.0);
        for k in 3..=14 {
            kfac *= k as f64;
            pow *= -x;
            term = pow / kfac;
            acc += term;
        }
        acc * dt * dt
    } else {
        (x - 1.0 + (-x).exp()) / (lambda * lambda)
    }
}

fn conj_channel_transpose(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

// Numerical-path state for the tent-weighted cell quadrature.
struct TentQuad {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    order: usize,
}

impl TentQuad {
    /// Integrate α(τ)·w(τ) over the two half-cells of the tent centered at
    /// k δt (for k ≥ 1) at the stored Gauss–Legendre order.
    fn eta_k(&self, bcf: &BcfModel, dt: f64, k: usize) -> Array2<C64> {
        let center = k as f64 * dt;
        let l = bcf.num_channels();
        let mut acc = Array2::<C64>::zeros((l, l));
        for (a, b) in [(center - dt, center), (center, center + dt)] {
            let c = 0.5 * (a + b);
            let h = 0.5 * (b - a);
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                let tau = c + h * x;
                let tent = dt - (tau - center).abs();
                let alpha = bcf.eval(tau);
                acc.zip_mut_with(&alpha, |acc_e, al| *acc_e += *w * h * tent * al);
            }
        }
        acc
    }

    fn eta0_tilde(&self, bcf: &BcfModel, dt: f64) -> Array2<C64> {
        let l = bcf.num_channels();
        let mut acc = Array2::<C64>::zeros((l, l));
        let c = 0.5 * dt;
        let h = 0.5 * dt;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let tau = c + h * x;
            let alpha = bcf.eval(tau);
            acc.zip_mut_with(&alpha, |acc_e, al| *acc_e += *w * h * (dt - tau) * al);
        }
        acc
    }
}

/// Choose a Gauss–Legendre order that resolves the k = 1 cell to
/// `target_rel`·‖η₁‖ by escalation, erroring out if even the largest fails.
fn calibrate_tent_order(bcf: &BcfModel, dt: f64, target_rel: f64) -> BathResult<TentQuad> {
    let orders = [16usize, 24, 32, 48, 64];
    let mut prev: Option<(Array2<C64>, TentQuad)> = None;
    for &order in &orders {
        let (nodes, weights) = gauss_legendre(order);
        let tq = TentQuad {
            nodes,
            weights,
            order,
        };
        let eta1 = tq.eta_k(bcf, dt, 1);
        if let Some((prev_eta, _)) = &prev {
            let diff = crate::max_norm(&(&eta1 - prev_eta));
            let scale = crate::max_norm(&eta1).max(1e-300);
            if diff <= target_rel * scale {
                return Ok(tq);
            }
        }
        prev = Some((eta1, tq));
    }
    Err(BathError::Quadrature {
        cell: 1,
        source: QuadError::NonConvergence(orders[orders.len() - 1], f64::NAN, target_rel),
    })
}

/// Discretize a correlation function into the memory-kernel table.
///
/// Exponential-sum models use closed forms; quadrature and lattice models use
/// the exact reduction of each 2-D cell integral to a 1-D tent-weighted
/// integral of α, evaluated by Gauss–Legendre panels with calibrated order.
pub fn discretize_kernel(
    bcf: &BcfModel,
    dt: f64,
    policy: CutoffPolicy,
) -> BathResult<KernelTable> {
    if !(dt > 0.0) {
        return Err(BathError::InvalidParameter(format!("dt = {dt} must be > 0")));
    }
    let l = bcf.num_channels();
    const MAX_NC: usize = 1 << 21;
    // window of consecutive sub-threshold cells required before the tail is
    // declared dead; covers oscillatory kernels passing through zero
    const TAIL_WINDOW: usize = 64;

    enum Engine<'a> {
        Closed(&'a ExponentialSumBcf),
        Tent(TentQuad),
    }
    let engine = match &bcf.repr {
        BcfRepr::ExponentialSum(m) => Engine::Closed(m),
        _ => Engine::Tent(calibrate_tent_order(bcf, dt, 1e-10)?),
    };

    let eta_at = |k: usize| -> Array2<C64> {
        match &engine {
            Engine::Closed(m) => {
                let mut acc = Array2::<C64>::zeros((l, l));
                for term in &m.terms {
                    let w = (-term.lambda() * (k as f64 * dt)).exp() * pair_weight(term.lambda(), dt);
                    acc.zip_mut_with(&term.coeff, |a, c| *a += w * c);
                }
                acc
            }
            Engine::Tent(tq) => tq.eta_k(bcf, dt, k),
        }
    };

    let eta0_tilde = match &engine {
        Engine::Closed(m) => {
            let mut acc = Array2::<C64>::zeros((l, l));
            for term in &m.terms {
                let w = triangle_weight(term.lambda(), dt);
                acc.zip_mut_with(&term.coeff, |a, c| *a += w * c);
            }
            acc
        }
        Engine::Tent(tq) => tq.eta0_tilde(bcf, dt),
    };
    let eta0 = &eta0_tilde + conj_channel_transpose(&eta0_tilde);

    let mut eta = vec![eta0];
    match policy {
        CutoffPolicy::Fixed(n_c) => {
            if n_c == 0 {
                return Err(BathError::InvalidParameter("N_c must be >= 1".into()));
            }
            // once the tail is numerically dead the remaining gates are exact
            // swaps; fill with zeros instead of integrating noise
            let mut g_max = 0.0_f64;
            let mut dead_run = 0usize;
            for k in 1..=n_c {
                if dead_run >= TAIL_WINDOW {
                    eta.push(Array2::zeros((l, l)));
                    continue;
                }
                let m = eta_at(k);
                let norm = crate::max_norm(&m);
                g_max = g_max.max(norm);
                if norm < 1e-15 * g_max {
                    dead_run += 1;
                } else {
                    dead_run = 0;
                }
                eta.push(m);
            }
        }
        CutoffPolicy::Tolerance(tol) => {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(BathError::InvalidParameter(format!(
                    "tolerance {tol} must be in (0, 1)"
                )));
            }
            let mut norms = vec![0.0_f64];
            let mut g_max = 0.0_f64;
            let mut k = 1usize;
            let n_raw: usize;
            loop {
                let m = eta_at(k);
                let norm = crate::max_norm(&m);
                g_max = g_max.max(norm);
                norms.push(norm);
                eta.push(m);
                if k >= TAIL_WINDOW {
                    let win = &norms[k + 1 - TAIL_WINDOW..=k];
                    let win_max = win.iter().cloned().fold(0.0, f64::max);
                    if win_max < tol * g_max || g_max == 0.0 {
                        n_raw = (k + 1 - TAIL_WINDOW).max(1);
                        break;
                    }
                }
                k += 1;
                if k > MAX_NC {
                    return Err(BathError::Quadrature {
                        cell: k,
                        source: QuadError::NonConvergence(k, g_max, tol),
                    });
                }
            }
            // round up to the next power of two for clean layer pairing
            let n_c = n_raw.next_power_of_two();
            match eta.len().cmp(&(n_c + 1)) {
                std::cmp::Ordering::Less => {
                    while eta.len() < n_c + 1 {
                        eta.push(Array2::zeros((l, l)));
                    }
                }
                std::cmp::Ordering::Greater => eta.truncate(n_c + 1),
                std::cmp::Ordering::Equal => {}
            }
        }
    }

    Ok(KernelTable {
        dt,
        n_c: eta.len() - 1,
        channels: l,
        eta,
        eta0_tilde,
    })
}
