//! Quadrature primitives: adaptive Gauss–Kronrod for complex-valued
//! integrands and Gauss–Legendre nodes for fixed-order panel integration.

use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("quadrature did not converge: {0} subintervals, residual {1:.3e} > tol {2:.3e}")]
    NonConvergence(usize, f64, f64),
    #[error("invalid integration bounds [{0}, {1}]")]
    InvalidBounds(f64, f64),
}

pub type QuadResult<T> = Result<T, QuadError>;

// 15-point Kronrod nodes on [-1, 1] (positive half) and their weights,
// interleaved with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One G7/K15 evaluation over [a, b]. Returns (kronrod value, error estimate).
fn gk15<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64) -> (C64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut res_k = WGK[7] * fc;
    let mut res_g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let f1 = f(c - x);
        let f2 = f(c + x);
        res_k += WGK[i] * (f1 + f2);
        if i % 2 == 1 {
            res_g += WG[i / 2] * (f1 + f2);
        }
    }
    res_k *= h;
    res_g *= h;
    (res_k, (res_k - res_g).norm())
}

/// Adaptive Gauss–Kronrod integration of a complex integrand to absolute
/// tolerance `tol`. Bisects the worst interval until the summed error
/// estimate is below `tol` or `max_intervals` is reached.
pub fn adaptive_gk<F: Fn(f64) -> C64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_intervals: usize,
) -> QuadResult<C64> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(QuadError::InvalidBounds(a, b));
    }
    let (v0, e0) = gk15(&f, a, b);
    let mut intervals: Vec<(f64, f64, C64, f64)> = vec![(a, b, v0, e0)];
    loop {
        let err_total: f64 = intervals.iter().map(|iv| iv.3).sum();
        if err_total <= tol {
            return Ok(intervals.iter().map(|iv| iv.2).sum());
        }
        if intervals.len() >= max_intervals {
            return Err(QuadError::NonConvergence(intervals.len(), err_total, tol));
        }
        // split the interval with the largest estimated error
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (ia, ib, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (ia + ib);
        let (v1, e1) = gk15(&f, ia, mid);
        let (v2, e2) = gk15(&f, mid, ib);
        intervals.push((ia, mid, v1, e1));
        intervals.push((mid, ib, v2, e2));
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre polynomial roots.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Fixed-order Gauss–Legendre integration of a complex integrand over [a, b].
pub fn gl_panel<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64, nodes: &[f64], weights: &[f64]) -> C64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = C64::new(0.0, 0.0);
    for (x, w) in nodes.iter().zip(weights) {
        acc += *w * f(c + h * x);
    }
    acc * h
}
