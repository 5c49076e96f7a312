//! Smallest singular value of `aI - 𝔸` on a window, by Sturm counting on
//! the block-tridiagonal Gram matrix `H = MᵀM`.
//!
//! With the zero rule `M` is the tall compression: the column of `x_N`
//! keeps its outflow row `A_N x_N`, so `σ_min(M)` bounds `‖(aI - 𝔸)x‖`
//! from below for every finitely supported `x`. The square Dirichlet
//! truncation drops that row and its `σ_min` collapses geometrically even
//! off the spectrum, which makes it useless as a probe.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::{build_truncated, Boundary, TruncatedOperator};
use crate::cocycle::LinearSystem;
use crate::error::Result;

/// `σ_min` below this at the larger window means "not invertible".
pub const MARGIN_THRESHOLD: f64 = 1e-4;
/// `σ_min(2N) / σ_min(N)` must stay above this for a plateau.
pub const PLATEAU_RATIO: f64 = 0.8;

const BISECTION_STEPS: usize = 200;

struct Gram {
    diag: Vec<DMatrix<f64>>,
    /// `H_{c, c+1}`.
    upper: Vec<DMatrix<f64>>,
    /// `H_{0, last}` for the periodic rule.
    corner: Option<DMatrix<f64>>,
}

fn gram(op: &TruncatedOperator) -> Gram {
    let d = op.dim();
    let a = op.scale;
    let nb = op.block_count();
    let n0 = op.half_width;
    let blk = |c: usize| op.block(c as i64 - n0);
    let diag = (0..nb)
        .map(|c| DMatrix::identity(d, d) * (a * a) + blk(c).transpose() * blk(c))
        .collect();
    let upper = (0..nb - 1).map(|c| blk(c).transpose() * (-a)).collect();
    let corner = match op.boundary {
        Boundary::Zero => None,
        Boundary::Periodic => Some(blk(nb - 1) * (-a)),
    };
    Gram { diag, upper, corner }
}

/// Inverse of a symmetric block and its number of negative eigenvalues.
fn sym_inverse(m: DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(m);
    let mut neg = 0;
    let inv_vals = eig.eigenvalues.map(|v| {
        if v < 0.0 {
            neg += 1;
        }
        let v = if v.abs() < 1e-300 { 1e-300_f64.copysign(v) } else { v };
        1.0 / v
    });
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    (inv, neg)
}

fn negatives(m: DMatrix<f64>) -> usize {
    SymmetricEigen::new(m).eigenvalues.iter().filter(|&&v| v < 0.0).count()
}

/// Number of eigenvalues of `H` below `s` (Sylvester inertia of `H - s`).
fn count_below(g: &Gram, s: f64) -> usize {
    let nb = g.diag.len();
    let d = g.diag[0].nrows();
    let shift = DMatrix::<f64>::identity(d, d) * s;
    if nb == 1 {
        return negatives(&g.diag[0] - &shift);
    }
    let last = nb - 1;
    let mut count = 0;
    let mut dlast = &g.diag[last] - &shift;
    let mut dcur = &g.diag[0] - &shift;
    // Fill column: block (i, last) of the partially eliminated matrix.
    let mut fill = match (&g.corner, last == 1) {
        (_, true) => g.upper[0].clone() + g.corner.clone().unwrap_or_else(|| DMatrix::zeros(d, d)),
        (Some(c), false) => c.clone(),
        (None, false) => DMatrix::zeros(d, d),
    };
    for i in 0..last {
        let (inv, neg) = sym_inverse(dcur.clone());
        count += neg;
        let inv_fill = &inv * &fill;
        if i + 1 < last {
            let e = &g.upper[i];
            let et = e.transpose();
            let next_d = &g.diag[i + 1] - &shift - &et * &inv * e;
            let mut next_fill = -(&et * &inv_fill);
            if i + 1 == last - 1 {
                next_fill += &g.upper[last - 1];
            }
            dlast -= fill.transpose() * &inv_fill;
            dcur = next_d;
            fill = next_fill;
        } else {
            dlast -= fill.transpose() * &inv_fill;
        }
    }
    count + negatives(dlast)
}

/// `σ_min` of the window compression of `aI - 𝔸` (tall for the zero rule,
/// circulant for the periodic rule).
pub fn invertibility_margin(op: &TruncatedOperator) -> f64 {
    let g = gram(op);
    // Rayleigh: λ_min(H) <= every diagonal entry.
    let mut hi = g
        .diag
        .iter()
        .flat_map(|b| (0..b.nrows()).map(move |i| b[(i, i)]))
        .fold(f64::INFINITY, f64::min);
    hi = hi * (1.0 + 1e-12) + 1e-300;
    let mut lo = 0.0_f64;
    if count_below(&g, 0.0) > 0 {
        return 0.0;
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(&g, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    (0.5 * (lo + hi)).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolventProbe {
    pub scale: f64,
    /// `(N, σ_min)` at `N` and `2N`.
    pub margins: Vec<(i64, f64)>,
    pub invertible: bool,
}

/// Invertible iff the margin at `2N` is above [`MARGIN_THRESHOLD`] and has
/// plateaued relative to `N`.
pub fn resolvent_probe(sys: &LinearSystem, a: f64, half_width: i64) -> Result<ResolventProbe> {
    let s1 = invertibility_margin(&build_truncated(sys, half_width, a, Boundary::Zero)?);
    let s2 = invertibility_margin(&build_truncated(sys, 2 * half_width, a, Boundary::Zero)?);
    Ok(ResolventProbe {
        scale: a,
        margins: vec![(half_width, s1), (2 * half_width, s2)],
        invertible: s2 >= MARGIN_THRESHOLD && s2 >= PLATEAU_RATIO * s1,
    })
}
