//! Finite windows of the sequence space `Y_∞`, the shift operator
//! `(𝔸x)_n = A_{n-1} x_{n-1}`, its resolvent margin, and the lifted
//! nonlinear map `F` with its derivative.

mod margin;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cocycle::{LinearSystem, NonautonomousSystem};
use crate::dichotomy::{adapted_norm, AdaptedNormFamily};
use crate::error::{Error, Result};

pub use margin::{invertibility_margin, resolvent_probe, ResolventProbe, MARGIN_THRESHOLD, PLATEAU_RATIO};

/// What the missing neighbour `x_{-N-1}` of the first entry is taken to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Zero.
    Zero,
    /// `x_N` (wrap around).
    Periodic,
}

/// `(x_n)_{|n| <= N}`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowVector {
    half_width: i64,
    entries: Vec<DVector<f64>>,
}

impl WindowVector {
    pub fn new(half_width: i64, entries: Vec<DVector<f64>>) -> Result<Self> {
        if half_width < 1 || entries.len() != (2 * half_width + 1) as usize {
            return Err(Error::Parameter(format!(
                "window vector of half-width {half_width} needs {} entries, got {}",
                2 * half_width + 1,
                entries.len()
            )));
        }
        Ok(Self { half_width, entries })
    }

    pub fn zeros(half_width: i64, dim: usize) -> Self {
        Self {
            half_width,
            entries: vec![DVector::zeros(dim); (2 * half_width + 1) as usize],
        }
    }

    /// Entries uniform in `[-radius, radius]^d`.
    pub fn random(half_width: i64, dim: usize, radius: f64, rng: &mut impl Rng) -> Self {
        Self {
            half_width,
            entries: (0..2 * half_width + 1)
                .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-radius..=radius)))
                .collect(),
        }
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    pub fn dim(&self) -> usize {
        self.entries.first().map(|e| e.len()).unwrap_or(0)
    }

    pub fn get(&self, n: i64) -> &DVector<f64> {
        &self.entries[(n + self.half_width) as usize]
    }

    pub fn entries(&self) -> &[DVector<f64>] {
        &self.entries
    }

    /// `sup_n ‖x_n‖_n`, in adapted norms when a family is given.
    pub fn norm_infty(&self, norms: Option<&AdaptedNormFamily>) -> Result<f64> {
        let mut sup = 0.0_f64;
        for (i, x) in self.entries.iter().enumerate() {
            let n = i as i64 - self.half_width;
            let v = match norms {
                Some(fam) => adapted_norm(fam, n, x)?,
                None => x.norm(),
            };
            sup = sup.max(v);
        }
        Ok(sup)
    }

    pub fn axpy(&self, h: f64, other: &Self) -> Self {
        Self {
            half_width: self.half_width,
            entries: self.entries.iter().zip(&other.entries).map(|(x, y)| x + y * h).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    /// Flattened, `n`-major then coordinate.
    pub fn to_flat(&self) -> DVector<f64> {
        let d = self.dim();
        DVector::from_iterator(
            self.entries.len() * d,
            self.entries.iter().flat_map(|e| e.iter().copied()),
        )
    }
}

/// Truncation of `aI - 𝔸` to `|n| <= N`.
#[derive(Clone, Debug)]
pub struct TruncatedOperator {
    pub half_width: i64,
    pub scale: f64,
    pub boundary: Boundary,
    dim: usize,
    /// `A_n` for `-N <= n <= N`; `A_{n-1}` sits in block row `n`. With the
    /// periodic rule `A_N` also feeds block row `-N`.
    blocks: Vec<DMatrix<f64>>,
}

pub fn build_truncated(sys: &LinearSystem, half_width: i64, a: f64, boundary: Boundary) -> Result<TruncatedOperator> {
    if half_width < 1 {
        return Err(Error::Parameter("half-width must be at least 1".into()));
    }
    if !(a >= 0.0) {
        return Err(Error::Parameter(format!("scale must be nonnegative, got {a}")));
    }
    Ok(TruncatedOperator {
        half_width,
        scale: a,
        boundary,
        dim: sys.dim(),
        blocks: (-half_width..=half_width).map(|n| sys.matrix(n)).collect(),
    })
}

impl TruncatedOperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// `A_n`.
    pub fn block(&self, n: i64) -> &DMatrix<f64> {
        &self.blocks[(n + self.half_width) as usize]
    }

    /// `(block row, block column, matrix)` of the off-diagonal part of `𝔸`.
    fn shift_blocks(&self) -> Vec<(usize, usize, &DMatrix<f64>)> {
        let nb = self.blocks.len();
        let mut out: Vec<_> = (1..nb).map(|r| (r, r - 1, &self.blocks[r - 1])).collect();
        if self.boundary == Boundary::Periodic {
            out.push((0, nb - 1, &self.blocks[nb - 1]));
        }
        out
    }

    /// Dense `𝔸` on the window.
    pub fn shift_matrix(&self) -> DMatrix<f64> {
        let d = self.dim;
        let size = self.blocks.len() * d;
        let mut m = DMatrix::zeros(size, size);
        for (r, c, b) in self.shift_blocks() {
            m.view_mut((r * d, c * d), (d, d)).copy_from(b);
        }
        m
    }

    /// Dense `aI - 𝔸`, `n`-major and coordinate-minor.
    pub fn dense(&self) -> DMatrix<f64> {
        let size = self.blocks.len() * self.dim;
        DMatrix::identity(size, size) * self.scale - self.shift_matrix()
    }

    pub fn apply(&self, x: &WindowVector) -> WindowVector {
        let n0 = self.half_width;
        let entries = (-n0..=n0)
            .map(|n| {
                let mut y = x.get(n) * self.scale;
                if let Some(prev) = neighbour(n, n0, self.boundary) {
                    y -= self.block(prev) * x.get(prev);
                }
                y
            })
            .collect();
        WindowVector {
            half_width: n0,
            entries,
        }
    }

    /// Sparse export: a header `rows cols nnz`, then `row col value` lines
    /// (0-based) for every stored nonzero, rows ascending.
    pub fn triplets(&self) -> String {
        let d = self.dim;
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for b in 0..self.blocks.len() {
            for i in 0..d {
                if self.scale != 0.0 {
                    entries.push((b * d + i, b * d + i, self.scale));
                }
            }
        }
        for (r, c, blk) in self.shift_blocks() {
            for i in 0..d {
                for j in 0..d {
                    let v = blk[(i, j)];
                    if v != 0.0 {
                        entries.push((r * d + i, c * d + j, -v));
                    }
                }
            }
        }
        entries.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let size = self.blocks.len() * d;
        let mut out = String::new();
        let _ = writeln!(out, "{size} {size} {}", entries.len());
        for (r, c, v) in entries {
            let _ = writeln!(out, "{r} {c} {v:.17e}");
        }
        out
    }
}

/// Index feeding entry `n`, if any, under the boundary rule.
fn neighbour(n: i64, half_width: i64, boundary: Boundary) -> Option<i64> {
    if n > -half_width {
        Some(n - 1)
    } else {
        match boundary {
            Boundary::Zero => None,
            Boundary::Periodic => Some(half_width),
        }
    }
}

/// `(F x)_n = A_{n-1} x_{n-1} + f_{n-1}(x_{n-1})`.
#[allow(non_snake_case)]
pub fn apply_F(sys: &NonautonomousSystem, x: &WindowVector, boundary: Boundary) -> WindowVector {
    let n0 = x.half_width;
    let entries = (-n0..=n0)
        .map(|n| match neighbour(n, n0, boundary) {
            Some(p) => sys.step(n - 1, x.get(p)),
            None => DVector::zeros(x.dim()),
        })
        .collect();
    WindowVector {
        half_width: n0,
        entries,
    }
}

/// `(DF(x) ξ)_n = (A_{n-1} + Df_{n-1}(x_{n-1})) ξ_{n-1}`.
#[allow(non_snake_case)]
pub fn apply_DF(sys: &NonautonomousSystem, x: &WindowVector, xi: &WindowVector, boundary: Boundary) -> WindowVector {
    let n0 = x.half_width;
    let entries = (-n0..=n0)
        .map(|n| match neighbour(n, n0, boundary) {
            Some(p) => sys.step_jacobian(n - 1, x.get(p)) * xi.get(p),
            None => DVector::zeros(x.dim()),
        })
        .collect();
    WindowVector {
        half_width: n0,
        entries,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorGapReport {
    pub samples: usize,
    pub half_width: i64,
    /// `max ‖(DF(x) - 𝔸) ξ‖_∞ / ‖ξ‖_∞` over the samples.
    pub max_ratio: f64,
    pub c: f64,
    pub eta: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Samples `x, ξ` in the adapted-norm window and compares
/// `‖DF(x) - 𝔸‖` with `C η`.
pub fn check_operator_gap(
    sys: &NonautonomousSystem,
    norms: &AdaptedNormFamily,
    half_width: i64,
    samples: usize,
    seed: u64,
) -> Result<OperatorGapReport> {
    if half_width > norms.window() {
        return Err(Error::Range {
            index: half_width,
            window: norms.window(),
        });
    }
    let d = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for s in 0..samples {
        // The first sample sits at the origin, where the gap must vanish.
        let radius = if s == 0 { 0.0 } else { 2.0 };
        let x = WindowVector::random(half_width, d, radius, &mut rng);
        let xi = WindowVector::random(half_width, d, 1.0, &mut rng);
        let full = apply_DF(sys, &x, &xi, Boundary::Zero);
        let lin = apply_DF(&NonautonomousSystem::linear_only(sys.linear.clone()), &x, &xi, Boundary::Zero);
        let num = full.sub(&lin).norm_infty(Some(norms))?;
        let den = xi.norm_infty(Some(norms))?;
        if den > 0.0 {
            worst = worst.max(num / den);
        }
    }
    let c = norms.declared_c;
    let eta = sys.nonlinear.sup_deriv;
    let bound = c * eta;
    Ok(OperatorGapReport {
        samples,
        half_width,
        max_ratio: worst,
        c,
        eta,
        bound,
        pass: worst <= bound * 1.01,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::{make_example, ExampleKind, SaturatingParams};
    use crate::dichotomy::{test_scaled_dichotomy, DEFAULT_NORM_HORIZON, DEFAULT_TOL};
    use crate::numeric::{ls_line, spectral_norm};

    fn scalar(a: f64) -> LinearSystem {
        LinearSystem::constant(DMatrix::from_element(1, 1, a)).unwrap()
    }

    fn canonical(eta: f64) -> NonautonomousSystem {
        make_example(
            &ExampleKind::ConstantDiagonal {
                diagonal: vec![0.5, 3.0],
            },
            Some(SaturatingParams { eta, epsilon: 0.1 }),
        )
        .unwrap()
    }

    #[test]
    fn three_by_three_assembly() {
        let op = build_truncated(&scalar(0.5), 1, 1.0, Boundary::Zero).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, -0.5, 1.0, 0.0, 0.0, -0.5, 1.0]);
        assert_eq!(op.dense(), expected);
    }

    #[test]
    fn shift_alone_holds_previous_matrix() {
        let sys = LinearSystem::new(
            1,
            crate::cocycle::Generator::Periodic(vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 5.0)]),
        )
        .unwrap();
        let op = build_truncated(&sys, 2, 0.0, Boundary::Zero).unwrap();
        let s = op.shift_matrix();
        for r in 1..5 {
            let n = r as i64 - 2;
            assert_eq!(s[(r, r - 1)], sys.matrix(n - 1)[(0, 0)]);
        }
        assert_eq!(op.dense(), -s);
    }

    #[test]
    fn periodic_corner_block() {
        let op = build_truncated(&scalar(0.5), 1, 1.0, Boundary::Periodic).unwrap();
        assert_eq!(op.dense()[(0, 2)], -0.5);
        assert!(op.triplets().starts_with("3 3 6\n"));
    }

    #[test]
    fn apply_matches_dense() {
        let sys = make_example(
            &ExampleKind::RandomHyperbolic {
                seed: 1,
                diagonal: vec![0.5, 3.0],
                spread: 0.05,
            },
            None,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for boundary in [Boundary::Zero, Boundary::Periodic] {
            let op = build_truncated(&sys.linear, 4, 1.7, boundary).unwrap();
            let x = WindowVector::random(4, 2, 1.0, &mut rng);
            let got = op.apply(&x).to_flat();
            let expected = op.dense() * x.to_flat();
            assert!((got - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn f_fixes_zero_and_reduces_to_shift() {
        let sys = canonical(0.05);
        let zero = WindowVector::zeros(5, 2);
        assert_eq!(apply_F(&sys, &zero, Boundary::Zero), zero);
        let lin = NonautonomousSystem::linear_only(sys.linear.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = WindowVector::random(5, 2, 1.0, &mut rng);
        let op = build_truncated(&sys.linear, 5, 0.0, Boundary::Zero).unwrap();
        let fx = apply_F(&lin, &x, Boundary::Zero).to_flat();
        assert!((fx - op.shift_matrix() * x.to_flat()).norm() < 1e-14);
    }

    #[test]
    fn df_at_zero_is_the_shift_blockwise() {
        let sys = canonical(0.05);
        let op = build_truncated(&sys.linear, 3, 0.0, Boundary::Zero).unwrap();
        let zero = WindowVector::zeros(3, 2);
        let d = 2;
        let cols = 7 * d;
        let mut df = DMatrix::zeros(cols, cols);
        for c in 0..cols {
            let mut e = DVector::zeros(cols);
            e[c] = 1.0;
            let xi = WindowVector::new(3, (0..7).map(|b| e.rows(b * d, d).into_owned()).collect()).unwrap();
            df.set_column(c, &apply_DF(&sys, &zero, &xi, Boundary::Zero).to_flat());
        }
        assert_eq!(df, op.shift_matrix());
    }

    #[test]
    fn well_definedness_estimate() {
        let sys = canonical(0.05);
        let c = (-3..=3).map(|n| spectral_norm(&sys.linear.matrix(n))).fold(1.0, f64::max);
        let b = sys.nonlinear.lipschitz;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = WindowVector::random(3, 2, 1.5, &mut rng);
            let nx = x.norm_infty(None).unwrap();
            let nf = apply_F(&sys, &x, Boundary::Zero).norm_infty(None).unwrap();
            assert!(nf <= c * nx + b * c * nx * nx);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let sys = canonical(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = WindowVector::random(4, 2, 1.0, &mut rng);
        let xi = WindowVector::random(4, 2, 1.0, &mut rng);
        let dfx = apply_DF(&sys, &x, &xi, Boundary::Zero);
        let fx = apply_F(&sys, &x, Boundary::Zero);
        let (mut hs, mut errs) = (Vec::new(), Vec::new());
        for k in 1..=6 {
            let h = 10f64.powi(-k);
            let fh = apply_F(&sys, &x.axpy(h, &xi), Boundary::Zero);
            let fd = fh.sub(&fx).axpy(0.0, &fx);
            let quotient = WindowVector::new(4, fd.entries().iter().map(|e| e / h).collect()).unwrap();
            hs.push(h.ln());
            errs.push(quotient.sub(&dfx).norm_infty(None).unwrap().ln());
        }
        let (slope, _) = ls_line(&hs, &errs).unwrap();
        assert!(slope >= 0.9, "{slope}");
    }

    #[test]
    fn derivative_is_lipschitz() {
        let sys = canonical(0.3);
        let c = 3.0;
        let b = sys.nonlinear.lipschitz;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x = WindowVector::random(3, 2, 1.0, &mut rng);
            let y = WindowVector::random(3, 2, 1.0, &mut rng);
            let xi = WindowVector::random(3, 2, 1.0, &mut rng);
            let diff = apply_DF(&sys, &x, &xi, Boundary::Zero).sub(&apply_DF(&sys, &y, &xi, Boundary::Zero));
            let lhs = diff.norm_infty(None).unwrap();
            let rhs = b * c * x.sub(&y).norm_infty(None).unwrap() * xi.norm_infty(None).unwrap();
            assert!(lhs <= rhs * 1.0001);
        }
    }

    #[test]
    fn operator_gap_within_c_eta() {
        let sys = canonical(0.05);
        let cert = test_scaled_dichotomy(&sys.linear, 1.0, 30, DEFAULT_TOL)
            .unwrap()
            .into_certificate()
            .unwrap();
        let fam = AdaptedNormFamily::new(&sys.linear, cert, DEFAULT_NORM_HORIZON).unwrap();
        let report = check_operator_gap(&sys, &fam, 10, 20, 5).unwrap();
        assert!(report.pass, "{report:?}");
        let linear = NonautonomousSystem::linear_only(sys.linear.clone());
        assert_eq!(check_operator_gap(&linear, &fam, 10, 5, 5).unwrap().max_ratio, 0.0);
    }
}
