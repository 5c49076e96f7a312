use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::green::GreenKernel;
use crate::cocycle::{nonlinear_orbit, NonautonomousSystem};
use crate::dichotomy::{test_scaled_dichotomy, DichotomyCertificate, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::numeric::is_finite_vec;

/// Consecutive non-decreasing Picard updates tolerated before giving up.
const STALL_SWEEPS: usize = 5;

#[derive(Clone, Debug, Serialize)]
pub struct ConjugacyOptions {
    /// Series truncation `T`: terms with `|n - m| <= T`.
    pub horizon: usize,
    pub picard_tol: f64,
    pub max_iters: usize,
    /// Refuse nonlinearities without a finite `sup ‖f_m‖ e^{ε|m+1|}`.
    pub require_bounded: bool,
}

impl Default for ConjugacyOptions {
    fn default() -> Self {
        Self {
            horizon: 60,
            picard_tol: 1e-13,
            max_iters: 200,
            require_bounded: true,
        }
    }
}

/// Pointwise `h_m`, `Dh_m` and `h_m^{-1}` from the bounded solution of
/// `u_{n+1} = A_n u_n - f_n(ξ_n)` along nonlinear orbits.
#[derive(Clone, Debug)]
pub struct ConjugacyEvaluator {
    sys: NonautonomousSystem,
    cert: DichotomyCertificate,
    opts: ConjugacyOptions,
    kernel: GreenKernel,
    tail_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PicardStats {
    pub iterations: usize,
    pub updates: Vec<f64>,
    /// Largest ratio of consecutive updates after the first sweep.
    pub max_ratio: f64,
}

impl ConjugacyEvaluator {
    pub fn new(sys: &NonautonomousSystem, cert: DichotomyCertificate, opts: ConjugacyOptions) -> Result<Self> {
        if opts.horizon < 1 || !(opts.picard_tol > 0.0) || opts.max_iters < 1 {
            return Err(Error::Parameter("conjugacy needs horizon >= 1, picard_tol > 0, max_iters >= 1".into()));
        }
        if cert.scale != 1.0 {
            return Err(Error::Parameter(format!(
                "conjugacy needs the dichotomy at scale 1, got {}",
                cert.scale
            )));
        }
        if cert.dim() != sys.dim() {
            return Err(Error::Parameter("certificate dimension mismatch".into()));
        }
        let m_sup = match sys.nonlinear.bounded_sup {
            Some(m) => m,
            None if opts.require_bounded => {
                return Err(Error::Assumption(
                    "the Green-series conjugacy needs a bounded nonlinearity (finite M)".into(),
                ))
            }
            None => f64::INFINITY,
        };
        let lambda = cert.lambda;
        let tail_bound = if m_sup == 0.0 {
            0.0
        } else {
            cert.big_d * (-lambda * (opts.horizon as f64 + 1.0)).exp() * m_sup / (1.0 - (-lambda).exp())
        };
        if !(lambda > 0.0) || tail_bound.is_nan() {
            return Err(Error::Assumption(format!(
                "Green series does not converge: fitted lambda = {lambda}"
            )));
        }
        let kernel = GreenKernel::new(&sys.linear, &cert)?;
        Ok(Self {
            sys: sys.clone(),
            cert,
            opts,
            kernel,
            tail_bound,
        })
    }

    /// Certifies scale 1 on a window wide enough for `|m| <= radius`.
    pub fn for_indices(sys: &NonautonomousSystem, radius: i64, opts: ConjugacyOptions) -> Result<Self> {
        let window = radius.max(0) + opts.horizon as i64 + 2;
        let cert = test_scaled_dichotomy(&sys.linear, 1.0, window, DEFAULT_TOL)?
            .into_certificate()
            .map_err(|r| {
                Error::Assumption(format!(
                    "no dichotomy at scale 1 ({:?}: {}); the linear part is not hyperbolic",
                    r.reason, r.detail
                ))
            })?;
        Self::new(sys, cert, opts)
    }

    pub fn system(&self) -> &NonautonomousSystem {
        &self.sys
    }

    pub fn certificate(&self) -> &DichotomyCertificate {
        &self.cert
    }

    pub fn options(&self) -> &ConjugacyOptions {
        &self.opts
    }

    /// `D e^{-λ(T+1)} M / (1 - e^{-λ})`.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    fn span(&self, m: i64) -> (i64, i64) {
        let t = self.opts.horizon as i64;
        (m - t, m + t)
    }

    /// `h_m(v) = v + u_m(v)`.
    pub fn forward(&self, m: i64, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (first, last) = self.span(m);
        self.kernel.check(first, last)?;
        let orbit = nonlinear_orbit(&self.sys, m, v, first, last)?;
        let forcing: Vec<DMatrix<f64>> = (first..=last)
            .map(|j| to_col(self.sys.nonlinear.eval(j, orbit.at(j))))
            .collect();
        let u = self.kernel.solve_at(first, m, &forcing)?;
        let out = v + u.column(0);
        finite(out)
    }

    /// `Dh_m(v) = Id + Σ G(m, n+1) Df_n(ξ_n) Ξ_n`, with `Ξ` the tangent
    /// propagator along the orbit.
    pub fn derivative(&self, m: i64, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (first, last) = self.span(m);
        self.kernel.check(first, last)?;
        let d = v.len();
        let orbit = nonlinear_orbit(&self.sys, m, v, first, last)?;
        let len = (last - first + 1) as usize;
        let mut tangent = vec![DMatrix::zeros(d, d); len];
        let at = |n: i64| (n - first) as usize;
        tangent[at(m)] = DMatrix::identity(d, d);
        for n in m..last {
            tangent[at(n + 1)] = self.sys.step_jacobian(n, orbit.at(n)) * &tangent[at(n)];
        }
        for n in (first..m).rev() {
            let jac = self.sys.step_jacobian(n, orbit.at(n));
            let lu = jac.lu();
            tangent[at(n)] = lu.solve(&tangent[at(n + 1)]).ok_or(Error::Singular {
                index: n,
                det: lu.determinant(),
            })?;
        }
        let forcing: Vec<DMatrix<f64>> = (first..=last)
            .map(|j| self.sys.nonlinear.jacobian(j, orbit.at(j)) * &tangent[at(j)])
            .collect();
        let u = self.kernel.solve_at(first, m, &forcing)?;
        let out = DMatrix::identity(d, d) + u;
        if out.iter().all(|x| x.is_finite()) {
            Ok(out)
        } else {
            Err(Error::Assumption("derivative series diverged".into()))
        }
    }

    /// `h_m^{-1}(w)`.
    pub fn inverse(&self, m: i64, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.inverse_with_stats(m, w).map(|(x, _)| x)
    }

    /// Picard iteration `K = w - U(f(K))` on the linear orbit of `w`; the
    /// value at `m` is `h_m^{-1}(w)`.
    pub fn inverse_with_stats(&self, m: i64, w: &DVector<f64>) -> Result<(DVector<f64>, PicardStats)> {
        let (first, last) = self.span(m);
        self.kernel.check(first, last)?;
        let len = (last - first + 1) as usize;
        let at = |n: i64| (n - first) as usize;
        let mut lin = vec![DVector::zeros(w.len()); len];
        lin[at(m)] = w.clone();
        for n in m..last {
            lin[at(n + 1)] = self.kernel.matrix(n) * &lin[at(n)];
        }
        for n in (first..m).rev() {
            lin[at(n)] = self.kernel.inverse(n) * &lin[at(n + 1)];
        }
        let mut stats = PicardStats {
            iterations: 0,
            updates: Vec::new(),
            max_ratio: 0.0,
        };
        if self.sys.nonlinear.is_zero() {
            return Ok((w.clone(), stats));
        }
        let mut k = lin.clone();
        let mut stalled = 0;
        for it in 1..=self.opts.max_iters {
            let forcing: Vec<DMatrix<f64>> = (first..=last)
                .map(|j| to_col(self.sys.nonlinear.eval(j, &k[at(j)])))
                .collect();
            let u = self.kernel.solve(first, &forcing)?;
            let mut update = 0.0_f64;
            for i in 0..len {
                let next = &lin[i] - u[i].column(0);
                update = update.max((&next - &k[i]).norm() / (1.0 + lin[i].norm()));
                k[i] = next;
            }
            if !update.is_finite() {
                return Err(Error::NonContraction {
                    context: format!("inverse conjugacy at m = {m}"),
                    ratio: f64::INFINITY,
                });
            }
            if let Some(&prev) = stats.updates.last() {
                let ratio = if prev > 0.0 { update / prev } else { 0.0 };
                stats.max_ratio = stats.max_ratio.max(ratio);
                if ratio >= 1.0 && update > self.opts.picard_tol {
                    stalled += 1;
                    if stalled >= STALL_SWEEPS {
                        return Err(Error::NonContraction {
                            context: format!("inverse conjugacy at m = {m}"),
                            ratio,
                        });
                    }
                } else {
                    stalled = 0;
                }
            }
            stats.updates.push(update);
            stats.iterations = it;
            if update <= self.opts.picard_tol {
                return Ok((finite(k[at(m)].clone())?, stats));
            }
        }
        Err(Error::NonContraction {
            context: format!("inverse conjugacy at m = {m}: no convergence in {} sweeps", self.opts.max_iters),
            ratio: stats.max_ratio,
        })
    }

    /// `‖h_{m+1}(F_m(x)) - A_m h_m(x)‖`.
    pub fn residual(&self, m: i64, x: &DVector<f64>) -> Result<f64> {
        let lhs = self.forward(m + 1, &self.sys.step(m, x))?;
        let rhs = self.kernel.matrix(m) * self.forward(m, x)?;
        Ok((lhs - rhs).norm())
    }
}

fn to_col(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

fn finite(v: DVector<f64>) -> Result<DVector<f64>> {
    if is_finite_vec(&v) {
        Ok(v)
    } else {
        Err(Error::Assumption("conjugacy series diverged".into()))
    }
}

/// `per_axis^d` points of the cube `[lo, hi]^d`, first coordinate slowest.
pub fn square_grid(dim: usize, lo: f64, hi: f64, per_axis: usize) -> Vec<DVector<f64>> {
    let coord = |i: usize| {
        if per_axis == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (per_axis - 1) as f64
        }
    };
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut v = DVector::zeros(dim);
            for c in (0..dim).rev() {
                v[c] = coord(idx % per_axis);
                idx /= per_axis;
            }
            v
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualRow {
    pub m: i64,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IndexResidual {
    pub m: i64,
    pub max_residual: f64,
    pub at: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub construction: String,
    pub assumption: String,
    pub tolerance: f64,
    pub horizon: usize,
    pub tail_bound: f64,
    pub per_index: Vec<IndexResidual>,
    pub max_residual: f64,
    pub max_location: (i64, Vec<f64>),
    pub pass: bool,
    #[serde(skip)]
    pub rows: Vec<ResidualRow>,
}

impl ResidualReport {
    /// `m, x_0.., h_0.., residual`.
    pub fn conjugacy_csv(&self) -> String {
        let d = self.rows.first().map(|r| r.x.len()).unwrap_or(0);
        let mut out = String::from("m");
        for i in 0..d {
            let _ = write!(out, ",x{i}");
        }
        for i in 0..d {
            let _ = write!(out, ",h{i}");
        }
        out.push_str(",residual\n");
        for r in &self.rows {
            let _ = write!(out, "{}", r.m);
            for v in r.x.iter().chain(&r.h) {
                let _ = write!(out, ",{v:.17e}");
            }
            let _ = writeln!(out, ",{:.17e}", r.residual);
        }
        out
    }

    /// `m, max_residual, at_0..`.
    pub fn residuals_csv(&self) -> String {
        let d = self.per_index.first().map(|r| r.at.len()).unwrap_or(0);
        let mut out = String::from("m,max_residual");
        for i in 0..d {
            let _ = write!(out, ",at{i}");
        }
        out.push('\n');
        for r in &self.per_index {
            let _ = write!(out, "{},{:.17e}", r.m, r.max_residual);
            for v in &r.at {
                let _ = write!(out, ",{v:.17e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Tabulates `‖h_{m+1}(F_m(x)) - A_m h_m(x)‖` over `m_range × grid`.
pub fn verify_conjugacy(
    ev: &ConjugacyEvaluator,
    m_range: std::ops::RangeInclusive<i64>,
    grid: &[DVector<f64>],
    tol: f64,
) -> Result<ResidualReport> {
    let jobs: Vec<(i64, &DVector<f64>)> = m_range.clone().flat_map(|m| grid.iter().map(move |x| (m, x))).collect();
    let rows: Vec<ResidualRow> = jobs
        .par_iter()
        .map(|&(m, x)| {
            let h = ev.forward(m, x)?;
            let residual = ev.residual(m, x)?;
            Ok(ResidualRow {
                m,
                x: x.iter().copied().collect(),
                h: h.iter().copied().collect(),
                residual,
            })
        })
        .collect::<Result<_>>()?;
    let mut per_index: Vec<IndexResidual> = Vec::new();
    for m in m_range {
        let mut best = IndexResidual {
            m,
            max_residual: 0.0,
            at: grid.first().map(|x| x.iter().copied().collect()).unwrap_or_default(),
        };
        for r in rows.iter().filter(|r| r.m == m) {
            if r.residual > best.max_residual {
                best.max_residual = r.residual;
                best.at = r.x.clone();
            }
        }
        per_index.push(best);
    }
    let worst = per_index
        .iter()
        .fold(None::<&IndexResidual>, |acc, r| match acc {
            Some(a) if a.max_residual >= r.max_residual => Some(a),
            _ => Some(r),
        });
    let (max_residual, max_location) = worst
        .map(|r| (r.max_residual, (r.m, r.at.clone())))
        .unwrap_or((0.0, (0, Vec::new())));
    Ok(ResidualReport {
        construction: "green-series: h_m = id + bounded solution of u_{n+1} = A_n u_n - f_n along the orbit".into(),
        assumption: format!(
            "bounded nonlinearity: sup_x |f_m(x)| e^(eps|m+1|) <= M = {}",
            ev.sys.nonlinear.bounded_sup.map(|m| m.to_string()).unwrap_or_else(|| "inf".into())
        ),
        tolerance: tol,
        horizon: ev.opts.horizon,
        tail_bound: ev.tail_bound,
        per_index,
        max_residual,
        max_location,
        pass: max_residual <= tol,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::{make_example, ExampleKind, LinearSystem, SaturatingParams};

    fn canonical(eta: f64, epsilon: f64) -> NonautonomousSystem {
        make_example(
            &ExampleKind::ConstantDiagonal {
                diagonal: vec![0.5, 3.0],
            },
            Some(SaturatingParams { eta, epsilon }),
        )
        .unwrap()
    }

    fn evaluator(eta: f64) -> ConjugacyEvaluator {
        ConjugacyEvaluator::for_indices(&canonical(eta, 0.1), 8, ConjugacyOptions::default()).unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn identity_without_nonlinearity() {
        let sys = NonautonomousSystem::linear_only(canonical(0.0, 0.0).linear);
        let ev = ConjugacyEvaluator::for_indices(&sys, 3, ConjugacyOptions::default()).unwrap();
        let x = v(&[0.3, -0.7]);
        assert_eq!(ev.forward(2, &x).unwrap(), x);
        assert_eq!(ev.derivative(2, &x).unwrap(), DMatrix::identity(2, 2));
        assert_eq!(ev.inverse(2, &x).unwrap(), x);
        assert_eq!(ev.tail_bound(), 0.0);
    }

    #[test]
    fn origin_is_fixed_exactly() {
        let ev = evaluator(0.05);
        for m in -3..=3 {
            assert_eq!(ev.forward(m, &v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
            assert_eq!(ev.derivative(m, &v(&[0.0, 0.0])).unwrap(), DMatrix::identity(2, 2));
            assert_eq!(ev.inverse(m, &v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
            assert_eq!(ev.residual(m, &v(&[0.0, 0.0])).unwrap(), 0.0);
        }
    }

    #[test]
    fn conjugacy_equation_holds() {
        let ev = evaluator(0.05);
        let r = ev.residual(0, &v(&[0.4, -0.2])).unwrap();
        assert!(r <= 1e-8, "{r}");
        assert!(ev.tail_bound() < 1e-15);
    }

    #[test]
    fn derivative_matches_central_differences() {
        let ev = evaluator(0.05);
        let x = v(&[0.4, -0.2]);
        let dh = ev.derivative(0, &x).unwrap();
        let h = 1e-5;
        let mut fd = DMatrix::zeros(2, 2);
        for j in 0..2 {
            let mut e = DVector::zeros(2);
            e[j] = h;
            let col = (ev.forward(0, &(&x + &e)).unwrap() - ev.forward(0, &(&x - &e)).unwrap()) / (2.0 * h);
            fd.set_column(j, &col);
        }
        assert!((&dh - &fd).norm() / dh.norm() <= 1e-4);
    }

    #[test]
    fn inverse_roundtrip() {
        let ev = evaluator(0.05);
        for x in square_grid(2, -1.0, 1.0, 5) {
            for m in [-4, 0, 5] {
                let back = ev.inverse(m, &ev.forward(m, &x).unwrap()).unwrap();
                assert!((back - &x).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn autonomous_input_gives_index_free_conjugacy() {
        let ev = ConjugacyEvaluator::for_indices(&canonical(0.05, 0.0), 8, ConjugacyOptions::default()).unwrap();
        for x in square_grid(2, -1.0, 1.0, 5) {
            let d = (ev.forward(0, &x).unwrap() - ev.forward(7, &x).unwrap()).norm();
            assert!(d <= 1e-12, "{d}");
        }
    }

    #[test]
    fn large_eta_fails_to_contract() {
        let sys = canonical(0.9, 0.1);
        let ev = ConjugacyEvaluator::for_indices(&sys, 6, ConjugacyOptions::default()).unwrap();
        let grid = square_grid(2, -1.0, 1.0, 11);
        let err = (-5..=5)
            .flat_map(|m| grid.iter().map(move |x| (m, x)))
            .find_map(|(m, x)| ev.forward(m, x).and_then(|y| ev.inverse(m, &y)).err())
            .expect("some grid point must fail");
        assert!(
            matches!(err, Error::NonContraction { .. } | Error::BackwardSolve { .. }),
            "{err}"
        );
    }

    #[test]
    fn unbounded_requirement_enforced() {
        let mut sys = canonical(0.05, 0.1);
        sys.nonlinear.bounded_sup = None;
        let err = ConjugacyEvaluator::for_indices(&sys, 2, ConjugacyOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Assumption(_)));
    }

    #[test]
    fn non_hyperbolic_linear_part_rejected() {
        let sys = NonautonomousSystem::linear_only(LinearSystem::constant(DMatrix::identity(1, 1)).unwrap());
        assert!(ConjugacyEvaluator::for_indices(&sys, 2, ConjugacyOptions::default()).is_err());
    }

    #[test]
    fn grid_layout() {
        let g = square_grid(2, -1.0, 1.0, 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[1], v(&[-1.0, 0.0]));
        assert_eq!(g[8], v(&[1.0, 1.0]));
    }

    #[test]
    fn report_locates_maximum() {
        let ev = evaluator(0.05);
        let grid = square_grid(2, -1.0, 1.0, 3);
        let rep = verify_conjugacy(&ev, -1..=1, &grid, 1e-6).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.rows.len(), 27);
        assert_eq!(rep.per_index.len(), 3);
        assert!(rep.conjugacy_csv().starts_with("m,x0,x1,h0,h1,residual\n"));
        let zero_row = rep.rows.iter().find(|r| r.x == vec![0.0, 0.0]).unwrap();
        assert_eq!(zero_row.residual, 0.0);
    }
}
