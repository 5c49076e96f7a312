use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::green::GreenKernel;
use crate::cocycle::{nonlinear_orbit, NonautonomousSystem};
use crate::dichotomy::DichotomyCertificate;
use crate::error::{Error, Result};
use crate::numeric::ls_line;
use crate::spectrum::SpectrumResult;

const STALL_SWEEPS: usize = 5;

/// Weights of the two sequence spaces: `b_k < γ₁ < 1 < γ₂ < a_{k+1}`
/// and `γ₁ b_r < γ₂`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FoliationRates {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl FoliationRates {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(gamma1 > 0.0 && gamma1 < 1.0 && gamma2 > 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < gamma1 < 1 < gamma2, got ({gamma1}, {gamma2})"
            )));
        }
        Ok(Self { gamma1, gamma2 })
    }

    /// `γ₁ = min(√b_k, √(b_k a_{k+1} / b_r))`, `γ₂ = √(max(1, γ₁ b_r) a_{k+1})`.
    pub fn from_spectrum(spec: &SpectrumResult) -> Result<Self> {
        let k = spec.k;
        let r = spec.intervals.len();
        if !spec.hyperbolic || k == 0 || k == r {
            return Err(Error::Assumption(format!(
                "the foliation needs a hyperbolic spectrum on both sides of 1 (k = {k}, r = {r})"
            )));
        }
        let bk = spec.intervals[k - 1].b;
        let ak1 = spec.intervals[k].a;
        let br = spec.intervals[r - 1].b;
        if !(bk * br < ak1) {
            return Err(Error::Assumption(format!(
                "b_k b_r < a_(k+1) violated: {bk} * {br} >= {ak1}"
            )));
        }
        let gamma1 = bk.sqrt().min((bk * ak1 / br).sqrt());
        let gamma2 = ((gamma1 * br).max(1.0) * ak1).sqrt();
        let ok = bk < gamma1 && gamma1 < 1.0 && 1.0 < gamma2 && gamma2 < ak1 && gamma1 * br < gamma2;
        if !ok {
            return Err(Error::Assumption(format!(
                "no admissible (gamma1, gamma2) for b_k = {bk}, a_(k+1) = {ak1}, b_r = {br}"
            )));
        }
        Ok(Self { gamma1, gamma2 })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FoliationOptions {
    /// `q_n` is reported for `0 <= n <= horizon`.
    pub horizon: usize,
    /// Extra indices carried past the horizon by the sums.
    pub tail: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    pub rates: FoliationRates,
}

impl FoliationOptions {
    pub fn new(rates: FoliationRates) -> Self {
        Self {
            horizon: 60,
            tail: 20,
            tol: 1e-12,
            max_sweeps: 100,
            rates,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FoliationSolveResult {
    pub x: Vec<f64>,
    pub y_minus: Vec<f64>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub iterations: usize,
    pub updates: Vec<f64>,
    /// `sup_n γ₁^{-n} ‖q_n - (T q)_n‖` over `n <= horizon`.
    pub residual: f64,
    /// `sup_n γ₁^{-n} ‖q_n‖`.
    pub weighted_norm: f64,
    /// Least-squares slope of `ln(γ₁^{-n} ‖q_n‖)` in `n`.
    pub weighted_trend: f64,
    #[serde(skip)]
    pub q: Vec<DVector<f64>>,
    /// `w_n = [∂q_n/∂x | ∂q_n/∂y₋]`, `d × 2d`.
    #[serde(skip)]
    pub w: Vec<DMatrix<f64>>,
}

impl FoliationSolveResult {
    /// `n, norm_q, weighted`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("n,norm_q,weighted\n");
        for (n, q) in self.q.iter().enumerate() {
            let norm = q.norm();
            let _ = writeln!(
                out,
                "{n},{norm:.17e},{:.17e}",
                norm * self.gamma1.powi(-(n as i32))
            );
        }
        out
    }
}

struct Iterate {
    v: Vec<DVector<f64>>,
    w: Vec<DMatrix<f64>>,
}

/// Fiber-contraction iteration `(v, w) ↦ (T v, S(v, w))` for the stable
/// foliation through `x` with leaf parameter `y₋ ∈ Range P_0`.
pub fn solve_foliation_point(
    sys: &NonautonomousSystem,
    cert: &DichotomyCertificate,
    x: &DVector<f64>,
    y_minus: &DVector<f64>,
    opts: &FoliationOptions,
) -> Result<FoliationSolveResult> {
    let d = sys.dim();
    if x.len() != d || y_minus.len() != d {
        return Err(Error::Parameter("state dimension mismatch".into()));
    }
    if cert.scale != 1.0 {
        return Err(Error::Parameter("the foliation needs the dichotomy at scale 1".into()));
    }
    let kernel = GreenKernel::new(&sys.linear, cert)?;
    let q0 = cert.complement(0)?;
    if (&q0 * y_minus).norm() > 1e-12 * (1.0 + y_minus.norm()) {
        return Err(Error::Parameter("y_minus must lie in the stable subspace Range P_0".into()));
    }
    let last = (opts.horizon + opts.tail) as i64;
    kernel.check(0, last)?;
    let len = last as usize + 1;
    let g1 = opts.rates.gamma1;
    let g2 = opts.rates.gamma2;

    let orbit = nonlinear_orbit(sys, 0, x, 0, last)?;
    let mut jac = vec![DMatrix::identity(d, d); len];
    for n in 0..last {
        jac[n as usize + 1] = sys.step_jacobian(n, orbit.at(n)) * &jac[n as usize];
    }
    // 𝒜(n,0) P_0 by re-projected steps.
    let mut stable_prop = vec![kernel.projection(0).clone(); len];
    for n in 0..last {
        stable_prop[n as usize + 1] = kernel.projection(n + 1) * kernel.matrix(n) * &stable_prop[n as usize];
    }
    let init_v: Vec<DVector<f64>> = stable_prop.iter().map(|p| p * (y_minus - x)).collect();
    let init_w: Vec<DMatrix<f64>> = stable_prop
        .iter()
        .map(|p| {
            let mut m = DMatrix::zeros(d, 2 * d);
            m.view_mut((0, 0), (d, d)).copy_from(&(-p));
            m.view_mut((0, d), (d, d)).copy_from(p);
            m
        })
        .collect();

    let apply = |it: &Iterate| -> Result<Iterate> {
        let mut fv = Vec::with_capacity(len);
        let mut fw = Vec::with_capacity(len);
        for k in 0..len {
            let n = k as i64;
            let base = orbit.at(n);
            let moved = &it.v[k] + base;
            let delta = sys.nonlinear.eval(n, &moved) - sys.nonlinear.eval(n, base);
            fv.push(DMatrix::from_column_slice(d, 1, delta.as_slice()));
            let df_moved = sys.nonlinear.jacobian(n, &moved);
            let df_base = sys.nonlinear.jacobian(n, base);
            let mut dw = &df_moved * &it.w[k];
            let shift = (&df_moved - &df_base) * &jac[k];
            let mut xs = dw.view_mut((0, 0), (d, d));
            xs += shift;
            fw.push(dw);
        }
        let uv = kernel.solve(0, &fv)?;
        let uw = kernel.solve(0, &fw)?;
        Ok(Iterate {
            v: (0..len).map(|k| &init_v[k] - uv[k].column(0)).collect(),
            w: (0..len).map(|k| &init_w[k] - &uw[k]).collect(),
        })
    };
    let weighted = |a: &[DVector<f64>], b: &[DVector<f64>], upto: usize| {
        (0..=upto).fold(0.0_f64, |acc, n| acc.max((&a[n] - &b[n]).norm() * g1.powi(-(n as i32))))
    };
    let weighted_w = |a: &[DMatrix<f64>], b: &[DMatrix<f64>]| {
        (0..len).fold(0.0_f64, |acc, n| acc.max((&a[n] - &b[n]).norm() * g2.powi(-(n as i32))))
    };

    let mut cur = Iterate {
        v: vec![DVector::zeros(d); len],
        w: vec![DMatrix::zeros(d, 2 * d); len],
    };
    let mut updates: Vec<f64> = Vec::new();
    let mut stalled = 0;
    let mut converged = false;
    for sweep in 1..=opts.max_sweeps {
        let next = apply(&cur)?;
        let update = weighted(&next.v, &cur.v, len - 1) + weighted_w(&next.w, &cur.w);
        cur = next;
        if !update.is_finite() {
            return Err(Error::NonContraction {
                context: "foliation fiber contraction".into(),
                ratio: f64::INFINITY,
            });
        }
        if let Some(&prev) = updates.last() {
            if prev > 0.0 && update / prev >= 1.0 && update > opts.tol {
                stalled += 1;
                if stalled >= STALL_SWEEPS {
                    return Err(Error::NonContraction {
                        context: "foliation fiber contraction".into(),
                        ratio: update / prev,
                    });
                }
            } else {
                stalled = 0;
            }
        }
        updates.push(update);
        if update <= opts.tol {
            converged = true;
            let _ = sweep;
            break;
        }
    }
    if !converged {
        return Err(Error::NonContraction {
            context: format!("foliation: no convergence in {} sweeps", opts.max_sweeps),
            ratio: updates
                .windows(2)
                .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
                .fold(0.0, f64::max),
        });
    }
    let check = apply(&cur)?;
    let h = opts.horizon;
    let residual = weighted(&check.v, &cur.v, h);
    let weights: Vec<f64> = (0..=h).map(|n| cur.v[n].norm() * g1.powi(-(n as i32))).collect();
    let weighted_norm = weights.iter().copied().fold(0.0, f64::max);
    let (ns, logs): (Vec<f64>, Vec<f64>) = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(n, w)| (n as f64, w.ln()))
        .unzip();
    let weighted_trend = ls_line(&ns, &logs).map(|(s, _)| s).unwrap_or(0.0);
    Ok(FoliationSolveResult {
        x: x.iter().copied().collect(),
        y_minus: y_minus.iter().copied().collect(),
        gamma1: g1,
        gamma2: g2,
        iterations: updates.len(),
        updates,
        residual,
        weighted_norm,
        weighted_trend,
        q: cur.v.into_iter().take(h + 1).collect(),
        w: cur.w.into_iter().take(h + 1).collect(),
    })
}
