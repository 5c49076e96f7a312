use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::DichotomyCertificate;
use crate::cocycle::LinearSystem;
use crate::error::{Error, Result};
use crate::numeric::{envelope_slope, upper_envelope};

/// Four-sup norms `‖·‖_m` built from an accepted certificate, for the
/// scaled sequence `(A_m / a)`.
#[derive(Clone, Debug)]
pub struct AdaptedNormFamily {
    cert: DichotomyCertificate,
    horizon: usize,
    lo: i64,
    mats: Vec<DMatrix<f64>>,
    invs: Vec<DMatrix<f64>>,
    /// `C` claimed for ln1 and ln2.
    pub declared_c: f64,
    /// `ε` claimed for ln1.
    pub declared_epsilon: f64,
}

impl AdaptedNormFamily {
    pub fn new(sys: &LinearSystem, cert: DichotomyCertificate, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Parameter("norm horizon must be positive".into()));
        }
        let reach = horizon as i64 + 1;
        let lo = -cert.window - reach;
        let hi = cert.window + reach;
        let a = cert.scale;
        let mats = (lo..=hi).map(|k| sys.matrix(k) / a).collect();
        let invs = (lo..=hi)
            .map(|k| sys.inverse(k).map(|m| m * a))
            .collect::<Result<_>>()?;
        // Each sup is bounded by D e^{ε|m|}; one step of the scaled sequence
        // costs at most e^{μ} in the adapted norm.
        let declared_c = 4.0 * cert.big_d * cert.mu.exp();
        let declared_epsilon = cert.epsilon;
        Ok(Self {
            cert,
            horizon,
            lo,
            mats,
            invs,
            declared_c,
            declared_epsilon,
        })
    }

    pub fn certificate(&self) -> &DichotomyCertificate {
        &self.cert
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn window(&self) -> i64 {
        self.cert.window
    }

    /// Scaled `A_m / a`.
    pub fn step(&self, m: i64) -> &DMatrix<f64> {
        &self.mats[(m - self.lo) as usize]
    }

    fn step_inv(&self, m: i64) -> &DMatrix<f64> {
        &self.invs[(m - self.lo) as usize]
    }

    /// Scaled `𝒜(to, from) v` for `v` in the stable (`stable = true`) or
    /// unstable bundle at `from`, re-projected onto that bundle after every
    /// step so round-off cannot leak into the other one.
    pub fn transport(&self, to: i64, from: i64, v: &DVector<f64>, stable: bool) -> Result<DVector<f64>> {
        let onto = |k: i64, w: DVector<f64>| -> Result<DVector<f64>> {
            let pw = self.cert.projection(k)? * &w;
            Ok(if stable { pw } else { w - pw })
        };
        let mut w = v.clone();
        if to > from {
            for k in from..to {
                w = onto(k + 1, self.step(k) * w)?;
            }
        } else {
            for k in (to..from).rev() {
                w = onto(k, self.step_inv(k) * w)?;
            }
        }
        Ok(w)
    }
}

/// `‖x‖_m`: the four truncated sups of the stable and unstable parts.
pub fn adapted_norm(fam: &AdaptedNormFamily, m: i64, x: &DVector<f64>) -> Result<f64> {
    if m.abs() > fam.window() {
        return Err(Error::Range {
            index: m,
            window: fam.window(),
        });
    }
    let p = fam.cert.projection(m)?;
    let (lambda, mu) = (fam.cert.lambda, fam.cert.mu);
    let px = p * x;
    let qx = x - &px;
    let (mut t1, mut t2, mut t3, mut t4) = (px.norm(), px.norm(), qx.norm(), qx.norm());
    let (mut fp, mut fq) = (px.clone(), qx.clone());
    let (mut bp, mut bq) = (px, qx);
    for s in 1..=fam.horizon as i64 {
        let sf = s as f64;
        let (ahead, behind) = (m + s, m - s);
        let pa = fam.cert.projection(ahead)?;
        let pb = fam.cert.projection(behind)?;
        let fwd = fam.step(ahead - 1);
        fp = pa * (fwd * fp);
        fq = fwd * fq;
        fq = &fq - pa * &fq;
        let bwd = fam.step_inv(behind);
        bp = pb * (bwd * bp);
        bq = bwd * bq;
        bq = &bq - pb * &bq;
        t1 = t1.max((lambda * sf).exp() * fp.norm());
        t4 = t4.max((-mu * sf).exp() * fq.norm());
        t2 = t2.max((-mu * sf).exp() * bp.norm());
        t3 = t3.max((lambda * sf).exp() * bq.norm());
    }
    Ok(t1 + t2 + t3 + t4)
}

#[derive(Clone, Debug, Serialize)]
pub struct NormFamilyReport {
    pub samples: usize,
    pub horizon: usize,
    /// `min ‖x‖_m / ‖x‖` (ln1 lower bound needs `>= 1`).
    pub ln1_min_ratio: f64,
    /// `C` and `ε` of the tightest envelope `‖x‖_m / ‖x‖ <= C e^{ε|m|}`.
    pub ln1_c: f64,
    pub measured_epsilon: f64,
    /// Extremes of `‖A_m x‖_{m+1} / ‖x‖_m`.
    pub ln2_min_ratio: f64,
    pub ln2_max_ratio: f64,
    /// Smallest `C` realizing both ln1 (with `measured_epsilon`) and ln2.
    pub measured_c: f64,
    pub declared_c: f64,
    pub declared_epsilon: f64,
    pub construction: String,
    pub pass: bool,
}

/// Samples `(m, x)` and measures the constants of ln1 / ln2.
pub fn verify_norm_family(fam: &AdaptedNormFamily, samples: usize, seed: u64) -> Result<NormFamilyReport> {
    let d = fam.cert.dim();
    let n = fam.window();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slack = 1.01;
    let mut ln1 = Vec::with_capacity(samples);
    let mut ln1_min = f64::INFINITY;
    let mut ln2_min = f64::INFINITY;
    let mut ln2_max = 0.0_f64;
    let mut pass = true;
    for _ in 0..samples {
        let m = rng.random_range(-n..n);
        let x = loop {
            let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..=1.0));
            if v.norm() > 1e-3 {
                break v;
            }
        };
        let here = adapted_norm(fam, m, &x)?;
        let next = adapted_norm(fam, m + 1, &(fam.step(m) * &x))?;
        let r1 = here / x.norm();
        let r2 = next / here;
        ln1_min = ln1_min.min(r1);
        ln2_min = ln2_min.min(r2);
        ln2_max = ln2_max.max(r2);
        ln1.push((m.unsigned_abs() as usize, r1.ln()));
        if r1 > slack * fam.declared_c * (fam.declared_epsilon * m.abs() as f64).exp() {
            pass = false;
        }
        if r2 > slack * fam.declared_c || r2 * slack * fam.declared_c < 1.0 {
            pass = false;
        }
    }
    let env = upper_envelope(ln1.iter().copied());
    let measured_epsilon = envelope_slope(&env).unwrap_or(0.0).max(0.0);
    let ln1_c = ln1
        .iter()
        .map(|(j, y)| y - measured_epsilon * *j as f64)
        .fold(f64::NEG_INFINITY, f64::max)
        .exp();
    let measured_c = ln1_c.max(ln2_max).max(1.0 / ln2_min);
    if ln1_min < 1.0 - 1e-12 {
        pass = false;
    }
    Ok(NormFamilyReport {
        samples,
        horizon: fam.horizon,
        ln1_min_ratio: ln1_min,
        ln1_c,
        measured_epsilon,
        ln2_min_ratio: ln2_min,
        ln2_max_ratio: ln2_max,
        measured_c,
        declared_c: fam.declared_c,
        declared_epsilon: fam.declared_epsilon,
        construction: format!(
            "four-sup: sup e^(lambda s)|A P x| + sup e^(-mu s)|A^-1 P x| + sup e^(lambda s)|A^-1 Q x| + sup e^(-mu s)|A Q x|, s <= {}",
            fam.horizon
        ),
        pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct UniformDichotomyReport {
    pub samples: usize,
    /// Smallest `D` making all four inequalities hold with `ε = 0` in the
    /// adapted norms on the samples.
    pub fitted_d: f64,
    /// Slope of `ln(ratio)` against `|n|`; near zero for a uniform
    /// dichotomy.
    pub nonuniform_trend: f64,
    pub pass: bool,
}

/// Checks the four inequalities in the adapted norms, with `ε = 0`, on
/// random pairs `|m - n| <= K`.
pub fn check_uniform_dichotomy(
    fam: &AdaptedNormFamily,
    samples: usize,
    seed: u64,
) -> Result<UniformDichotomyReport> {
    let d = fam.cert.dim();
    let w = fam.window();
    let k = fam.horizon as i64;
    let (lambda, mu) = (fam.cert.lambda, fam.cert.mu);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(samples);
    for _ in 0..samples {
        let n = rng.random_range(-w..=w);
        let m = rng.random_range(n..=(n + k).min(w));
        let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..=1.0));
        let gap = (m - n) as f64;
        let pn = fam.cert.projection(n)?;
        let pm = fam.cert.projection(m)?;
        let xn = adapted_norm(fam, n, &x)?;
        let xm = adapted_norm(fam, m, &x)?;
        let fpx = fam.transport(m, n, &(pn * &x), true)?;
        let fqx = fam.transport(m, n, &(&x - pn * &x), false)?;
        let bqx = fam.transport(n, m, &(&x - pm * &x), false)?;
        let bpx = fam.transport(n, m, &(pm * &x), true)?;
        let terms = [
            adapted_norm(fam, m, &fpx)? / ((-lambda * gap).exp() * xn),
            adapted_norm(fam, m, &fqx)? / ((mu * gap).exp() * xn),
            adapted_norm(fam, n, &bqx)? / ((-lambda * gap).exp() * xm),
            adapted_norm(fam, n, &bpx)? / ((mu * gap).exp() * xm),
        ];
        let worst = terms.iter().copied().filter(|t| t.is_finite()).fold(0.0, f64::max);
        if worst > 0.0 {
            ratios.push((n.unsigned_abs() as usize, worst.ln()));
        }
    }
    let fitted_d = ratios.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max).exp();
    let trend = envelope_slope(&upper_envelope(ratios.iter().copied())).unwrap_or(0.0);
    Ok(UniformDichotomyReport {
        samples,
        fitted_d,
        nonuniform_trend: trend,
        pass: fitted_d.is_finite() && trend <= 0.01,
    })
}
