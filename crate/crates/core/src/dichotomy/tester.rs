use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use super::{
    DichotomyCertificate, DichotomyOutcome, InequalityResidual, Rejection, RejectionReason,
};
use crate::cocycle::LinearSystem;
use crate::error::{Error, Result};
use crate::numeric::{envelope_slope, spectral_norm, upper_envelope};

/// Splits closer than this (per step, in log scale) are treated as
/// ambiguous.
pub const SPLIT_GAP_MIN: f64 = 1e-6;

/// Basis matrices `[U W]` with a smaller singular value than this give no
/// usable projection.
const BASIS_SIGMA_MIN: f64 = 1e-8;

/// Longest span used by the commutation check.
const COMMUTATION_SPAN: usize = 20;

/// Envelope-fit refinement passes.
const FIT_PASSES: usize = 3;

/// Singular data of a horizon propagator `Φ` at one base index.
struct Splitting {
    /// `ln s_i(Φ)`, ascending.
    log_sv: Vec<f64>,
    /// Left singular vectors of `Φ^{-1}`, ordered by decreasing singular
    /// value; the first `k` columns span the directions contracted most
    /// by `Φ`.
    dominant: DMatrix<f64>,
}

impl Splitting {
    fn new(phi: &DMatrix<f64>, phi_inv: &DMatrix<f64>) -> Self {
        let d = phi.nrows();
        let direct = sorted_svd(phi);
        let inverse = sorted_svd(phi_inv);
        // Large singular values are accurate from Φ, small ones from Φ^{-1}.
        let ln_max = direct.0[0].ln();
        let ln_min = -inverse.0[0].ln();
        let mut log_sv = Vec::with_capacity(d);
        for i in 0..d {
            let from_direct = direct.0[d - 1 - i].ln();
            let from_inverse = -inverse.0[i].ln();
            let pick = if 2.0 * from_direct > ln_max + ln_min {
                from_direct
            } else {
                from_inverse
            };
            log_sv.push(pick);
        }
        Self {
            log_sv,
            dominant: inverse.1,
        }
    }
}

/// Singular values (descending) and matching left singular vectors.
fn sorted_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = m.nrows();
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let vectors = DMatrix::from_fn(d, d, |r, c| u[(r, order[c])]);
    (values, vectors)
}

#[derive(Clone, Copy, Debug)]
struct Sample {
    delta: usize,
    /// `|n|` for forward families, `|m|` for backward ones.
    j: usize,
    y: f64,
    m: i64,
    n: i64,
}

/// The four inequality families, in the order
/// `‖𝒜(m,n)P_n‖`, `‖𝒜(m,n)Q_n‖`, `‖𝒜(n,m)Q_m‖`, `‖𝒜(n,m)P_m‖`.
const FAMILY_NAMES: [&str; 4] = [
    "forward-stable |A(m,n)P_n| <= D e^{-lambda(m-n)+eps|n|}",
    "forward-unstable |A(m,n)Q_n| <= D e^{mu(m-n)+eps|n|}",
    "backward-unstable |A(n,m)Q_m| <= D e^{-lambda(m-n)+eps|m|}",
    "backward-stable |A(n,m)P_m| <= D e^{mu(m-n)+eps|m|}",
];
const DECAYING: [bool; 4] = [true, false, true, false];
/// Sign of `ln a` in the scaled log-norm, per family.
const SCALE_SIGN: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

/// Everything that depends on the stable dimension `k` but not on `a`.
struct KTables {
    /// Over the extended range `[-window - ext, window + ext]`.
    projections: Vec<DMatrix<f64>>,
    samples: [Vec<Sample>; 4],
    commutation: f64,
    idempotence: f64,
}

/// Precomputed, scale-independent data for repeated dichotomy tests on one
/// system and window. Scaling by `a` only shifts log-norms and singular
/// values, so a single tester serves a whole spectrum sweep.
pub struct DichotomyTester {
    system: LinearSystem,
    window: i64,
    /// Projections are also built this far beyond the window, for callers
    /// (adapted norms, Green sums) that look past its edge.
    ext: i64,
    horizon: usize,
    span: usize,
    /// First index stored in `mats` / `invs`.
    lo: i64,
    mats: Vec<DMatrix<f64>>,
    invs: Vec<DMatrix<f64>>,
    /// Indexed by `n + window + ext`.
    plus: Vec<Splitting>,
    minus: Vec<Splitting>,
    tables: Vec<OnceLock<std::result::Result<Arc<KTables>, (i64, String)>>>,
}

/// Where a splitting attempt at some scale broke down.
#[derive(Clone, Debug)]
pub(crate) struct SplitFailure {
    pub index: i64,
    pub gap: f64,
    pub detail: String,
}

impl DichotomyTester {
    /// `horizon` is the projection horizon `T`; `span` the longest
    /// `|m - n|` used when fitting constants.
    pub fn new(system: &LinearSystem, window: i64, horizon: usize, span: usize) -> Result<Self> {
        Self::with_extension(system, window, 0, horizon, span)
    }

    /// As [`DichotomyTester::new`], with projections available on
    /// `[-window - ext, window + ext]`.
    pub fn with_extension(
        system: &LinearSystem,
        window: i64,
        ext: i64,
        horizon: usize,
        span: usize,
    ) -> Result<Self> {
        if window < 2 || span < 3 || horizon < 1 || ext < 0 {
            return Err(Error::Diagnostics(format!(
                "window {window} / span {span} / horizon {horizon} too small to fit growth slopes"
            )));
        }
        let d = system.dim();
        let reach = window + ext;
        let lo = -reach - horizon as i64;
        let hi = reach + horizon as i64;
        let mats: Vec<DMatrix<f64>> = (lo..=hi).map(|k| system.matrix(k)).collect();
        let invs: Vec<DMatrix<f64>> = (lo..=hi).map(|k| system.inverse(k)).collect::<Result<_>>()?;
        let at = |k: i64| (k - lo) as usize;

        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for n in -reach..=reach {
            let mut up = DMatrix::identity(d, d);
            let mut up_inv = DMatrix::identity(d, d);
            let mut down = DMatrix::identity(d, d);
            let mut down_inv = DMatrix::identity(d, d);
            for s in 0..horizon as i64 {
                // 𝒜(n+T, n), 𝒜(n, n+T), 𝒜(n-T, n), 𝒜(n, n-T).
                up = &mats[at(n + s)] * up;
                up_inv *= &invs[at(n + s)];
                down = &invs[at(n - 1 - s)] * down;
                down_inv *= &mats[at(n - 1 - s)];
            }
            plus.push(Splitting::new(&up, &up_inv));
            minus.push(Splitting::new(&down, &down_inv));
        }
        Ok(Self {
            system: system.clone(),
            window,
            ext,
            horizon,
            span,
            lo,
            mats,
            invs,
            plus,
            minus,
            tables: (0..=d).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn window(&self) -> i64 {
        self.window
    }

    pub fn extension(&self) -> i64 {
        self.ext
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    fn mat(&self, k: i64) -> &DMatrix<f64> {
        &self.mats[(k - self.lo) as usize]
    }

    fn inv(&self, k: i64) -> &DMatrix<f64> {
        &self.invs[(k - self.lo) as usize]
    }

    /// Stable dimension at scale `a`, or the index where no clean
    /// splitting exists.
    pub(crate) fn split(&self, a: f64) -> std::result::Result<usize, SplitFailure> {
        let d = self.system.dim();
        let t = self.horizon as f64;
        let level = t * a.ln();
        let mut first: Option<(i64, usize)> = None;
        let mut worst = (f64::INFINITY, 0_i64);
        let mut per_index = Vec::with_capacity(self.plus.len());
        for (i, (p, q)) in self.plus.iter().zip(&self.minus).enumerate() {
            let n = i as i64 - self.window - self.ext;
            let mut gap = f64::INFINITY;
            for &s in &p.log_sv {
                gap = gap.min((s - level).abs() / t);
            }
            for &s in &q.log_sv {
                gap = gap.min((s + level).abs() / t);
            }
            if gap < worst.0 {
                worst = (gap, n);
            }
            let k = p.log_sv.iter().filter(|&&s| s <= level).count();
            let j = q.log_sv.iter().filter(|&&s| s <= -level).count();
            per_index.push((n, k, j, gap));
        }
        if worst.0 < SPLIT_GAP_MIN {
            return Err(SplitFailure {
                index: worst.1,
                gap: worst.0,
                detail: format!(
                    "singular-value gap {:.3e} at n = {} is below {SPLIT_GAP_MIN:e}",
                    worst.0, worst.1
                ),
            });
        }
        for (n, k, j, gap) in per_index {
            if k + j != d {
                return Err(SplitFailure {
                    index: n,
                    gap,
                    detail: format!(
                        "at n = {n}: {k} forward-contracting and {j} backward-contracting directions do not split R^{d}"
                    ),
                });
            }
            match first {
                None => first = Some((n, k)),
                Some((n0, k0)) if k0 != k => {
                    return Err(SplitFailure {
                        index: n,
                        gap,
                        detail: format!("stable dimension changes from {k0} at n = {n0} to {k} at n = {n}"),
                    })
                }
                _ => {}
            }
        }
        Ok(first.map(|(_, k)| k).unwrap_or(0))
    }

    fn tables(&self, k: usize) -> std::result::Result<Arc<KTables>, (i64, String)> {
        self.tables[k].get_or_init(|| self.build_tables(k).map(Arc::new)).clone()
    }

    fn build_tables(&self, k: usize) -> std::result::Result<KTables, (i64, String)> {
        let d = self.system.dim();
        let offset = self.window + self.ext;
        let mut projections = Vec::with_capacity(self.plus.len());
        for (i, (p, q)) in self.plus.iter().zip(&self.minus).enumerate() {
            let n = i as i64 - offset;
            let proj = if k == 0 {
                DMatrix::zeros(d, d)
            } else if k == d {
                DMatrix::identity(d, d)
            } else {
                let mut basis = DMatrix::zeros(d, d);
                basis.columns_mut(0, k).copy_from(&p.dominant.columns(0, k));
                basis.columns_mut(k, d - k).copy_from(&q.dominant.columns(0, d - k));
                let sigma = basis.singular_values().min();
                if sigma < BASIS_SIGMA_MIN {
                    return Err((
                        n,
                        format!("stable and unstable directions nearly coincide at n = {n} (sigma_min {sigma:.3e})"),
                    ));
                }
                let inv = basis.clone().try_inverse().ok_or((n, "singular splitting basis".to_string()))?;
                let mut sel = DMatrix::zeros(d, d);
                for c in 0..k {
                    sel[(c, c)] = 1.0;
                }
                basis * sel * inv
            };
            projections.push(proj);
        }

        let id = DMatrix::<f64>::identity(d, d);
        let proj = |n: i64| &projections[(n + offset) as usize];
        let comp = |n: i64| &id - proj(n);
        let w = self.window;
        let mut samples: [Vec<Sample>; 4] = Default::default();
        // Propagate with a re-projection after every step: in exact
        // arithmetic P_{j+1} A_j P_j = A_j P_j, and the projection stops
        // round-off from leaking into the other bundle and growing there.
        for n in -w..=w {
            let longest = self.span as i64;
            let mut fp = proj(n).clone();
            let mut fq = comp(n);
            let mut bp = fp.clone();
            let mut bq = fq.clone();
            push_sample(&mut samples[0], 0, n, n, n, &fp);
            push_sample(&mut samples[1], 0, n, n, n, &fq);
            push_sample(&mut samples[2], 0, n, n, n, &bq);
            push_sample(&mut samples[3], 0, n, n, n, &bp);
            for delta in 1..=longest {
                let m = n + delta;
                if m <= w {
                    let a = self.mat(m - 1);
                    fp = proj(m) * (a * &fp);
                    fq = comp(m) * (a * &fq);
                    push_sample(&mut samples[0], delta as usize, n, m, n, &fp);
                    push_sample(&mut samples[1], delta as usize, n, m, n, &fq);
                }
                let other = n - delta;
                if other >= -w {
                    let b = self.inv(other);
                    bq = comp(other) * (b * &bq);
                    bp = proj(other) * (b * &bp);
                    push_sample(&mut samples[2], delta as usize, n, n, other, &bq);
                    push_sample(&mut samples[3], delta as usize, n, n, other, &bp);
                }
            }
        }

        let mut commutation = 0.0_f64;
        let mut idempotence = 0.0_f64;
        for n in -w..=w {
            let p = proj(n);
            let scale = spectral_norm(p).max(1.0);
            idempotence = idempotence.max(spectral_norm(&(p * p - p)) / scale);
            let mut a = id.clone();
            for delta in 1..=COMMUTATION_SPAN.min(self.span) as i64 {
                let m = n + delta;
                if m > w {
                    break;
                }
                a = self.mat(m - 1) * a;
                let pm = proj(m);
                let denom = spectral_norm(&a) * scale.max(spectral_norm(pm));
                commutation = commutation.max(spectral_norm(&(&a * p - pm * &a)) / denom);
            }
        }
        Ok(KTables {
            projections,
            samples,
            commutation,
            idempotence,
        })
    }

    /// Projections for stable dimension `k` (as found by a split).
    pub(crate) fn projections_for(&self, k: usize) -> std::result::Result<Vec<DMatrix<f64>>, (i64, String)> {
        self.tables(k).map(|t| t.projections.clone())
    }

    /// Tests the scaled sequence `(A_m / a)`; `tol` bounds the relative
    /// commutation and idempotence errors of the projections.
    pub fn test(&self, a: f64, tol: f64) -> Result<DichotomyOutcome> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Parameter(format!("scale must be positive, got {a}")));
        }
        let spectral = |detail: String, at: i64| {
            Ok(DichotomyOutcome::Rejected(Rejection {
                scale: a,
                reason: RejectionReason::Spectral,
                detail,
                location: Some((at, at)),
            }))
        };
        let k = match self.split(a) {
            Ok(k) => k,
            Err(f) => return spectral(f.detail, f.index),
        };
        let tables = match self.tables(k) {
            Ok(t) => t,
            Err((n, detail)) => return spectral(detail, n),
        };
        if tables.commutation > tol || tables.idempotence > tol {
            return spectral(
                format!(
                    "projections not invariant within tolerance {tol:e}: commutation {:.3e}, idempotence {:.3e}",
                    tables.commutation, tables.idempotence
                ),
                0,
            );
        }

        let ln_a = a.ln();
        let fits: Vec<Option<(f64, f64)>> = (0..4)
            .map(|f| fit_family(&tables.samples[f], SCALE_SIGN[f] * ln_a))
            .collect();
        let mut lambda = f64::INFINITY;
        let mut mu = 0.0_f64;
        let mut epsilon = 0.0_f64;
        for f in 0..4 {
            let Some((slope, eps)) = fits[f] else { continue };
            epsilon = epsilon.max(eps);
            if DECAYING[f] {
                if !(slope < 0.0) {
                    let worst = worst_at_longest_span(&tables.samples[f]);
                    return Ok(DichotomyOutcome::Rejected(Rejection {
                        scale: a,
                        reason: RejectionReason::Growth,
                        detail: format!(
                            "{} fails: fitted log-growth slope {slope:.4} is not negative",
                            FAMILY_NAMES[f]
                        ),
                        location: worst,
                    }));
                }
                lambda = lambda.min(-slope);
            } else {
                mu = mu.max(slope);
            }
        }
        if !lambda.is_finite() {
            return Err(Error::Diagnostics("no decaying samples to fit lambda".into()));
        }
        mu = mu.max(lambda);

        let rate = |f: usize| if DECAYING[f] { -lambda } else { mu };
        let mut log_d = f64::NEG_INFINITY;
        for f in 0..4 {
            for s in &tables.samples[f] {
                let excess = s.y + SCALE_SIGN[f] * ln_a * s.delta as f64
                    - rate(f) * s.delta as f64
                    - epsilon * s.j as f64;
                log_d = log_d.max(excess);
            }
        }
        let big_d = log_d.exp().max(f64::MIN_POSITIVE);
        let residuals = (0..4)
            .map(|f| {
                let mut worst = (f64::NEG_INFINITY, (0, 0));
                for s in &tables.samples[f] {
                    let excess = s.y + SCALE_SIGN[f] * ln_a * s.delta as f64
                        - rate(f) * s.delta as f64
                        - epsilon * s.j as f64
                        - log_d;
                    if excess > worst.0 {
                        worst = (excess, (s.m, s.n));
                    }
                }
                InequalityResidual {
                    inequality: FAMILY_NAMES[f].to_string(),
                    samples: tables.samples[f].len(),
                    worst_ratio: if worst.0.is_finite() { worst.0.exp() } else { 0.0 },
                    at: worst.1,
                }
            })
            .collect();

        Ok(DichotomyOutcome::Accepted(DichotomyCertificate {
            scale: a,
            window: self.window,
            horizon: self.horizon,
            span: self.span,
            stable_dim: k,
            big_d,
            lambda,
            mu,
            epsilon,
            residuals,
            commutation_error: tables.commutation,
            idempotence_error: tables.idempotence,
            tolerance: tol,
            extension_policy: self.system.extension_policy(),
            reach: self.window + self.ext,
            projections: Arc::new(tables.projections.clone()),
        }))
    }
}

fn push_sample(out: &mut Vec<Sample>, delta: usize, j_index: i64, m: i64, n: i64, mat: &DMatrix<f64>) {
    let norm = spectral_norm(mat);
    if norm > 0.0 && norm.is_finite() {
        out.push(Sample {
            delta,
            j: j_index.unsigned_abs() as usize,
            y: norm.ln(),
            m,
            n,
        });
    }
}

/// Slope in `Δ` and nonuniform rate in `j` of the tightest envelope
/// `y <= c + slope Δ + eps j`, refined by alternating envelope fits.
fn fit_family(samples: &[Sample], shift: f64) -> Option<(f64, f64)> {
    let scaled = |s: &Sample| s.y + shift * s.delta as f64;
    let mut eps = 0.0;
    let mut slope = None;
    for _ in 0..FIT_PASSES {
        let env = upper_envelope(
            samples
                .iter()
                .filter(|s| s.delta >= 1)
                .map(|s| (s.delta, scaled(s) - eps * s.j as f64)),
        );
        let s = envelope_slope(&env)?;
        slope = Some(s);
        let by_j = upper_envelope(samples.iter().map(|x| (x.j, scaled(x) - s * x.delta as f64)));
        eps = envelope_slope(&by_j).unwrap_or(0.0).max(0.0);
    }
    slope.map(|s| (s, eps))
}

fn worst_at_longest_span(samples: &[Sample]) -> Option<(i64, i64)> {
    let longest = samples.iter().map(|s| s.delta).max()?;
    samples
        .iter()
        .filter(|s| s.delta == longest)
        .max_by(|a, b| a.y.total_cmp(&b.y))
        .map(|s| (s.m, s.n))
}

impl DichotomyTester {
    /// Smallest and largest per-step log growth rate seen by the horizon
    /// propagators over the window; every spectral point lies inside.
    pub fn rate_range(&self) -> (f64, f64) {
        let t = self.horizon as f64;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (p, q) in self.plus.iter().zip(&self.minus) {
            for &s in &p.log_sv {
                lo = lo.min(s / t);
                hi = hi.max(s / t);
            }
            for &s in &q.log_sv {
                lo = lo.min(-s / t);
                hi = hi.max(-s / t);
            }
        }
        (lo, hi)
    }
}
