//! Invariant suite run by `verify`: cocycle identity, inverse consistency,
//! nonlinearity certificate, projection commutation, dichotomy
//! inequalities, resolvent-probe agreement, monotone bundle dimensions and
//! report determinism.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::cocycle::{NonautonomousSystem, Propagator};
use crate::dichotomy::{test_scaled_dichotomy, DichotomyOutcome, DEFAULT_TOL};
use crate::error::Result;
use crate::numeric::{geo_mid, spectral_norm};
use crate::report::render;
use crate::sequence_space::resolvent_probe;
use crate::spectrum::{dichotomy_spectrum, SpectrumOptions, SpectrumResult};

const COCYCLE_HALF_WIDTH: i64 = 20;
const COCYCLE_TOL: f64 = 1e-9;
const INVERSE_SPAN: i64 = 20;
const CERT_WINDOW: i64 = 60;
const PROBE_HALF_WIDTH: i64 = 100;
/// Scales whose fitted `ε` is below this count as uniform for the
/// resolvent-probe comparison.
const UNIFORM_EPSILON: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub spectrum: SpectrumOptions,
    pub samples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            spectrum: SpectrumOptions::default(),
            samples: 200,
            seed: 0,
        }
    }
}

/// Test hook for demonstrating that the suite detects corruption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Overwrites the cached `𝒜(5, -1)` before the cocycle check.
    CorruptPropagator,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

fn check(name: &str, measured: f64, threshold: f64, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        pass,
        measured,
        threshold,
        detail: detail.into(),
    }
}

fn cocycle_identity(sys: &NonautonomousSystem, opts: &VerifyOptions, fault: Option<Fault>) -> Result<Check> {
    let prop = Propagator::new(sys.linear.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut triples = vec![(5, 2, -1)];
    for _ in 0..opts.samples {
        let mut draw = || rng.random_range(-COCYCLE_HALF_WIDTH..=COCYCLE_HALF_WIDTH);
        triples.push((draw(), draw(), draw()));
    }
    if fault == Some(Fault::CorruptPropagator) {
        let good = prop.get(5, -1)?;
        prop.inject_fault(5, -1, &good * 2.0 + DMatrix::identity(good.nrows(), good.ncols()));
    }
    let mut worst = 0.0_f64;
    let mut at = (0, 0, 0);
    for &(m, k, n) in &triples {
        let (left, right) = (prop.get(m, k)?, prop.get(k, n)?);
        let full = prop.get(m, n)?;
        // Mixed-direction products lose digits in proportion to the factors.
        let scale = (spectral_norm(&left) * spectral_norm(&right)).max(spectral_norm(&full));
        let err = (&left * &right - &full).norm() / scale;
        if err > worst {
            worst = err;
            at = (m, k, n);
        }
    }
    Ok(check(
        "cocycle-identity",
        worst,
        COCYCLE_TOL,
        worst <= COCYCLE_TOL,
        format!("{} triples in [-{COCYCLE_HALF_WIDTH}, {COCYCLE_HALF_WIDTH}]; worst at {at:?}", triples.len()),
    ))
}

fn inverse_consistency(sys: &NonautonomousSystem, opts: &VerifyOptions) -> Result<Check> {
    let prop = Propagator::new(sys.linear.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 1);
    let d = sys.dim();
    let mut worst = 0.0_f64;
    for _ in 0..opts.samples {
        let n = rng.random_range(-COCYCLE_HALF_WIDTH..=COCYCLE_HALF_WIDTH);
        let m = n + rng.random_range(-INVERSE_SPAN..=INVERSE_SPAN);
        let fwd = prop.get(m, n)?;
        let back = prop.get(n, m)?;
        let err = (&back * &fwd - DMatrix::identity(d, d)).norm() / (spectral_norm(&back) * spectral_norm(&fwd));
        worst = worst.max(err);
    }
    Ok(check(
        "inverse-consistency",
        worst,
        COCYCLE_TOL,
        worst <= COCYCLE_TOL,
        format!("‖𝒜(n,m)𝒜(m,n) - Id‖ / (‖𝒜(n,m)‖‖𝒜(m,n)‖), |m - n| <= {INVERSE_SPAN}"),
    ))
}

/// A scale in each spectral gap, plus one below and one above.
fn gap_scales(spec: &SpectrumResult) -> Vec<f64> {
    let iv = &spec.intervals;
    let mut out = Vec::new();
    if let Some(first) = iv.first() {
        out.push(first.a / 2.0);
    }
    for w in iv.windows(2) {
        out.push(geo_mid(w[0].b, w[1].a));
    }
    if let Some(last) = iv.last() {
        out.push(last.b * 2.0);
    }
    out
}

pub fn run_verify(sys: &NonautonomousSystem, opts: &VerifyOptions, fault: Option<Fault>) -> Result<VerifyReport> {
    let mut checks = vec![cocycle_identity(sys, opts, fault)?, inverse_consistency(sys, opts)?];

    let nl = sys.nonlinear.check_certificate(sys.dim(), 1000, 50, 2.0, opts.seed);
    let worst_ratio = nl.derivative_lipschitz_ratio.max(nl.quadratic_ratio).max(nl.sup_deriv_ratio);
    checks.push(check(
        "nonlinearity-certificate",
        worst_ratio,
        1.01,
        nl.pass,
        format!("f(0) = 0 and Df(0) = 0: {}; 1000 samples", nl.zero_fixed),
    ));

    let spec = dichotomy_spectrum(&sys.linear, &opts.spectrum)?;
    let mut comm = 0.0_f64;
    let mut ineq = 0.0_f64;
    let mut all_accepted = true;
    let mut probe_mismatch = Vec::new();
    let mut probe_compared = 0usize;
    let scales = gap_scales(&spec);
    for &a in &scales {
        match test_scaled_dichotomy(&sys.linear, a, CERT_WINDOW, DEFAULT_TOL)? {
            DichotomyOutcome::Accepted(cert) => {
                comm = comm.max(cert.commutation_error).max(cert.idempotence_error);
                for r in &cert.residuals {
                    ineq = ineq.max(r.worst_ratio);
                }
                if cert.epsilon <= UNIFORM_EPSILON {
                    probe_compared += 1;
                    if !resolvent_probe(&sys.linear, a, PROBE_HALF_WIDTH)?.invertible {
                        probe_mismatch.push(a);
                    }
                }
            }
            DichotomyOutcome::Rejected(_) => all_accepted = false,
        }
    }
    checks.push(check(
        "projection-commutation",
        comm,
        DEFAULT_TOL,
        all_accepted && comm <= DEFAULT_TOL,
        format!("P_m 𝒜(m,n) = 𝒜(m,n) P_n and P^2 = P at scales {scales:?}"),
    ));
    checks.push(check(
        "dichotomy-inequalities",
        ineq,
        1.0 + 1e-9,
        all_accepted && ineq <= 1.0 + 1e-9,
        "worst ratio of the four bounds to their fitted right-hand sides",
    ));
    checks.push(check(
        "resolvent-probe-agreement",
        probe_mismatch.len() as f64,
        0.0,
        probe_mismatch.is_empty(),
        format!("{probe_compared} uniform gap scales compared; mismatches at {probe_mismatch:?}"),
    ));

    let mut probes: Vec<(f64, usize)> = spec.probe_log.iter().filter_map(|p| p.dim.map(|d| (p.a, d))).collect();
    probes.sort_by(|x, y| x.0.total_cmp(&y.0));
    let violations = probes.windows(2).filter(|w| w[1].1 < w[0].1).count();
    checks.push(check(
        "dim-monotonicity",
        violations as f64,
        0.0,
        violations == 0,
        format!("{} probes with a computed dim S_a", probes.len()),
    ));

    let tolerances = json!({ "tol": opts.spectrum.tol, "dichotomy_tol": opts.spectrum.dichotomy_tol });
    let first = render("spectrum", &tolerances, &spec);
    let again = render("spectrum", &tolerances, &dichotomy_spectrum(&sys.linear, &opts.spectrum)?);
    checks.push(check(
        "determinism",
        if first == again { 0.0 } else { 1.0 },
        0.0,
        first == again,
        "spectrum report rendered twice from the same inputs",
    ));

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { checks, all_pass })
}
