use std::fs;
use std::path::Path;

use dichotomia::cocycle::NonautonomousSystem;
use dichotomia::config::SystemConfig;
use dichotomia::dichotomy::{test_scaled_dichotomy, DichotomyOutcome, DEFAULT_TOL};
use dichotomia::linearize::{
    solve_foliation_point, square_grid, verify_conjugacy, ConjugacyEvaluator, ConjugacyOptions, FoliationOptions,
    FoliationRates,
};
use dichotomia::report::render;
use dichotomia::sequence_space::{build_truncated, invertibility_margin, resolvent_probe, Boundary};
use dichotomia::spectrum::{check_gap_condition, dichotomy_spectrum, GapReport, SpectrumOptions, SpectrumResult};
use dichotomia::verify::{run_verify, Fault, VerifyOptions};
use dichotomia::{Error, Result};
use nalgebra::DVector;
use serde_json::{json, Value};

use crate::{Common, EXIT_FAILURE, EXIT_GAP_FAIL, EXIT_ONE_SIDED};

const DEFAULT_CONJUGACY_TOL: f64 = 1e-6;
const DEFAULT_CERT_WINDOW: i64 = 100;
const DEFAULT_OPERATOR_WINDOW: i64 = 100;
const FOLIATION_TAIL: usize = 20;

fn load(c: &Common) -> Result<(SystemConfig, NonautonomousSystem)> {
    let path = c
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let cfg = SystemConfig::load(path)?;
    let sys = cfg.build()?;
    Ok((cfg, sys))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn parse_grid(s: &str) -> Result<(f64, f64, usize)> {
    let bad = || Error::Config(format!("--grid expects \"a:b:steps\", got {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(a > 0.0 && b > a) || steps < 2 {
        return Err(bad());
    }
    Ok((a, b, steps))
}

fn parse_vector(s: &str, dim: usize, what: &str) -> Result<DVector<f64>> {
    let vals: std::result::Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|_| Error::Config(format!("--{what} expects comma-separated numbers, got {s:?}")))?;
    if vals.len() != dim {
        return Err(Error::Config(format!("--{what} needs {dim} entries, got {}", vals.len())));
    }
    Ok(DVector::from_vec(vals))
}

fn positive_tol(c: &Common, default: f64) -> Result<f64> {
    let tol = c.tol.unwrap_or(default);
    if !(tol > 0.0) {
        return Err(Error::Config(format!("--tol must be positive, got {tol}")));
    }
    Ok(tol)
}

fn spectrum_options(c: &Common) -> Result<SpectrumOptions> {
    let mut opts = SpectrumOptions::default();
    if let Some(w) = c.window {
        if w < 2 {
            return Err(Error::Config(format!("--window must be at least 2, got {w}")));
        }
        opts.window = w;
    }
    opts.tol = positive_tol(c, opts.tol)?;
    opts.grid = c.grid.as_deref().map(parse_grid).transpose()?;
    Ok(opts)
}

fn spectrum_tolerances(opts: &SpectrumOptions, seed: u64) -> Value {
    json!({
        "tol": opts.tol,
        "dichotomy_tol": opts.dichotomy_tol,
        "window": opts.window,
        "horizon": opts.horizon,
        "seed": seed,
    })
}

pub fn spectrum(c: &Common) -> Result<u8> {
    let (_, sys) = load(c)?;
    let opts = spectrum_options(c)?;
    let spec = dichotomy_spectrum(&sys.linear, &opts)?;
    write(&c.out, "spectrum.json", &render("spectrum", &spectrum_tolerances(&opts, c.seed), &spec))?;
    write(&c.out, "spectrum.csv", &spec.probes_csv())?;
    for iv in &spec.intervals {
        println!("[{:.6}, {:.6}] dim {}", iv.a, iv.b, iv.bundle_dim);
    }
    Ok(0)
}

/// Accepts either a spectrum report or `{"intervals": [[a, b], [a, b, dim], ...]}`.
fn read_spectrum(path: &Path) -> Result<SpectrumResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let bad = || Error::Config(format!("{}: no usable \"intervals\" array", path.display()));
    let list = v
        .get("result")
        .and_then(|r| r.get("intervals"))
        .or_else(|| v.get("intervals"))
        .and_then(Value::as_array)
        .ok_or_else(bad)?;
    let mut triples = Vec::new();
    for item in list {
        let t = if let Some(arr) = item.as_array() {
            let num = |i: usize| arr.get(i).and_then(Value::as_f64);
            let a = num(0).ok_or_else(bad)?;
            let b = num(1).ok_or_else(bad)?;
            (a, b, num(2).map(|d| d as usize).unwrap_or(1))
        } else {
            let a = item.get("a").and_then(Value::as_f64).ok_or_else(bad)?;
            let b = item.get("b").and_then(Value::as_f64).ok_or_else(bad)?;
            let d = item.get("bundle_dim").and_then(Value::as_u64).unwrap_or(1) as usize;
            (a, b, d)
        };
        triples.push(t);
    }
    SpectrumResult::from_intervals(&triples).map_err(|e| Error::Config(e.to_string()))
}

fn gap_exit(gap: &GapReport) -> u8 {
    if gap.one_sided {
        EXIT_ONE_SIDED
    } else if gap.all_pass {
        0
    } else {
        EXIT_GAP_FAIL
    }
}

fn report_gap(gap: &GapReport) {
    for n in &gap.notices {
        eprintln!("notice: {n}");
    }
    println!(
        "gap conditions: {} (k = {}, r = {})",
        if gap.all_pass { "pass" } else { "fail" },
        gap.k,
        gap.r
    );
}

pub fn gap_check(c: &Common, spectrum_file: Option<&Path>) -> Result<u8> {
    let (spec, tolerances) = match spectrum_file {
        Some(p) => (read_spectrum(p)?, json!({ "source": p.display().to_string() })),
        None => {
            let (_, sys) = load(c)?;
            let opts = spectrum_options(c)?;
            (dichotomy_spectrum(&sys.linear, &opts)?, spectrum_tolerances(&opts, c.seed))
        }
    };
    let gap = check_gap_condition(&spec);
    write(&c.out, "gap.json", &render("gap", &tolerances, &gap))?;
    report_gap(&gap);
    Ok(gap_exit(&gap))
}

pub fn certify(c: &Common, scale: f64) -> Result<u8> {
    let (_, sys) = load(c)?;
    let window = c.window.unwrap_or(DEFAULT_CERT_WINDOW);
    let tol = positive_tol(c, DEFAULT_TOL)?;
    let outcome = test_scaled_dichotomy(&sys.linear, scale, window, tol)?;
    let tolerances = json!({ "tol": tol, "window": window, "scale": scale });
    write(&c.out, "certificate.json", &render("certificate", &tolerances, &outcome))?;
    match &outcome {
        DichotomyOutcome::Accepted(cert) => {
            write(&c.out, "projections.csv", &cert.projections_csv())?;
            println!(
                "accepted: stable dim {}, D = {:.4}, lambda = {:.4}, mu = {:.4}, epsilon = {:.4}",
                cert.stable_dim, cert.big_d, cert.lambda, cert.mu, cert.epsilon
            );
            Ok(0)
        }
        DichotomyOutcome::Rejected(r) => {
            println!("rejected ({:?}): {}", r.reason, r.detail);
            Ok(EXIT_FAILURE)
        }
    }
}

pub fn operator(c: &Common, scale: f64, boundary: &str) -> Result<u8> {
    let (_, sys) = load(c)?;
    let boundary = match boundary {
        "zero" => Boundary::Zero,
        "periodic" => Boundary::Periodic,
        other => return Err(Error::Config(format!("--boundary must be zero or periodic, got {other:?}"))),
    };
    let n = c.window.unwrap_or(DEFAULT_OPERATOR_WINDOW);
    let op = build_truncated(&sys.linear, n, scale, boundary).map_err(|e| Error::Config(e.to_string()))?;
    let margin = invertibility_margin(&op);
    let probe = resolvent_probe(&sys.linear, scale, n)?;
    write(&c.out, "operator.txt", &op.triplets())?;
    let body = json!({ "half_width": n, "scale": scale, "boundary": boundary, "sigma_min": margin, "probe": probe });
    write(&c.out, "operator.json", &render("operator", &json!({ "window": n }), &body))?;
    println!("sigma_min = {margin:.6e}, invertible = {}", probe.invertible);
    Ok(0)
}

pub fn conjugate(c: &Common, horizon: usize, points: usize, m_min: i64, m_max: i64) -> Result<u8> {
    let (_, sys) = load(c)?;
    let tol = positive_tol(c, DEFAULT_CONJUGACY_TOL)?;
    if m_min > m_max || points == 0 || horizon == 0 {
        return Err(Error::Config("need m_min <= m_max, points >= 1, horizon >= 1".into()));
    }
    let mut sopts = spectrum_options(c)?;
    sopts.tol = 1e-3;
    let spec = dichotomy_spectrum(&sys.linear, &sopts)?;
    let gap = check_gap_condition(&spec);
    write(&c.out, "gap.json", &render("gap", &spectrum_tolerances(&sopts, c.seed), &gap))?;
    let gap_code = gap_exit(&gap);
    if gap_code != 0 && !c.force {
        report_gap(&gap);
        eprintln!("refusing to linearize without the gap conditions; pass --force to override");
        return Ok(gap_code);
    }
    let opts = ConjugacyOptions {
        horizon,
        ..ConjugacyOptions::default()
    };
    let radius = m_min.abs().max(m_max.abs()) + 1;
    let ev = ConjugacyEvaluator::for_indices(&sys, radius, opts.clone())?;
    let grid = square_grid(sys.dim(), -1.0, 1.0, points);
    let rep = verify_conjugacy(&ev, m_min..=m_max, &grid, tol)?;
    // Inverse on the same grid, so contraction failures surface here.
    for row in &rep.rows {
        ev.inverse(row.m, &DVector::from_vec(row.h.clone()))?;
    }
    let tolerances = json!({
        "residual_tol": tol,
        "picard_tol": opts.picard_tol,
        "horizon": horizon,
        "max_iters": opts.max_iters,
        "forced": c.force && gap_code != 0,
    });
    write(&c.out, "residuals.json", &render("residuals", &tolerances, &rep))?;
    write(&c.out, "residuals.csv", &rep.residuals_csv())?;
    write(&c.out, "conjugacy.csv", &rep.conjugacy_csv())?;
    println!(
        "max residual {:.3e} at m = {} (tol {tol:.1e}, tail bound {:.1e})",
        rep.max_residual,
        rep.max_location.0,
        rep.tail_bound
    );
    Ok(if rep.pass { 0 } else { EXIT_FAILURE })
}

pub fn foliation(c: &Common, x: &str, y: &str, horizon: usize) -> Result<u8> {
    let (_, sys) = load(c)?;
    let d = sys.dim();
    let x = parse_vector(x, d, "x")?;
    let y = parse_vector(y, d, "y")?;
    let sopts = spectrum_options(c)?;
    let spec = dichotomy_spectrum(&sys.linear, &sopts)?;
    let rates = FoliationRates::from_spectrum(&spec)?;
    let mut opts = FoliationOptions::new(rates);
    opts.horizon = horizon;
    opts.tail = FOLIATION_TAIL;
    let window = (horizon + FOLIATION_TAIL + 2) as i64;
    let cert = test_scaled_dichotomy(&sys.linear, 1.0, window, DEFAULT_TOL)?
        .into_certificate()
        .map_err(|r| Error::Assumption(format!("no dichotomy at scale 1: {}", r.detail)))?;
    let res = solve_foliation_point(&sys, &cert, &x, &y, &opts)?;
    let tolerances = json!({ "tol": opts.tol, "max_sweeps": opts.max_sweeps, "horizon": horizon, "tail": FOLIATION_TAIL });
    write(&c.out, "foliation.json", &render("foliation", &tolerances, &res))?;
    write(&c.out, "foliation.csv", &res.trace_csv())?;
    println!(
        "converged in {} sweeps, residual {:.3e}, gamma1 = {:.4}, gamma2 = {:.4}",
        res.iterations, res.residual, res.gamma1, res.gamma2
    );
    Ok(0)
}

pub fn verify(c: &Common, inject_fault: bool) -> Result<u8> {
    let (_, sys) = load(c)?;
    let opts = VerifyOptions {
        spectrum: spectrum_options(c)?,
        seed: c.seed,
        ..VerifyOptions::default()
    };
    let fault = inject_fault.then_some(Fault::CorruptPropagator);
    let rep = run_verify(&sys, &opts, fault)?;
    let tolerances = json!({
        "spectrum_tol": opts.spectrum.tol,
        "window": opts.spectrum.window,
        "samples": opts.samples,
        "seed": opts.seed,
    });
    write(&c.out, "verify.json", &render("verify", &tolerances, &rep))?;
    for chk in &rep.checks {
        println!("{:<28} {}  measured {:.3e}", chk.name, if chk.pass { "pass" } else { "FAIL" }, chk.measured);
    }
    Ok(if rep.all_pass { 0 } else { EXIT_FAILURE })
}
