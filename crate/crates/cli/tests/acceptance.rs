//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every numeric target is checked against an oracle computed here, not
//! against values produced by the library. Criteria listed in
//! `KNOWN_UNATTAINABLE` still run and print their verdict, but do not fail
//! the process.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dichotomia::cocycle::{
    make_example, ExampleKind, LinearSystem, NonautonomousSystem, Nonlinearity, SaturatingParams,
};
use dichotomia::dichotomy::{test_scaled_dichotomy, verify_norm_family, AdaptedNormFamily, DEFAULT_NORM_HORIZON};
use dichotomia::linearize::{
    extend_by_fundamental_domains, solve_foliation_point, square_grid, verify_conjugacy, ConjugacyEvaluator,
    ConjugacyOptions, FoliationOptions, FoliationRates, FundamentalDomain,
};
use dichotomia::sequence_space::{build_truncated, invertibility_margin, Boundary};
use dichotomia::spectrum::{check_gap_condition, dichotomy_spectrum, SpectrumOptions, SpectrumResult};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criterion 5's decay clause cannot hold for this operator: the smallest
/// singular value at a = 3 shrinks like sin(pi / (4N + 4)), a factor of
/// about 7.9 between N = 50 and N = 400.
const KNOWN_UNATTAINABLE: &[u32] = &[5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn diag(a: f64, b: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&v(&[a, b]))
}

fn canonical(eta: f64, epsilon: f64) -> NonautonomousSystem {
    make_example(
        &ExampleKind::ConstantDiagonal {
            diagonal: vec![0.5, 3.0],
        },
        Some(SaturatingParams { eta, epsilon }),
    )
    .unwrap()
}

fn nonuniform() -> NonautonomousSystem {
    make_example(
        &ExampleKind::NonuniformScalar {
            lambda: 0.7,
            epsilon: 0.1,
            dimension: 1,
        },
        None,
    )
    .unwrap()
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

fn c1() -> Outcome {
    let sys = canonical(0.05, 0.1);
    let start = Instant::now();
    let spec = dichotomy_spectrum(&sys.linear, &SpectrumOptions::default()).unwrap();
    let took = start.elapsed();
    // Oracle: the diagonal entries themselves.
    let want = [0.5, 3.0];
    let iv = &spec.intervals;
    let close = iv.len() == 2 && iv.iter().zip(want).all(|(i, w)| within(i.a, w, 1e-3) && within(i.b, w, 1e-3));
    let dims = iv.iter().map(|i| i.bundle_dim).collect::<Vec<_>>();
    let pass = close && dims == [1, 1] && spec.k == 1 && iv.len() == 2 && took < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "intervals {:?}, dims {dims:?}, k = {}, r = {}, {took:.2?}",
            iv.iter().map(|i| (i.a, i.b)).collect::<Vec<_>>(),
            spec.k,
            iv.len()
        ),
    )
}

fn c2() -> Outcome {
    let (a0, a1) = (diag(0.4, 2.0), diag(0.9, 4.5));
    let sys = make_example(
        &ExampleKind::Periodic {
            table: vec![a0.clone(), a1.clone()],
        },
        None,
    )
    .unwrap();
    // Oracle: square roots of the monodromy eigenvalue moduli.
    let mono = &a1 * &a0;
    let mut want: Vec<f64> = mono.complex_eigenvalues().iter().map(|z| z.norm().sqrt()).collect();
    want.sort_by(f64::total_cmp);
    let start = Instant::now();
    let spec = dichotomy_spectrum(&sys.linear, &SpectrumOptions::default()).unwrap();
    let took = start.elapsed();
    let iv = &spec.intervals;
    let close = iv.len() == want.len()
        && iv.iter().zip(&want).all(|(i, &w)| within(i.a, w, 1e-3) && within(i.b, w, 1e-3));
    outcome(
        close && took < Duration::from_secs(5),
        format!(
            "oracle {want:?}, intervals {:?}, {took:.2?}",
            iv.iter().map(|i| (i.a, i.b)).collect::<Vec<_>>()
        ),
    )
}

fn c3() -> Outcome {
    let sys = nonuniform();
    let (lambda, eps) = (0.7_f64, 0.1_f64);
    let sign = |k: i64| if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let log_prop = |m: i64, n: i64| -lambda * (m - n) as f64 + eps * (m as f64 * sign(m) - n as f64 * sign(n));
    // Brute-force oracle over every pair with one end at the origin, |m|, |n|
    // <= 400 and m - n >= 20. Pairs away from the origin carry the allowed
    // e^{eps|n|} loss and are not spectral.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let big_n = 400_i64;
    for t in 20..=big_n {
        for (m, n) in [(t, 0), (0, -t)] {
            let rate = log_prop(m, n) / (m - n) as f64;
            lo = lo.min(rate);
            hi = hi.max(rate);
        }
    }
    let (olo, ohi) = (lo.exp(), hi.exp());
    let closed = ((-lambda - eps).exp(), (-lambda + eps).exp());
    let start = Instant::now();
    let spec = dichotomy_spectrum(&sys.linear, &SpectrumOptions::default()).unwrap();
    let took = start.elapsed();
    let iv = &spec.intervals;
    let pass = iv.len() == 1
        && within(iv[0].a, olo, 2e-2)
        && within(iv[0].b, ohi, 2e-2)
        && within(olo, closed.0, 1e-12)
        && within(ohi, closed.1, 1e-12)
        && took < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "oracle [{olo:.5}, {ohi:.5}], intervals {:?}, {took:.2?}",
            iv.iter().map(|i| (i.a, i.b)).collect::<Vec<_>>()
        ),
    )
}

fn c4() -> Outcome {
    // {0.5}, {3}: k = 1, r = 2.
    // main: a2 / b1 = 3 / 0.5 = 6 > max(b2, 1 / a1) = max(3, 2) = 3.
    // contract: b1 / a1 = 1 < 1 / b1 = 2. expand: b2 / a2 = 1 < a2 = 3.
    let hand_good = (6.0 > 3.0, 1.0 < 2.0, 1.0 < 3.0);
    // [0.4, 0.9], [1.2, 1.3]: main: 1.2 / 0.9 = 1.333 > max(1.3, 2.5) = 2.5 fails.
    let hand_bad_main = 1.2 / 0.9 > f64::max(1.3, 1.0 / 0.4);
    let good = check_gap_condition(&SpectrumResult::from_intervals(&[(0.5, 0.5, 1), (3.0, 3.0, 1)]).unwrap());
    let bad = check_gap_condition(&SpectrumResult::from_intervals(&[(0.4, 0.9, 1), (1.2, 1.3, 1)]).unwrap());
    let good_ok = good.all_pass
        && good.gb_main == hand_good.0
        && good.gb_contract == [hand_good.1]
        && good.gb_expand == [hand_good.2]
        && within(good.gb_main_margin.unwrap(), 6.0 - 3.0, 1e-12);
    let bad_ok = !bad.all_pass && bad.gb_main == hand_bad_main && !hand_bad_main;
    outcome(
        good_ok && bad_ok,
        format!(
            "point spectrum all_pass = {}, wide intervals gb_main = {} (hand: {hand_bad_main})",
            good.all_pass, bad.gb_main
        ),
    )
}

fn c5() -> Outcome {
    let sys = canonical(0.05, 0.1).linear;
    let sigma = |a: f64, n: i64| invertibility_margin(&build_truncated(&sys, n, a, Boundary::Zero).unwrap());
    let at1: Vec<f64> = [100, 200, 400].iter().map(|&n| sigma(1.0, n)).collect();
    let (mx, mn) = at1.iter().fold((0.0_f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    let plateau = (mx - mn) / mx < 0.2;
    let s50 = sigma(3.0, 50);
    let s400 = sigma(3.0, 400);
    let decay = s50 / s400;
    outcome(
        plateau && decay >= 10.0,
        format!(
            "a=1: {at1:.6?} (plateau {}); a=3: {s50:.5} -> {s400:.6}, factor {decay:.2} (need >= 10)",
            if plateau { "ok" } else { "no" }
        ),
    )
}

fn c6() -> Outcome {
    let sys = nonuniform();
    let cert = test_scaled_dichotomy(&sys.linear, 1.0, 100, 1e-8)
        .unwrap()
        .into_certificate()
        .unwrap();
    let eps_ok = (0.05..=0.25).contains(&cert.epsilon);
    let worst = cert.residuals.iter().map(|r| r.worst_ratio).fold(0.0, f64::max);
    let ineq_ok = cert.residuals.len() == 4 && worst <= 1.01;
    let eps = cert.epsilon;
    let fam = AdaptedNormFamily::new(&sys.linear, cert, DEFAULT_NORM_HORIZON).unwrap();
    let rep = verify_norm_family(&fam, 1000, 0).unwrap();
    outcome(
        eps_ok && ineq_ok && rep.pass,
        format!(
            "eps_fit = {eps:.4}, worst inequality ratio {worst:.4}, norm family ln1/ln2 {} on {} samples",
            if rep.pass { "pass" } else { "fail" },
            rep.samples
        ),
    )
}

fn c7() -> Outcome {
    let start = Instant::now();
    let sys = canonical(0.05, 0.1);
    let opts = ConjugacyOptions {
        horizon: 60,
        ..ConjugacyOptions::default()
    };
    let ev = ConjugacyEvaluator::for_indices(&sys, 6, opts).unwrap();
    let grid = square_grid(2, -1.0, 1.0, 21);
    let rep = verify_conjugacy(&ev, -5..=5, &grid, 1e-6).unwrap();
    let mut roundtrip = 0.0_f64;
    for row in &rep.rows {
        let back = ev.inverse(row.m, &v(&row.h)).unwrap();
        roundtrip = roundtrip.max((back - v(&row.x)).norm());
    }
    let zero = v(&[0.0, 0.0]);
    let exact = (-5..=5).all(|m| {
        ev.forward(m, &zero).unwrap() == zero && ev.derivative(m, &zero).unwrap() == DMatrix::identity(2, 2)
    });
    let took = start.elapsed();
    outcome(
        rep.max_residual <= 1e-6 && roundtrip <= 1e-6 && exact && took < Duration::from_secs(60),
        format!(
            "max residual {:.2e} over {} points, roundtrip {roundtrip:.2e}, h(0) = 0 and Dh(0) = Id exactly: {exact}, {took:.2?}",
            rep.max_residual,
            rep.rows.len()
        ),
    )
}

fn c8() -> Outcome {
    let sys = canonical(0.05, 0.1);
    let ev = ConjugacyEvaluator::for_indices(&sys, 6, ConjugacyOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-5;
    let mut worst_dh = 0.0_f64;
    for _ in 0..50 {
        let m = rng.random_range(-5..=5);
        let x = v(&[rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]);
        let dh = ev.derivative(m, &x).unwrap();
        let mut fd = DMatrix::zeros(2, 2);
        for j in 0..2 {
            let mut e = DVector::zeros(2);
            e[j] = h;
            let col = (ev.forward(m, &(&x + &e)).unwrap() - ev.forward(m, &(&x - &e)).unwrap()) / (2.0 * h);
            fd.set_column(j, &col);
        }
        worst_dh = worst_dh.max((&dh - &fd).norm() / dh.norm());
    }

    // Foliation derivative w_n = [dq_n/dx | dq_n/dy] against central
    // differences in x_0, x_1 and the stable direction of y.
    let (fsys, cert, opts) = foliation_setup();
    let (x, y) = (v(&[0.3, 0.2]), v(&[0.1, 0.0]));
    let base = solve_foliation_point(&fsys, &cert, &x, &y, &opts).unwrap();
    let mut err = 0.0_f64;
    let mut scale = 0.0_f64;
    for col in [0usize, 1, 2] {
        let (dx, dy) = match col {
            0 => (v(&[h, 0.0]), v(&[0.0, 0.0])),
            1 => (v(&[0.0, h]), v(&[0.0, 0.0])),
            _ => (v(&[0.0, 0.0]), v(&[h, 0.0])),
        };
        let plus = solve_foliation_point(&fsys, &cert, &(&x + &dx), &(&y + &dy), &opts).unwrap();
        let minus = solve_foliation_point(&fsys, &cert, &(&x - &dx), &(&y - &dy), &opts).unwrap();
        for n in 0..base.q.len() {
            let fd = (&plus.q[n] - &minus.q[n]) / (2.0 * h);
            let an = base.w[n].column(col).into_owned();
            err = err.max((fd - &an).norm());
            scale = scale.max(an.norm());
        }
    }
    let worst_w = err / scale;
    outcome(
        worst_dh <= 1e-4 && worst_w <= 1e-4,
        format!("Dh vs FD worst relative {worst_dh:.2e} at 50 points; foliation w vs FD {worst_w:.2e}"),
    )
}

fn foliation_setup() -> (NonautonomousSystem, dichotomia::dichotomy::DichotomyCertificate, FoliationOptions) {
    let sys = canonical(0.05, 0.1);
    let spec = dichotomy_spectrum(&sys.linear, &SpectrumOptions::default()).unwrap();
    let opts = FoliationOptions::new(FoliationRates::from_spectrum(&spec).unwrap());
    let window = (opts.horizon + opts.tail + 2) as i64;
    let cert = test_scaled_dichotomy(&sys.linear, 1.0, window, 1e-8)
        .unwrap()
        .into_certificate()
        .unwrap();
    (sys, cert, opts)
}

fn c9() -> Outcome {
    let (sys, cert, opts) = foliation_setup();
    let res = solve_foliation_point(&sys, &cert, &v(&[0.3, 0.2]), &v(&[0.1, 0.0]), &opts).unwrap();
    // Independent growth check on the returned trace: compare the weighted
    // norm over the second half of the horizon to the first.
    let weighted: Vec<f64> = res
        .q
        .iter()
        .enumerate()
        .map(|(n, q)| q.norm() * res.gamma1.powi(-(n as i32)))
        .collect();
    let half = weighted.len() / 2;
    let early = weighted[..half].iter().copied().fold(0.0, f64::max);
    let late = weighted[half..].iter().copied().fold(0.0, f64::max);
    outcome(
        res.residual <= 1e-8 && res.iterations <= 100 && late <= early && res.weighted_trend <= 0.0,
        format!(
            "residual {:.2e} after {} sweeps, weighted sup early {early:.3e} / late {late:.3e}, trend {:.3e}",
            res.residual, res.iterations, res.weighted_trend
        ),
    )
}

fn c10() -> Outcome {
    let sys = canonical(0.05, 0.0);
    let ev = ConjugacyEvaluator::for_indices(&sys, 8, ConjugacyOptions::default()).unwrap();
    let worst = square_grid(2, -1.0, 1.0, 21)
        .iter()
        .map(|x| (ev.forward(0, x).unwrap() - ev.forward(7, x).unwrap()).norm())
        .fold(0.0, f64::max);
    outcome(worst <= 1e-9, format!("max |h_0 - h_7| = {worst:.2e} on 441 points"))
}

fn c11() -> Outcome {
    // F(x) = 2x + 0.1 tanh^2 x, local chart U_0 = [-0.5, 0.5].
    let lin = LinearSystem::constant(DMatrix::from_element(1, 1, 2.0)).unwrap();
    let sys = NonautonomousSystem::new(lin, Nonlinearity::tanh_squared(0.1, 0.0, 1).unwrap());
    let ev = ConjugacyEvaluator::for_indices(&sys, 2, ConjugacyOptions::default()).unwrap();
    let g = |x: &DVector<f64>| x.map(|t| 0.1 * t.tanh().powi(2));
    let dom = FundamentalDomain::new(DMatrix::from_element(1, 1, 2.0), &g, 0.5, 64).unwrap();
    let local = |x: &DVector<f64>| ev.forward(0, x);
    let big_f = |x: f64| 2.0 * x + 0.1 * x.tanh().powi(2);
    let mut worst = 0.0_f64;
    let mut max_j = 0;
    for x in [0.2, -0.2, 0.7, -0.7, 2.0, -2.0, 3.5, 5.0, -5.0] {
        let hx = extend_by_fundamental_domains(&dom, &local, &v(&[x])).unwrap();
        let hfx = extend_by_fundamental_domains(&dom, &local, &v(&[big_f(x)])).unwrap();
        worst = worst.max((hfx.value[0] - 2.0 * hx.value[0]).abs());
        max_j = max_j.max(hx.pullbacks);
    }
    outcome(
        worst <= 1e-6 && max_j >= 3,
        format!("max |H(F x) - 2 H(x)| = {worst:.2e}, up to {max_j} pullbacks, |x| <= 5"),
    )
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn c12() -> Outcome {
    let mut files: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let out = tempfile::tempdir().unwrap();
    let mut failed = Vec::new();
    for f in &files {
        let status = Command::new(env!("CARGO_BIN_EXE_dichotomia"))
            .args(["verify", "--config"])
            .arg(f)
            .arg("--out")
            .arg(out.path())
            .output()
            .unwrap()
            .status;
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.path().join("verify.json")).unwrap()).unwrap();
        let named_ok = ["cocycle-identity", "projection-commutation", "dim-monotonicity", "determinism"]
            .iter()
            .all(|name| {
                report["result"]["checks"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .any(|c| c["name"] == *name && c["pass"] == true)
            });
        if !status.success() || !named_ok {
            failed.push(f.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    outcome(
        failed.is_empty() && !files.is_empty(),
        format!("{} configs, failures {failed:?}", files.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "spectrum of diag(0.5, 3)", c1),
        (2, "spectrum of the period-2 system", c2),
        (3, "spectrum of the nonuniform scalar family", c3),
        (4, "gap checker", c4),
        (5, "resolvent probe plateau and decay", c5),
        (6, "nonuniform dichotomy certificate and adapted norms", c6),
        (7, "conjugacy residuals and roundtrip", c7),
        (8, "derivatives against finite differences", c8),
        (9, "foliation solver", c9),
        (10, "autonomous input gives index-free h", c10),
        (11, "fundamental-domain extension", c11),
        (12, "verify suite on canonical configs", c12),
    ];
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let res = run();
        let known = KNOWN_UNATTAINABLE.contains(&id);
        let tag = match (res.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        if !res.pass && !known {
            unexpected += 1;
        }
        println!("[{tag}] {id:>2} {name}: {} ({:.2?})", res.detail, start.elapsed());
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
