//! Dichotomy spectrum as a finite union of radial intervals, and the
//! spectral-gap conditions of the linearization theorem.

mod bohl;
mod gap;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::LinearSystem;
use crate::dichotomy::{DichotomyOutcome, DichotomyTester, DEFAULT_HORIZON, DEFAULT_SPAN, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::numeric::geo_mid;

pub use bohl::{bohl_exponents, dim_growth_subspace, BohlExponents, BOUNDARY_RESOLUTION, DEFAULT_BURN_IN, DEFAULT_MIN_SPAN};
pub use gap::{check_gap_condition, GapReport};

/// Points of the refinement sub-grid placed inside each bracket.
const SUBGRID: usize = 32;

#[derive(Clone, Debug)]
pub struct SpectrumOptions {
    pub window: i64,
    pub horizon: usize,
    pub span: usize,
    /// `(a_min, a_max, steps)` of the log-grid; derived from the
    /// propagator growth rates when absent.
    pub grid: Option<(f64, f64, usize)>,
    pub default_steps: usize,
    /// Relative endpoint tolerance of the bisection.
    pub tol: f64,
    /// Projection tolerance handed to each dichotomy test.
    pub dichotomy_tol: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            window: 200,
            horizon: DEFAULT_HORIZON,
            span: DEFAULT_SPAN,
            grid: None,
            default_steps: 120,
            tol: 1e-3,
            dichotomy_tol: DEFAULT_TOL,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralInterval {
    pub a: f64,
    pub b: f64,
    pub bundle_dim: usize,
    pub below_unit: bool,
    /// Last accepted scale below and first accepted scale above.
    pub enclosure: (f64, f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct Probe {
    pub a: f64,
    pub accept: bool,
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumResult {
    pub dimension: usize,
    /// Each interval stands for the annulus `a <= |z| <= b`.
    pub intervals: Vec<SpectralInterval>,
    pub k: usize,
    pub r: usize,
    pub hyperbolic: bool,
    pub window: i64,
    pub horizon: usize,
    pub tol: f64,
    pub grid: (f64, f64, usize),
    pub extension_policy: String,
    pub notes: Vec<String>,
    pub probe_log: Vec<Probe>,
}

impl SpectrumResult {
    /// Builds a result from given endpoints, for gap checks on
    /// hand-specified spectra.
    pub fn from_intervals(intervals: &[(f64, f64, usize)]) -> Result<Self> {
        let mut out = Vec::new();
        let mut prev = 0.0_f64;
        for &(a, b, dim) in intervals {
            if !(a > prev) || !(b >= a) || dim == 0 {
                return Err(Error::Parameter(format!(
                    "intervals must be positive, increasing and disjoint with positive dims; bad [{a}, {b}]"
                )));
            }
            prev = b;
            out.push(SpectralInterval {
                a,
                b,
                bundle_dim: dim,
                below_unit: b < 1.0,
                enclosure: (a, b),
            });
        }
        Ok(Self::assemble(out, 0, Vec::new(), Vec::new(), Default::default(), (0.0, 0.0, 0), String::new()))
    }

    fn assemble(
        intervals: Vec<SpectralInterval>,
        dimension: usize,
        notes: Vec<String>,
        probe_log: Vec<Probe>,
        opts: SpectrumOptions,
        grid: (f64, f64, usize),
        extension_policy: String,
    ) -> Self {
        let k = intervals.iter().filter(|i| i.b < 1.0).count();
        let hyperbolic = !intervals.iter().any(|i| i.a <= 1.0 && 1.0 <= i.b);
        let dimension = if dimension == 0 {
            intervals.iter().map(|i| i.bundle_dim).sum()
        } else {
            dimension
        };
        Self {
            dimension,
            r: intervals.len(),
            k,
            hyperbolic,
            intervals,
            window: opts.window,
            horizon: opts.horizon,
            tol: opts.tol,
            grid,
            extension_policy,
            notes,
            probe_log,
        }
    }

    /// `a, dim, accept` per probe, sorted by `a`.
    pub fn probes_csv(&self) -> String {
        let mut out = String::from("a,dim,accept\n");
        for p in &self.probe_log {
            let dim = p.dim.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{:.12e},{},{}", p.a, dim, p.accept);
        }
        out
    }
}

fn probe(tester: &DichotomyTester, a: f64, tol: f64) -> Result<Probe> {
    Ok(match tester.test(a, tol)? {
        DichotomyOutcome::Accepted(c) => Probe {
            a,
            accept: true,
            dim: Some(c.stable_dim),
            reason: None,
        },
        DichotomyOutcome::Rejected(r) => Probe {
            a,
            accept: false,
            dim: None,
            reason: Some(format!("{:?}: {}", r.reason, r.detail).to_lowercase()),
        },
    })
}

fn log_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let (l, h) = (lo.ln(), hi.ln());
    (0..steps)
        .map(|i| (l + (h - l) * i as f64 / (steps - 1) as f64).exp())
        .collect()
}

struct Sweep<'a> {
    tester: &'a DichotomyTester,
    opts: &'a SpectrumOptions,
    log: Vec<Probe>,
}

impl Sweep<'_> {
    fn probe(&mut self, a: f64) -> Result<Probe> {
        let p = probe(self.tester, a, self.opts.dichotomy_tol)?;
        self.log.push(p.clone());
        Ok(p)
    }

    /// Transition of `pred` between `good` (true) and `bad` (false), as a
    /// bracket `(last true, first false)` in the direction of travel. The
    /// bracket is narrowed until it is within `tol` both relatively and
    /// absolutely.
    fn bisect(&mut self, mut good: f64, mut bad: f64, pred: impl Fn(&Probe) -> bool) -> Result<(f64, f64)> {
        let tol = self.opts.tol;
        while (good.ln() - bad.ln()).abs() > tol.ln_1p() || (good - bad).abs() > tol {
            let mid = geo_mid(good, bad);
            if pred(&self.probe(mid)?) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok((good, bad))
    }

    /// Spectral intervals between an accepted probe `lo` of stable
    /// dimension `dlo` and an accepted probe `hi` of dimension `dhi > dlo`.
    fn resolve(&mut self, lo: f64, dlo: usize, hi: f64, dhi: usize, out: &mut Vec<SpectralInterval>) -> Result<()> {
        let (left_good, left_bad) = self.bisect(lo, hi, |p| p.dim == Some(dlo))?;
        let (right_good, right_bad) = self.bisect(hi, lo, |p| p.dim == Some(dhi))?;
        if left_bad < right_bad {
            let sub = log_grid(left_bad, right_bad, SUBGRID + 2);
            let inner = &sub[1..=SUBGRID];
            let probes: Vec<Probe> = inner
                .par_iter()
                .map(|&a| probe(self.tester, a, self.opts.dichotomy_tol))
                .collect::<Result<_>>()?;
            self.log.extend(probes.iter().cloned());
            if let Some(mid) = probes.iter().find(|p| matches!(p.dim, Some(d) if d > dlo && d < dhi)) {
                let dm = mid.dim.unwrap();
                self.resolve(lo, dlo, mid.a, dm, out)?;
                return self.resolve(mid.a, dm, hi, dhi, out);
            }
        }
        let mut a = geo_mid(left_good, left_bad);
        let mut b = geo_mid(right_good, right_bad);
        if a > b {
            // Both transitions fell into one tolerance cell: a point.
            let m = geo_mid(a, b);
            a = m;
            b = m;
        }
        out.push(SpectralInterval {
            a,
            b,
            bundle_dim: dhi - dlo,
            below_unit: b < 1.0,
            enclosure: (left_good, right_good),
        });
        Ok(())
    }
}

/// Probes `(A_m / a)` on a log-grid, locates the jumps of `a ↦ dim S_a`
/// and bisects each endpoint to `opts.tol`, relative and absolute.
pub fn dichotomy_spectrum(sys: &LinearSystem, opts: &SpectrumOptions) -> Result<SpectrumResult> {
    if !(opts.tol > 0.0) || !(opts.dichotomy_tol > 0.0) {
        return Err(Error::Parameter("tolerances must be positive".into()));
    }
    let d = sys.dim();
    let tester = DichotomyTester::new(sys, opts.window, opts.horizon, opts.span)?;
    let (rate_lo, rate_hi) = tester.rate_range();
    let suggested = ((rate_lo - 0.5).exp(), (rate_hi + 0.5).exp());
    let (a_min, a_max, steps) = opts.grid.unwrap_or((suggested.0, suggested.1, opts.default_steps));
    if !(a_min > 0.0 && a_max > a_min) || steps < 2 {
        return Err(Error::Parameter(format!(
            "grid {a_min}:{a_max}:{steps} must satisfy 0 < a_min < a_max and steps >= 2"
        )));
    }
    let grid = log_grid(a_min, a_max, steps);
    let coarse: Vec<Probe> = grid
        .par_iter()
        .map(|&a| probe(&tester, a, opts.dichotomy_tol))
        .collect::<Result<_>>()?;

    let first = &coarse[0];
    let last = &coarse[coarse.len() - 1];
    if first.dim != Some(0) || last.dim != Some(d) {
        return Err(Error::Coverage {
            lo: a_min,
            hi: a_max,
            suggested_lo: suggested.0,
            suggested_hi: suggested.1,
        });
    }

    let accepted: Vec<(f64, usize)> = coarse.iter().filter_map(|p| p.dim.map(|k| (p.a, k))).collect();
    if let Some(w) = accepted.windows(2).find(|w| w[1].1 < w[0].1) {
        return Err(Error::Consistency(format!(
            "dim S_a decreases from {} at a = {} to {} at a = {}",
            w[0].1, w[0].0, w[1].1, w[1].0
        )));
    }

    let mut notes = Vec::new();
    let mut sweep = Sweep {
        tester: &tester,
        opts,
        log: coarse.clone(),
    };
    let mut intervals = Vec::new();
    for w in accepted.windows(2) {
        let ((lo, dlo), (hi, dhi)) = (w[0], w[1]);
        if dhi > dlo {
            sweep.resolve(lo, dlo, hi, dhi, &mut intervals)?;
        } else {
            let between = coarse
                .iter()
                .filter(|p| p.a > lo && p.a < hi && !p.accept)
                .count();
            if between > 0 {
                notes.push(format!(
                    "{between} rejected probe(s) between a = {lo:.6} and a = {hi:.6} with equal dims {dlo}; treated as resolvent"
                ));
            }
        }
    }

    let mut log = sweep.log;
    log.sort_by(|x, y| x.a.total_cmp(&y.a));
    let total: usize = intervals.iter().map(|i| i.bundle_dim).sum();
    if total != d || intervals.len() > d {
        return Err(Error::Consistency(format!(
            "{} intervals with total bundle dimension {total} for a {d}-dimensional system",
            intervals.len()
        )));
    }
    notes.push("endpoints are bracket midpoints; enclosures give the last accepted scales on either side".into());
    Ok(SpectrumResult::assemble(
        intervals,
        d,
        notes,
        log,
        opts.clone(),
        (a_min, a_max, steps),
        sys.extension_policy(),
    ))
}
