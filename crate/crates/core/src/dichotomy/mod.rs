//! Scaled strong exponential dichotomies: projections, fitted constants and
//! adapted norms.

mod norms;
mod tester;

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::cocycle::LinearSystem;
use crate::error::{Error, Result};

pub use norms::{
    adapted_norm, check_uniform_dichotomy, verify_norm_family, AdaptedNormFamily, NormFamilyReport,
    UniformDichotomyReport,
};
pub use tester::{DichotomyTester, SPLIT_GAP_MIN};

/// Projection horizon `T`.
pub const DEFAULT_HORIZON: usize = 40;
/// Sup horizon `K` of the adapted norms.
pub const DEFAULT_NORM_HORIZON: usize = 60;
/// Longest `|m - n|` used to fit constants.
pub const DEFAULT_SPAN: usize = 60;
/// Projections are built this far past the window so that adapted norms
/// can be evaluated up to its edge.
pub const DEFAULT_EXTENSION: i64 = DEFAULT_NORM_HORIZON as i64 + 1;
/// Relative tolerance on commutation / idempotence of the projections.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionReason {
    /// No clean splitting: the scale sits in the spectrum.
    Spectral,
    /// A splitting exists but a "decaying" family does not decay.
    Growth,
}

#[derive(Clone, Debug, Serialize)]
pub struct Rejection {
    pub scale: f64,
    pub reason: RejectionReason,
    pub detail: String,
    /// `(m, n)` of the offending pair.
    pub location: Option<(i64, i64)>,
}

/// Worst slack of one inequality: `max ‖·‖ / bound` over the window.
#[derive(Clone, Debug, Serialize)]
pub struct InequalityResidual {
    pub inequality: String,
    pub samples: usize,
    pub worst_ratio: f64,
    pub at: (i64, i64),
}

/// Projections and fitted constants for `(A_m / scale)` on `[-window, window]`.
#[derive(Clone, Debug, Serialize)]
pub struct DichotomyCertificate {
    pub scale: f64,
    pub window: i64,
    pub horizon: usize,
    pub span: usize,
    pub stable_dim: usize,
    #[serde(rename = "D")]
    pub big_d: f64,
    pub lambda: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub residuals: Vec<InequalityResidual>,
    pub commutation_error: f64,
    pub idempotence_error: f64,
    pub tolerance: f64,
    pub extension_policy: String,
    /// Projections are stored for `|m| <= reach` (at least `window`).
    pub reach: i64,
    #[serde(skip)]
    pub(crate) projections: Arc<Vec<DMatrix<f64>>>,
}

impl DichotomyCertificate {
    pub fn dim(&self) -> usize {
        self.projections.first().map(|p| p.nrows()).unwrap_or(0)
    }

    pub fn covers(&self, m: i64) -> bool {
        m.abs() <= self.reach
    }

    /// `P_m`, available for `|m| <= reach`.
    pub fn projection(&self, m: i64) -> Result<&DMatrix<f64>> {
        if !self.covers(m) {
            return Err(Error::Range {
                index: m,
                window: self.reach,
            });
        }
        Ok(&self.projections[(m + self.reach) as usize])
    }

    /// `Q_m = Id - P_m`.
    pub fn complement(&self, m: i64) -> Result<DMatrix<f64>> {
        let p = self.projection(m)?;
        Ok(DMatrix::identity(p.nrows(), p.ncols()) - p)
    }

    /// One row per window index: `m, P_m[0,0], P_m[0,1], ...` (row-major).
    pub fn projections_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::from("m");
        for r in 0..d {
            for c in 0..d {
                let _ = write!(out, ",p{r}{c}");
            }
        }
        out.push('\n');
        for (i, p) in self.projections.iter().enumerate() {
            let _ = write!(out, "{}", i as i64 - self.reach);
            for r in 0..d {
                for c in 0..d {
                    let _ = write!(out, ",{:.17e}", p[(r, c)]);
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum DichotomyOutcome {
    Accepted(DichotomyCertificate),
    Rejected(Rejection),
}

impl DichotomyOutcome {
    pub fn accepted(&self) -> Option<&DichotomyCertificate> {
        match self {
            DichotomyOutcome::Accepted(c) => Some(c),
            DichotomyOutcome::Rejected(_) => None,
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.accepted().is_some()
    }

    pub fn into_certificate(self) -> std::result::Result<DichotomyCertificate, Rejection> {
        match self {
            DichotomyOutcome::Accepted(c) => Ok(c),
            DichotomyOutcome::Rejected(r) => Err(r),
        }
    }
}

/// `P_n` for `|n| <= window` at scale `a`, using horizon `T`.
pub fn estimate_projections(
    sys: &LinearSystem,
    a: f64,
    window: i64,
    horizon: usize,
) -> Result<Vec<DMatrix<f64>>> {
    if !(a > 0.0) {
        return Err(Error::Parameter(format!("scale must be positive, got {a}")));
    }
    let tester = DichotomyTester::new(sys, window, horizon, DEFAULT_SPAN.min(horizon.max(3)))?;
    let k = tester.split(a).map_err(|f| Error::AmbiguousSplitting {
        index: f.index,
        gap: f.gap,
        scale: a,
    })?;
    tester.projections_for(k).map_err(|(index, _)| Error::AmbiguousSplitting {
        index,
        gap: 0.0,
        scale: a,
    })
}

/// Tests `(A_m / a)` for a strong exponential dichotomy on `[-window, window]`
/// with the default horizon and fitting span. Projections of an accepted
/// certificate extend [`DEFAULT_EXTENSION`] indices past the window.
pub fn test_scaled_dichotomy(sys: &LinearSystem, a: f64, window: i64, tol: f64) -> Result<DichotomyOutcome> {
    DichotomyTester::with_extension(sys, window, DEFAULT_EXTENSION, DEFAULT_HORIZON, DEFAULT_SPAN)?.test(a, tol)
}
