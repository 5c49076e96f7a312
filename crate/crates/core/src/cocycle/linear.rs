use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::mix64;

/// Longest span `|m - n|` evaluated by direct repeated multiplication.
/// Longer spans must go through the QR-accumulated growth estimator.
pub const MAX_DIRECT_SPAN: u64 = 400;

/// How a finite table is continued outside its stored range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extension {
    /// Index modulo the table length.
    Periodic,
    /// Clamp to the first / last stored matrix.
    Freeze,
}

impl Extension {
    pub fn as_str(&self) -> &'static str {
        match self {
            Extension::Periodic => "periodic",
            Extension::Freeze => "freeze",
        }
    }
}

/// Rule producing the matrix `A_m` for every integer `m`.
#[derive(Clone, Debug)]
pub enum Generator {
    Constant(DMatrix<f64>),
    /// `A_m = table[m mod p]`.
    Periodic(Vec<DMatrix<f64>>),
    /// `A_m = diag(exp(-rate_i + osc_i * ((m+1)(-1)^(m+1) - m(-1)^m)))`.
    DiagonalExponential {
        rates: Vec<f64>,
        oscillation: Vec<f64>,
    },
    /// Stored matrices for `start <= m < start + table.len()`.
    Tabulated {
        start: i64,
        table: Vec<DMatrix<f64>>,
        extension: Extension,
    },
    /// `A_m = diag(diagonal) + spread * R_m`, `R_m` uniform in `[-1, 1]`
    /// drawn from a generator seeded by `(seed, m)`.
    Random {
        seed: u64,
        diagonal: Vec<f64>,
        spread: f64,
    },
    /// `A_m = inner_m / factor`.
    Scaled { inner: Box<Generator>, factor: f64 },
}

impl Generator {
    fn matrix(&self, m: i64, dim: usize) -> DMatrix<f64> {
        match self {
            Generator::Constant(a) => a.clone(),
            Generator::Periodic(table) => {
                let p = table.len() as i64;
                table[m.rem_euclid(p) as usize].clone()
            }
            Generator::DiagonalExponential { rates, oscillation } => {
                let sign = |k: i64| if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                let mf = m as f64;
                let wobble = (mf + 1.0) * sign(m + 1) - mf * sign(m);
                DMatrix::from_diagonal(&DVector::from_iterator(
                    dim,
                    rates
                        .iter()
                        .zip(oscillation)
                        .map(|(r, e)| (-r + e * wobble).exp()),
                ))
            }
            Generator::Tabulated {
                start,
                table,
                extension,
            } => {
                let len = table.len() as i64;
                let offset = m - start;
                let idx = match extension {
                    Extension::Periodic => offset.rem_euclid(len),
                    Extension::Freeze => offset.clamp(0, len - 1),
                };
                table[idx as usize].clone()
            }
            Generator::Random {
                seed,
                diagonal,
                spread,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix64(*seed ^ mix64(m as u64)));
                let mut a = DMatrix::from_diagonal(&DVector::from_column_slice(diagonal));
                for v in a.iter_mut() {
                    *v += spread * rng.random_range(-1.0..=1.0);
                }
                a
            }
            Generator::Scaled { inner, factor } => inner.matrix(m, dim) / *factor,
        }
    }

    fn describe_extension(&self) -> String {
        match self {
            Generator::Constant(_) => "constant on all of Z".into(),
            Generator::Periodic(t) => format!("periodic with period {}", t.len()),
            Generator::DiagonalExponential { .. } => "closed form on all of Z".into(),
            Generator::Tabulated {
                start,
                table,
                extension,
            } => format!(
                "tabulated on [{}, {}], {} extension outside",
                start,
                start + table.len() as i64 - 1,
                extension.as_str()
            ),
            Generator::Random { seed, .. } => format!("seeded random family (seed {seed})"),
            Generator::Scaled { inner, factor } => {
                format!("{} (scaled by 1/{factor})", inner.describe_extension())
            }
        }
    }
}

/// Invertible matrix sequence `(A_m)` on `R^d`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    dim: usize,
    generator: Generator,
}

impl LinearSystem {
    pub fn new(dim: usize, generator: Generator) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("dimension must be positive".into()));
        }
        let check = |a: &DMatrix<f64>| -> Result<()> {
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::Parameter(format!(
                    "matrix is {}x{}, expected {dim}x{dim}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            Ok(())
        };
        match &generator {
            Generator::Constant(a) => check(a)?,
            Generator::Periodic(t) | Generator::Tabulated { table: t, .. } => {
                if t.is_empty() {
                    return Err(Error::Parameter("matrix table is empty".into()));
                }
                t.iter().try_for_each(check)?;
            }
            Generator::DiagonalExponential { rates, oscillation } => {
                if rates.len() != dim || oscillation.len() != dim {
                    return Err(Error::Parameter(format!(
                        "diagonal-exponential family needs {dim} rates and {dim} oscillation amplitudes"
                    )));
                }
            }
            Generator::Random {
                diagonal, spread, ..
            } => {
                if diagonal.len() != dim {
                    return Err(Error::Parameter(format!("random family needs {dim} diagonal entries")));
                }
                if !(*spread >= 0.0) {
                    return Err(Error::Parameter("random spread must be nonnegative".into()));
                }
            }
            Generator::Scaled { factor, .. } => {
                if !(*factor > 0.0) {
                    return Err(Error::Parameter("scale factor must be positive".into()));
                }
            }
        }
        Ok(Self { dim, generator })
    }

    pub fn constant(a: DMatrix<f64>) -> Result<Self> {
        let dim = a.nrows();
        Self::new(dim, Generator::Constant(a))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// `A_m`.
    pub fn matrix(&self, m: i64) -> DMatrix<f64> {
        self.generator.matrix(m, self.dim)
    }

    /// `A_m^{-1}`, or an invertibility error naming `m`.
    pub fn inverse(&self, m: i64) -> Result<DMatrix<f64>> {
        let a = self.matrix(m);
        let lu = a.lu();
        let det = lu.determinant();
        if !(det.abs() > 1e-300) || !det.is_finite() {
            return Err(Error::Singular { index: m, det });
        }
        lu.try_inverse().ok_or(Error::Singular { index: m, det })
    }

    /// The sequence `(A_m / factor)`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.dim,
            Generator::Scaled {
                inner: Box::new(self.generator.clone()),
                factor,
            },
        )
    }

    /// Smallest `|det A_m|` over `lo <= m <= hi`.
    pub fn invertibility_margin(&self, lo: i64, hi: i64) -> f64 {
        (lo..=hi)
            .map(|m| self.matrix(m).determinant().abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Human-readable statement of the out-of-window policy, echoed in
    /// every report.
    pub fn extension_policy(&self) -> String {
        self.generator.describe_extension()
    }
}

/// `𝒜(m, n)`: forward product for `m > n`, identity for `m = n`, product
/// of inverses for `m < n`.
pub fn propagator(sys: &LinearSystem, m: i64, n: i64) -> Result<DMatrix<f64>> {
    let span = m.abs_diff(n);
    if span > MAX_DIRECT_SPAN {
        return Err(Error::SpanTooLong {
            span,
            limit: MAX_DIRECT_SPAN,
        });
    }
    let d = sys.dim();
    let mut out = DMatrix::identity(d, d);
    if m > n {
        for k in n..m {
            out = sys.matrix(k) * out;
        }
    } else if m < n {
        for k in m..n {
            out *= sys.inverse(k)?;
        }
    }
    Ok(out)
}

/// Memoizing front end to [`propagator`]; the cache is internally
/// synchronized so one instance can be shared across threads.
#[derive(Debug)]
pub struct Propagator {
    system: LinearSystem,
    cache: Mutex<HashMap<(i64, i64), DMatrix<f64>>>,
}

impl Propagator {
    pub fn new(system: LinearSystem) -> Self {
        Self {
            system,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn get(&self, m: i64, n: i64) -> Result<DMatrix<f64>> {
        if let Some(hit) = self.cache.lock().unwrap().get(&(m, n)) {
            return Ok(hit.clone());
        }
        let value = propagator(&self.system, m, n)?;
        self.cache.lock().unwrap().insert((m, n), value.clone());
        Ok(value)
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    /// Test hook: overwrite a cache entry with a wrong value so that the
    /// invariant suites can demonstrate they detect corruption.
    #[doc(hidden)]
    pub fn inject_fault(&self, m: i64, n: i64, value: DMatrix<f64>) {
        self.cache.lock().unwrap().insert((m, n), value);
    }
}
