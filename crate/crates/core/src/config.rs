//! JSON system descriptions.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cocycle::{Extension, Generator, LinearSystem, NonautonomousSystem, Nonlinearity};
use crate::error::{Error, Result};

/// Indices `|m| <=` this are checked for invertibility when a config is built.
const INVERTIBILITY_PROBE: i64 = 64;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dimension: usize,
    pub generator: GeneratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<NonlinearityConfig>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub kind: String,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub epsilon: f64,
    /// Declared Lipschitz constant of the derivative; defaults to the
    /// family's own bound.
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixParams {
    matrix: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagonalParams {
    diagonal: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PeriodicParams {
    table: Vec<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExponentialParams {
    rates: Vec<f64>,
    oscillation: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NonuniformParams {
    lambda: f64,
    epsilon: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TabulatedParams {
    start: i64,
    table: Vec<Vec<Vec<f64>>>,
    extension: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomParams {
    seed: u64,
    diagonal: Vec<f64>,
    spread: f64,
}

fn params<T: for<'de> Deserialize<'de>>(kind: &str, v: &Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("generator.params for '{kind}': {e}")))
}

fn matrix(rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(format!("matrix must be {dim}x{dim}")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn vector(v: &[f64], dim: usize, what: &str) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Config(format!("{what} must have {dim} entries, got {}", v.len())));
    }
    Ok(())
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn generator(&self) -> Result<Generator> {
        let d = self.dimension;
        let kind = self.generator.kind.as_str();
        let p = &self.generator.params;
        Ok(match kind {
            "constant" => Generator::Constant(matrix(&params::<MatrixParams>(kind, p)?.matrix, d)?),
            "constant-diagonal" => {
                let diag = params::<DiagonalParams>(kind, p)?.diagonal;
                vector(&diag, d, "diagonal")?;
                Generator::Constant(DMatrix::from_diagonal(&DVector::from_vec(diag)))
            }
            "periodic" => {
                let t = params::<PeriodicParams>(kind, p)?.table;
                if t.is_empty() {
                    return Err(Error::Config("periodic table is empty".into()));
                }
                Generator::Periodic(t.iter().map(|m| matrix(m, d)).collect::<Result<_>>()?)
            }
            "diagonal-exponential" => {
                let q = params::<ExponentialParams>(kind, p)?;
                vector(&q.rates, d, "rates")?;
                vector(&q.oscillation, d, "oscillation")?;
                Generator::DiagonalExponential {
                    rates: q.rates,
                    oscillation: q.oscillation,
                }
            }
            "nonuniform-scalar" => {
                let q = params::<NonuniformParams>(kind, p)?;
                if !(q.epsilon >= 0.0 && q.lambda > q.epsilon) {
                    return Err(Error::Config(format!(
                        "nonuniform-scalar needs lambda > epsilon >= 0 (got {}, {})",
                        q.lambda, q.epsilon
                    )));
                }
                Generator::DiagonalExponential {
                    rates: vec![q.lambda; d],
                    oscillation: vec![q.epsilon; d],
                }
            }
            "tabulated" => {
                let q = params::<TabulatedParams>(kind, p)?;
                if q.table.is_empty() {
                    return Err(Error::Config("tabulated table is empty".into()));
                }
                let extension = match q.extension.as_str() {
                    "periodic" => Extension::Periodic,
                    "freeze" => Extension::Freeze,
                    other => return Err(Error::Config(format!("unknown extension '{other}'"))),
                };
                Generator::Tabulated {
                    start: q.start,
                    table: q.table.iter().map(|m| matrix(m, d)).collect::<Result<_>>()?,
                    extension,
                }
            }
            "random-hyperbolic" => {
                let q = params::<RandomParams>(kind, p)?;
                vector(&q.diagonal, d, "diagonal")?;
                if !(q.spread >= 0.0) {
                    return Err(Error::Config("spread must be nonnegative".into()));
                }
                Generator::Random {
                    seed: q.seed,
                    diagonal: q.diagonal,
                    spread: q.spread,
                }
            }
            other => return Err(Error::Config(format!("unknown generator kind '{other}'"))),
        })
    }

    fn nonlinearity(&self) -> Result<Nonlinearity> {
        let Some(c) = &self.nonlinearity else {
            return Ok(Nonlinearity::zero());
        };
        let mut n = match c.kind.as_str() {
            "zero" => Nonlinearity::zero(),
            "tanh-squared" => Nonlinearity::tanh_squared(c.eta, c.epsilon, self.dimension)
                .map_err(|e| Error::Config(format!("nonlinearity: {e}")))?,
            other => return Err(Error::Config(format!("unknown nonlinearity kind '{other}'"))),
        };
        if let Some(b) = c.b {
            if !(b >= 0.0) {
                return Err(Error::Config("nonlinearity.B must be nonnegative".into()));
            }
            n.lipschitz = b;
        }
        Ok(n)
    }

    /// Every failure, including a singular or non-invertible generator, is
    /// reported as a configuration error.
    pub fn build(&self) -> Result<NonautonomousSystem> {
        if self.dimension == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        let linear = LinearSystem::new(self.dimension, self.generator()?)
            .map_err(|e| Error::Config(format!("generator: {e}")))?;
        for m in -INVERTIBILITY_PROBE..=INVERTIBILITY_PROBE {
            linear
                .inverse(m)
                .map_err(|e| Error::Config(format!("generator: {e}")))?;
        }
        Ok(NonautonomousSystem::new(linear, self.nonlinearity()?))
    }
}
