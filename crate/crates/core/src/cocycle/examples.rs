use nalgebra::{DMatrix, DVector};

use super::linear::{Generator, LinearSystem};
use super::nonlinear::{NonautonomousSystem, Nonlinearity};
use crate::error::{Error, Result};

/// The documented test-system families.
#[derive(Clone, Debug)]
pub enum ExampleKind {
    /// `A_m = diag(diagonal)`.
    ConstantDiagonal { diagonal: Vec<f64> },
    /// `A_m = table[m mod p]`.
    Periodic { table: Vec<DMatrix<f64>> },
    /// `A_m = exp(-lambda + eps((m+1)(-1)^{m+1} - m(-1)^m))` in every
    /// diagonal slot.
    NonuniformScalar {
        lambda: f64,
        epsilon: f64,
        dimension: usize,
    },
    /// Seeded perturbation of a hyperbolic diagonal.
    RandomHyperbolic {
        seed: u64,
        diagonal: Vec<f64>,
        spread: f64,
    },
}

/// Optional saturating perturbation `eta e^{-eps|m+1|} tanh^2`.
#[derive(Clone, Copy, Debug)]
pub struct SaturatingParams {
    pub eta: f64,
    pub epsilon: f64,
}

pub fn make_example(
    kind: &ExampleKind,
    nonlinearity: Option<SaturatingParams>,
) -> Result<NonautonomousSystem> {
    let linear = match kind {
        ExampleKind::ConstantDiagonal { diagonal } => {
            LinearSystem::constant(DMatrix::from_diagonal(&DVector::from_column_slice(diagonal)))?
        }
        ExampleKind::Periodic { table } => {
            let dim = table.first().map(|a| a.nrows()).unwrap_or(0);
            LinearSystem::new(dim, Generator::Periodic(table.clone()))?
        }
        ExampleKind::NonuniformScalar {
            lambda,
            epsilon,
            dimension,
        } => {
            if !(*epsilon >= 0.0) {
                return Err(Error::Parameter("epsilon must be nonnegative".into()));
            }
            if lambda <= epsilon {
                return Err(Error::Parameter(format!(
                    "nonuniform family needs lambda > epsilon (got lambda = {lambda}, epsilon = {epsilon}); \
                     the dichotomy exponent lambda - epsilon would be non-positive"
                )));
            }
            LinearSystem::new(
                *dimension,
                Generator::DiagonalExponential {
                    rates: vec![*lambda; *dimension],
                    oscillation: vec![*epsilon; *dimension],
                },
            )?
        }
        ExampleKind::RandomHyperbolic {
            seed,
            diagonal,
            spread,
        } => {
            if diagonal.iter().any(|v| (v.abs() - 1.0).abs() <= 2.0 * spread * diagonal.len() as f64) {
                return Err(Error::Parameter(
                    "random hyperbolic family: spread too large for the diagonal to stay off the unit circle".into(),
                ));
            }
            LinearSystem::new(
                diagonal.len(),
                Generator::Random {
                    seed: *seed,
                    diagonal: diagonal.clone(),
                    spread: *spread,
                },
            )?
        }
    };
    let nonlinear = match nonlinearity {
        None => Nonlinearity::zero(),
        Some(p) => Nonlinearity::tanh_squared(p.eta, p.epsilon, linear.dim())?,
    };
    Ok(NonautonomousSystem::new(linear, nonlinear))
}
