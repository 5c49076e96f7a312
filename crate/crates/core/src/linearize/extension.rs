use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

const INVERSE_TOL: f64 = 1e-15;
const INVERSE_MAX_ITERS: usize = 200;
const BOUNDARY_SAMPLES: usize = 64;

/// Expanding map `F₊ = A₊ + g` and the ball `U₀ = {‖x‖ <= radius}` on
/// which a local conjugacy is known.
pub struct FundamentalDomain<'a> {
    a_plus: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    nonlinear: &'a (dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
    pub radius: f64,
    pub max_pullbacks: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Extended {
    pub value: Vec<f64>,
    /// `j` with `F₊^{-j}(x) ∈ U₀` minimal.
    pub pullbacks: usize,
}

impl<'a> FundamentalDomain<'a> {
    /// Checks on boundary samples that `F₊^{-1}` maps `∂U₀` into the
    /// interior of `U₀`, i.e. `U₀ ⊂ int F₊(U₀)`.
    pub fn new(
        a_plus: DMatrix<f64>,
        nonlinear: &'a (dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
        radius: f64,
        max_pullbacks: usize,
    ) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!("radius must be positive, got {radius}")));
        }
        let a_inv = a_plus
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Domain("A_+ is not invertible".into()))?;
        let dom = Self {
            a_plus,
            a_inv,
            nonlinear,
            radius,
            max_pullbacks,
        };
        let d = dom.a_plus.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples: Vec<DVector<f64>> = if d == 1 {
            vec![DVector::from_element(1, radius), DVector::from_element(1, -radius)]
        } else {
            (0..BOUNDARY_SAMPLES)
                .map(|_| {
                    let v = DVector::<f64>::from_fn(d, |_, _| rng.random_range(-1.0..=1.0));
                    let n = v.norm().max(1e-300);
                    v * (radius / n)
                })
                .collect()
        };
        for z in &samples {
            let pre = dom.pull_back(z)?;
            if pre.norm() >= radius {
                return Err(Error::Domain(format!(
                    "U0 is not nested in F(U0): preimage of boundary point {:?} has norm {} >= {radius}",
                    z.as_slice(),
                    pre.norm()
                )));
            }
        }
        Ok(dom)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.norm() <= self.radius
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a_plus * x + (self.nonlinear)(x)
    }

    /// `F₊^{-1}(y)` by iterating `x = A₊^{-1}(y - g(x))`.
    pub fn pull_back(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = &self.a_inv * y;
        for _ in 0..INVERSE_MAX_ITERS {
            let next = &self.a_inv * (y - (self.nonlinear)(&x));
            let delta = (&next - &x).norm();
            x = next;
            if delta <= INVERSE_TOL * x.norm().max(1.0) {
                return Ok(x);
            }
        }
        Err(Error::Domain("F_+^{-1} iteration did not converge".into()))
    }
}

/// `A₊^j ψ(F₊^{-j}(x))` for the least `j` with `F₊^{-j}(x) ∈ U₀`.
pub fn extend_by_fundamental_domains(
    dom: &FundamentalDomain<'_>,
    local: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x: &DVector<f64>,
) -> Result<Extended> {
    let mut z = x.clone();
    let mut j = 0;
    while !dom.contains(&z) {
        if j >= dom.max_pullbacks {
            return Err(Error::Escape {
                steps: dom.max_pullbacks,
            });
        }
        z = dom.pull_back(&z)?;
        j += 1;
    }
    let mut value = local(&z)?;
    for _ in 0..j {
        value = &dom.a_plus * value;
    }
    Ok(Extended {
        value: value.iter().copied().collect(),
        pullbacks: j,
    })
}
