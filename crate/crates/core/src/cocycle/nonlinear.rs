use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::linear::LinearSystem;
use crate::error::{Error, Result};
use crate::numeric::{is_finite_vec, spectral_norm};

/// Backward-step fixed-point settings.
const BACKWARD_TOL: f64 = 1e-12;
const BACKWARD_MAX_ITERS: usize = 200;

/// `sup_t |d/dt tanh^2 t| = 4 / (3 sqrt 3)`.
pub const TANH2_SLOPE_SUP: f64 = 0.769_800_358_919_501;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearKind {
    Zero,
    /// `f_m(v) = eta * exp(-eps |m+1|) * (tanh^2 v_1, ..., tanh^2 v_d)`.
    TanhSquared,
}

/// The perturbation sequence `(f_m)` together with its declared constants.
#[derive(Clone, Debug, Serialize)]
pub struct Nonlinearity {
    pub kind: NonlinearKind,
    /// Amplitude of the saturating family.
    pub amplitude: f64,
    /// Lipschitz constant `B` of the derivative.
    pub lipschitz: f64,
    /// Bound `eta` on `||Df_m|| e^{eps|m+1|}`.
    pub sup_deriv: f64,
    /// Nonuniform decay rate `eps`.
    pub epsilon: f64,
    /// `M` with `sup_x ||f_m(x)|| e^{eps|m+1|} <= M`, when finite.
    pub bounded_sup: Option<f64>,
}

impl Nonlinearity {
    pub fn zero() -> Self {
        Self {
            kind: NonlinearKind::Zero,
            amplitude: 0.0,
            lipschitz: 0.0,
            sup_deriv: 0.0,
            epsilon: 0.0,
            bounded_sup: Some(0.0),
        }
    }

    pub fn tanh_squared(eta: f64, epsilon: f64, dim: usize) -> Result<Self> {
        if !(eta >= 0.0) || !(epsilon >= 0.0) {
            return Err(Error::Parameter("eta and epsilon must be nonnegative".into()));
        }
        Ok(Self {
            kind: NonlinearKind::TanhSquared,
            amplitude: eta,
            // d/dt (2 tanh t sech^2 t) peaks at t = 0 with value 2.
            lipschitz: 2.0 * eta,
            sup_deriv: eta,
            epsilon,
            bounded_sup: Some(eta * (dim as f64).sqrt()),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.kind == NonlinearKind::Zero || self.amplitude == 0.0
    }

    fn weight(&self, m: i64) -> f64 {
        self.amplitude * (-self.epsilon * (m + 1).unsigned_abs() as f64).exp()
    }

    /// `f_m(x)`.
    pub fn eval(&self, m: i64, x: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            NonlinearKind::Zero => DVector::zeros(x.len()),
            NonlinearKind::TanhSquared => {
                let w = self.weight(m);
                x.map(|t| {
                    let th = t.tanh();
                    w * th * th
                })
            }
        }
    }

    /// `Df_m(x)`.
    pub fn jacobian(&self, m: i64, x: &DVector<f64>) -> DMatrix<f64> {
        match self.kind {
            NonlinearKind::Zero => DMatrix::zeros(x.len(), x.len()),
            NonlinearKind::TanhSquared => {
                let w = self.weight(m);
                DMatrix::from_diagonal(&x.map(|t| {
                    let th = t.tanh();
                    w * 2.0 * th * (1.0 - th * th)
                }))
            }
        }
    }
}

/// Worst sampled ratios against the declared constants.
#[derive(Clone, Debug, Serialize)]
pub struct NonlinearityReport {
    pub samples: usize,
    /// max of `||Df_{m-1}(x) - Df_{m-1}(y)|| / (B e^{-eps|m|} ||x - y||)`.
    pub derivative_lipschitz_ratio: f64,
    /// max of `||f_{m-1}(x)|| / (B e^{-eps|m|} ||x||^2)`.
    pub quadratic_ratio: f64,
    /// max of `||Df_{m-1}(x)|| / (eta e^{-eps|m|})`.
    pub sup_deriv_ratio: f64,
    pub zero_fixed: bool,
    pub pass: bool,
}

impl Nonlinearity {
    /// Samples random `(x, y, m)` and checks the declared bounds with 1%
    /// slack.
    pub fn check_certificate(
        &self,
        dim: usize,
        samples: usize,
        window: i64,
        radius: f64,
        seed: u64,
    ) -> NonlinearityReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lip = 0.0_f64;
        let mut quad = 0.0_f64;
        let mut sup = 0.0_f64;
        let mut zero_fixed = true;
        for _ in 0..samples {
            let m: i64 = rng.random_range(-window..=window);
            let x = DVector::from_fn(dim, |_, _| rng.random_range(-radius..=radius));
            let y = DVector::from_fn(dim, |_, _| rng.random_range(-radius..=radius));
            let decay = (-self.epsilon * m.unsigned_abs() as f64).exp();
            let dx = self.jacobian(m - 1, &x);
            let dy = self.jacobian(m - 1, &y);
            let dist = (&x - &y).norm();
            if self.lipschitz > 0.0 && dist > 0.0 {
                lip = lip.max(spectral_norm(&(&dx - &dy)) / (self.lipschitz * decay * dist));
                let xn = x.norm();
                if xn > 0.0 {
                    quad = quad.max(self.eval(m - 1, &x).norm() / (self.lipschitz * decay * xn * xn));
                }
            }
            if self.sup_deriv > 0.0 {
                sup = sup.max(spectral_norm(&dx) / (self.sup_deriv * decay));
            }
            let origin = DVector::zeros(dim);
            if self.eval(m, &origin).norm() != 0.0 || self.jacobian(m, &origin).norm() != 0.0 {
                zero_fixed = false;
            }
        }
        let pass = zero_fixed && lip <= 1.01 && quad <= 1.01 && sup <= 1.01;
        NonlinearityReport {
            samples,
            derivative_lipschitz_ratio: lip,
            quadratic_ratio: quad,
            sup_deriv_ratio: sup,
            zero_fixed,
            pass,
        }
    }
}

/// `x_{n+1} = A_n x_n + f_n(x_n)`.
#[derive(Clone, Debug)]
pub struct NonautonomousSystem {
    pub linear: LinearSystem,
    pub nonlinear: Nonlinearity,
}

impl NonautonomousSystem {
    pub fn new(linear: LinearSystem, nonlinear: Nonlinearity) -> Self {
        Self { linear, nonlinear }
    }

    pub fn linear_only(linear: LinearSystem) -> Self {
        Self::new(linear, Nonlinearity::zero())
    }

    pub fn dim(&self) -> usize {
        self.linear.dim()
    }

    /// `F_m(x) = A_m x + f_m(x)`.
    pub fn step(&self, m: i64, x: &DVector<f64>) -> DVector<f64> {
        self.linear.matrix(m) * x + self.nonlinear.eval(m, x)
    }

    /// `A_m + Df_m(x)`.
    pub fn step_jacobian(&self, m: i64, x: &DVector<f64>) -> DMatrix<f64> {
        self.linear.matrix(m) + self.nonlinear.jacobian(m, x)
    }

    /// Solves `F_m(x) = y` by iterating `x = A_m^{-1}(y - f_m(x))`.
    pub fn step_back(&self, m: i64, y: &DVector<f64>) -> Result<DVector<f64>> {
        let inv = self.linear.inverse(m)?;
        let mut x = &inv * y;
        if self.nonlinear.is_zero() {
            return Ok(x);
        }
        let mut last = f64::INFINITY;
        for it in 0..BACKWARD_MAX_ITERS {
            let next = &inv * (y - self.nonlinear.eval(m, &x));
            let delta = (&next - &x).norm();
            x = next;
            if !is_finite_vec(&x) {
                break;
            }
            if delta <= BACKWARD_TOL * x.norm().max(1.0) {
                return Ok(x);
            }
            // Increasing updates after the first few sweeps means the map
            // is not contracting.
            if it > 5 && delta > last {
                return Err(Error::BackwardSolve {
                    index: m,
                    iterations: it + 1,
                    residual: delta,
                });
            }
            last = delta;
        }
        Err(Error::BackwardSolve {
            index: m,
            iterations: BACKWARD_MAX_ITERS,
            residual: last,
        })
    }
}

/// States `ξ_n` for `first <= n <= first + len - 1`.
#[derive(Clone, Debug)]
pub struct Orbit {
    pub first: i64,
    pub states: Vec<DVector<f64>>,
}

impl Orbit {
    pub fn last(&self) -> i64 {
        self.first + self.states.len() as i64 - 1
    }

    pub fn get(&self, n: i64) -> Option<&DVector<f64>> {
        if n < self.first {
            return None;
        }
        self.states.get((n - self.first) as usize)
    }

    pub fn at(&self, n: i64) -> &DVector<f64> {
        self.get(n)
            .unwrap_or_else(|| panic!("index {n} outside orbit [{}, {}]", self.first, self.last()))
    }
}

/// Orbit of the nonlinear maps through `(m, x)` on `n_lo <= n <= n_hi`.
pub fn nonlinear_orbit(
    sys: &NonautonomousSystem,
    m: i64,
    x: &DVector<f64>,
    n_lo: i64,
    n_hi: i64,
) -> Result<Orbit> {
    if !(n_lo <= m && m <= n_hi) {
        return Err(Error::Parameter(format!(
            "start index {m} outside [{n_lo}, {n_hi}]"
        )));
    }
    if x.len() != sys.dim() {
        return Err(Error::Parameter("state dimension mismatch".into()));
    }
    let len = (n_hi - n_lo + 1) as usize;
    let mut states = vec![DVector::zeros(0); len];
    states[(m - n_lo) as usize] = x.clone();
    for n in m..n_hi {
        let next = sys.step(n, &states[(n - n_lo) as usize]);
        if !is_finite_vec(&next) {
            return Err(Error::Divergence { last_finite: n });
        }
        states[(n + 1 - n_lo) as usize] = next;
    }
    for n in (n_lo..m).rev() {
        let prev = sys.step_back(n, &states[(n + 1 - n_lo) as usize])?;
        if !is_finite_vec(&prev) {
            return Err(Error::Divergence { last_finite: n + 1 });
        }
        states[(n - n_lo) as usize] = prev;
    }
    Ok(Orbit {
        first: n_lo,
        states,
    })
}
