use nalgebra::DMatrix;
use serde::Serialize;

use crate::cocycle::LinearSystem;
use crate::error::{Error, Result};

pub const DEFAULT_BURN_IN: usize = 50;
pub const DEFAULT_MIN_SPAN: usize = 20;

/// Resolution of [`dim_growth_subspace`] in log scale.
pub const BOUNDARY_RESOLUTION: f64 = 1e-6;

/// Upper and lower Bohl exponents of the QR-diagonal growth rates.
#[derive(Clone, Debug, Serialize)]
pub struct BohlExponents {
    pub window: i64,
    pub min_span: usize,
    /// `inf` over pairs of the averaged `ln |R_ii|`, per column.
    pub lower: Vec<f64>,
    /// `sup` over pairs, per column.
    pub upper: Vec<f64>,
}

/// Discrete QR method: `A_n Q_n = Q_{n+1} R_n`, re-orthogonalized every
/// step, started `burn_in` steps before `-window`. Exponents are sup / inf
/// over all pairs `-window <= s < e <= window`, `e - s >= min_span`, of the
/// average of `ln |(R_n)_ii|` over `s <= n < e`.
pub fn bohl_exponents(sys: &LinearSystem, window: i64, burn_in: usize, min_span: usize) -> Result<BohlExponents> {
    if window < 1 || min_span == 0 || 2 * window < min_span as i64 {
        return Err(Error::Diagnostics(format!(
            "window {window} too short for Bohl pairs of span {min_span}"
        )));
    }
    let d = sys.dim();
    let mut q = DMatrix::<f64>::identity(d, d);
    let start = -window - burn_in as i64;
    let steps = (2 * window) as usize;
    // prefix[i][t] = sum of ln|R_ii| over the first t recorded steps.
    let mut prefix = vec![vec![0.0_f64; steps + 1]; d];
    for n in start..window {
        let z = sys.matrix(n) * &q;
        let qr = z.qr();
        let mut qn = qr.q();
        let r = qr.r();
        let t = n + window;
        for i in 0..d {
            let rii = r[(i, i)];
            if rii < 0.0 {
                qn.column_mut(i).neg_mut();
            }
            if t >= 0 {
                let t = t as usize;
                prefix[i][t + 1] = prefix[i][t] + rii.abs().ln();
            }
        }
        q = qn;
    }
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    for i in 0..d {
        let p = &prefix[i];
        for s in 0..=steps {
            for e in (s + min_span)..=steps {
                let avg = (p[e] - p[s]) / (e - s) as f64;
                lower[i] = lower[i].min(avg);
                upper[i] = upper[i].max(avg);
            }
        }
    }
    Ok(BohlExponents {
        window,
        min_span,
        lower,
        upper,
    })
}

/// `dim S_a`: the number of growth exponents whose whole Bohl range lies
/// strictly below `ln a`.
pub fn dim_growth_subspace(sys: &LinearSystem, a: f64, window: i64) -> Result<usize> {
    if !(a > 0.0) {
        return Err(Error::Parameter(format!("scale must be positive, got {a}")));
    }
    let bohl = bohl_exponents(sys, window, DEFAULT_BURN_IN, DEFAULT_MIN_SPAN)?;
    let la = a.ln();
    let mut count = 0;
    for (lo, hi) in bohl.lower.iter().zip(&bohl.upper) {
        if la >= lo - BOUNDARY_RESOLUTION && la <= hi + BOUNDARY_RESOLUTION {
            return Err(Error::Boundary {
                scale: a,
                lower: lo.exp(),
                upper: hi.exp(),
            });
        }
        if *hi < la {
            count += 1;
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn diag_sys() -> LinearSystem {
        LinearSystem::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 3.0]))).unwrap()
    }

    #[test]
    fn diagonal_dims() {
        let sys = diag_sys();
        assert_eq!(dim_growth_subspace(&sys, 1.0, 50).unwrap(), 1);
        assert_eq!(dim_growth_subspace(&sys, 0.1, 50).unwrap(), 0);
        assert_eq!(dim_growth_subspace(&sys, 10.0, 50).unwrap(), 2);
    }

    #[test]
    fn rate_itself_is_a_boundary() {
        assert!(matches!(
            dim_growth_subspace(&diag_sys(), 3.0, 50),
            Err(Error::Boundary { .. })
        ));
    }

    #[test]
    fn exponents_of_a_triangular_constant_matrix() {
        let sys = LinearSystem::constant(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.25])).unwrap();
        let b = bohl_exponents(&sys, 100, 50, 20).unwrap();
        let mut got: Vec<f64> = b.upper.clone();
        got.sort_by(f64::total_cmp);
        assert!((got[0] - 0.25f64.ln()).abs() < 1e-6, "{got:?}");
        assert!((got[1] - 2f64.ln()).abs() < 1e-6, "{got:?}");
    }

    #[test]
    fn monotone_in_scale() {
        let sys = diag_sys();
        let dims: Vec<usize> = [0.2, 0.7, 1.5, 2.9, 3.2, 8.0]
            .iter()
            .map(|&a| dim_growth_subspace(&sys, a, 40).unwrap())
            .collect();
        assert!(dims.windows(2).all(|w| w[0] <= w[1]), "{dims:?}");
    }
}
