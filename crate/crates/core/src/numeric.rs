//! Small dense helpers shared by the modules.

use nalgebra::{DMatrix, DVector};

/// Spectral norm of a small dense matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    if m.nrows() == 2 && m.ncols() == 2 {
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        // sigma_max^2 = (t + sqrt(t^2 - 4 det^2)) / 2 with t = |m|_F^2.
        let t = a * a + b * b + c * c + d * d;
        let det = a * d - b * c;
        let disc = ((t - 2.0 * det.abs()) * (t + 2.0 * det.abs())).max(0.0);
        return ((t + disc.sqrt()) / 2.0).sqrt();
    }
    m.singular_values().max()
}

pub fn is_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Least-squares slope and intercept of `y ≈ c + s x`.
pub fn ls_line(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let s = sxy / sxx;
    Some((s, my - s * mx))
}

/// Upper envelope of `(key, value)` samples: max value per integer key,
/// returned sorted by key. Non-finite values are ignored.
pub fn upper_envelope(samples: impl Iterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut buckets: Vec<f64> = Vec::new();
    for (k, v) in samples {
        if !v.is_finite() {
            continue;
        }
        if k >= buckets.len() {
            buckets.resize(k + 1, f64::NEG_INFINITY);
        }
        if v > buckets[k] {
            buckets[k] = v;
        }
    }
    buckets
        .into_iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .collect()
}

/// Slope of the least-squares line through an envelope; `None` when the
/// envelope has fewer than two distinct keys.
pub fn envelope_slope(env: &[(usize, f64)]) -> Option<f64> {
    let xs: Vec<f64> = env.iter().map(|(k, _)| *k as f64).collect();
    let ys: Vec<f64> = env.iter().map(|(_, v)| *v).collect();
    ls_line(&xs, &ys).map(|(s, _)| s)
}

/// SplitMix64 finalizer, used to derive per-index seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Geometric midpoint of two positive reals.
pub fn geo_mid(a: f64, b: f64) -> f64 {
    (a * b).sqrt()
}
