use std::sync::Arc;

use nalgebra::DMatrix;

use crate::cocycle::LinearSystem;
use crate::dichotomy::DichotomyCertificate;
use crate::error::{Error, Result};

/// `A_n`, `A_n^{-1}`, `P_n` over the certificate's reach, and the two
/// recursions that sum the Green kernel of `U_{n+1} = A_n U_n - g_n`.
#[derive(Clone, Debug)]
pub(crate) struct GreenKernel {
    lo: i64,
    hi: i64,
    mats: Arc<Vec<DMatrix<f64>>>,
    invs: Arc<Vec<DMatrix<f64>>>,
    projs: Arc<Vec<DMatrix<f64>>>,
}

impl GreenKernel {
    pub fn new(sys: &LinearSystem, cert: &DichotomyCertificate) -> Result<Self> {
        let reach = cert.reach;
        let mut mats = Vec::new();
        let mut invs = Vec::new();
        let mut projs = Vec::new();
        for n in -reach..=reach {
            mats.push(sys.matrix(n));
            invs.push(sys.inverse(n)?);
            projs.push(cert.projection(n)?.clone());
        }
        Ok(Self {
            lo: -reach,
            hi: reach,
            mats: Arc::new(mats),
            invs: Arc::new(invs),
            projs: Arc::new(projs),
        })
    }

    fn idx(&self, n: i64) -> usize {
        (n - self.lo) as usize
    }

    pub fn matrix(&self, n: i64) -> &DMatrix<f64> {
        &self.mats[self.idx(n)]
    }

    pub fn inverse(&self, n: i64) -> &DMatrix<f64> {
        &self.invs[self.idx(n)]
    }

    pub fn projection(&self, n: i64) -> &DMatrix<f64> {
        &self.projs[self.idx(n)]
    }

    pub fn complement(&self, n: i64) -> DMatrix<f64> {
        let p = self.projection(n);
        DMatrix::identity(p.nrows(), p.ncols()) - p
    }

    /// `[first, last + 1]` must lie in the stored range.
    pub fn check(&self, first: i64, last: i64) -> Result<()> {
        for n in [first, last + 1] {
            if n < self.lo || n > self.hi {
                return Err(Error::Range {
                    index: n,
                    window: self.hi,
                });
            }
        }
        Ok(())
    }

    /// `U_n = -Σ_{first<=j<n} 𝒜(n,j+1) P_{j+1} g_j + Σ_{n<=j<=last} 𝒜(n,j+1) Q_{j+1} g_j`
    /// for every `n` in `[first, last]`. Each step re-applies the projection
    /// so that round-off cannot leak into the growing bundle.
    pub fn solve(&self, first: i64, forcing: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let last = first + forcing.len() as i64 - 1;
        self.check(first, last)?;
        let len = forcing.len();
        let (r, c) = forcing[0].shape();
        let mut stable = Vec::with_capacity(len);
        let mut s = DMatrix::zeros(r, c);
        for (i, g) in forcing.iter().enumerate() {
            let n = first + i as i64;
            stable.push(s.clone());
            s = self.projection(n + 1) * (self.matrix(n) * &s + g);
        }
        let mut out = vec![DMatrix::zeros(r, c); len];
        let mut u = DMatrix::zeros(r, c);
        for i in (0..len).rev() {
            let n = first + i as i64;
            u = self.complement(n) * (self.inverse(n) * (self.complement(n + 1) * &forcing[i] + &u));
            out[i] = &u - &stable[i];
        }
        Ok(out)
    }

    /// `U_m` alone.
    pub fn solve_at(&self, first: i64, m: i64, forcing: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
        let last = first + forcing.len() as i64 - 1;
        self.check(first, last)?;
        let (r, c) = forcing[0].shape();
        let mut s = DMatrix::zeros(r, c);
        for n in first..m {
            s = self.projection(n + 1) * (self.matrix(n) * &s + &forcing[(n - first) as usize]);
        }
        let mut u = DMatrix::zeros(r, c);
        for n in (m..=last).rev() {
            u = self.complement(n)
                * (self.inverse(n) * (self.complement(n + 1) * &forcing[(n - first) as usize] + &u));
        }
        Ok(u - s)
    }
}
