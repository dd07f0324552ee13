//! Symmetric banded LDL^T factorization for the interleaved stage ordering
//! of the horizon KKT system.
//!
//! The KKT matrix is assembled as a quasidefinite matrix (positive diagonal
//! blocks on primal rows, negative regularization on dual rows), for which
//! an unpivoted LDL^T is stable; a wrong-sign pivot therefore signals that
//! the primal Hessian block needs more regularization, and the caller bumps
//! it and refactors.

use alloc::vec;
use alloc::vec::Vec;

/// Symmetric band matrix storing the lower band row-wise; `bw` is the
/// one-sided bandwidth (number of sub-diagonals kept).
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    /// Row i holds columns i-bw ..= i at data[i*(bw+1) ..][.. bw+1].
    data: Vec<f64>,
}

/// Expected sign of each pivot: `+1` for primal rows, `-1` for dual rows.
pub type PivotSigns = [i8];

impl BandMatrix {
    pub fn new(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn reset(&mut self) {
        self.data.fill(0.0);
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw - (i - j))
    }

    /// Add `v` at (i, j); only one triangle needs to be written.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        let at = self.idx(i, j);
        self.data[at] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            return 0.0;
        }
        self.data[self.idx(i, j)]
    }

    /// In-place LDL^T. `signs[i]` is the expected sign of pivot `i`; a pivot
    /// with the wrong sign (or a vanishing one) aborts with its row index.
    pub fn factor_ldlt(&mut self, signs: &PivotSigns) -> Result<(), usize> {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            // Off-diagonal L entries of row i.
            for j in lo..i {
                let mut sum = self.data[self.idx(i, j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    sum -= self.data[self.idx(i, k)]
                        * self.data[self.idx(j, k)]
                        * self.data[self.idx(k, k)];
                }
                let d_j = self.data[self.idx(j, j)];
                let at = self.idx(i, j);
                self.data[at] = sum / d_j;
            }
            // Pivot.
            let mut d = self.data[self.idx(i, i)];
            for k in lo..i {
                let l_ik = self.data[self.idx(i, k)];
                d -= l_ik * l_ik * self.data[self.idx(k, k)];
            }
            if !(d.is_finite()) || (signs[i] as f64) * d <= 0.0 {
                return Err(i);
            }
            let at = self.idx(i, i);
            self.data[at] = d;
        }
        Ok(())
    }

    /// Symmetric matrix-vector product `out = A x` (valid before
    /// factorization only).
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        out.fill(0.0);
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let v = self.data[self.idx(i, j)];
                if v != 0.0 {
                    out[i] += v * x[j];
                    if i != j {
                        out[j] += v * x[i];
                    }
                }
            }
        }
    }

    /// Solve `A x = rhs` in place using a completed factorization.
    pub fn solve(&self, rhs: &mut [f64]) {
        debug_assert_eq!(rhs.len(), self.n);
        let bw = self.bw;
        // L y = rhs
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let mut v = rhs[i];
            for k in lo..i {
                v -= self.data[self.idx(i, k)] * rhs[k];
            }
            rhs[i] = v;
        }
        // D z = y
        for i in 0..self.n {
            rhs[i] /= self.data[self.idx(i, i)];
        }
        // L^T x = z
        for i in (0..self.n).rev() {
            let hi = (i + bw).min(self.n - 1);
            let mut v = rhs[i];
            for j in (i + 1)..=hi {
                v -= self.data[self.idx(j, i)] * rhs[j];
            }
            rhs[i] = v;
        }
    }
}
