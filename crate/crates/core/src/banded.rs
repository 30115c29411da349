//! Symmetric banded matrices and their LDLᵀ factorization.

use crate::error::{Error, Result};

/// Symmetric matrix stored by its lower band: `band[i * (bw + 1) + k] = A[i, i - k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBand {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Entry `A[i, i - k]`.
    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.band[i * (self.bw + 1) + k]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, k: usize) -> &mut f64 {
        &mut self.band[i * (self.bw + 1) + k]
    }

    pub fn diag_mut(&mut self, i: usize) -> &mut f64 {
        self.get_mut(i, 0)
    }

    /// Symmetric entry lookup for any `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.bw {
            0.0
        } else {
            self.get(hi, k)
        }
    }

    /// `out = alpha * A y + beta * y`.
    pub fn apply_affine(&self, alpha: f64, beta: f64, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            out[i] = (alpha * self.get(i, 0) + beta) * y[i];
        }
        for i in 0..self.n {
            let kmax = self.bw.min(i);
            for k in 1..=kmax {
                let a = self.get(i, k);
                if a != 0.0 {
                    let j = i - k;
                    out[i] += alpha * a * y[j];
                    out[j] += alpha * a * y[i];
                }
            }
        }
    }

    /// `I·scale_i + alpha·A` with a per-row diagonal addition `diag_add`.
    pub fn shifted(&self, alpha: f64, diag_add: impl Fn(usize) -> f64) -> SymBand {
        let mut out = self.clone();
        out.band.iter_mut().for_each(|v| *v *= alpha);
        for i in 0..self.n {
            *out.diag_mut(i) += diag_add(i);
        }
        out
    }

    /// LDLᵀ factorization without pivoting. A pivot smaller than
    /// `1e-13 * max|A_ii|` in magnitude is reported as singular.
    pub fn factor(&self) -> Result<BandLdl> {
        let n = self.n;
        let bw = self.bw;
        let scale = (0..n).map(|i| self.get(i, 0).abs()).fold(0.0, f64::max).max(1e-300);
        // l[i*(bw+1)+k] = L[i, i-k] for k >= 1
        let mut l = vec![0.0; n * (bw + 1)];
        let mut d = vec![0.0; n];
        for i in 0..n {
            let jmin = i.saturating_sub(bw);
            for j in jmin..=i {
                let mut s = self.get(i, i - j);
                let kmin = jmin.max(j.saturating_sub(bw));
                for k in kmin..j {
                    s -= l[i * (bw + 1) + (i - k)] * d[k] * l[j * (bw + 1) + (j - k)];
                }
                if j < i {
                    l[i * (bw + 1) + (i - j)] = s / d[j];
                } else {
                    if !(s.abs() > 1e-13 * scale) {
                        return Err(Error::SingularStep { step: 0, pivot: s });
                    }
                    d[i] = s;
                }
            }
        }
        Ok(BandLdl { n, bw, l, d })
    }
}

#[derive(Debug, Clone)]
pub struct BandLdl {
    n: usize,
    bw: usize,
    l: Vec<f64>,
    d: Vec<f64>,
}

impl BandLdl {
    #[allow(clippy::needless_range_loop)]
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let kmin = i.saturating_sub(bw);
            let mut s = b[i];
            for k in kmin..i {
                s -= self.l[i * (bw + 1) + (i - k)] * b[k];
            }
            b[i] = s;
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let kmax = (i + bw).min(n - 1);
            let mut s = b[i];
            for k in (i + 1)..=kmax {
                s -= self.l[k * (bw + 1) + (k - i)] * b[k];
            }
            b[i] = s;
        }
    }
}
