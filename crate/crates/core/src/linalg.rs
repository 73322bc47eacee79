//! Weighted least squares via Householder QR of the row-scaled design.

use crate::error::{RdError, Result};

/// Columns whose QR pivot falls below this fraction of their own norm are
/// treated as linearly dependent on earlier columns.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Householder QR factorisation of `diag(sqrt(w)) X`.
#[derive(Debug, Clone)]
pub struct WeightedQr {
    nrows: usize,
    ncols: usize,
    sqrt_w: Vec<f64>,
    /// Householder vectors, one per column, each of length `nrows - j`.
    reflectors: Vec<Vec<f64>>,
    betas: Vec<f64>,
    /// Upper triangle, row-major `ncols x ncols`.
    r: Vec<f64>,
}

impl WeightedQr {
    /// Factorises the design given as columns. `names` labels columns in
    /// singular-fit errors.
    pub fn new(columns: &[Vec<f64>], weights: &[f64], names: &[String]) -> Result<Self> {
        let ncols = columns.len();
        let nrows = weights.len();
        debug_assert!(columns.iter().all(|c| c.len() == nrows));
        debug_assert_eq!(names.len(), ncols);

        let positive = weights.iter().filter(|&&w| w > 0.0).count();
        if positive < ncols {
            return Err(RdError::SampleSize {
                needed: ncols,
                available: positive,
            });
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(RdError::Parameter("weights must be finite and nonnegative".into()));
        }

        let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let mut a: Vec<Vec<f64>> = columns
            .iter()
            .map(|col| col.iter().zip(&sqrt_w).map(|(x, s)| x * s).collect())
            .collect();
        let norms: Vec<f64> = a.iter().map(|c| norm(c)).collect();

        let mut reflectors = Vec::with_capacity(ncols);
        let mut betas = Vec::with_capacity(ncols);
        let mut r = vec![0.0; ncols * ncols];

        for j in 0..ncols {
            let x = &a[j][j..];
            let xnorm = norm(x);
            if norms[j] == 0.0 || xnorm <= RANK_TOLERANCE * norms[j] {
                return Err(RdError::Singular {
                    column: names[j].clone(),
                });
            }
            let alpha = if x[0] > 0.0 { -xnorm } else { xnorm };
            let mut v = x.to_vec();
            v[0] -= alpha;
            let vtv: f64 = v.iter().map(|e| e * e).sum();
            let beta = if vtv > 0.0 { 2.0 / vtv } else { 0.0 };

            r[j * ncols + j] = alpha;
            for k in (j + 1)..ncols {
                let col = &mut a[k][j..];
                let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                let s = beta * dot;
                for (c, vi) in col.iter_mut().zip(&v) {
                    *c -= s * vi;
                }
                r[j * ncols + k] = col[0];
            }
            reflectors.push(v);
            betas.push(beta);
        }

        Ok(Self {
            nrows,
            ncols,
            sqrt_w,
            reflectors,
            betas,
            r,
        })
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    /// Least-squares coefficients for response `y`.
    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.nrows);
        let mut b: Vec<f64> = y.iter().zip(&self.sqrt_w).map(|(y, s)| y * s).collect();
        for (j, (v, &beta)) in self.reflectors.iter().zip(&self.betas).enumerate() {
            let tail = &mut b[j..];
            let dot: f64 = v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum();
            let s = beta * dot;
            for (t, vi) in tail.iter_mut().zip(v) {
                *t -= s * vi;
            }
        }
        self.back_substitute(&b[..self.ncols])
    }

    fn back_substitute(&self, rhs: &[f64]) -> Vec<f64> {
        let k = self.ncols;
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = rhs[i];
            for j in (i + 1)..k {
                s -= self.r[i * k + j] * x[j];
            }
            x[i] = s / self.r[i * k + i];
        }
        x
    }

    fn forward_substitute_transpose(&self, rhs: &[f64]) -> Vec<f64> {
        let k = self.ncols;
        let mut x = vec![0.0; k];
        for i in 0..k {
            let mut s = rhs[i];
            for j in 0..i {
                s -= self.r[j * k + i] * x[j];
            }
            x[i] = s / self.r[i * k + i];
        }
        x
    }

    /// Column `coef` of `(X'WX)^{-1}`.
    pub fn inverse_gram_column(&self, coef: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.ncols];
        e[coef] = 1.0;
        let v = self.forward_substitute_transpose(&e);
        self.back_substitute(&v)
    }

    /// `(X'WX)^{-1}` as row-major `ncols x ncols`.
    pub fn inverse_gram(&self) -> Vec<f64> {
        let k = self.ncols;
        let mut out = vec![0.0; k * k];
        for c in 0..k {
            let col = self.inverse_gram_column(c);
            for r in 0..k {
                out[r * k + c] = col[r];
            }
        }
        out
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    // Scaled to avoid overflow on large responses.
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * x.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}
