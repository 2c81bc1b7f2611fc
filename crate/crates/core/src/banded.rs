//! Banded symmetric positive definite factorization used by the implicit
//! time steppers.

use crate::error::{Error, Result};
use crate::grid::DiscreteOperator;

/// Lower band of an SPD matrix, row `i` storing columns `i - bw ..= i`.
#[derive(Debug, Clone)]
pub(crate) struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    /// `I - dt L + diag(extra)`.
    pub fn shifted(op: &DiscreteOperator, dt: f64, extra: Option<&[f64]>) -> Self {
        let n = op.len();
        let bw = op.bandwidth();
        let mut m = Self { n, bw, data: vec![0.0; n * (bw + 1)] };
        let vol = op.grid().cell_volume();
        for (i, d) in op.diagonal().iter().enumerate() {
            *m.at_mut(i, i) = 1.0 - dt * d + extra.map_or(0.0, |e| e[i]);
        }
        for (f, w) in op.grid().faces().iter().zip(op.face_weights()) {
            *m.at_mut(f.hi, f.lo) -= dt * w / vol;
        }
        m
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(j <= i && i - j <= self.bw);
        &mut self.data[i * (self.bw + 1) + (self.bw + j - i)]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (self.bw + j - i)]
    }

    /// In-place Cholesky `A = G G^T`.
    pub fn factor(mut self) -> Result<CholeskyBand> {
        let (n, bw) = (self.n, self.bw);
        let mut max_diag: f64 = 0.0;
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.at(i, j);
                let kl = lo.max(j.saturating_sub(bw));
                for k in kl..j {
                    s -= self.at(i, k) * self.at(j, k);
                }
                if i == j {
                    max_diag = max_diag.max(self.at(i, i).abs());
                    if !(s > 0.0 && s.is_finite()) {
                        let condition = if min_pivot.is_finite() { max_diag / min_pivot } else { f64::INFINITY };
                        return Err(Error::LinearSolve { row: i, condition });
                    }
                    let p = s.sqrt();
                    min_pivot = min_pivot.min(s);
                    *self.at_mut(i, i) = p;
                } else {
                    *self.at_mut(i, j) = s / self.at(j, j);
                }
            }
        }
        Ok(CholeskyBand { inner: self })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CholeskyBand {
    inner: BandedSpd,
}

impl CholeskyBand {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = &self.inner;
        let (n, bw) = (m.n, m.bw);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= m.at(i, k) * y[k];
            }
            y[i] = s / m.at(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= m.at(k, i) * y[k];
            }
            y[i] = s / m.at(i, i);
        }
        y
    }
}
