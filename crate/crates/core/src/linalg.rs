//! Dense Cholesky factorization and triangular solves.
//!
//! The factor is held row-major so the inner products in the factorization and
//! the forward substitution run over contiguous memory.

use nalgebra::{DMatrix, DVector};

/// Lower-triangular `L` with `L Lᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

/// Inner product with four independent accumulators, so the reduction is
/// not one serial chain of dependent adds. The summation order is fixed.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `‖a − b‖²`, accumulated like [`dot`].
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl CholeskyFactor {
    /// Factors the lower triangle of `a` plus `shift` on the diagonal. Returns
    /// `None` when a pivot is not strictly positive and finite.
    pub fn factor(a: &DMatrix<f64>, shift: f64) -> Option<CholeskyFactor> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (row_i, row_j) = (i * n, j * n);
                let s = a[(i, j)] - dot(&l[row_i..row_i + j], &l[row_j..row_j + j]);
                if i == j {
                    let d = s + shift;
                    if !(d > 0.0 && d.is_finite()) {
                        return None;
                    }
                    l[row_i + i] = d.sqrt();
                } else {
                    l[row_i + j] = s / l[row_j + j];
                }
            }
        }
        Some(CholeskyFactor { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if j <= i { self.get(i, j) } else { 0.0 })
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            x[i] = (x[i] - dot(row, &x[..i])) / self.l[i * n + i];
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            x[i] /= self.l[i * n + i];
            let xi = x[i];
            let row = &self.l[i * n..i * n + i];
            for (xk, lik) in x[..i].iter_mut().zip(row) {
                *xk -= lik * xi;
            }
        }
        x
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.solve(b.as_slice()))
    }

    /// `Σ ln L_ii`, half the log-determinant.
    pub fn half_log_det(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).ln()).sum()
    }

    /// `(L Lᵀ)⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.n;
        // columns of L⁻¹; column j is zero above row j, so store rows j.. only
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
        for j in 0..n {
            let mut m = vec![0.0; n - j];
            m[0] = 1.0 / self.get(j, j);
            for i in j + 1..n {
                let row = &self.l[i * n + j..i * n + i];
                m[i - j] = -dot(row, &m[..i - j]) / self.get(i, i);
            }
            cols.push(m);
        }
        let mut inv = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                // (L⁻ᵀ L⁻¹)_ij = Σ_{k ≥ i} M_ki M_kj with i ≥ j
                let v = dot(&cols[i], &cols[j][i - j..]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}
