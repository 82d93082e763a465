//! Small dense square matrices (P×P with P in the single digits).

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Index, IndexMut, Mul};

use num_traits::{One, Zero};

use crate::Complex;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Square<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Copy + Zero> Square<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); dim * dim],
        }
    }
}

impl<T: Copy + Zero + One> Square<T> {
    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn diagonal(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }
}

impl<T: Copy> Square<T> {
    /// Builds a matrix from row-major data. Panics if `data.len() != dim²`.
    pub fn from_row_major(dim: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), dim * dim, "row-major data has wrong length");
        Self { dim, data }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)])
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Square<U> {
        Square {
            dim: self.dim,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T> Square<T>
where
    T: Copy + Zero + Add<Output = T> + Mul<Output = T>,
{
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self[(r, k)];
                for c in 0..n {
                    out.data[r * n + c] = out.data[r * n + c] + a * rhs.data[k * n + c];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.dim, "matrix-vector dimension mismatch");
        (0..self.dim)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(v)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }
}

impl<T> Index<(usize, usize)> for Square<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.dim + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Square<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.dim + c]
    }
}

impl Square<f64> {
    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_rc - a_cr|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for c in r + 1..self.dim {
                worst = worst.max((self[(r, c)] - self[(c, r)]).abs());
            }
        }
        worst
    }

    /// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
    ///
    /// Returns eigenvalues in descending order and the matrix whose columns
    /// are the matching orthonormal eigenvectors, so `A = V·diag(λ)·Vᵀ`.
    /// Only the upper triangle is read.
    pub fn symmetric_eigen(&self) -> (Vec<f64>, Square<f64>) {
        let n = self.dim;
        let mut a = Square::from_fn(n, |r, c| if r <= c { self[(r, c)] } else { self[(c, r)] });
        let mut v = Square::<f64>::identity(n);
        let scale = a.frobenius_norm();
        if scale == 0.0 {
            return (vec![0.0; n], v);
        }
        for _sweep in 0..100 {
            let mut off = 0.0;
            for r in 0..n {
                for c in r + 1..n {
                    off += a[(r, c)] * a[(r, c)];
                }
            }
            if libm::sqrt(off) <= 1e-17 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / libm::sqrt(t * t + 1.0);
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let vectors = Square::from_fn(n, |r, c| v[(r, order[c])]);
        (values, vectors)
    }
}

impl Square<Complex> {
    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v.norm_sqr()).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)].conj())
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting, together
    /// with the Hadamard ratio `|det A| / Π‖row_i‖` (1 for orthogonal rows,
    /// 0 for singular matrices).
    ///
    /// Returns `None` when a pivot is exactly zero or non-finite.
    pub fn inverse_with_conditioning(&self) -> Option<(Self, f64)> {
        let n = self.dim;
        let mut row_norm_product = 1.0;
        for r in 0..n {
            let norm: f64 = self.row(r).iter().map(|v| v.norm_sqr()).sum();
            row_norm_product *= libm::sqrt(norm);
        }
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let mut det_abs = 1.0;
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&i, &j| a[(i, col)].norm_sqr().total_cmp(&a[(j, col)].norm_sqr()))?;
            let pivot = a[(pivot_row, col)];
            let pivot_mag = libm::sqrt(pivot.norm_sqr());
            if pivot_mag == 0.0 || !pivot_mag.is_finite() {
                return None;
            }
            det_abs *= pivot_mag;
            if pivot_row != col {
                for k in 0..n {
                    a.data.swap(col * n + k, pivot_row * n + k);
                    inv.data.swap(col * n + k, pivot_row * n + k);
                }
            }
            let recip = pivot.inv();
            for k in 0..n {
                a[(col, k)] *= recip;
                inv[(col, k)] *= recip;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[(r, col)];
                if factor == Complex::zero() {
                    continue;
                }
                for k in 0..n {
                    let av = a[(col, k)];
                    let iv = inv[(col, k)];
                    a[(r, k)] -= factor * av;
                    inv[(r, k)] -= factor * iv;
                }
            }
        }
        let ratio = if row_norm_product > 0.0 {
            det_abs / row_norm_product
        } else {
            0.0
        };
        Some((inv, ratio))
    }
}
