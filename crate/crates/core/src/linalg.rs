//! Small dense symmetric solvers. Systems here are at most a few dozen
//! unknowns (spline bases, regression normal equations), so a plain
//! Cholesky factorization is the right tool.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Array2<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factors a symmetric matrix; `None` if it is not numerically positive definite.
    pub fn factor(a: &Array2<T>) -> Option<Self> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut l = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[[j, j]] = djj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / djj;
            }
        }
        Some(Cholesky { lower: l })
    }

    /// Factors `a`, retrying once with `1e-10·trace(a)` added to the diagonal.
    /// Returns the factor and whether the ridge was needed.
    pub fn factor_with_ridge(a: &Array2<T>) -> Result<(Self, bool)> {
        if let Some(c) = Self::factor(a) {
            return Ok((c, false));
        }
        let trace: T = a.diag().iter().copied().sum();
        let ridge = T::lit(1e-10) * trace.abs().max(T::min_positive_value());
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[[i, i]] += ridge;
        }
        Self::factor(&shifted)
            .map(|c| (c, true))
            .ok_or_else(|| Error::Numerical("matrix singular after diagonal ridge".into()))
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn solve(&self, b: ArrayView1<'_, T>) -> Array1<T> {
        let mut x = b.to_owned();
        self.solve_in_place(x.as_slice_mut().expect("contiguous"));
        x
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        self.forward_in_place(x);
        let n = self.dim();
        let l = &self.lower;
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[[k, i]] * x[k];
            }
            x[i] = s / l[[i, i]];
        }
    }

    /// `x ← L⁻¹ x`.
    pub fn forward_in_place(&self, x: &mut [T]) {
        let l = &self.lower;
        for i in 0..self.dim() {
            let mut s = x[i];
            for k in 0..i {
                s -= l[[i, k]] * x[k];
            }
            x[i] = s / l[[i, i]];
        }
    }

    /// `trace(A⁻¹ M)` for a symmetric `M`, computed column by column.
    pub fn trace_solve(&self, m: &Array2<T>) -> T {
        let n = self.dim();
        let mut col = vec![T::zero(); n];
        let mut tr = T::zero();
        for j in 0..n {
            for i in 0..n {
                col[i] = m[[i, j]];
            }
            self.solve_in_place(&mut col);
            tr += col[j];
        }
        tr
    }
}

/// `xᵀ A x` for symmetric `A`.
pub fn quad_form<T: Real>(a: &Array2<T>, x: ArrayView1<'_, T>) -> T {
    let n = x.len();
    let mut s = T::zero();
    for i in 0..n {
        let mut row = T::zero();
        for j in 0..n {
            row += a[[i, j]] * x[j];
        }
        s += x[i] * row;
    }
    s
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
pub fn symmetric_eigen<T: Real>(a: &Array2<T>) -> (Vec<T>, Array2<T>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<T>::eye(n);
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let diag: T = (0..n).map(|i| m[[i, i]] * m[[i, i]]).sum();
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[[i, i]]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_spd_system() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let b = array![1.0, -2.0, 0.5];
        let chol = Cholesky::factor(&a).unwrap();
        let x = chol.solve(b.view());
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v: &f64| v.abs() < 1e-14));
        let inv_trace = chol.trace_solve(&Array2::eye(3));
        let by_cols: f64 = (0..3)
            .map(|j| {
                let mut e = Array1::zeros(3);
                e[j] = 1.0;
                chol.solve(e.view())[j]
            })
            .sum();
        assert!((inv_trace - by_cols).abs() < 1e-14);
    }

    #[test]
    fn singular_needs_ridge() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(Cholesky::<f64>::factor(&a).is_none());
        let (_, ridged) = Cholesky::factor_with_ridge(&a).unwrap();
        assert!(ridged);
    }

    #[test]
    fn jacobi_eigen_reconstructs() {
        let a = array![[4.0, 1.0, -2.0, 0.5], [1.0, 3.0, 0.0, 1.0], [-2.0, 0.0, 5.0, 0.2], [0.5, 1.0, 0.2, 2.0]];
        let (vals, vecs) = symmetric_eigen(&a);
        let recon = vecs.dot(&Array2::from_diag(&Array1::from(vals.clone()))).dot(&vecs.t());
        assert!((recon - &a).iter().all(|v: &f64| v.abs() < 1e-12));
        let orth = vecs.t().dot(&vecs) - Array2::<f64>::eye(4);
        assert!(orth.iter().all(|v| v.abs() < 1e-12));
        let trace: f64 = vals.iter().sum();
        assert!((trace - 14.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let a = array![[1.0f32, 2.0], [2.0, 1.0]];
        assert!(Cholesky::factor(&a).is_none());
    }
}
