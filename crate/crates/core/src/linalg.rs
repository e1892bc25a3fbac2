//! Small dense helpers: Cholesky solves, symmetry checks, norms.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Largest absolute entry of `m - mᵀ` together with the largest absolute entry.
pub fn asymmetry<T: Real>(m: ArrayView2<T>) -> (T, T) {
    let n = m.nrows();
    let mut worst = T::zero();
    let mut scale = T::zero();
    for i in 0..n {
        for j in 0..n {
            scale = scale.max(m[[i, j]].abs());
            if j > i {
                worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
            }
        }
    }
    (worst, scale)
}

pub fn ensure_square<T: Real>(m: ArrayView2<T>, context: &'static str) -> Result<usize> {
    check_dim(context, m.nrows(), m.ncols())?;
    Ok(m.nrows())
}

/// Rejects matrices whose asymmetry exceeds `rel_tol` times the largest entry.
pub fn ensure_symmetric<T: Real>(m: ArrayView2<T>, rel_tol: T) -> Result<()> {
    ensure_square(m, "symmetric matrix")?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("symmetric matrix"));
    }
    let (worst, scale) = asymmetry(m);
    if worst > rel_tol * scale {
        return Err(Error::NotSymmetric {
            asymmetry: worst.as_f64(),
        });
    }
    Ok(())
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize<T: Real>(m: ArrayView2<T>) -> Array2<T> {
    let half = T::lit(0.5);
    let mut out = m.to_owned();
    let n = out.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = (m[[i, j]] + m[[j, i]]) * half;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

/// Lower-triangular Cholesky factor, stored row-major in a flat buffer.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: ArrayView2<T>) -> Result<Self> {
        let n = ensure_square(a, "cholesky")?;
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                let dot = ri.iter().zip(rj).fold(T::zero(), |acc, (&p, &q)| acc + p * q);
                let s = a[[i, j]] - dot;
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return Err(Error::Singular("matrix is not positive definite"));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn solve_vec(&self, b: ArrayView1<T>) -> Result<Array1<T>> {
        check_dim("cholesky rhs", self.n, b.len())?;
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let dot = row.iter().zip(&x[..i]).fold(T::zero(), |acc, (&p, &q)| acc + p * q);
            x[i] = (x[i] - dot) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        Ok(Array1::from(x))
    }

    /// Solves `A X = B` column by column.
    pub fn solve_mat(&self, b: ArrayView2<T>) -> Result<Array2<T>> {
        check_dim("cholesky rhs", self.n, b.nrows())?;
        let mut out = Array2::zeros(b.raw_dim());
        for (j, col) in b.columns().into_iter().enumerate() {
            let x = self.solve_vec(col)?;
            out.column_mut(j).assign(&x);
        }
        Ok(out)
    }
}

pub fn frobenius<T: Real>(m: ArrayView2<T>) -> T {
    m.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

pub fn norm2<T: Real>(v: ArrayView1<T>) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}
