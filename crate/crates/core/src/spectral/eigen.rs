//! Dense symmetric eigendecomposition.
//!
//! Householder reduction to tridiagonal form followed by the implicit QL
//! iteration (the EISPACK `tred2`/`tql2` pair). The working matrix is held
//! column-major so that every inner loop, including the Givens updates of
//! the eigenvector basis, runs over contiguous memory.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{ensure_symmetric, symmetrize};
use crate::scalar::Real;

const MAX_SWEEPS_PER_EIGENVALUE: usize = 64;

/// Eigenvalues in descending order with the matching orthonormal
/// eigenvectors stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair<T> {
    pub values: Array1<T>,
    pub vectors: Array2<T>,
}

impl<T: Real> EigenPair<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `V diag(f(w)) Vᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(T) -> T) -> Array2<T> {
        let scaled = &self.vectors * &self.values.mapv(f);
        scaled.dot(&self.vectors.t())
    }

    pub fn reconstruct(&self) -> Array2<T> {
        self.map_spectrum(|w| w)
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// The input must be symmetric to within `1e-10` of its largest entry; the
/// symmetric part is what gets decomposed. Ties in the spectrum keep the
/// order in which the QL sweep produced them.
pub fn sym_eig<T: Real>(m: ArrayView2<T>) -> Result<EigenPair<T>> {
    let n = m.nrows();
    if n == 0 {
        return Err(Error::Empty("sym_eig: empty matrix"));
    }
    ensure_symmetric(m, T::tol(1e-10))?;
    let a = symmetrize(m);

    // w[j * n + k] holds V[k][j].
    let mut w = vec![T::zero(); n * n];
    for j in 0..n {
        for k in 0..n {
            w[j * n + k] = a[[k, j]];
        }
    }
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(n, &mut w, &mut d, &mut e);
    ql_implicit(n, &mut w, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        d[j].partial_cmp(&d[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (c, &src) in order.iter().enumerate() {
        let col = &w[src * n..src * n + n];
        for (k, &v) in col.iter().enumerate() {
            vectors[[k, c]] = v;
        }
    }
    Ok(EigenPair { values, vectors })
}

fn tridiagonalize<T: Real>(n: usize, w: &mut [T], d: &mut [T], e: &mut [T]) {
    for j in 0..n {
        d[j] = w[j * n + n - 1];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for &dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = w[j * n + i - 1];
                w[j * n + i] = T::zero();
                w[i * n + j] = T::zero();
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = T::zero();
            }
            for j in 0..i {
                f = d[j];
                w[i * n + j] = f;
                let col = &w[j * n..j * n + i];
                g = e[j] + col[j] * f;
                for k in j + 1..i {
                    g += col[k] * d[k];
                    e[k] += col[k] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let (fj, gj) = (d[j], e[j]);
                let col = &mut w[j * n..j * n + i];
                for k in j..i {
                    col[k] -= fj * e[k] + gj * d[k];
                }
                d[j] = w[j * n + i - 1];
                w[j * n + i] = T::zero();
            }
        }
        d[i] = h;
    }

    // Accumulate the Householder reflections.
    for i in 0..n - 1 {
        w[i * n + n - 1] = w[i * n + i];
        w[i * n + i] = T::one();
        let h = d[i + 1];
        let (lo, hi) = w.split_at_mut((i + 1) * n);
        let next = &mut hi[..n];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = next[k] / h;
            }
            for j in 0..=i {
                let col = &mut lo[j * n..j * n + i + 1];
                let g = next[..=i]
                    .iter()
                    .zip(col.iter())
                    .fold(T::zero(), |acc, (&p, &q)| acc + p * q);
                for (ck, &dk) in col.iter_mut().zip(&d[..=i]) {
                    *ck -= g * dk;
                }
            }
        }
        for v in &mut next[..=i] {
            *v = T::zero();
        }
    }
    for j in 0..n {
        d[j] = w[j * n + n - 1];
        w[j * n + n - 1] = T::zero();
    }
    w[(n - 1) * n + n - 1] = T::one();
    e[0] = T::zero();
}

fn ql_implicit<T: Real>(n: usize, w: &mut [T], d: &mut [T], e: &mut [T]) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();

    let two = T::lit(2.0);
    let eps = T::epsilon();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    let mut total_iterations = 0usize;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0usize;
            loop {
                iter += 1;
                total_iterations += 1;
                if iter > MAX_SWEEPS_PER_EIGENVALUE {
                    return Err(Error::NoConvergence {
                        iterations: total_iterations,
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..n] {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (lo, hi) = w.split_at_mut((i + 1) * n);
                    let vi = &mut lo[i * n..i * n + n];
                    let vi1 = &mut hi[..n];
                    for (a, b) in vi.iter_mut().zip(vi1.iter_mut()) {
                        let hk = *b;
                        *b = s * *a + c * hk;
                        *a = c * *a - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check_decomposition(m: &Array2<f64>, eig: &EigenPair<f64>) {
        let n = m.nrows();
        let vtv = eig.vectors.t().dot(&eig.vectors);
        let id = Array2::<f64>::eye(n);
        assert!(frobenius((&vtv - &id).view()) < 1e-8 * n as f64);
        let rec = eig.reconstruct();
        assert!(frobenius((&rec - m).view()) <= 1e-8 * frobenius(m.view()).max(1e-300));
        for w in eig.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn identity() {
        let eig = sym_eig(Array2::<f64>::eye(2).view()).unwrap();
        assert_eq!(eig.values, array![1.0, 1.0]);
        check_decomposition(&Array2::eye(2), &eig);
    }

    #[test]
    fn diagonal() {
        let m: Array2<f64> = array![[1.0, 0.0], [0.0, 3.0]];
        let eig = sym_eig(m.view()).unwrap();
        assert_eq!(eig.values, array![3.0, 1.0]);
        assert!((eig.vectors[[1, 0]].abs() - 1.0).abs() < 1e-15);
        assert!((eig.vectors[[0, 1]].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_hand_computed() {
        // characteristic polynomial (2 - x)^2 - 1 = 0 has roots 3 and 1
        let m: Array2<f64> = array![[2.0, 1.0], [1.0, 2.0]];
        let eig = sym_eig(m.view()).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
        check_decomposition(&m, &eig);
    }

    #[test]
    fn one_by_one_and_zero() {
        let eig = sym_eig(array![[-4.5]].view()).unwrap();
        assert_eq!(eig.values, array![-4.5]);
        assert_eq!(eig.vectors, array![[1.0]]);
        let z = Array2::<f64>::zeros((4, 4));
        let eig = sym_eig(z.view()).unwrap();
        assert!(eig.values.iter().all(|&v| v == 0.0));
        check_decomposition(&z, &eig);
    }

    #[test]
    fn random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &n in &[3usize, 10, 37, 80] {
            let a = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
            let m = &a + &a.t();
            let eig = sym_eig(m.view()).unwrap();
            check_decomposition(&m, &eig);
            let trace: f64 = m.diag().sum();
            assert!((eig.values.sum() - trace).abs() < 1e-10 * n as f64);
        }
    }

    #[test]
    fn repeated_eigenvalues() {
        let v = array![[1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 2f64.sqrt()]] / 2f64.sqrt();
        let m = v.dot(&Array2::from_diag(&array![2.0, 2.0, 5.0])).dot(&v.t());
        let eig = sym_eig(m.view()).unwrap();
        assert!((eig.values[0] - 5.0).abs() < 1e-13);
        assert!((eig.values[1] - 2.0).abs() < 1e-13);
        assert!((eig.values[2] - 2.0).abs() < 1e-13);
        check_decomposition(&m, &eig);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            sym_eig(array![[1.0, 2.0], [0.0, 1.0]].view()),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(sym_eig(Array2::<f64>::zeros((0, 0)).view()), Err(Error::Empty(_))));
        assert!(sym_eig(array![[f64::NAN]].view()).is_err());
    }

    #[test]
    fn single_precision() {
        let m = array![[2.0f32, 1.0], [1.0, 2.0]];
        let eig = sym_eig(m.view()).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-5);
    }
}
