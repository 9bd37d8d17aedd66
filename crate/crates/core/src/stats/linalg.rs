//! Small dense symmetric solvers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::scalar::Real;

/// Lower Cholesky factor of a symmetric matrix. Fails with the index of the
/// first pivot that is not above `min_pivot`.
pub fn cholesky<T: Real>(a: ArrayView2<T>, min_pivot: T) -> Result<Array2<T>, usize> {
    let n = a.nrows();
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d = d - l[[j, k]] * l[[j, k]];
        }
        if !(d > min_pivot) {
            return Err(j);
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s = s - l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L y = b`.
pub fn forward_substitute<T: Real>(l: ArrayView2<T>, b: ArrayView1<T>) -> Array1<T> {
    let n = b.len();
    let mut y = Array1::<T>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// Solves `L L^T x = b`.
pub fn cholesky_solve<T: Real>(l: ArrayView2<T>, b: ArrayView1<T>) -> Array1<T> {
    let y = forward_substitute(l, b);
    let n = y.len();
    let mut x = Array1::<T>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors as columns)`.
pub fn symmetric_eigen<T: Real>(a: ArrayView2<T>) -> (Array1<T>, Array2<T>) {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut v = Array2::<T>::eye(n);
    let two = T::c(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag = diag + m[[i, i]] * m[[i, i]];
            for j in (i + 1)..n {
                off = off + m[[i, j]] * m[[i, j]];
            }
        }
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
    (m.diag().to_owned(), v)
}

/// Minimum-norm solution of `a x = b` for symmetric positive semi-definite `a`;
/// eigenvalues below `rcond * largest` count as zero.
pub fn pinv_solve<T: Real>(a: ArrayView2<T>, b: ArrayView1<T>, rcond: T) -> Array1<T> {
    let (vals, vecs) = symmetric_eigen(a);
    let largest = vals.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let cutoff = rcond * largest;
    let mut x = Array1::<T>::zeros(b.len());
    for (k, &lambda) in vals.iter().enumerate() {
        if lambda > cutoff {
            let vk = vecs.column(k);
            let w = vk.dot(&b) / lambda;
            x.scaled_add(w, &vk);
        }
    }
    x
}

/// Cholesky solve, falling back to the pseudo-inverse when a pivot drops
/// below `rcond` times the largest diagonal entry. The flag reports the fallback.
pub fn solve_psd<T: Real>(a: ArrayView2<T>, b: ArrayView1<T>, rcond: T) -> (Array1<T>, bool) {
    let max_diag = a.diag().iter().fold(T::zero(), |m, &x| m.max(x));
    match cholesky(a, rcond * max_diag) {
        Ok(l) => (cholesky_solve(l.view(), b), false),
        Err(_) => (pinv_solve(a, b, rcond), true),
    }
}
