//! Cyclic Jacobi eigendecomposition of Hermitian matrices and the thresholded pseudoinverse
//! built from it.

use rayon::prelude::*;

use super::matrix::CMatrix;
use crate::error::{Error, Result};
use crate::scalar::{Complex, Real};

const MAX_SWEEPS: usize = 60;

/// `A = V diag(values) V^H`; `vectors` holds the eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct HermitianEigen<T> {
    pub values: Vec<T>,
    pub vectors: CMatrix<T>,
    pub sweeps: usize,
}

/// Eigendecomposition by cyclic Jacobi rotations in row order `(0,1), (0,2), ..., (n-2,n-1)`.
///
/// A pair is rotated only when `|a_pq| > eps * sqrt(|a_pp a_qq|)`, which keeps small
/// eigenvalues of positive semidefinite input accurate relative to their size.
/// The sweep order is fixed, so results are bit-reproducible.
pub fn hermitian_eigen<T: Real>(a: &CMatrix<T>) -> Result<HermitianEigen<T>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!("eigendecomposition of a {}x{} matrix", a.rows(), a.cols())));
    }
    if !a.is_finite() {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let n = a.rows();
    let mut m = a.clone();
    // Force exact Hermitian symmetry from the upper triangle.
    for i in 0..n {
        m[(i, i)].im = T::zero();
        for j in 0..i {
            m[(i, j)] = m[(j, i)].conj();
        }
    }
    // Rows of `vt` are the eigenvectors.
    let mut vt = CMatrix::<T>::identity(n);
    let eps = T::epsilon();
    let tiny = T::min_positive_value();
    let mut sweeps = 0;

    for sweep in 0..MAX_SWEEPS {
        sweeps = sweep + 1;
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let b = m[(p, q)];
                let abs_b = b.norm();
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                if abs_b <= tiny || abs_b <= eps * (app * aqq).abs().sqrt() {
                    continue;
                }
                rotated = true;
                let e = b / abs_b;
                let tau = (aqq - app) / (T::lit(2.0) * abs_b);
                let t = if tau == T::zero() {
                    T::one()
                } else {
                    tau.signum() / (tau.abs() + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                rotate(&mut m, p, q, c, s, e);
                m[(p, p)] = Complex::new(app - t * abs_b, T::zero());
                m[(q, q)] = Complex::new(aqq + t * abs_b, T::zero());
                m[(p, q)] = Complex::new(T::zero(), T::zero());
                m[(q, p)] = Complex::new(T::zero(), T::zero());
                rotate_rows(&mut vt, p, q, c, s, e.conj());
            }
        }
        if !rotated {
            let values = (0..n).map(|i| m[(i, i)].re).collect();
            return Ok(HermitianEigen { values, vectors: vt.transpose(), sweeps });
        }
    }
    Err(Error::Domain(format!("Jacobi iteration did not converge in {sweeps} sweeps")))
}

/// Applies `A <- R^H A R` outside the `(p, q)` block, with
/// `R = [[c, s], [-s conj(e), c conj(e)]]` acting on coordinates `p, q`.
fn rotate<T: Real>(m: &mut CMatrix<T>, p: usize, q: usize, c: T, s: T, e: Complex<T>) {
    let n = m.rows();
    let se = e * s;
    let ce = e * c;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let apk = m[(p, k)];
        let aqk = m[(q, k)];
        let np = apk * c - aqk * se;
        let nq = apk * s + aqk * ce;
        m[(p, k)] = np;
        m[(q, k)] = nq;
        m[(k, p)] = np.conj();
        m[(k, q)] = nq.conj();
    }
}

/// Accumulates `V <- V R` on the transposed storage (rows are columns of `V`).
fn rotate_rows<T: Real>(vt: &mut CMatrix<T>, p: usize, q: usize, c: T, s: T, e_bar: Complex<T>) {
    let n = vt.cols();
    let (head, tail) = vt_split(vt, p, q);
    let se = e_bar * s;
    let ce = e_bar * c;
    for k in 0..n {
        let vp = head[k];
        let vq = tail[k];
        head[k] = vp * c - vq * se;
        tail[k] = vp * s + vq * ce;
    }
}

fn vt_split<T: Real>(vt: &mut CMatrix<T>, p: usize, q: usize) -> (&mut [Complex<T>], &mut [Complex<T>]) {
    debug_assert!(p < q);
    let n = vt.cols();
    let (a, b) = vt.as_mut_slice().split_at_mut(q * n);
    (&mut a[p * n..(p + 1) * n], &mut b[..n])
}

/// Thresholded pseudoinverse of a Hermitian positive semidefinite matrix.
#[derive(Clone, Debug)]
pub struct Pseudoinverse<T> {
    pub matrix: CMatrix<T>,
    pub rank: usize,
    pub lambda_max: T,
    pub threshold: T,
}

/// Inverts eigenvalues above `rel_tol * lambda_max` and zeroes the rest.
pub fn pinv_hermitian<T: Real>(g: &CMatrix<T>, rel_tol: T) -> Result<Pseudoinverse<T>> {
    let eig = hermitian_eigen(g)?;
    let n = g.rows();
    let lambda_max = eig.values.iter().copied().fold(T::zero(), T::max);
    let threshold = rel_tol * lambda_max;
    let keep: Vec<usize> = (0..n).filter(|&i| eig.values[i] > threshold && eig.values[i] > T::zero()).collect();
    if keep.is_empty() {
        return Err(Error::DegenerateData { threshold: threshold.as_f64() });
    }
    // G^+ = sum_i v_i v_i^H / lambda_i
    let mut left = CMatrix::<T>::zeros(n, keep.len());
    let mut right = CMatrix::<T>::zeros(keep.len(), n);
    for (j, &i) in keep.iter().enumerate() {
        let inv = T::one() / eig.values[i];
        for r in 0..n {
            let v = eig.vectors[(r, i)];
            left[(r, j)] = v * inv;
            right[(j, r)] = v.conj();
        }
    }
    let mut matrix = left.matmul(&right)?;
    matrix.as_mut_slice().par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| row[i].im = T::zero());
    Ok(Pseudoinverse { matrix, rank: keep.len(), lambda_max, threshold })
}
