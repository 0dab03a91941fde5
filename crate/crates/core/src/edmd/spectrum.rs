//! Leading eigenpairs of a learned operator by power iteration with Wielandt deflation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::{conj_dot, frobenius, CMatrix};
use crate::error::{Error, Result};
use crate::scalar::{fmt_f64, Complex, Real};

const MAX_ITERS: usize = 20_000;

#[derive(Clone, Debug)]
pub struct Eigenpair<T> {
    pub mu: Complex<T>,
    /// Continuous-time exponent `log(mu) / dt`.
    pub lambda: Complex<T>,
    pub vector: Vec<Complex<T>>,
    pub converged: bool,
}

/// Top `top_k` eigenpairs by modulus. Pairs whose power iteration stalls (for instance
/// conjugate eigenvalues of equal modulus) are returned with `converged = false`.
pub fn spectrum<T: Real>(t: &CMatrix<T>, top_k: usize, dt: T) -> Result<Vec<Eigenpair<T>>> {
    if !t.is_square() {
        return Err(Error::DimensionMismatch("spectrum of a non-square matrix".into()));
    }
    let n = t.rows();
    if top_k > n {
        return Err(Error::Precondition(format!("requested {top_k} eigenpairs of a {n}x{n} matrix")));
    }
    let tol = T::lit(1e-10);
    let mut a = t.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    // Each deflation: (mu, v, x) with A_next = A - v x^T.
    let mut deflations: Vec<(Complex<T>, Vec<Complex<T>>, Vec<Complex<T>>)> = Vec::new();
    let mut out = Vec::with_capacity(top_k);

    for _ in 0..top_k {
        let mut v: Vec<Complex<T>> = (0..n)
            .map(|_| Complex::new(T::lit(rng.gen_range(-1.0..1.0)), T::lit(rng.gen_range(-1.0..1.0))))
            .collect();
        normalize(&mut v);
        let mut mu = Complex::new(T::zero(), T::zero());
        let mut converged = false;
        for _ in 0..MAX_ITERS {
            let av = a.mul_vec(&v)?;
            mu = conj_dot(&v, &av);
            let res: Vec<Complex<T>> = av.iter().zip(&v).map(|(&x, &y)| x - y * mu).collect();
            let nav = frobenius(&av);
            if frobenius(&res) <= tol * nav.max(T::min_positive_value()) {
                converged = true;
                break;
            }
            if nav == T::zero() {
                mu = Complex::new(T::zero(), T::zero());
                converged = true;
                break;
            }
            v = av;
            normalize(&mut v);
        }
        // Map the eigenvector back through earlier deflations.
        let mut u = v.clone();
        for (mu_j, v_j, x_j) in deflations.iter().rev() {
            let xw = u.iter().zip(x_j).fold(Complex::new(T::zero(), T::zero()), |acc, (&a, &b)| acc + a * b);
            u = u.iter().zip(v_j).map(|(&w, &vj)| w * (mu - *mu_j) + vj * xw).collect();
        }
        normalize(&mut u);
        out.push(Eigenpair { mu, lambda: mu.ln() / dt, vector: u, converged });

        let p = (0..n).max_by(|&i, &j| v[i].norm().partial_cmp(&v[j].norm()).unwrap()).unwrap_or(0);
        if v[p].norm() == T::zero() {
            break;
        }
        let x: Vec<Complex<T>> = a.row(p).iter().map(|&r| r / v[p]).collect();
        for r in 0..n {
            for c in 0..n {
                let d = v[r] * x[c];
                a[(r, c)] -= d;
            }
        }
        deflations.push((mu, v, x));
    }
    Ok(out)
}

fn normalize<T: Real>(v: &mut [Complex<T>]) {
    let n = frobenius(v);
    if n > T::zero() {
        for z in v.iter_mut() {
            *z = *z / n;
        }
    }
}

/// Writes `index,re_mu,im_mu,re_lambda,im_lambda,converged` rows.
pub fn write_spectrum_csv<T: Real, W: Write>(pairs: &[Eigenpair<T>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "re_mu", "im_mu", "re_lambda", "im_lambda", "converged"])?;
    for (i, p) in pairs.iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt_f64(p.mu.re.as_f64()),
            fmt_f64(p.mu.im.as_f64()),
            fmt_f64(p.lambda.re.as_f64()),
            fmt_f64(p.lambda.im.as_f64()),
            p.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_spectrum() {
        let d = [1.0f64, 0.5, 0.1];
        let t = CMatrix::from_fn(3, 3, |i, j| Complex::new(if i == j { d[i] } else { 0.0 }, 0.0));
        let s = spectrum(&t, 3, 1.0).unwrap();
        for (p, &e) in s.iter().zip(&d) {
            assert!(p.converged);
            assert!((p.mu.re - e).abs() < 1e-8);
            assert!((p.lambda.re - e.ln()).abs() < 1e-8);
        }
    }

    #[test]
    fn eigenvectors_satisfy_definition() {
        // upper triangular, distinct moduli
        let vals = [[2.0, 1.0, 0.3], [0.0, -1.0, 0.7], [0.0, 0.0, 0.25]];
        let t = CMatrix::from_fn(3, 3, |i, j| Complex::new(vals[i][j], 0.0));
        for p in spectrum(&t, 3, 1.0).unwrap() {
            let av = t.mul_vec(&p.vector).unwrap();
            let err: f64 = av.iter().zip(&p.vector).map(|(&a, &v)| (a - v * p.mu).norm()).fold(0.0, f64::max);
            assert!(err < 1e-7, "mu={} err={err}", p.mu);
        }
    }

    #[test]
    fn empty_request() {
        assert!(spectrum(&CMatrix::<f64>::identity(3), 0, 1.0).unwrap().is_empty());
        assert!(spectrum(&CMatrix::<f64>::identity(3), 4, 1.0).is_err());
    }

    #[test]
    fn rotation_flags_non_convergence() {
        let t = CMatrix::from_fn(2, 2, |i, j| Complex::new([[0.0, -1.0], [1.0, 0.0]][i][j], 0.0));
        let s = spectrum(&t, 1, 1.0).unwrap();
        // complex start vector: power iteration on a real rotation still sees both +-i
        assert_eq!(s.len(), 1);
        assert!(s[0].mu.norm() <= 1.0 + 1e-12);
    }
}
