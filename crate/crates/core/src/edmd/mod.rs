//! Least-squares operator learning (EDMD) on stopped-flow data.

pub mod jacobi;
pub mod matrix;
pub mod spectrum;

use rayon::prelude::*;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::integrate::stopped_trajectory;
use crate::scalar::{Complex, Real};
use crate::systems::SystemSpec;

pub use jacobi::{hermitian_eigen, pinv_hermitian, HermitianEigen, Pseudoinverse};
pub use matrix::CMatrix;
pub use spectrum::{spectrum, Eigenpair};

/// Features `X[m, i] = z_i(x_m)` and labels `Y[m, i] = (T_dt z_i)(x_m)`.
#[derive(Clone, Debug)]
pub struct DataMatrices<T> {
    pub x: CMatrix<T>,
    pub y: CMatrix<T>,
    pub samples: Vec<Vec<T>>,
    pub horizon: T,
    pub points: usize,
    pub dictionary: String,
}

impl<T: Real> DataMatrices<T> {
    /// Fewer samples than basis functions: the fit is underdetermined (allowed).
    pub fn is_underdetermined(&self) -> bool {
        self.x.rows() < self.x.cols()
    }
}

/// Builds the data matrices. One stopped trajectory per sample serves every basis function.
/// Samples are processed in parallel; rows keep the sample order.
pub fn stack_data<T: Real>(
    sys: &SystemSpec<T>,
    dict: &Dictionary<T>,
    samples: &[Vec<T>],
    horizon: T,
    points: usize,
) -> Result<DataMatrices<T>> {
    if dict.dim() != sys.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary acts on {} dimensions, system has {}",
            dict.dim(),
            sys.dim()
        )));
    }
    if samples.is_empty() {
        return Err(Error::Precondition("no samples".into()));
    }
    let n = dict.size();
    let rows: Vec<Result<(Vec<Complex<T>>, Vec<Complex<T>>)>> = samples
        .par_iter()
        .enumerate()
        .map(|(m, x)| {
            if !sys.region().contains(x) {
                return Err(Error::Precondition(format!("sample {m} lies outside the region")));
            }
            let traj = stopped_trajectory(sys, x, horizon, points).map_err(|e| match e {
                Error::IntegrationBlowup { index, .. } => Error::IntegrationBlowup { index, sample: Some(m) },
                other => other,
            })?;
            let feat = dict.eval(x);
            let disc = traj.discount();
            let mut label = dict.eval(traj.final_state());
            for v in label.iter_mut() {
                *v = *v * disc;
            }
            Ok((feat, label))
        })
        .collect();
    let mut xs = Vec::with_capacity(samples.len() * n);
    let mut ys = Vec::with_capacity(samples.len() * n);
    for row in rows {
        let (f, l) = row?;
        xs.extend(f);
        ys.extend(l);
    }
    Ok(DataMatrices {
        x: CMatrix::from_rows(samples.len(), n, xs)?,
        y: CMatrix::from_rows(samples.len(), n, ys)?,
        samples: samples.to_vec(),
        horizon,
        points,
        dictionary: dict.descriptor(),
    })
}

/// Learned matrix representation `T` of the operator on the dictionary span.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix<T> {
    pub t: CMatrix<T>,
    /// Relative eigenvalue threshold used for the pseudoinverse.
    pub reg: T,
    pub rank: usize,
    /// `||Y - X T||_F`.
    pub residual: T,
    pub horizon: T,
    pub dictionary: String,
}

/// `T = (X^H X)^+ X^H Y` with the Gram pseudoinverse from a Jacobi eigendecomposition.
pub fn fit_operator<T: Real>(data: &DataMatrices<T>, svd_tol: T) -> Result<OperatorMatrix<T>> {
    if data.x.rows() == 0 || data.x.cols() == 0 {
        return Err(Error::Precondition("empty feature matrix".into()));
    }
    let (t, rank) = least_squares(&data.x, &data.y, svd_tol)?;
    let residual = data.y.sub(&data.x.matmul(&t)?)?.frobenius();
    Ok(OperatorMatrix {
        t,
        reg: svd_tol,
        rank,
        residual,
        horizon: data.horizon,
        dictionary: data.dictionary.clone(),
    })
}

/// Minimizer of `||Y - X A||_F` via the thresholded Gram pseudoinverse; returns the solution and rank.
pub fn least_squares<T: Real>(x: &CMatrix<T>, y: &CMatrix<T>, svd_tol: T) -> Result<(CMatrix<T>, usize)> {
    if x.rows() != y.rows() {
        return Err(Error::DimensionMismatch(format!("X has {} rows, Y has {}", x.rows(), y.rows())));
    }
    let gram = x.gram();
    let pinv = pinv_hermitian(&gram, svd_tol)?;
    let xhy = x.adjoint_mul(y)?;
    Ok((pinv.matrix.matmul(&xhy)?, pinv.rank))
}

/// One step of the matrix power sequence: returns `T W` and `||T W - W||_F`.
pub fn matrix_power_step<T: Real>(t: &CMatrix<T>, w_prev: &CMatrix<T>) -> Result<(CMatrix<T>, T)> {
    if !t.is_square() {
        return Err(Error::DimensionMismatch("operator matrix is not square".into()));
    }
    let next = t.matmul(w_prev)?;
    let diff = next.sub(w_prev)?.frobenius();
    Ok((next, diff))
}

/// Vector counterpart of [`matrix_power_step`]: returns `T c` and `||T c - c||_2`.
pub fn vector_power_step<T: Real>(t: &CMatrix<T>, c_prev: &[Complex<T>]) -> Result<(Vec<Complex<T>>, T)> {
    if !t.is_square() {
        return Err(Error::DimensionMismatch("operator matrix is not square".into()));
    }
    let next = t.mul_vec(c_prev)?;
    let diff = matrix::frobenius(&next.iter().zip(c_prev).map(|(&a, &b)| a - b).collect::<Vec<_>>());
    Ok((next, diff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::DictionaryFamily;
    use crate::integrate::evaluate_t_delta;
    use crate::systems::{builtin, BenchmarkId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex<f64> {
        Complex::new(re, 0.0)
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, cols: usize) -> CMatrix<f64> {
        CMatrix::from_fn(r, cols, |_, _| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn equilibrium_sample_row() {
        let sys = builtin::<f64>(BenchmarkId::VdpReversed).unwrap();
        let dict = Dictionary::new(DictionaryFamily::CosGaussNd, 3, 3.0, 4.0, vec![0.0, 0.0]).unwrap();
        let data = stack_data(&sys, &dict, &[vec![0.0, 0.0]], 1.5, 101).unwrap();
        assert_eq!(data.x.row(0), dict.eval(&[0.0, 0.0]).as_slice());
        assert_eq!(data.y.row(0), data.x.row(0));
        assert!(data.is_underdetermined());
    }

    #[test]
    fn rows_match_per_sample_recomputation() {
        let sys = builtin::<f64>(BenchmarkId::Cubic1d).unwrap();
        let dict = Dictionary::new(DictionaryFamily::CosGauss1d, 4, 3.0, 4.0, vec![0.0]).unwrap();
        let samples: Vec<Vec<f64>> = (0..11).map(|j| vec![-1.5 + 0.3 * j as f64]).collect();
        let data = stack_data(&sys, &dict, &samples, 1.0, 1001).unwrap();
        assert_eq!(data.x.rows(), 11);
        assert_eq!(data.x.cols(), 7);
        for (m, x) in samples.iter().enumerate() {
            assert_eq!(data.x.row(m), dict.eval(x).as_slice());
            for i in 0..dict.size() {
                let single = evaluate_t_delta(&sys, |y: &[f64]| dict.eval_one(i, y), x, 1.0, 1001).unwrap();
                assert!((data.y[(m, i)] - single).norm() < 1e-13, "m={m} i={i}");
            }
        }
        assert!(data.x.is_finite() && data.y.is_finite());
    }

    #[test]
    fn sample_outside_region_rejected() {
        let sys = builtin::<f64>(BenchmarkId::Cubic1d).unwrap();
        let dict = Dictionary::new(DictionaryFamily::CosGauss1d, 2, 3.0, 4.0, vec![0.0]).unwrap();
        assert!(stack_data(&sys, &dict, &[vec![0.0], vec![2.0]], 1.0, 11).is_err());
    }

    #[test]
    fn exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 64, 8);
        let a = random(&mut rng, 8, 8);
        let y = x.matmul(&a).unwrap();
        let (t, rank) = least_squares(&x, &y, 1e-12).unwrap();
        assert_eq!(rank, 8);
        assert!(t.sub(&a).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn identity_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = random(&mut rng, 5, 5);
        let (t, _) = least_squares(&CMatrix::identity(5), &y, 1e-12).unwrap();
        assert!(t.sub(&y).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn residual_zero_for_exact_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&mut rng, 30, 6);
        let a = random(&mut rng, 6, 6);
        let data = DataMatrices {
            y: x.matmul(&a).unwrap(),
            x,
            samples: vec![],
            horizon: 1.0,
            points: 2,
            dictionary: String::new(),
        };
        let op = fit_operator(&data, 1e-12).unwrap();
        assert!(op.residual < 1e-10);
    }

    #[test]
    fn power_steps() {
        let id = CMatrix::<f64>::identity(3);
        let (next, diff) = matrix_power_step(&id, &id).unwrap();
        assert_eq!(next, id);
        assert_eq!(diff, 0.0);
        let d = CMatrix::from_fn(2, 2, |i, j| if i == j { c([1.0, 0.5][i]) } else { c(0.0) });
        let (t2, diff) = matrix_power_step(&d, &d).unwrap();
        assert!((diff - 0.25).abs() < 1e-15);
        assert_eq!(t2[(1, 1)], c(0.25));
        let (v, dv) = vector_power_step(&d, &[c(1.0), c(1.0)]).unwrap();
        assert_eq!(v, vec![c(1.0), c(0.5)]);
        assert!((dv - 0.5).abs() < 1e-15);
        assert!(matrix_power_step(&CMatrix::<f64>::zeros(2, 3), &id).is_err());
        assert!(vector_power_step(&d, &[c(1.0)]).is_err());
    }
}
