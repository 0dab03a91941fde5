//! Observable dictionaries.
//!
//! Every family is indexed by integer multi-indices `k` with each component in
//! `{-(N-1), ..., N-1}`, giving `(2N-1)^dim` functions ordered lexicographically
//! (first axis slowest). With `y = x - center`, phase `theta = 2*pi*(k . y) / period`
//! and Gaussian envelope `g = exp(-|y|^2 / gauss_scale)`:
//!
//! | family               | `z_k(x)`           | `d z_k / d x_d`                                      |
//! |----------------------|--------------------|------------------------------------------------------|
//! | `cos_gauss_1d`/`_nd` | `cos(theta) * g`   | `(-(2 pi k_d / period) sin(theta) - (2 y_d / gauss_scale) cos(theta)) * g` |
//! | `complex_fourier_nd` | `exp(i theta)`     | `i (2 pi k_d / period) exp(i theta)`                  |
//!
//! Since `cos` is even, `k` and `-k` give the same cosine function; the duplicated
//! columns are harmless because the least-squares fit uses a thresholded pseudoinverse.
//! The zero multi-index is the unit element: `z_0(center) = 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Complex, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryFamily {
    #[serde(rename = "cos_gauss_1d")]
    CosGauss1d,
    CosGaussNd,
    ComplexFourierNd,
}

impl DictionaryFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            DictionaryFamily::CosGauss1d => "cos_gauss_1d",
            DictionaryFamily::CosGaussNd => "cos_gauss_nd",
            DictionaryFamily::ComplexFourierNd => "complex_fourier_nd",
        }
    }

    pub fn is_real(&self) -> bool {
        !matches!(self, DictionaryFamily::ComplexFourierNd)
    }
}

impl fmt::Display for DictionaryFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DictionaryFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "cos_gauss_1d" => Ok(Self::CosGauss1d),
            "cos_gauss_nd" => Ok(Self::CosGaussNd),
            "complex_fourier_nd" => Ok(Self::ComplexFourierNd),
            other => Err(Error::Config(format!("unknown dictionary family '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary<T> {
    family: DictionaryFamily,
    freq_count: usize,
    period: T,
    gauss_scale: T,
    center: Vec<T>,
    size: usize,
}

impl<T: Real> Dictionary<T> {
    /// `freq_count` is `N`; each axis uses frequencies `-(N-1)..=N-1`.
    /// `gauss_scale` is ignored by `complex_fourier_nd`.
    pub fn new(family: DictionaryFamily, freq_count: usize, period: T, gauss_scale: T, center: Vec<T>) -> Result<Self> {
        let dim = center.len();
        if dim == 0 {
            return Err(Error::Config("dictionary dimension must be positive".into()));
        }
        if freq_count == 0 {
            return Err(Error::Config("dictionary frequency count must be positive".into()));
        }
        if family == DictionaryFamily::CosGauss1d && dim != 1 {
            return Err(Error::Config(format!("cos_gauss_1d needs a 1-dimensional state, got {dim}")));
        }
        if !(period > T::zero() && period.is_finite()) {
            return Err(Error::Config(format!("dictionary period must be positive, got {period}")));
        }
        if family.is_real() && !(gauss_scale > T::zero() && gauss_scale.is_finite()) {
            return Err(Error::Config(format!("gauss_scale must be positive, got {gauss_scale}")));
        }
        let per_axis = 2 * freq_count - 1;
        let size = per_axis
            .checked_pow(dim as u32)
            .filter(|&s| s <= 1 << 24)
            .ok_or_else(|| Error::Config(format!("dictionary with {per_axis}^{dim} functions is too large")))?;
        Ok(Self { family, freq_count, period, gauss_scale, center, size })
    }

    pub fn family(&self) -> DictionaryFamily {
        self.family
    }

    pub fn freq_count(&self) -> usize {
        self.freq_count
    }

    pub fn period(&self) -> T {
        self.period
    }

    pub fn gauss_scale(&self) -> T {
        self.gauss_scale
    }

    pub fn center(&self) -> &[T] {
        &self.center
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn per_axis(&self) -> usize {
        2 * self.freq_count - 1
    }

    /// Multi-index of basis function `i`.
    pub fn multi_index(&self, mut i: usize) -> Vec<i64> {
        let per = self.per_axis();
        let offset = self.freq_count as i64 - 1;
        let mut k = vec![0i64; self.dim()];
        for slot in k.iter_mut().rev() {
            *slot = (i % per) as i64 - offset;
            i /= per;
        }
        k
    }

    /// Position of a multi-index in the basis, if every component is in range.
    pub fn position(&self, k: &[i64]) -> Option<usize> {
        if k.len() != self.dim() {
            return None;
        }
        let per = self.per_axis();
        let offset = self.freq_count as i64 - 1;
        let mut pos = 0usize;
        for &kd in k {
            if kd.abs() > offset {
                return None;
            }
            pos = pos * per + (kd + offset) as usize;
        }
        Some(pos)
    }

    fn omega(&self) -> T {
        T::TAU() / self.period
    }

    fn envelope(&self, y: &[T]) -> T {
        match self.family {
            DictionaryFamily::ComplexFourierNd => T::one(),
            _ => (-y.iter().map(|&v| v * v).sum::<T>() / self.gauss_scale).exp(),
        }
    }

    /// Fills `out` with `exp(i theta_k)` for every multi-index as a product of per-axis factors.
    fn phases(&self, y: &[T], out: &mut [Complex<T>]) {
        let per = self.per_axis();
        let offset = self.freq_count as i64 - 1;
        let omega = self.omega();
        let axis: Vec<Vec<Complex<T>>> = y
            .iter()
            .map(|&yd| {
                (0..per)
                    .map(|j| {
                        let th = omega * T::lit((j as i64 - offset) as f64) * yd;
                        Complex::new(th.cos(), th.sin())
                    })
                    .collect()
            })
            .collect();
        out[0] = Complex::new(T::one(), T::zero());
        let mut len = 1;
        // Expand axis by axis; the last axis varies fastest.
        for factors in &axis {
            for i in (0..len).rev() {
                let base = out[i];
                for (j, &f) in factors.iter().enumerate() {
                    out[i * per + j] = base * f;
                }
            }
            len *= per;
        }
    }

    fn shifted(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.center).map(|(&a, &c)| a - c).collect()
    }

    /// Evaluates all basis functions at `x` into `out` (length `size`).
    pub fn eval_into(&self, x: &[T], out: &mut [Complex<T>]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(out.len(), self.size);
        let y = self.shifted(x);
        self.phases(&y, out);
        if self.family.is_real() {
            let g = self.envelope(&y);
            for v in out.iter_mut() {
                *v = Complex::new(v.re * g, T::zero());
            }
        }
    }

    pub fn eval(&self, x: &[T]) -> Vec<Complex<T>> {
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.size];
        self.eval_into(x, &mut out);
        out
    }

    /// Single basis function `z_i(x)`.
    pub fn eval_one(&self, i: usize, x: &[T]) -> Complex<T> {
        let y = self.shifted(x);
        let k = self.multi_index(i);
        let theta = self.omega() * k.iter().zip(&y).map(|(&kd, &yd)| T::lit(kd as f64) * yd).sum::<T>();
        match self.family {
            DictionaryFamily::ComplexFourierNd => Complex::new(theta.cos(), theta.sin()),
            _ => Complex::new(theta.cos() * self.envelope(&y), T::zero()),
        }
    }

    /// Analytic gradient, row-major `size x dim`.
    pub fn grad(&self, x: &[T]) -> Vec<Complex<T>> {
        let n = self.dim();
        let y = self.shifted(x);
        let mut ph = vec![Complex::new(T::zero(), T::zero()); self.size];
        self.phases(&y, &mut ph);
        let omega = self.omega();
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.size * n];
        let g = self.envelope(&y);
        let two = T::lit(2.0);
        for (i, &e) in ph.iter().enumerate() {
            let k = self.multi_index(i);
            for d in 0..n {
                let wk = omega * T::lit(k[d] as f64);
                out[i * n + d] = match self.family {
                    DictionaryFamily::ComplexFourierNd => Complex::new(-wk * e.im, wk * e.re),
                    _ => Complex::new((-wk * e.im - two * y[d] / self.gauss_scale * e.re) * g, T::zero()),
                };
            }
        }
        out
    }

    /// Index of the real zero-frequency function, checked to equal 1 at `x_eq`.
    pub fn unit_index(&self, x_eq: &[T]) -> Result<usize> {
        let u = self.position(&vec![0; self.dim()]).expect("zero index in range");
        let v = self.eval_one(u, x_eq);
        if (v.re - T::one()).abs().as_f64() > 1e-12 || v.im != T::zero() {
            return Err(Error::Precondition(format!(
                "no dictionary element equals 1 at the equilibrium (z_0 = {v}); center the dictionary on x_eq"
            )));
        }
        Ok(u)
    }

    /// One-line textual descriptor, parsed back by [`Dictionary::parse_descriptor`].
    pub fn descriptor(&self) -> String {
        let center: Vec<String> = self.center.iter().map(|c| format!("{}", c.as_f64())).collect();
        format!(
            "{} n={} period={} gauss={} center={}",
            self.family,
            self.freq_count,
            self.period.as_f64(),
            self.gauss_scale.as_f64(),
            center.join(",")
        )
    }

    pub fn parse_descriptor(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let family: DictionaryFamily = parts.next().ok_or_else(|| Error::Parse("empty dictionary descriptor".into()))?.parse()?;
        let (mut n, mut period, mut gauss, mut center) = (None, None, None, None);
        for p in parts {
            let (key, val) = p.split_once('=').ok_or_else(|| Error::Parse(format!("bad descriptor field '{p}'")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{v}' in descriptor")));
            match key {
                "n" => n = Some(val.parse::<usize>().map_err(|_| Error::Parse(format!("bad n '{val}'")))?),
                "period" => period = Some(num(val)?),
                "gauss" => gauss = Some(num(val)?),
                "center" => center = Some(val.split(',').map(num).collect::<Result<Vec<f64>>>()?),
                _ => return Err(Error::Parse(format!("unknown descriptor field '{key}'"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("descriptor lacks '{k}'"));
        Self::new(
            family,
            n.ok_or_else(|| missing("n"))?,
            T::lit(period.ok_or_else(|| missing("period"))?),
            T::lit(gauss.ok_or_else(|| missing("gauss"))?),
            center.ok_or_else(|| missing("center"))?.into_iter().map(T::lit).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cos1d(n: usize) -> Dictionary<f64> {
        Dictionary::new(DictionaryFamily::CosGauss1d, n, 3.0, 4.0, vec![0.0]).unwrap()
    }

    fn cos2d(n: usize) -> Dictionary<f64> {
        Dictionary::new(DictionaryFamily::CosGaussNd, n, 3.0, 4.0, vec![0.0, 0.0]).unwrap()
    }

    fn fourier2d(n: usize) -> Dictionary<f64> {
        Dictionary::new(DictionaryFamily::ComplexFourierNd, n, 12.0, 1.0, vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn sizes() {
        assert_eq!(cos1d(128).size(), 255);
        assert_eq!(cos2d(15).size(), 841);
        assert_eq!(cos2d(50).size(), 9801);
        let d3 = Dictionary::<f64>::new(DictionaryFamily::ComplexFourierNd, 10, 12.0, 1.0, vec![0.0; 3]).unwrap();
        assert_eq!(d3.size(), 19 * 19 * 19);
        assert!(Dictionary::<f64>::new(DictionaryFamily::CosGauss1d, 3, 3.0, 4.0, vec![0.0; 2]).is_err());
        assert!(Dictionary::<f64>::new(DictionaryFamily::CosGaussNd, 0, 3.0, 4.0, vec![0.0; 2]).is_err());
    }

    #[test]
    fn all_ones_at_origin() {
        assert!(cos1d(5).eval(&[0.0]).iter().all(|v| *v == Complex::new(1.0, 0.0)));
        assert!(fourier2d(4).eval(&[0.0, 0.0]).iter().all(|v| *v == Complex::new(1.0, 0.0)));
    }

    #[test]
    fn cos_gauss_value() {
        let d = cos1d(2);
        let k1 = d.position(&[1]).unwrap();
        let v = d.eval(&[1.5])[k1];
        // independent scalar arithmetic: cos(pi) * exp(-0.5625)
        assert!((v.re - (-0.569_782_824_730_923)).abs() < 1e-12, "{v}");
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn product_expansion_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [cos1d(6), cos2d(4), fourier2d(4)] {
            let x: Vec<f64> = (0..d.dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let all = d.eval(&x);
            for (i, v) in all.iter().enumerate() {
                assert!((*v - d.eval_one(i, &x)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn index_round_trip() {
        let d = cos2d(4);
        for i in 0..d.size() {
            assert_eq!(d.position(&d.multi_index(i)), Some(i));
        }
        assert_eq!(d.position(&[4, 0]), None);
    }

    fn check_fd(d: &Dictionary<f64>, lo: f64, hi: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-5;
        let n = d.dim();
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
            let g = d.grad(&x);
            for dd in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[dd] += h;
                xm[dd] -= h;
                let (vp, vm) = (d.eval(&xp), d.eval(&xm));
                for i in 0..d.size() {
                    let fd = (vp[i] - vm[i]) / (2.0 * h);
                    let an = g[i * n + dd];
                    let scale = an.norm().max(1.0);
                    assert!((fd - an).norm() / scale <= 1e-6, "i={i} d={dd} fd={fd} an={an}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_fd(&cos1d(6), -1.5, 1.5);
        check_fd(&cos2d(4), -3.0, 3.0);
        check_fd(&fourier2d(4), -3.0, 3.0);
    }

    #[test]
    fn gradient_special_values() {
        let d = cos1d(4);
        let u = d.unit_index(&[0.0]).unwrap();
        assert_eq!(d.grad(&[0.0])[u], Complex::new(0.0, 0.0));
        let f = fourier2d(3);
        let x = [0.7, -1.1];
        let i = f.position(&[2, -1]).unwrap();
        let g = f.grad(&x);
        let z = f.eval_one(i, &x);
        let w = std::f64::consts::PI / 6.0;
        assert!((g[2 * i] - Complex::new(0.0, w * 2.0) * z).norm() < 1e-12);
        assert!((g[2 * i + 1] - Complex::new(0.0, -w) * z).norm() < 1e-12);
    }

    #[test]
    fn bounded_by_one() {
        for d in [cos2d(5), fourier2d(5)] {
            for a in 0..=20 {
                for b in 0..=20 {
                    let x = [-3.0 + 0.3 * a as f64, -3.0 + 0.3 * b as f64];
                    assert!(d.eval(&x).iter().all(|v| v.norm() <= 1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn unit_index_is_zero_frequency() {
        let d = cos1d(8);
        let u = d.unit_index(&[0.0]).unwrap();
        assert_eq!(d.multi_index(u), vec![0]);
        assert!((d.eval(&[0.0])[u].re - 1.0).abs() <= 1e-12);
        assert_eq!(fourier2d(4).multi_index(fourier2d(4).unit_index(&[0.0, 0.0]).unwrap()), vec![0, 0]);
        assert_eq!(cos2d(4).multi_index(cos2d(4).unit_index(&[0.0, 0.0]).unwrap()), vec![0, 0]);
        // envelope centered away from the equilibrium has no unit element
        let off = Dictionary::new(DictionaryFamily::CosGauss1d, 3, 3.0, 4.0, vec![0.5]).unwrap();
        assert!(off.unit_index(&[0.0]).is_err());
        assert!(off.unit_index(&[0.5]).is_ok());
    }

    #[test]
    fn descriptor_round_trip() {
        let d = Dictionary::new(DictionaryFamily::CosGaussNd, 7, 6.0, 25.0, vec![0.25, -1.0]).unwrap();
        let back = Dictionary::<f64>::parse_descriptor(&d.descriptor()).unwrap();
        assert_eq!(back, d);
        assert!(Dictionary::<f64>::parse_descriptor("cos_gauss_nd n=3").is_err());
    }

    #[test]
    fn single_precision_eval() {
        let d = Dictionary::<f32>::new(DictionaryFamily::CosGauss1d, 4, 3.0, 4.0, vec![0.0]).unwrap();
        let v = d.eval(&[0.3]);
        assert_eq!(v.len(), 7);
        assert!((v[3].re - (-0.0225f32).exp()).abs() < 1e-6);
    }
}
