//! From a learned operator to a region-of-attraction estimate: iterate the operator on the
//! unit observable to obtain `U_ZK`, threshold it on a grid, flood-fill the component that
//! holds the equilibrium, and check the Lyapunov sign condition `L_f U > 0` cell by cell.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::edmd::{matrix::frobenius, matrix_power_step, vector_power_step, CMatrix};
use crate::error::{Error, Result};
use crate::scalar::{norm2, Complex, Real};
use crate::systems::{closed_form_u_1d, Region, SystemSpec};

/// Coefficient norm beyond which the iteration is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// A real function of the state with a gradient.
pub trait ScalarField<T: Real>: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[T]) -> T;
    fn gradient(&self, x: &[T]) -> Vec<T>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationMode {
    /// Powers of the full matrix; the stopping residual is `||T^k - T^(k-1)||_F`.
    #[default]
    Matrix,
    /// Powers applied to the seed vector only; the residual is `||T^k w - T^(k-1) w||_2`.
    Vector,
}

impl std::str::FromStr for IterationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matrix" => Ok(Self::Matrix),
            "vector" => Ok(Self::Vector),
            _ => Err(Error::Config(format!("unknown iteration mode '{s}' (matrix|vector)"))),
        }
    }
}

impl std::fmt::Display for IterationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Matrix => "matrix",
            Self::Vector => "vector",
        })
    }
}

/// `U_ZK(x) = Re(sum_i z_i(x) c_i)` with `c = T^k w`.
#[derive(Clone, Debug, PartialEq)]
pub struct UApprox<T> {
    pub dict: Dictionary<T>,
    pub coeffs: Vec<Complex<T>>,
    pub iterations: usize,
    pub final_residual: T,
    /// Step differences for `k = 1..=iterations`.
    pub residuals: Vec<T>,
    pub mode: IterationMode,
}

impl<T: Real> UApprox<T> {
    pub fn complex_value(&self, x: &[T]) -> Complex<T> {
        self.dict
            .eval(x)
            .iter()
            .zip(&self.coeffs)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (&z, &c)| acc + z * c)
    }

    /// Imaginary part of the expansion, reported as a diagnostic.
    pub fn imag(&self, x: &[T]) -> T {
        self.complex_value(x).im
    }
}

impl<T: Real> ScalarField<T> for UApprox<T> {
    fn dim(&self) -> usize {
        self.dict.dim()
    }

    fn value(&self, x: &[T]) -> T {
        self.complex_value(x).re
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        let n = self.dict.dim();
        let g = self.dict.grad(x);
        (0..n)
            .map(|d| {
                self.coeffs
                    .iter()
                    .enumerate()
                    .fold(T::zero(), |acc, (i, &c)| acc + (g[i * n + d] * c).re)
            })
            .collect()
    }
}

/// Iterates the operator from the unit basis vector until the step difference drops to
/// `tol` or `max_iter` steps are taken, whichever comes first.
pub fn build_u_zk<T: Real>(
    t: &CMatrix<T>,
    dict: &Dictionary<T>,
    x_eq: &[T],
    tol: T,
    max_iter: usize,
    mode: IterationMode,
) -> Result<UApprox<T>> {
    let n = dict.size();
    if t.rows() != n || t.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "operator is {}x{}, dictionary has {n} functions",
            t.rows(),
            t.cols()
        )));
    }
    if !(tol > T::zero()) {
        return Err(Error::Precondition(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::Precondition("need at least one iteration".into()));
    }
    let unit = dict.unit_index(x_eq)?;
    let mut residuals = Vec::with_capacity(max_iter);
    let check = |k: usize, c: &[Complex<T>]| -> Result<()> {
        let norm = frobenius(c);
        if !(norm.as_f64() <= DIVERGENCE_NORM) {
            return Err(Error::Divergence { k, norm: norm.as_f64() });
        }
        Ok(())
    };
    let coeffs = match mode {
        IterationMode::Matrix => {
            let mut w = CMatrix::identity(n);
            for k in 1..=max_iter {
                let (next, diff) = matrix_power_step(t, &w)?;
                w = next;
                residuals.push(diff);
                check(k, &w.column(unit))?;
                if diff <= tol {
                    break;
                }
            }
            w.column(unit)
        }
        IterationMode::Vector => {
            let mut c = vec![Complex::new(T::zero(), T::zero()); n];
            c[unit] = Complex::new(T::one(), T::zero());
            for k in 1..=max_iter {
                let (next, diff) = vector_power_step(t, &c)?;
                c = next;
                residuals.push(diff);
                check(k, &c)?;
                if diff <= tol {
                    break;
                }
            }
            c
        }
    };
    Ok(UApprox {
        dict: dict.clone(),
        coeffs,
        iterations: residuals.len(),
        final_residual: *residuals.last().expect("at least one iteration"),
        residuals,
        mode,
    })
}

/// Uniform cell grid over a box; cell `j` on axis `d` is centered at `lo + (j + 1/2) * h_d`.
/// Flat indices put the first axis slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    region: Region<T>,
    resolution: Vec<usize>,
}

impl<T: Real> Grid<T> {
    pub fn new(region: Region<T>, resolution: Vec<usize>) -> Result<Self> {
        if resolution.len() != region.dim() {
            return Err(Error::DimensionMismatch(format!(
                "grid resolution has {} axes, region has {}",
                resolution.len(),
                region.dim()
            )));
        }
        if resolution.iter().any(|&r| r == 0) {
            return Err(Error::Config("grid resolution must be positive on every axis".into()));
        }
        Ok(Self { region, resolution })
    }

    pub fn region(&self) -> &Region<T> {
        &self.region
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, d: usize) -> T {
        self.region.width(d) / T::from_usize_lossy(self.resolution[d])
    }

    pub fn multi(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.resolution.len()];
        for d in (0..self.resolution.len()).rev() {
            idx[d] = flat % self.resolution[d];
            flat /= self.resolution[d];
        }
        idx
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.resolution).fold(0, |acc, (&i, &r)| acc * r + i)
    }

    pub fn center(&self, flat: usize) -> Vec<T> {
        self.multi(flat)
            .iter()
            .enumerate()
            .map(|(d, &j)| self.region.lo(d) + (T::from_usize_lossy(j) + T::lit(0.5)) * self.spacing(d))
            .collect()
    }

    /// Cell containing `x` (points on the upper face belong to the last cell).
    pub fn cell_of(&self, x: &[T]) -> Option<usize> {
        if !self.region.contains(x) {
            return None;
        }
        let idx: Vec<usize> = x
            .iter()
            .enumerate()
            .map(|(d, &v)| {
                let j = ((v - self.region.lo(d)) / self.spacing(d)).floor().to_usize().unwrap_or(0);
                j.min(self.resolution[d] - 1)
            })
            .collect();
        Some(self.flat(&idx))
    }

    /// Face-adjacent neighbors.
    pub fn neighbors(&self, flat: usize) -> Vec<usize> {
        let idx = self.multi(flat);
        let mut out = Vec::with_capacity(2 * idx.len());
        let mut stride = 1;
        for d in (0..idx.len()).rev() {
            if idx[d] > 0 {
                out.push(flat - stride);
            }
            if idx[d] + 1 < self.resolution[d] {
                out.push(flat + stride);
            }
            stride *= self.resolution[d];
        }
        out
    }
}

/// Evaluates `field` at every cell center (in parallel, output in cell order).
pub fn evaluate_on_grid<T: Real, F: ScalarField<T> + ?Sized>(field: &F, grid: &Grid<T>) -> Vec<T> {
    (0..grid.len()).into_par_iter().map(|i| field.value(&grid.center(i))).collect()
}

/// Connected superlevel set `{value >= c}` containing the equilibrium cell.
#[derive(Clone, Debug, PartialEq)]
pub struct RoaMask<T> {
    pub grid: Grid<T>,
    pub mask: Vec<bool>,
    pub threshold: T,
    pub seed: usize,
    pub volume_fraction: T,
}

impl<T: Real> RoaMask<T> {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Per-axis `[min, max]` of the masked cell centers.
    pub fn extent(&self) -> Vec<(T, T)> {
        let dim = self.grid.region().dim();
        let mut ext = vec![(T::infinity(), T::neg_infinity()); dim];
        for (i, _) in self.mask.iter().enumerate().filter(|(_, &m)| m) {
            for (d, v) in self.grid.center(i).into_iter().enumerate() {
                ext[d].0 = ext[d].0.min(v);
                ext[d].1 = ext[d].1.max(v);
            }
        }
        ext
    }
}

/// Evaluates `field` on a `resolution` grid over the system's region and extracts the mask.
pub fn extract_roa<T: Real, F: ScalarField<T> + ?Sized>(
    field: &F,
    sys: &SystemSpec<T>,
    resolution: &[usize],
    c: T,
) -> Result<RoaMask<T>> {
    let grid = Grid::new(sys.region().clone(), resolution.to_vec())?;
    let values = evaluate_on_grid(field, &grid);
    extract_from_values(&grid, &values, sys.x_eq(), c)
}

/// Breadth-first flood fill over face neighbors from the cell of `x_eq`.
pub fn extract_from_values<T: Real>(grid: &Grid<T>, values: &[T], x_eq: &[T], c: T) -> Result<RoaMask<T>> {
    if !(c > T::zero()) {
        return Err(Error::Precondition(format!("threshold must be positive, got {c}")));
    }
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!("{} values for {} cells", values.len(), grid.len())));
    }
    let seed = grid
        .cell_of(x_eq)
        .ok_or_else(|| Error::Precondition("equilibrium is outside the grid".into()))?;
    if !(values[seed] >= c) {
        return Err(Error::SeedBelowThreshold { value: values[seed].as_f64(), threshold: c.as_f64() });
    }
    let mut mask = vec![false; grid.len()];
    let mut queue = VecDeque::from([seed]);
    mask[seed] = true;
    while let Some(i) = queue.pop_front() {
        for j in grid.neighbors(i) {
            if !mask[j] && values[j] >= c {
                mask[j] = true;
                queue.push_back(j);
            }
        }
    }
    let count = mask.iter().filter(|&&m| m).count();
    Ok(RoaMask {
        grid: grid.clone(),
        mask,
        threshold: c,
        seed,
        volume_fraction: T::from_usize_lossy(count) / T::from_usize_lossy(grid.len()),
    })
}

/// `L_f U(x) = grad U(x) . f(x)`.
pub fn lie_derivative<T: Real, F: ScalarField<T> + ?Sized>(sys: &SystemSpec<T>, field: &F, x: &[T]) -> T {
    let g = field.gradient(x);
    sys.field(x).iter().zip(&g).map(|(&a, &b)| a * b).sum()
}

/// `L_f V` for `V = -log U`, i.e. `-L_f U / max(U, floor)`.
pub fn lie_derivative_v<T: Real, F: ScalarField<T> + ?Sized>(sys: &SystemSpec<T>, field: &F, x: &[T], floor: T) -> T {
    -lie_derivative(sys, field, x) / field.value(x).max(floor)
}

/// Fraction of masked cells outside the ball of radius `exclusion_radius` around `x_eq`
/// whose center satisfies `L_f U > margin`. Grid-based stand-in for formal verification.
pub fn verified_fraction<T: Real, F: ScalarField<T> + ?Sized>(
    sys: &SystemSpec<T>,
    field: &F,
    mask: &RoaMask<T>,
    exclusion_radius: T,
    margin: T,
) -> T {
    let (eligible, ok) = verification_counts(sys, field, mask, exclusion_radius, margin);
    if eligible == 0 {
        T::zero()
    } else {
        T::from_usize_lossy(ok) / T::from_usize_lossy(eligible)
    }
}

/// `(eligible cells, cells passing the sign check)`.
pub fn verification_counts<T: Real, F: ScalarField<T> + ?Sized>(
    sys: &SystemSpec<T>,
    field: &F,
    mask: &RoaMask<T>,
    exclusion_radius: T,
    margin: T,
) -> (usize, usize) {
    let x_eq = sys.x_eq();
    let flags: Vec<Option<bool>> = (0..mask.grid.len())
        .into_par_iter()
        .map(|i| {
            if !mask.mask[i] {
                return None;
            }
            let x = mask.grid.center(i);
            let dist = norm2(&x.iter().zip(x_eq).map(|(&a, &b)| a - b).collect::<Vec<_>>());
            if dist <= exclusion_radius {
                return None;
            }
            Some(lie_derivative(sys, field, &x) > margin)
        })
        .collect();
    let eligible = flags.iter().filter(|f| f.is_some()).count();
    let ok = flags.iter().filter(|f| **f == Some(true)).count();
    (eligible, ok)
}

/// `V_ZK(x) = -log(max(U(x), floor))`. Without a floor, nonpositive `U` is a domain error.
pub fn v_zk<T: Real, F: ScalarField<T> + ?Sized>(field: &F, x: &[T], floor: Option<T>) -> Result<T> {
    let u = field.value(x);
    let u = match floor {
        Some(f) => u.max(f),
        None => u,
    };
    if !(u > T::zero()) {
        return Err(Error::Domain(format!("U = {u} is not positive; cannot take -log")));
    }
    Ok(-u.ln())
}

/// Largest `|Im|` relative to the largest `|Re|` over the grid.
pub fn imag_residue<T: Real>(u: &UApprox<T>, grid: &Grid<T>) -> T {
    let (re, im) = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let v = u.complex_value(&grid.center(i));
            (v.re.abs(), v.im.abs())
        })
        .reduce(|| (T::zero(), T::zero()), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    if re > T::zero() {
        im / re
    } else {
        im
    }
}

/// Exact `U` of the cubic 1D benchmark as a field.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClosedFormU1d;

impl<T: Real> ScalarField<T> for ClosedFormU1d {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[T]) -> T {
        closed_form_u_1d(x[0])
    }

    /// `dU/dx = -sign(x) / ((1 + |x|)^2 U)` on `0 < |x| < 1`, and 0 elsewhere.
    fn gradient(&self, x: &[T]) -> Vec<T> {
        let a = x[0].abs();
        if a == T::zero() || a >= T::one() {
            return vec![T::zero()];
        }
        let u = closed_form_u_1d(a);
        vec![-x[0].signum() / ((T::one() + a) * (T::one() + a) * u)]
    }
}

/// Constant field.
#[derive(Clone, Copy, Debug)]
pub struct ConstantField<T> {
    pub dim: usize,
    pub value: T,
}

impl<T: Real> ScalarField<T> for ConstantField<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _x: &[T]) -> T {
        self.value
    }

    fn gradient(&self, _x: &[T]) -> Vec<T> {
        vec![T::zero(); self.dim]
    }
}
