//! Dynamical systems: vector field, integrand weight, equilibrium and region of interest.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm2, Real};

/// Vector field `f`, writing `f(x)` into the output slice.
pub type FieldFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;
/// Nonnegative weight `eta` integrated along trajectories.
pub type EtaFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_n, hi_n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Region<T> {
    bounds: Vec<(T, T)>,
}

impl<T: Real> Region<T> {
    pub fn new(bounds: Vec<(T, T)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Config("region must have at least one axis".into()));
        }
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("region axis {d} has invalid bounds [{lo}, {hi}]")));
            }
        }
        Ok(Self { bounds })
    }

    /// The same interval on every axis.
    pub fn cube(dim: usize, lo: T, hi: T) -> Result<Self> {
        Self::new(vec![(lo, hi); dim])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(T, T)] {
        &self.bounds
    }

    pub fn lo(&self, d: usize) -> T {
        self.bounds[d].0
    }

    pub fn hi(&self, d: usize) -> T {
        self.bounds[d].1
    }

    pub fn width(&self, d: usize) -> T {
        self.bounds[d].1 - self.bounds[d].0
    }

    pub fn volume(&self) -> T {
        (0..self.dim()).map(|d| self.width(d)).fold(T::one(), |a, b| a * b)
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    pub fn contains_strictly(&self, x: &[T]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v > lo && v < hi)
    }

    /// First point where the segment from `inside` to `outside` meets the boundary.
    ///
    /// Parametric clipping: the smallest `s` in `[0, 1]` at which any coordinate
    /// reaches a face. The result is clamped onto the box to absorb rounding.
    pub fn exit_point(&self, inside: &[T], outside: &[T]) -> Vec<T> {
        let mut s_hit = T::one();
        for (d, &(lo, hi)) in self.bounds.iter().enumerate() {
            let (a, b) = (inside[d], outside[d]);
            let delta = b - a;
            let s = if b > hi && delta > T::zero() {
                (hi - a) / delta
            } else if b < lo && delta < T::zero() {
                (lo - a) / delta
            } else {
                continue;
            };
            let s = s.max(T::zero());
            if s < s_hit {
                s_hit = s;
            }
        }
        inside
            .iter()
            .zip(outside)
            .zip(&self.bounds)
            .map(|((&a, &b), &(lo, hi))| (a + s_hit * (b - a)).max(lo).min(hi))
            .collect()
    }
}

/// One benchmark problem: `x' = f(x)` with weight `eta`, equilibrium and region.
#[derive(Clone)]
pub struct SystemSpec<T> {
    name: String,
    dim: usize,
    field: FieldFn<T>,
    eta: EtaFn<T>,
    x_eq: Vec<T>,
    region: Region<T>,
}

impl<T: Real> fmt::Debug for SystemSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("x_eq", &self.x_eq)
            .field("region", &self.region)
            .finish_non_exhaustive()
    }
}

impl<T: Real> SystemSpec<T> {
    /// Builds a system and checks its invariants: the equilibrium lies strictly inside the
    /// region, `|f(x_eq)| <= 1e-9`, `eta(x_eq) = 0`, and `eta >= 0` on a lattice over the region.
    pub fn new(
        name: impl Into<String>,
        field: FieldFn<T>,
        eta: EtaFn<T>,
        x_eq: Vec<T>,
        region: Region<T>,
    ) -> Result<Self> {
        let name = name.into();
        let dim = region.dim();
        if x_eq.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "{name}: equilibrium has {} components, region has {dim}",
                x_eq.len()
            )));
        }
        if !region.contains_strictly(&x_eq) {
            return Err(Error::Config(format!("{name}: equilibrium is not strictly inside the region")));
        }
        let sys = Self { name, dim, field, eta, x_eq, region };
        let f_eq = sys.field(&sys.x_eq);
        if norm2(&f_eq).as_f64() > 1e-9 {
            return Err(Error::Config(format!("{}: f(x_eq) is not zero", sys.name)));
        }
        if sys.eta(&sys.x_eq) != T::zero() {
            return Err(Error::Config(format!("{}: eta(x_eq) must be 0", sys.name)));
        }
        sys.check_eta_nonnegative(5)?;
        Ok(sys)
    }

    fn check_eta_nonnegative(&self, per_axis: usize) -> Result<()> {
        let total = per_axis.pow(self.dim as u32);
        let mut x = vec![T::zero(); self.dim];
        for flat in 0..total {
            let mut rem = flat;
            for (d, xd) in x.iter_mut().enumerate() {
                let j = rem % per_axis;
                rem /= per_axis;
                let frac = T::from_usize_lossy(j) / T::from_usize_lossy(per_axis - 1);
                *xd = self.region.lo(d) + frac * self.region.width(d);
            }
            let e = self.eta(&x);
            if !(e >= T::zero()) {
                return Err(Error::Config(format!("{}: eta is negative or NaN at {x:?}", self.name)));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x_eq(&self) -> &[T] {
        &self.x_eq
    }

    pub fn region(&self) -> &Region<T> {
        &self.region
    }

    pub fn field_into(&self, x: &[T], out: &mut [T]) {
        (self.field)(x, out)
    }

    pub fn field(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        (self.field)(x, &mut out);
        out
    }

    pub fn eta(&self, x: &[T]) -> T {
        (self.eta)(x)
    }
}

/// Built-in benchmark problems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BenchmarkId {
    Cubic1d,
    VdpReversed,
    Polynomial,
    Power2m,
    Sys3d,
    StiffVdp { mu: f64 },
    Stiff2,
}

impl BenchmarkId {
    pub const ALL_NAMES: [&'static str; 7] =
        ["cubic1d", "vdp-reversed", "polynomial", "power2m", "sys3d", "stiff-vdp", "stiff2"];

    pub fn dim(&self) -> usize {
        match self {
            BenchmarkId::Cubic1d => 1,
            BenchmarkId::Sys3d => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchmarkId::Cubic1d => write!(f, "cubic1d"),
            BenchmarkId::VdpReversed => write!(f, "vdp-reversed"),
            BenchmarkId::Polynomial => write!(f, "polynomial"),
            BenchmarkId::Power2m => write!(f, "power2m"),
            BenchmarkId::Sys3d => write!(f, "sys3d"),
            BenchmarkId::StiffVdp { mu } => write!(f, "stiff-vdp:{mu}"),
            BenchmarkId::Stiff2 => write!(f, "stiff2"),
        }
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;

    /// Accepts the CLI spelling (`vdp-reversed`) or snake case (`vdp_reversed`).
    /// `stiff-vdp` defaults to `mu = 4`; `stiff-vdp:6` selects another damping.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        let (head, param) = match norm.split_once(':') {
            Some((h, p)) => (h.to_string(), Some(p.to_string())),
            None => (norm.clone(), None),
        };
        let id = match head.as_str() {
            "cubic1d" => BenchmarkId::Cubic1d,
            "vdp-reversed" | "vdp" => BenchmarkId::VdpReversed,
            "polynomial" => BenchmarkId::Polynomial,
            "power2m" => BenchmarkId::Power2m,
            "sys3d" => BenchmarkId::Sys3d,
            "stiff-vdp" => {
                let mu = match &param {
                    Some(p) => p
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("invalid stiff-vdp damping '{p}'")))?,
                    None => 4.0,
                };
                if !(mu > 0.0 && mu.is_finite()) {
                    return Err(Error::Config(format!("stiff-vdp damping must be positive, got {mu}")));
                }
                return Ok(BenchmarkId::StiffVdp { mu });
            }
            "stiff2" => BenchmarkId::Stiff2,
            _ => {
                return Err(Error::Config(format!(
                    "unknown system '{s}' (expected one of {})",
                    Self::ALL_NAMES.join(", ")
                )))
            }
        };
        if param.is_some() {
            return Err(Error::Config(format!("system '{head}' takes no parameter")));
        }
        Ok(id)
    }
}

/// Parameter overrides applied on top of a builtin system.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemOverrides {
    /// Replacement region, one `[lo, hi]` pair per axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Vec<[f64; 2]>>,
    /// Divisor `d` of the quadratic weight `eta(x) = |x|^2 / d` (ignored by `cubic1d`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_divisor: Option<f64>,
    /// Damping of `stiff-vdp`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

/// Returns the builtin system with its default parameters.
pub fn builtin<T: Real>(id: BenchmarkId) -> Result<SystemSpec<T>> {
    builtin_with(id, &SystemOverrides::default())
}

fn quadratic_eta<T: Real>(divisor: T) -> EtaFn<T> {
    Arc::new(move |x: &[T]| x.iter().map(|&v| v * v).sum::<T>() / divisor)
}

pub fn builtin_with<T: Real>(id: BenchmarkId, ov: &SystemOverrides) -> Result<SystemSpec<T>> {
    let l = T::lit;
    let divisor = ov.eta_divisor.unwrap_or(5.0);
    if !(divisor > 0.0 && divisor.is_finite()) {
        return Err(Error::Config(format!("eta_divisor must be positive, got {divisor}")));
    }
    let id = match (id, ov.mu) {
        (BenchmarkId::StiffVdp { .. }, Some(mu)) => BenchmarkId::StiffVdp { mu },
        (_, Some(_)) => return Err(Error::Config(format!("system {id} has no 'mu' parameter"))),
        (id, None) => id,
    };
    let (field, eta, default_region): (FieldFn<T>, EtaFn<T>, Vec<(f64, f64)>) = match id {
        BenchmarkId::Cubic1d => (
            Arc::new(|x: &[T], out: &mut [T]| out[0] = -x[0] + x[0] * x[0] * x[0]),
            Arc::new(|x: &[T]| x[0].abs()),
            vec![(-1.5, 1.5)],
        ),
        BenchmarkId::VdpReversed => (
            Arc::new(|x: &[T], out: &mut [T]| {
                out[0] = -x[1];
                out[1] = x[0] - (T::one() - x[0] * x[0]) * x[1];
            }),
            quadratic_eta(l(divisor)),
            vec![(-3.0, 3.0); 2],
        ),
        BenchmarkId::Polynomial => (
            Arc::new(|x: &[T], out: &mut [T]| {
                out[0] = x[1];
                out[1] = -T::lit(2.0) * x[0] + x[0] * x[0] * x[0] / T::lit(3.0) - x[1];
            }),
            quadratic_eta(l(divisor)),
            vec![(-6.0, 6.0); 2],
        ),
        BenchmarkId::Power2m => {
            let delta = T::FRAC_PI_3();
            (
                Arc::new(move |x: &[T], out: &mut [T]| {
                    out[0] = x[1];
                    out[1] = -T::lit(0.5) * x[1] - ((x[0] + delta).sin() - delta.sin());
                }),
                quadratic_eta(l(divisor)),
                vec![(-2.0, 3.0), (-3.0, 2.0)],
            )
        }
        BenchmarkId::Sys3d => (
            Arc::new(|x: &[T], out: &mut [T]| {
                out[0] = x[1] + T::lit(2.0) * x[1] * x[2];
                out[1] = x[2];
                out[2] = -T::lit(0.5) * x[0] - T::lit(2.0) * x[1] - x[2];
            }),
            quadratic_eta(l(divisor)),
            vec![(-2.0, 2.0); 3],
        ),
        BenchmarkId::StiffVdp { mu } => {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::Config(format!("stiff-vdp damping must be positive, got {mu}")));
            }
            let m = l(mu);
            (
                Arc::new(move |x: &[T], out: &mut [T]| {
                    out[0] = -x[1];
                    out[1] = x[0] - m * (T::one() - x[0] * x[0]) * x[1];
                }),
                quadratic_eta(l(divisor)),
                vec![(-3.0, 3.0), (-2.0 * mu, 2.0 * mu)],
            )
        }
        BenchmarkId::Stiff2 => (
            Arc::new(|x: &[T], out: &mut [T]| {
                out[0] = -T::lit(2.0) * x[0] + x[0] * x[0] - x[1] * x[1];
                out[1] = -T::lit(2.5) * x[1] + T::lit(2.0) * x[0] * x[1];
            }),
            quadratic_eta(l(divisor)),
            vec![(-4.0, 4.0); 2],
        ),
    };
    let bounds: Vec<(f64, f64)> = match &ov.region {
        Some(r) => {
            if r.len() != id.dim() {
                return Err(Error::Config(format!(
                    "region override has {} axes, system {id} has {}",
                    r.len(),
                    id.dim()
                )));
            }
            r.iter().map(|p| (p[0], p[1])).collect()
        }
        None => default_region,
    };
    let region = Region::new(bounds.into_iter().map(|(a, b)| (l(a), l(b))).collect())?;
    SystemSpec::new(id.to_string(), field, eta, vec![T::zero(); id.dim()], region)
}

/// Exact dual solution for `x' = -x + x^3`, `eta = |x|`:
/// `U(x) = sqrt((1-|x|)/(1+|x|))` on `(-1, 1)` and `0` elsewhere.
pub fn closed_form_u_1d<T: Real>(x: T) -> T {
    let a = x.abs();
    if a >= T::one() {
        T::zero()
    } else {
        ((T::one() - a) / (T::one() + a)).sqrt()
    }
}

/// Maximal Lyapunov function of the same system, `V = -log U`, infinite for `|x| >= 1`.
pub fn closed_form_v_1d<T: Real>(x: T) -> T {
    let a = x.abs();
    if a >= T::one() {
        T::infinity()
    } else {
        T::lit(0.5) * ((T::one() + a) / (T::one() - a)).ln()
    }
}
