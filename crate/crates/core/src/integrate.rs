//! Fixed-step RK4 on the augmented system `x' = f(x)`, `I' = eta(x)`, and clipping of the
//! resulting samples to the region of interest (the stopped flow).

use std::io::Write;

use crate::error::{Error, Result};
use crate::scalar::{fmt_f64, Complex, Real};
use crate::systems::SystemSpec;

/// Unclipped samples of the augmented system on a uniform partition of `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrajectory<T> {
    pub dim: usize,
    pub step: T,
    pub times: Vec<T>,
    /// Row-major, `times.len() x dim`.
    pub states: Vec<T>,
    pub integrals: Vec<T>,
}

impl<T: Real> RawTrajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, j: usize) -> &[T] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }
}

/// Stopped-flow samples: every state lies in the region; once the raw trajectory leaves,
/// all later states sit at the boundary crossing.
#[derive(Clone, Debug, PartialEq)]
pub struct ClippedTrajectory<T> {
    pub dim: usize,
    pub step: T,
    pub times: Vec<T>,
    pub states: Vec<T>,
    pub integrals: Vec<T>,
    pub exited: bool,
    pub exit_index: Option<usize>,
    pub boundary_point: Option<Vec<T>>,
}

impl<T: Real> ClippedTrajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, j: usize) -> &[T] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[T] {
        self.state(self.len() - 1)
    }

    pub fn final_integral(&self) -> T {
        self.integrals[self.len() - 1]
    }

    /// Weight `exp(-I(horizon))` applied to observables evaluated at the final state.
    pub fn discount(&self) -> T {
        (-self.final_integral()).exp()
    }

    /// Writes `t,x_1..x_n,I` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|d| format!("x_{d}")));
        header.push("I".into());
        w.write_record(&header)?;
        for j in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[j].as_f64())];
            row.extend(self.state(j).iter().map(|v| fmt_f64(v.as_f64())));
            row.push(fmt_f64(self.integrals[j].as_f64()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrates the augmented system with classical RK4 using `points` samples on `[0, horizon]`
/// (step `horizon / (points - 1)`).
pub fn simulate_augmented<T: Real>(
    sys: &SystemSpec<T>,
    x0: &[T],
    horizon: T,
    points: usize,
) -> Result<RawTrajectory<T>> {
    integrate_rk4(sys, x0, horizon, points, false)
}

/// Like [`simulate_augmented`], but stops integrating at the first sample outside the region
/// and repeats that sample for the remaining slots. Clipping overwrites those slots, so the
/// stopped flow is unchanged while vector fields that blow up outside the region stay finite.
pub fn simulate_until_exit<T: Real>(
    sys: &SystemSpec<T>,
    x0: &[T],
    horizon: T,
    points: usize,
) -> Result<RawTrajectory<T>> {
    integrate_rk4(sys, x0, horizon, points, true)
}

fn integrate_rk4<T: Real>(
    sys: &SystemSpec<T>,
    x0: &[T],
    horizon: T,
    points: usize,
    halt_on_exit: bool,
) -> Result<RawTrajectory<T>> {
    let n = sys.dim();
    if points < 2 {
        return Err(Error::Precondition(format!("need at least 2 time points, got {points}")));
    }
    if !(horizon > T::zero() && horizon.is_finite()) {
        return Err(Error::Precondition(format!("horizon must be positive, got {horizon}")));
    }
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("initial state has {} components, system has {n}", x0.len())));
    }
    if !sys.region().contains(x0) {
        return Err(Error::Precondition(format!("initial state {x0:?} is outside the region")));
    }
    let h = horizon / T::from_usize_lossy(points - 1);
    let half = h * T::lit(0.5);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);

    let mut times = Vec::with_capacity(points);
    let mut states = Vec::with_capacity(points * n);
    let mut integrals = Vec::with_capacity(points);
    let mut x = x0.to_vec();
    let mut integral = T::zero();
    times.push(T::zero());
    states.extend_from_slice(&x);
    integrals.push(integral);

    let (mut k1, mut k2, mut k3, mut k4) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    let mut tmp = vec![T::zero(); n];
    for j in 1..points {
        sys.field_into(&x, &mut k1);
        let e1 = sys.eta(&x);
        for d in 0..n {
            tmp[d] = x[d] + half * k1[d];
        }
        sys.field_into(&tmp, &mut k2);
        let e2 = sys.eta(&tmp);
        for d in 0..n {
            tmp[d] = x[d] + half * k2[d];
        }
        sys.field_into(&tmp, &mut k3);
        let e3 = sys.eta(&tmp);
        for d in 0..n {
            tmp[d] = x[d] + h * k3[d];
        }
        sys.field_into(&tmp, &mut k4);
        let e4 = sys.eta(&tmp);
        for d in 0..n {
            x[d] += sixth * (k1[d] + two * (k2[d] + k3[d]) + k4[d]);
        }
        integral += sixth * (e1 + two * (e2 + e3) + e4);
        if !integral.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationBlowup { index: j, sample: None });
        }
        times.push(T::from_usize_lossy(j) * h);
        states.extend_from_slice(&x);
        integrals.push(integral);
        if halt_on_exit && !sys.region().contains(&x) {
            for k in (j + 1)..points {
                times.push(T::from_usize_lossy(k) * h);
                states.extend_from_slice(&x);
                integrals.push(integral);
            }
            break;
        }
    }
    Ok(RawTrajectory { dim: n, step: h, times, states, integrals })
}

/// Freezes the trajectory at its first boundary crossing.
///
/// With `i` the first sample outside the region, every state from `i` on becomes the
/// crossing point `p` of the segment between samples `i-1` and `i`, and the integral
/// continues linearly: `I_j = I_{i-1} + (j - i + 1) * eta(p) * step`.
pub fn clip_to_region<T: Real>(raw: RawTrajectory<T>, sys: &SystemSpec<T>) -> Result<ClippedTrajectory<T>> {
    let region = sys.region();
    let exit = (0..raw.len()).find(|&j| !region.contains(raw.state(j)));
    let RawTrajectory { dim, step, times, mut states, mut integrals } = raw;
    let Some(iota) = exit else {
        return Ok(ClippedTrajectory {
            dim,
            step,
            times,
            states,
            integrals,
            exited: false,
            exit_index: None,
            boundary_point: None,
        });
    };
    if iota == 0 {
        return Err(Error::Precondition("trajectory starts outside the region".into()));
    }
    let p = region.exit_point(&states[(iota - 1) * dim..iota * dim], &states[iota * dim..(iota + 1) * dim]);
    let rate = sys.eta(&p) * step;
    let base = integrals[iota - 1];
    for j in iota..times.len() {
        states[j * dim..(j + 1) * dim].copy_from_slice(&p);
        integrals[j] = base + T::from_usize_lossy(j - iota + 1) * rate;
    }
    Ok(ClippedTrajectory {
        dim,
        step,
        times,
        states,
        integrals,
        exited: true,
        exit_index: Some(iota),
        boundary_point: Some(p),
    })
}

/// Simulates and clips in one call.
pub fn stopped_trajectory<T: Real>(
    sys: &SystemSpec<T>,
    x0: &[T],
    horizon: T,
    points: usize,
) -> Result<ClippedTrajectory<T>> {
    clip_to_region(simulate_until_exit(sys, x0, horizon, points)?, sys)
}

/// `exp(-I(horizon)) * z(x(horizon))` along the stopped flow from `x`.
pub fn evaluate_t_delta<T, F>(sys: &SystemSpec<T>, observable: F, x: &[T], horizon: T, points: usize) -> Result<Complex<T>>
where
    T: Real,
    F: Fn(&[T]) -> Complex<T>,
{
    let traj = stopped_trajectory(sys, x, horizon, points)?;
    Ok(observable(traj.final_state()) * traj.discount())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::systems::{builtin, closed_form_u_1d, BenchmarkId, EtaFn, FieldFn, Region};

    fn decay() -> SystemSpec<f64> {
        let f: FieldFn<f64> = Arc::new(|x, o| o[0] = -x[0]);
        let eta: EtaFn<f64> = Arc::new(|x| x[0] * x[0]);
        SystemSpec::new("decay", f, eta, vec![0.0], Region::cube(1, -2.0, 2.0).unwrap()).unwrap()
    }

    fn assert_clipped_invariants(t: &ClippedTrajectory<f64>, sys: &SystemSpec<f64>, x0: &[f64]) {
        assert_eq!(t.state(0), x0);
        assert_eq!(t.integrals[0], 0.0);
        for j in 0..t.len() {
            assert!(sys.region().contains(t.state(j)));
            if j > 0 {
                assert!(t.integrals[j] >= t.integrals[j - 1]);
            }
        }
        if let (Some(i), Some(p)) = (t.exit_index, &t.boundary_point) {
            for j in i..t.len() {
                assert_eq!(t.state(j), p.as_slice());
            }
        }
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let sys = decay();
        let raw = simulate_augmented(&sys, &[1.0], 1.0, 1001).unwrap();
        assert!((raw.state(1000)[0] - (-1.0f64).exp()).abs() < 1e-10);
        // I(1) = int e^{-2t} dt = (1 - e^{-2}) / 2
        assert!((raw.integrals[1000] - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-10);
        assert!((raw.times[1000] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let sys = decay();
        let exact = (-1.0f64).exp();
        let err = |h: f64| {
            let pts = (1.0 / h).round() as usize + 1;
            (simulate_augmented(&sys, &[1.0], 1.0, pts).unwrap().state(pts - 1)[0] - exact).abs()
        };
        let (e1, e2, e3) = (err(1e-2), err(5e-3), err(2.5e-3));
        assert!(e1 / e2 >= 12.0, "{e1} {e2}");
        assert!(e2 / e3 >= 12.0, "{e2} {e3}");
    }

    #[test]
    fn equilibrium_is_fixed() {
        let sys = builtin::<f64>(BenchmarkId::VdpReversed).unwrap();
        let raw = simulate_augmented(&sys, &[0.0, 0.0], 1.5, 101).unwrap();
        assert!(raw.states.iter().all(|&v| v == 0.0));
        assert!(raw.integrals.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outside_ring_repels() {
        let sys = builtin::<f64>(BenchmarkId::Cubic1d).unwrap();
        let raw = simulate_until_exit(&sys, &[1.2], 1.0, 1001).unwrap();
        let exit = (0..raw.len()).find(|&j| raw.state(j)[0] > 1.5).unwrap();
        for j in 1..=exit {
            assert!(raw.state(j)[0] > raw.state(j - 1)[0]);
        }
        // brute-force Euler at dt = 1e-5 over the first 0.1 time units
        let mut x = 1.2f64;
        for _ in 0..10_000 {
            x += 1e-5 * (-x + x * x * x);
        }
        assert!((raw.state(100)[0] - x).abs() < 1e-4);
    }

    #[test]
    fn unclipped_cubic_blows_up_in_finite_time() {
        // x' = x^3 - x from 1.2 escapes at t* = ln(1.44 / 0.44) / 2 ~ 0.593
        let sys = builtin::<f64>(BenchmarkId::Cubic1d).unwrap();
        let t_star = 0.5 * (1.44f64 / 0.44).ln();
        match simulate_augmented(&sys, &[1.2], 1.0, 1001) {
            Err(Error::IntegrationBlowup { index, .. }) => {
                assert!((index as f64 * 1e-3 - t_star).abs() < 0.01, "{index}")
            }
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn preconditions() {
        let sys = decay();
        assert!(matches!(simulate_augmented(&sys, &[1.0], 1.0, 1), Err(Error::Precondition(_))));
        assert!(matches!(simulate_augmented(&sys, &[1.0], 0.0, 10), Err(Error::Precondition(_))));
        assert!(matches!(simulate_augmented(&sys, &[3.0], 1.0, 10), Err(Error::Precondition(_))));
        assert!(matches!(simulate_augmented(&sys, &[1.0, 1.0], 1.0, 10), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn blowup_reports_index() {
        let f: FieldFn<f64> = Arc::new(|x, o| o[0] = x[0] * x[0] * x[0] * x[0] * x[0]);
        let eta: EtaFn<f64> = Arc::new(|x| x[0].abs());
        let sys = SystemSpec::new("blow", f, eta, vec![0.0], Region::cube(1, -10.0, 10.0).unwrap()).unwrap();
        match simulate_augmented(&sys, &[9.0], 10.0, 11) {
            Err(Error::IntegrationBlowup { index, .. }) => assert!(index >= 1),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn inside_trajectory_unchanged() {
        let sys = builtin::<f64>(BenchmarkId::Cubic1d).unwrap();
        let raw = simulate_augmented(&sys, &[0.5], 1.0, 201).unwrap();
        let clipped = clip_to_region(raw.clone(), &sys).unwrap();
        assert!(!clipped.exited);
        assert_eq!(clipped.states, raw.states);
        assert_eq!(clipped.integrals, raw.integrals);
        assert_clipped_invariants(&clipped, &sys, &[0.5]);
    }

    #[test]
    fn escaping_trajectory_is_stopped() {
        let sys = builtin::<f64>(BenchmarkId::Cubic1d).unwrap();
        let t = stopped_trajectory(&sys, &[1.4], 1.0, 1001).unwrap();
        assert!(t.exited);
        assert_eq!(t.boundary_point.as_deref(), Some(&[1.5][..]));
        let i = t.exit_index.unwrap();
        assert!((t.final_integral() - (t.integrals[i - 1] + (1000 - i + 1) as f64 * 1.5 * t.step)).abs() < 1e-12);
        assert_clipped_invariants(&t, &sys, &[1.4]);
        // dense Euler: the unclipped flow from 1.4 reaches 1.5 before t = 1
        let (mut x, mut tt) = (1.4f64, 0.0);
        while x < 1.5 {
            x += 1e-6 * (-x + x * x * x);
            tt += 1e-6;
        }
        assert!(tt < 1.0);
        assert!((t.times[i] - tt).abs() < 2e-3);
    }

    #[test]
    fn x0_outside_is_rejected_by_clip() {
        let sys = builtin::<f64>(BenchmarkId::Cubic1d).unwrap();
        let raw = RawTrajectory { dim: 1, step: 0.1, times: vec![0.0, 0.1], states: vec![2.0, 2.1], integrals: vec![0.0, 0.1] };
        assert!(matches!(clip_to_region(raw, &sys), Err(Error::Precondition(_))));
    }

    #[test]
    fn t_delta_at_equilibrium() {
        let sys = builtin::<f64>(BenchmarkId::VdpReversed).unwrap();
        let z = |x: &[f64]| Complex::new((-(x[0] * x[0] + x[1] * x[1]) / 4.0).exp(), 0.0);
        let v = evaluate_t_delta(&sys, z, &[0.0, 0.0], 1.5, 301).unwrap();
        assert_eq!(v, Complex::new(1.0, 0.0));
    }

    #[test]
    fn closed_form_is_a_fixed_point() {
        let sys = builtin::<f64>(BenchmarkId::Cubic1d).unwrap();
        let z = |x: &[f64]| Complex::new(closed_form_u_1d(x[0]), 0.0);
        let v = evaluate_t_delta(&sys, z, &[0.5], 1.0, 1001).unwrap();
        assert!((v.re - (0.5f64 / 1.5).sqrt()).abs() < 1e-4);
        let mut worst = 0.0f64;
        for j in 0..200 {
            let x = -1.5 + 3.0 * j as f64 / 199.0;
            let v = evaluate_t_delta(&sys, z, &[x], 1.0, 1001).unwrap();
            worst = worst.max((v.re - closed_form_u_1d(x)).abs());
        }
        assert!(worst <= 5e-3, "{worst}");
    }

    #[test]
    fn outward_boundary_point() {
        let sys = builtin::<f64>(BenchmarkId::Cubic1d).unwrap();
        let z = |x: &[f64]| Complex::new(x[0].cos(), 0.5);
        let v = evaluate_t_delta(&sys, z, &[1.5], 1.0, 1001).unwrap();
        let expect = z(&[1.5]) * (-1.5f64).exp();
        assert!((v - expect).norm() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let sys = builtin::<f32>(BenchmarkId::Cubic1d).unwrap();
        let t = stopped_trajectory(&sys, &[0.5f32], 1.0, 101).unwrap();
        assert!(t.final_state()[0] < 0.5 && t.final_state()[0] > 0.0);
    }

    #[test]
    fn csv_dump_columns() {
        let sys = builtin::<f64>(BenchmarkId::VdpReversed).unwrap();
        let t = stopped_trajectory(&sys, &[1.0, 1.0], 0.1, 3).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x_1,x_2,I");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1].split(',').count(), 4);
    }
}
