//! Smooth surrogate for `U_ZK`: a tanh multilayer perceptron fitted by full-batch gradient
//! descent with momentum. Inputs and targets are standardized internally.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roa::ScalarField;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub mse_tol: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { widths: vec![15, 15], epochs: 300, mse_tol: 1e-8, learning_rate: 1e-2, momentum: 0.9, seed: 0 }
    }
}

/// `u(x) = y_mean + y_scale * net((x - x_mean) / x_scale)`, where `net` has tanh hidden
/// layers and a linear output. Parameters are stored flat, layer by layer, each layer as its
/// `out x in` weight matrix (row-major) followed by its `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothModel<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
    pub x_mean: Vec<T>,
    pub x_scale: Vec<T>,
    pub y_mean: T,
    pub y_scale: T,
    pub epochs_run: usize,
    pub final_mse: T,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl<T: Real> SmoothModel<T> {
    /// Model with identity standardization. `sizes` runs from input dimension to 1.
    pub fn from_parts(sizes: Vec<usize>, params: Vec<T>) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) || *sizes.last().unwrap() != 1 {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        if params.len() != param_count(&sizes) {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for layer sizes {sizes:?} (need {})",
                params.len(),
                param_count(&sizes)
            )));
        }
        let n = sizes[0];
        Ok(Self {
            sizes,
            params,
            x_mean: vec![T::zero(); n],
            x_scale: vec![T::one(); n],
            y_mean: T::zero(),
            y_scale: T::one(),
            epochs_run: 0,
            final_mse: T::zero(),
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch("parameter vector length changed".into()));
        }
        self.params = params;
        Ok(())
    }

    fn standardize(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.x_mean).zip(&self.x_scale).map(|((&v, &m), &s)| (v - m) / s).collect()
    }

    /// Activations of every layer, input first.
    fn forward(&self, z: &[T]) -> Vec<Vec<T>> {
        let mut acts = vec![z.to_vec()];
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let input = &acts[l];
            let weights = &self.params[off..off + fan_out * fan_in];
            let bias = &self.params[off + fan_out * fan_in..off + fan_out * fan_in + fan_out];
            let out: Vec<T> = (0..fan_out)
                .map(|o| {
                    let s = weights[o * fan_in..(o + 1) * fan_in].iter().zip(input).map(|(&a, &b)| a * b).sum::<T>() + bias[o];
                    if l == last {
                        s
                    } else {
                        s.tanh()
                    }
                })
                .collect();
            acts.push(out);
            off += fan_out * fan_in + fan_out;
        }
        acts
    }

    /// Propagates `d(out)` back through the network; accumulates parameter gradients into
    /// `pgrad` (if given) and returns the gradient with respect to the network input.
    fn backward(&self, acts: &[Vec<T>], dout: T, mut pgrad: Option<&mut [T]>) -> Vec<T> {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[1] * w[0] + w[1];
        }
        let mut delta = vec![dout];
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            if let Some(g) = pgrad.as_deref_mut() {
                for o in 0..fan_out {
                    for i in 0..fan_in {
                        g[off + o * fan_in + i] += delta[o] * input[i];
                    }
                    g[off + fan_out * fan_in + o] += delta[o];
                }
            }
            let weights = &self.params[off..off + fan_out * fan_in];
            let mut prev = vec![T::zero(); fan_in];
            for (o, &d) in delta.iter().enumerate() {
                for i in 0..fan_in {
                    prev[i] += weights[o * fan_in + i] * d;
                }
            }
            if l > 0 {
                // input to this layer is a tanh output
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p *= T::one() - a * a;
                }
            }
            delta = prev;
        }
        delta
    }

    pub fn eval(&self, x: &[T]) -> T {
        let acts = self.forward(&self.standardize(x));
        self.y_mean + self.y_scale * acts.last().unwrap()[0]
    }

    /// Input gradient by reverse-mode differentiation.
    pub fn grad_x(&self, x: &[T]) -> Vec<T> {
        let acts = self.forward(&self.standardize(x));
        let g = self.backward(&acts, T::one(), None);
        g.iter().zip(&self.x_scale).map(|(&v, &s)| self.y_scale * v / s).collect()
    }

    pub fn mse(&self, samples: &[Vec<T>], targets: &[T]) -> T {
        let sum: T = samples.iter().zip(targets).map(|(x, &y)| (self.eval(x) - y).powi(2)).sum();
        sum / T::from_usize_lossy(samples.len().max(1))
    }

    /// Training-set MSE and its gradient with respect to the flat parameters.
    pub fn mse_and_grad(&self, samples: &[Vec<T>], targets: &[T]) -> (T, Vec<T>) {
        let mut grad = vec![T::zero(); self.params.len()];
        let m = T::from_usize_lossy(samples.len().max(1));
        let mut loss = T::zero();
        for (x, &y) in samples.iter().zip(targets) {
            let acts = self.forward(&self.standardize(x));
            let r = self.y_mean + self.y_scale * acts.last().unwrap()[0] - y;
            loss += r * r;
            self.backward(&acts, T::lit(2.0) * r * self.y_scale / m, Some(&mut grad));
        }
        (loss / m, grad)
    }
}

impl<T: Real> ScalarField<T> for SmoothModel<T> {
    fn dim(&self) -> usize {
        self.sizes[0]
    }

    fn value(&self, x: &[T]) -> T {
        self.eval(x)
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        self.grad_x(x)
    }
}

fn mean_and_scale<T: Real>(v: impl Iterator<Item = T> + Clone) -> (T, T) {
    let n = T::from_usize_lossy(v.clone().count().max(1));
    let mean = v.clone().sum::<T>() / n;
    let var = v.map(|a| (a - mean) * (a - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

/// Fits a model to `(samples, targets)`. Stops once the training MSE is at most `mse_tol`
/// or after `epochs` updates. Constant targets give the exact constant model.
pub fn train<T: Real>(samples: &[Vec<T>], targets: &[T], opts: &TrainOptions) -> Result<SmoothModel<T>> {
    if samples.is_empty() {
        return Err(Error::Precondition("no training samples".into()));
    }
    if samples.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!("{} samples, {} targets", samples.len(), targets.len())));
    }
    if opts.widths.is_empty() || opts.widths.iter().any(|&w| w == 0) {
        return Err(Error::Config("hidden widths must be non-empty and positive".into()));
    }
    let n = samples[0].len();
    if n == 0 || samples.iter().any(|x| x.len() != n) {
        return Err(Error::DimensionMismatch("samples have inconsistent dimensions".into()));
    }
    let mut sizes = vec![n];
    sizes.extend(&opts.widths);
    sizes.push(1);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = Vec::with_capacity(param_count(&sizes));
    for w in sizes.windows(2) {
        let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
        params.extend((0..w[0] * w[1]).map(|_| T::lit(rng.gen_range(-bound..=bound))));
        params.extend((0..w[1]).map(|_| T::zero()));
    }
    let mut model = SmoothModel::from_parts(sizes, params)?;
    for d in 0..n {
        let (m, s) = mean_and_scale(samples.iter().map(|x| x[d]));
        model.x_mean[d] = m;
        model.x_scale[d] = if s > T::zero() { s } else { T::one() };
    }
    let (ym, ys) = mean_and_scale(targets.iter().copied());
    model.y_mean = ym;
    model.y_scale = ys;

    let tol = T::lit(opts.mse_tol);
    let lr = T::lit(opts.learning_rate);
    let mu = T::lit(opts.momentum);
    let mut velocity = vec![T::zero(); model.params.len()];
    let mut epoch = 0;
    if ys > T::zero() {
        // Optimize in standardized target units.
        let z2 = ys * ys;
        while epoch < opts.epochs {
            let (loss, grad) = model.mse_and_grad(samples, targets);
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence { epoch });
            }
            if loss <= tol {
                break;
            }
            for ((p, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = mu * *v - lr * *g / z2;
                *p += *v;
            }
            epoch += 1;
        }
    }
    model.epochs_run = epoch;
    model.final_mse = model.mse(samples, targets);
    if !model.final_mse.is_finite() {
        return Err(Error::TrainingDivergence { epoch });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::closed_form_u_1d;

    fn tiny() -> (SmoothModel<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sizes = vec![2, 3, 1];
        let params = (0..param_count(&sizes)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut model = SmoothModel::from_parts(sizes, params).unwrap();
        model.x_mean = vec![0.1, -0.2];
        model.x_scale = vec![1.5, 0.7];
        model.y_mean = 0.3;
        model.y_scale = 2.0;
        let xs: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let ys = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (model, xs, ys)
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let (model, xs, ys) = tiny();
        let (_, g) = model.mse_and_grad(&xs, &ys);
        let h = 1e-6;
        for k in 0..model.params().len() {
            let mut p = model.clone();
            let mut v = model.params().to_vec();
            v[k] += h;
            p.set_params(v.clone()).unwrap();
            let up = p.mse(&xs, &ys);
            v[k] -= 2.0 * h;
            p.set_params(v).unwrap();
            let down = p.mse(&xs, &ys);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-3), "param {k}: fd {fd} analytic {}", g[k]);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0] * x[1]).sin()).collect();
        let model = train(&xs, &ys, &TrainOptions { widths: vec![6, 5], epochs: 50, ..Default::default() }).unwrap();
        let h = 1e-5;
        for _ in 0..100 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let g = model.grad_x(&x);
            for d in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[d] += h;
                xm[d] -= h;
                let fd = (model.eval(&xp) - model.eval(&xm)) / (2.0 * h);
                assert!((fd - g[d]).abs() <= 1e-6 * g[d].abs().max(1.0), "{fd} vs {}", g[d]);
            }
        }
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let sizes = vec![2, 4, 1];
        let mut params = vec![0.0; param_count(&sizes)];
        *params.last_mut().unwrap() = 0.75;
        let model = SmoothModel::from_parts(sizes, params).unwrap();
        for x in [[0.0, 0.0], [1.0, -2.0], [3.0, 3.0]] {
            assert_eq!(model.eval(&x), 0.75);
            assert_eq!(model.grad_x(&x), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn linear_layer_gradient_is_weights() {
        let model = SmoothModel::<f64>::from_parts(vec![3, 1], vec![0.5, -2.0, 1.25, 0.1]).unwrap();
        assert_eq!(model.grad_x(&[0.3, 0.2, -9.0]), vec![0.5, -2.0, 1.25]);
        assert!((model.eval(&[1.0, 1.0, 1.0]) - (-0.25 + 0.1f64)).abs() < 1e-15);
    }

    #[test]
    fn all_zero_targets() {
        let xs: Vec<Vec<f64>> = (0..20).map(|j| vec![j as f64 * 0.1]).collect();
        let model = train(&xs, &[0.0; 20], &TrainOptions::default()).unwrap();
        assert!(model.final_mse <= 1e-10);
        assert_eq!(model.eval(&[0.37]), 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let xs: Vec<Vec<f64>> = (0..30).map(|j| vec![j as f64 * 0.1 - 1.5]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0].cos()).collect();
        let opts = TrainOptions { epochs: 40, seed: 11, ..Default::default() };
        let a = train(&xs, &ys, &opts).unwrap();
        let b = train(&xs, &ys, &opts).unwrap();
        assert_eq!(a, b);
        let c = train(&xs, &ys, &TrainOptions { seed: 12, ..opts }).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn recorded_mse_matches_recomputation() {
        let xs: Vec<Vec<f64>> = (0..40).map(|j| vec![j as f64 * 0.05 - 1.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * x[0]).collect();
        let m = train(&xs, &ys, &TrainOptions { epochs: 100, ..Default::default() }).unwrap();
        assert!((m.final_mse - m.mse(&xs, &ys)).abs() <= 1e-12);
        assert_eq!(m.epochs_run, 100);
    }

    #[test]
    fn closed_form_fit_reaches_tolerance() {
        let xs: Vec<Vec<f64>> = (0..501).map(|j| vec![-1.5 + 3.0 * j as f64 / 500.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| closed_form_u_1d(x[0])).collect();
        let m = train(&xs, &ys, &TrainOptions { widths: vec![15, 15], epochs: 5000, mse_tol: 0.0, learning_rate: 0.2, ..Default::default() }).unwrap();
        assert!(m.final_mse <= 1e-4, "mse {}", m.final_mse);
    }

    #[test]
    fn bad_inputs() {
        assert!(train::<f64>(&[], &[], &TrainOptions::default()).is_err());
        assert!(train(&[vec![0.0]], &[1.0], &TrainOptions { widths: vec![], ..Default::default() }).is_err());
        assert!(train(&[vec![0.0]], &[1.0, 2.0], &TrainOptions::default()).is_err());
        let diverge = TrainOptions { learning_rate: 1e6, epochs: 50, ..Default::default() };
        let xs: Vec<Vec<f64>> = (0..10).map(|j| vec![j as f64]).collect();
        let ys: Vec<f64> = (0..10).map(|j| (j as f64).sin()).collect();
        assert!(matches!(train(&xs, &ys, &diverge), Err(Error::TrainingDivergence { .. })));
    }
}
