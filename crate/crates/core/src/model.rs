//! Feedforward softmax classifier with hand-written forward and backward passes.
//!
//! Weights are row-major `(out, in)`. Hidden layers use ReLU; the last layer
//! produces logits that go through a max-shifted softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transport::ProbVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    dims: Vec<usize>,
    layers: Vec<Layer<T>>,
    activation: Activation,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// Input to each layer: `activations[0]` is the sample itself.
    pub activations: Vec<Vec<T>>,
    /// Pre-activation output of each layer; the last entry is the logits.
    pub pre_activations: Vec<Vec<T>>,
    pub probs: ProbVector<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn logits(&self) -> &[T] {
        self.pre_activations.last().expect("at least one layer")
    }
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &Mlp<T>) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![T::zero(); l.biases.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
    }

    /// Flattened in the same order as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|x| x.is_finite())
    }
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<ProbVector<T>> {
    let top = logits.iter().copied().fold(T::neg_infinity(), T::max);
    if !top.is_finite() {
        return Err(Error::Numeric(format!("non-finite logit maximum {top}")));
    }
    let exps: Vec<T> = logits.iter().map(|&z| (z - top).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    ProbVector::new(exps.into_iter().map(|e| e / sum).collect())
}

impl<T: Scalar> Mlp<T> {
    /// He-normal weights (`σ = √(2 / fan_in)`), zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        Self::check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let scale = (2.0 / inputs as f64).sqrt();
                let weights = (0..inputs * outputs)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::lit(z * scale)
                    })
                    .collect();
                Layer {
                    inputs,
                    outputs,
                    weights,
                    biases: vec![T::zero(); outputs],
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            activation: Activation::ReLU,
        })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 {
            return Err(Error::Dimension(format!(
                "model needs at least input and output widths, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Dimension(format!("zero-width layer in {dims:?}")));
        }
        if *dims.last().unwrap() < 2 {
            return Err(Error::Dimension("output layer needs K >= 2 classes".into()));
        }
        Ok(())
    }

    /// Rebuilds a model from widths and parameters flattened by [`Mlp::params`].
    pub fn from_params(dims: &[usize], params: &[T]) -> Result<Self> {
        Self::check_dims(dims)?;
        let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if params.len() != expected {
            return Err(Error::Dimension(format!(
                "widths {dims:?} need {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Input("non-finite parameter".into()));
        }
        let mut at = 0;
        let layers = dims
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let weights = params[at..at + inputs * outputs].to_vec();
                at += inputs * outputs;
                let biases = params[at..at + outputs].to_vec();
                at += outputs;
                Layer {
                    inputs,
                    outputs,
                    weights,
                    biases,
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            activation: Activation::ReLU,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    /// Rewrites the first layer so that the model takes raw inputs `x` where
    /// it was trained on `(x - mean) / std`.
    pub fn fold_input_affine(&mut self, mean: &[T], std: &[T]) -> Result<()> {
        let first = &mut self.layers[0];
        if mean.len() != first.inputs || std.len() != first.inputs {
            return Err(Error::Dimension(format!(
                "affine map of width {} for a model with {} inputs",
                mean.len(),
                first.inputs
            )));
        }
        if std.iter().any(|s| !(*s > T::zero() && s.is_finite())) {
            return Err(Error::Input("standard deviations must be positive and finite".into()));
        }
        for (o, b) in first.biases.iter_mut().enumerate() {
            let row = &mut first.weights[o * first.inputs..(o + 1) * first.inputs];
            for ((w, m), s) in row.iter_mut().zip(mean).zip(std) {
                *w /= *s;
                *b -= *w * *m;
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<ForwardTrace<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("feature {i} is not finite")));
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = layer.biases.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                *zo += row.iter().zip(&current).map(|(w, a)| *w * *a).sum::<T>();
            }
            let next = if idx < last {
                z.iter().map(|&v| v.max(T::zero())).collect()
            } else {
                Vec::new()
            };
            activations.push(std::mem::replace(&mut current, next));
            pre_activations.push(z);
        }
        let probs = softmax(pre_activations.last().unwrap())?;
        Ok(ForwardTrace {
            activations,
            pre_activations,
            probs,
        })
    }

    /// Class probabilities only.
    pub fn predict(&self, x: &[T]) -> Result<ProbVector<T>> {
        Ok(self.forward(x)?.probs)
    }

    pub fn backward(&self, trace: &ForwardTrace<T>, grad_probs: &[T]) -> Result<Gradients<T>> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(trace, grad_probs, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂probs`.
    ///
    /// The softmax Jacobian is applied as `dz_i = p_i Σ_j p_j (g_i - g_j)`:
    /// constant shifts of `g` cancel inside each difference.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace<T>,
        grad_probs: &[T],
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        let k = self.classes();
        if grad_probs.len() != k || trace.pre_activations.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "gradient of length {} for a model with {k} classes",
                grad_probs.len()
            )));
        }
        if grads.weights.len() != self.layers.len() {
            return Err(Error::Dimension("gradient buffer shaped for another model".into()));
        }
        let p = trace.probs.as_slice();
        let mut delta: Vec<T> = (0..k)
            .map(|i| {
                let spread: T = (0..k).map(|j| p[j] * (grad_probs[i] - grad_probs[j])).sum();
                p[i] * spread
            })
            .collect();

        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let input = &trace.activations[idx];
            let gw = &mut grads.weights[idx];
            for (o, d) in delta.iter().enumerate() {
                if *d == T::zero() {
                    continue;
                }
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(g, a)| *g += *d * *a);
            }
            grads.biases[idx].iter_mut().zip(&delta).for_each(|(g, d)| *g += *d);
            if idx == 0 {
                break;
            }
            let below = &trace.pre_activations[idx - 1];
            let mut next = vec![T::zero(); layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                if *d == T::zero() {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                next.iter_mut().zip(row).for_each(|(n, w)| *n += *w * *d);
            }
            for (n, z) in next.iter_mut().zip(below) {
                if *z <= T::zero() {
                    *n = T::zero();
                }
            }
            delta = next;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Evaluation, ScoreConfig, ScoreMatrix};
    use crate::loss::{grad_ind, grad_ood, wood_loss, BatchSlices};
    use rand::Rng;

    #[test]
    fn init_is_deterministic() {
        let a = Mlp::<f64>::init(&[2, 4, 3], 7).unwrap();
        let b = Mlp::<f64>::init(&[2, 4, 3], 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Mlp::<f64>::init(&[2, 4, 3], 8).unwrap());
        assert_eq!(a.param_count(), 2 * 4 + 4 + 4 * 3 + 3);
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(matches!(Mlp::<f64>::init(&[], 0), Err(Error::Dimension(_))));
        assert!(matches!(Mlp::<f64>::init(&[3], 0), Err(Error::Dimension(_))));
        assert!(Mlp::<f64>::init(&[3, 0, 2], 0).is_err());
        let m = Mlp::<f64>::init(&[5, 2], 0).unwrap();
        assert_eq!(m.layers().len(), 1);
        assert!(m.forward(&[0.1; 5]).is_ok());
    }

    #[test]
    fn zero_model_is_uniform() {
        let dims = [3, 4, 5];
        let zeros = vec![0.0f64; Mlp::<f64>::init(&dims, 0).unwrap().param_count()];
        let m = Mlp::from_params(&dims, &zeros).unwrap();
        let t = m.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert!(t.probs.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0f64, 1000.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let p = softmax(&[-1000.0f64, 0.0, 1000.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let m = Mlp::<f64>::init(&[2, 3], 0).unwrap();
        assert!(matches!(m.forward(&[f64::NAN, 0.0]), Err(Error::Input(_))));
        assert!(matches!(m.forward(&[f64::INFINITY, 0.0]), Err(Error::Input(_))));
        assert!(matches!(m.forward(&[0.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn constant_and_zero_upstream_give_zero_gradients() {
        let m = Mlp::<f64>::init(&[3, 6, 4], 1).unwrap();
        let t = m.forward(&[0.3, -0.7, 1.2]).unwrap();
        for g in [[0.0; 4], [2.5; 4]] {
            let grads = m.backward(&t, &g).unwrap();
            assert!(grads.flatten().iter().all(|&x| x == 0.0));
        }
        assert!(m.backward(&t, &[1.0; 3]).is_err());
    }

    #[test]
    fn gauge_shift_is_exact_for_representable_shifts() {
        let m = Mlp::<f64>::init(&[3, 6, 4], 2).unwrap();
        let t = m.forward(&[0.3, -0.7, 1.2]).unwrap();
        let g = [0.5, -1.25, 0.75, 2.0];
        let shifted: Vec<f64> = g.iter().map(|x| x + 3.0).collect();
        assert_eq!(m.backward(&t, &g).unwrap(), m.backward(&t, &shifted).unwrap());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = [4, 7, 5, 3];
        let cfg = ScoreConfig::<f64>::new(ScoreMatrix::Dynamic, Evaluation::ClosedForm);
        for trial in 0..5 {
            let model = Mlp::<f64>::init(&dims, trial).unwrap();
            let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let labels = [0usize, 2, 1];
            let loss_at = |m: &Mlp<f64>| {
                let ind = (0..3).map(|i| (m.predict(&xs[i]).unwrap(), labels[i])).collect();
                let ood = (3..5).map(|i| m.predict(&xs[i]).unwrap()).collect();
                wood_loss(&BatchSlices::new(ind, ood, 0.1).unwrap(), &cfg).unwrap().total
            };
            let mut grads = Gradients::zeros_like(&model);
            for (i, x) in xs.iter().enumerate() {
                let t = model.forward(x).unwrap();
                let g = if i < 3 {
                    grad_ind(&t.probs, labels[i], 3).unwrap()
                } else {
                    grad_ood(&t.probs, &cfg, 2, 0.1).unwrap()
                };
                model.backward_into(&t, &g, &mut grads).unwrap();
            }
            let analytic = grads.flatten();
            let params = model.params();
            let h = 1e-5;
            for (idx, a) in analytic.iter().enumerate() {
                let mut p = params.clone();
                p[idx] += h;
                let up = loss_at(&Mlp::from_params(&dims, &p).unwrap());
                p[idx] -= 2.0 * h;
                let down = loss_at(&Mlp::from_params(&dims, &p).unwrap());
                let fd = (up - down) / (2.0 * h);
                assert!((a - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "param {idx}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn folded_affine_matches_explicit_standardization() {
        let mut m = Mlp::<f64>::init(&[3, 6, 2], 4).unwrap();
        let (mean, std) = ([1.0, -2.0, 0.5], [2.0, 0.5, 3.0]);
        let x = [0.3, -1.1, 2.0];
        let z: Vec<f64> = (0..3).map(|i| (x[i] - mean[i]) / std[i]).collect();
        let want = m.predict(&z).unwrap();
        m.fold_input_affine(&mean, &std).unwrap();
        let got = m.predict(&x).unwrap();
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(m.fold_input_affine(&mean, &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn params_round_trip() {
        let m = Mlp::<f64>::init(&[3, 5, 2], 9).unwrap();
        let back = Mlp::from_params(m.dims(), &m.params()).unwrap();
        assert_eq!(m, back);
        assert!(Mlp::<f64>::from_params(&[3, 5, 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn single_precision_forward() {
        let m = Mlp::<f32>::init(&[2, 8, 3], 3).unwrap();
        let t = m.forward(&[0.5, -0.5]).unwrap();
        assert!((t.probs.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
}
