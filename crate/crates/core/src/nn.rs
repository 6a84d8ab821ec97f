//! Small dense networks with exact reverse-mode gradients and an Adam
//! optimizer. Everything is `f64`; batches are row-major `(batch, features)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// Shape `(inputs, outputs)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    /// Input to every layer, followed by the network output.
    activations: Vec<Array2<f64>>,
}

/// Multilayer perceptron. Hidden layers use ReLU, the last layer is affine.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
    cache: Option<ForwardCache>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Parameter gradients in layer order plus the gradient w.r.t. the input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
    pub input: Array2<f64>,
}

impl Gradients {
    /// Flattens parameter gradients in the same order as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl Mlp {
    /// Builds a network with uniform fan-in initialisation, `U(-1/sqrt(n), 1/sqrt(n))`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!(
                "network needs at least two non-zero layer sizes, got {sizes:?}"
            )));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let bound = 1.0 / (pair[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Dense {
                    weights: Array2::from_shape_fn((pair[0], pair[1]), |_| dist.sample(rng)),
                    bias: Array1::from_shape_fn(pair[1], |_| dist.sample(rng)),
                    activation: if i == last {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Ok(Self {
            layers,
            cache: None,
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape {
                    expected: pair[0].outputs(),
                    actual: pair[1].inputs(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape {
                    expected: l.outputs(),
                    actual: l.bias.len(),
                });
            }
        }
        Ok(Self {
            layers,
            cache: None,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = *it.next().expect("length checked");
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().expect("length checked");
            }
        }
        self.cache = None;
        Ok(())
    }

    /// `target <- (1 - tau) target + tau self`.
    pub fn soft_update_into(&self, target: &mut Mlp, tau: f64) {
        for (src, dst) in self.layers.iter().zip(target.layers.iter_mut()) {
            dst.weights.zip_mut_with(&src.weights, |d, s| *d += tau * (s - *d));
            dst.bias.zip_mut_with(&src.bias, |d, s| *d += tau * (s - *d));
        }
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: input.ncols(),
            });
        }
        Ok(())
    }

    fn run(&self, input: ArrayView2<f64>, mut keep: Option<&mut Vec<Array2<f64>>>) -> Array2<f64> {
        let mut x = input.to_owned();
        for layer in &self.layers {
            let mut z = x.dot(&layer.weights);
            z += &layer.bias;
            if layer.activation == Activation::Relu {
                z.mapv_inplace(|v| v.max(0.0));
            }
            if let Some(store) = keep.as_deref_mut() {
                store.push(std::mem::replace(&mut x, z));
            } else {
                x = z;
            }
        }
        if let Some(store) = keep {
            store.push(x.clone());
        }
        x
    }

    /// Inference on a batch; no cache is kept, so this is reentrant.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        Ok(self.run(input, None))
    }

    /// Single-sample inference.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass that caches activations for a following [`Mlp::backward`].
    pub fn forward_train(&mut self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let out = self.run(input, Some(&mut activations));
        self.cache = Some(ForwardCache { activations });
        Ok(out)
    }

    /// Reverse pass for the cached forward. The cache is consumed.
    pub fn backward(&mut self, output_grad: ArrayView2<f64>) -> Result<Gradients> {
        let cache = self.cache.take().ok_or(Error::NoForwardCache)?;
        let acts = &cache.activations;
        let out = &acts[acts.len() - 1];
        if output_grad.dim() != out.dim() {
            return Err(Error::Shape {
                expected: out.len(),
                actual: output_grad.len(),
            });
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut bias = Vec::with_capacity(n);
        let mut delta = output_grad.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                // acts[i + 1] is this layer's post-activation output.
                delta.zip_mut_with(&acts[i + 1], |d, a| {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            weights.push(acts[i].t().dot(&delta));
            bias.push(delta.sum_axis(Axis(0)));
            delta = delta.dot(&layer.weights.t());
        }
        weights.reverse();
        bias.reverse();
        Ok(Gradients {
            weights,
            bias,
            input: delta,
        })
    }
}

/// Adaptive-moment optimizer state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    /// Descends along `grads`. Rejects non-finite gradients before touching
    /// any state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                actual: params.len().min(grads.len()),
            });
        }
        if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index, value });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Applies one step to a network's parameters.
    pub fn step_mlp(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        let mut params = net.params();
        self.step(&mut params, &grads.flatten())?;
        net.set_params(&params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(w: f64, b: f64) -> Mlp {
        Mlp::from_layers(vec![Dense {
            weights: array![[w]],
            bias: array![b],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input() {
        assert_eq!(linear(1.0, 0.0).forward(&[0.5]).unwrap(), vec![0.5]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let net = Mlp::from_layers(vec![Dense {
            weights: Array2::zeros((3, 2)),
            bias: array![0.25, -1.5],
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(net.forward(&[4.0, -2.0, 9.0]).unwrap(), vec![0.25, -1.5]);
    }

    #[test]
    fn hand_computed_two_layer_net() {
        // h = relu([1 -1; 2 1]^T x + [0, 0.5]), y = [3, -2] h + 0.1
        let net = Mlp::from_layers(vec![
            Dense {
                weights: array![[1.0, 2.0], [-1.0, 1.0]],
                bias: array![0.0, 0.5],
                activation: Activation::Relu,
            },
            Dense {
                weights: array![[3.0], [-2.0]],
                bias: array![0.1],
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        // x = (0.5, 1.5): pre = (0.5 - 1.5, 1.0 + 1.5 + 0.5) = (-1, 3) -> h = (0, 3)
        // y = 0 - 6 + 0.1
        assert_abs_diff_eq!(net.forward(&[0.5, 1.5]).unwrap()[0], -5.9, epsilon = 1e-15);
    }

    #[test]
    fn shape_errors() {
        let net = linear(1.0, 0.0);
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
        let mut net = net;
        assert!(matches!(
            net.backward(array![[1.0]].view()),
            Err(Error::NoForwardCache)
        ));
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let mut net = linear(0.7, 0.2);
        net.forward_train(array![[1.25]].view()).unwrap();
        let g = net.backward(array![[1.0]].view()).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 1.25);
        assert_eq!(g.bias[0][0], 1.0);
        assert_eq!(g.input[[0, 0]], 0.7);
        // the cache is single use
        assert!(net.backward(array![[1.0]].view()).is_err());
    }

    #[test]
    fn relu_blocks_negative_units() {
        let mut net = Mlp::from_layers(vec![
            Dense {
                weights: array![[-1.0]],
                bias: array![0.0],
                activation: Activation::Relu,
            },
            Dense {
                weights: array![[2.0]],
                bias: array![0.0],
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        net.forward_train(array![[0.8]].view()).unwrap();
        let g = net.backward(array![[1.0]].view()).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 0.0);
        assert_eq!(g.bias[0][0], 0.0);
        assert_eq!(g.input[[0, 0]], 0.0);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut opt = Adam::new(3, 1e-2);
        let mut p = vec![1.0, -2.0, 3.0];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_descends_square() {
        let mut opt = Adam::new(1, 1e-2);
        let mut w = vec![1.0];
        let g = [2.0 * w[0]];
        opt.step(&mut w, &g).unwrap();
        assert!(w[0] * w[0] < 1.0);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut opt = Adam::new(2, 1e-2);
        let mut p = vec![1.0, 1.0];
        let err = opt.step(&mut p, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1, .. }));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn adam_solves_quadratic() {
        // f(w) = 0.5 (3 w0^2 + w1^2) + w0 w1 - w0 + 2 w1
        let grad = |w: &[f64]| vec![3.0 * w[0] + w[1] - 1.0, w[1] + w[0] + 2.0];
        let mut opt = Adam::new(2, 0.1);
        let mut w = vec![2.0, -1.0];
        for _ in 0..200 {
            let g = grad(&w);
            opt.step(&mut w, &g).unwrap();
        }
        let g = grad(&w);
        assert!(g[0].hypot(g[1]) < 1e-3, "gradient norm {:?}", g);
    }

    #[test]
    fn predict_is_reentrant_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[3, 8, 2], &mut rng).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
        assert_eq!(net.predict(x.view()).unwrap(), net.predict(x.view()).unwrap());
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Mlp::new(&[2, 4, 1], &mut rng).unwrap();
        let p = net.params();
        assert_eq!(p.len(), net.param_count());
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        net.set_params(&shifted).unwrap();
        assert_eq!(net.params(), shifted);
        assert!(net.set_params(&p[1..]).is_err());
    }
}
