use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Raw outputs, e.g. Q-values.
    Identity,
    /// Log-probabilities over the outputs, for policies.
    LogSoftmax,
}

/// Fully connected network with rectifier hidden layers.
///
/// All parameters live in one flat vector: for every layer, the row-major
/// `out x in` weight matrix followed by the `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    head: Head,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Layer inputs: `inputs[0]` is the network input, `inputs[l]` the
    /// rectified output of hidden layer `l - 1`.
    inputs: Vec<Vec<f64>>,
    /// Final linear output before the head.
    logits: Vec<f64>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn into_output(self) -> Vec<f64> {
        self.output
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl Mlp {
    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes {sizes:?} need at least an input and an output layer, all non-empty"
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            head,
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(sizes, head)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut mlp.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(mlp)
    }

    pub fn from_params(sizes: &[usize], head: Head, params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(sizes, head)?;
        if params.len() != mlp.params.len() {
            return Err(Error::ShapeMismatch {
                what: "mlp parameters",
                expected: mlp.params.len(),
                got: params.len(),
            });
        }
        mlp.params = params;
        mlp.validate()?;
        Ok(mlp)
    }

    /// Checks shapes and finiteness, e.g. after deserializing.
    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {:?}", self.sizes)));
        }
        let expected = param_count(&self.sizes);
        if self.params.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "mlp parameters",
                expected,
                got: self.params.len(),
            });
        }
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("mlp parameter {i}")));
        }
        Ok(())
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(Error::ShapeMismatch {
                what: "mlp input",
                expected: self.input_size(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let n_layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut current = input.to_vec();
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let mut out: Vec<f64> = weights
                .chunks_exact(fan_in)
                .zip(biases)
                .map(|(row, b)| b + row.iter().zip(&current).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            if l + 1 < n_layers {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            inputs.push(std::mem::replace(&mut current, out));
            offset += fan_in * fan_out + fan_out;
        }
        let output = match self.head {
            Head::Identity => current.clone(),
            Head::LogSoftmax => log_softmax(&current),
        };
        Ok(ForwardCache {
            inputs,
            logits: current,
            output,
        })
    }

    /// Accumulates `d loss / d params` into `grads` given `upstream = d loss / d output`,
    /// and returns `d loss / d input`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_size() {
            return Err(Error::ShapeMismatch {
                what: "mlp upstream gradient",
                expected: self.output_size(),
                got: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                what: "mlp gradient buffer",
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut delta: Vec<f64> = match self.head {
            Head::Identity => upstream.to_vec(),
            Head::LogSoftmax => {
                let total: f64 = upstream.iter().sum();
                upstream
                    .iter()
                    .zip(&cache.output)
                    .map(|(g, logp)| g - logp.exp() * total)
                    .collect()
            }
        };
        let n_layers = self.sizes.len() - 1;
        let mut offset = self.params.len();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= fan_in * fan_out + fan_out;
            let x = &cache.inputs[l];
            let (gw, gb) = grads[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * w;
                }
            }
            if l > 0 {
                // rectifier derivative; inputs[l] holds the rectified activation
                for (p, a) in prev.iter_mut().zip(&cache.inputs[l]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Pre-head outputs of the last forward pass.
    pub fn logits<'a>(&self, cache: &'a ForwardCache) -> &'a [f64] {
        &cache.logits
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if source.sizes != self.sizes {
            return Err(Error::ShapeMismatch {
                what: "soft update",
                expected: self.params.len(),
                got: source.params.len(),
            });
        }
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_differences, max_relative_error};
    use crate::rng::seeded_rng;

    #[test]
    fn zero_weights_zero_output() {
        let mlp = Mlp::zeros(&[3, 4, 2], Head::Identity).unwrap();
        assert_eq!(mlp.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let mlp = Mlp::from_params(&[2, 2], Head::Identity, params).unwrap();
        assert_eq!(mlp.forward(&[0.25, -7.0]).unwrap(), vec![0.25, -7.0]);
    }

    #[test]
    fn shape_errors() {
        let mlp = Mlp::zeros(&[3, 2], Head::Identity).unwrap();
        assert!(mlp.forward(&[1.0]).is_err());
        let cache = mlp.forward_cached(&[1.0, 2.0, 3.0]).unwrap();
        assert!(mlp.backward(&cache, &[1.0], &mut mlp.zero_grads()).is_err());
        assert!(Mlp::from_params(&[3, 2], Head::Identity, vec![0.0; 3]).is_err());
    }

    /// Hand-rolled two-layer forward pass.
    #[test]
    fn forward_matches_hand_computation() {
        let mut rng = seeded_rng(5);
        let mlp = Mlp::new(&[3, 4, 2], Head::Identity, &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0];
        let p = mlp.params();
        let w1 = &p[0..12];
        let b1 = &p[12..16];
        let w2 = &p[16..24];
        let b2 = &p[24..26];
        let mut h = [0.0; 4];
        for i in 0..4 {
            let mut z = b1[i];
            for j in 0..3 {
                z += w1[i * 3 + j] * x[j];
            }
            h[i] = if z > 0.0 { z } else { 0.0 };
        }
        let mut y = [0.0; 2];
        for i in 0..2 {
            y[i] = b2[i];
            for j in 0..4 {
                y[i] += w2[i * 4 + j] * h[j];
            }
        }
        let out = mlp.forward(&x).unwrap();
        for i in 0..2 {
            assert!((out[i] - y[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_is_pure() {
        let mlp = Mlp::new(&[4, 8, 3], Head::LogSoftmax, &mut seeded_rng(1)).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        let a = mlp.forward(&x).unwrap();
        let b = mlp.forward(&x).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let total: f64 = a.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mlp = Mlp::new(&[3, 5, 2], Head::Identity, &mut seeded_rng(2)).unwrap();
        let cache = mlp.forward_cached(&[1.0, 2.0, 3.0]).unwrap();
        let mut g = mlp.zero_grads();
        let dx = mlp.backward(&cache, &[0.0, 0.0], &mut g).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    /// For a linear model with loss 0.5 * ||Wx + b - y||^2 the gradient is
    /// the residual outer product r x^T (and r for the bias).
    #[test]
    fn linear_squared_loss_gradient_is_residual_outer_product() {
        let mlp = Mlp::new(&[3, 2], Head::Identity, &mut seeded_rng(9)).unwrap();
        let x = [0.3, -1.2, 0.7];
        let y = [1.0, -0.5];
        let cache = mlp.forward_cached(&x).unwrap();
        let r: Vec<f64> = cache.output().iter().zip(&y).map(|(o, t)| o - t).collect();
        let mut g = mlp.zero_grads();
        mlp.backward(&cache, &r, &mut g).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((g[i * 3 + j] - r[i] * x[j]).abs() < 1e-15);
            }
            assert!((g[6 + i] - r[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = seeded_rng(seed);
            for head in [Head::Identity, Head::LogSoftmax] {
                let mlp = Mlp::new(&[4, 6, 5, 3], head, &mut rng).unwrap();
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let weights: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                // loss = sum_k c_k * out_k^2 / 2 + out_0
                let loss = |params: &[f64]| {
                    let m = Mlp::from_params(mlp.sizes(), head, params.to_vec()).unwrap();
                    let out = m.forward(&x).unwrap();
                    out.iter().zip(&weights).map(|(o, c)| 0.5 * c * o * o).sum::<f64>() + out[0]
                };
                let cache = mlp.forward_cached(&x).unwrap();
                let mut upstream: Vec<f64> = cache.output().iter().zip(&weights).map(|(o, c)| c * o).collect();
                upstream[0] += 1.0;
                let mut g = mlp.zero_grads();
                mlp.backward(&cache, &upstream, &mut g).unwrap();
                let numeric = central_differences(&loss, mlp.params(), 1e-5);
                let (err, _) = max_relative_error(&g, &numeric, 1e-8);
                assert!(err < 1e-4, "seed {seed} head {head:?}: rel err {err}");
            }
        }
    }

    #[test]
    fn soft_update_interpolates() {
        let mut target = Mlp::zeros(&[1, 1], Head::Identity).unwrap();
        let source = Mlp::from_params(&[1, 1], Head::Identity, vec![2.0, 4.0]).unwrap();
        target.soft_update_from(&source, 0.25).unwrap();
        assert_eq!(target.params(), &[0.5, 1.0]);
        target.soft_update_from(&source, 1.0).unwrap();
        assert_eq!(target.params(), source.params());
    }
}
