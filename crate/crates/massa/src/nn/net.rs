//! Dense multilayer networks with analytic backpropagation.
//!
//! Networks are plain value types: a list of weight matrices and bias
//! vectors. Hidden layers apply the configured activation, the output
//! layer is always identity. All math is `f64`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Activation applied to hidden layers. Output layers are identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed in terms of the post-activation value.
    /// For relu, `post > 0` iff `pre > 0`, and we take 0 at the kink.
    #[inline]
    fn derive_from_post(self, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if post > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// A fully-connected network. `weights[l]` has shape `dims[l+1] x dims[l]`.
#[derive(Debug, Clone)]
pub struct DenseNet {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    hidden_activation: Activation,
}

/// Per-layer gradients, same shapes as the parameters. Batched backward
/// sums over the batch; scaling (e.g. 1/B) belongs in the upstream grad.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn add(&mut self, other: &NetGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (l, w) in self.weights.iter().enumerate() {
            out.push((format!("w{l}"), w.as_slice().expect("standard layout")));
        }
        for (l, b) in self.biases.iter().enumerate() {
            out.push((format!("b{l}"), b.as_slice().expect("standard layout")));
        }
        out
    }
}

/// Cached forward activations for one batch, consumed by `backward_batch`.
#[derive(Debug, Clone)]
pub struct NetCache {
    input: Array2<f64>,
    /// Post-activation output of every layer, in order.
    post: Vec<Array2<f64>>,
}

impl NetCache {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("at least one layer")
    }
}

impl DenseNet {
    /// He-uniform weights; biases start small but nonzero, which keeps
    /// rectifier pre-activations off the exact kink (all-zero biases put
    /// dead rows precisely on it, where one-sided derivatives differ).
    pub fn new(dims: &[usize], hidden_activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "network needs input and output dims");
        assert!(dims.iter().all(|&d| d > 0), "layer dims must be positive");
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
            weights.push(w);
            let b_limit = 0.1 * limit;
            biases.push(Array1::from_shape_fn(fan_out, |_| {
                rng.random_range(-b_limit..b_limit)
            }));
        }
        Self {
            dims: dims.to_vec(),
            weights,
            biases,
            hidden_activation,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Multiply layer `l`'s weights and biases by `factor`. Used to start
    /// Gaussian output heads near zero.
    pub fn scale_layer(&mut self, layer: usize, factor: f64) {
        self.weights[layer].mapv_inplace(|v| v * factor);
        self.biases[layer].mapv_inplace(|v| v * factor);
    }

    /// Overwrite layer `l`'s weights and biases with zeros.
    pub fn zero_layer(&mut self, layer: usize) {
        self.weights[layer].fill(0.0);
        self.biases[layer].fill(0.0);
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.dims[0] {
            return Err(Error::DimMismatch {
                context: "DenseNet::forward input",
                expected: self.dims[0],
                got: input.len(),
            });
        }
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).unwrap();
        let (out, _) = self.forward_batch(&x)?;
        Ok(out.row(0).to_vec())
    }

    /// Batched forward pass: `input` is `B x dims[0]`, output `B x dims[last]`.
    pub fn forward_batch(&self, input: &Array2<f64>) -> Result<(Array2<f64>, NetCache)> {
        if input.ncols() != self.dims[0] {
            return Err(Error::DimMismatch {
                context: "DenseNet::forward_batch input",
                expected: self.dims[0],
                got: input.ncols(),
            });
        }
        let n_layers = self.weights.len();
        let mut post = Vec::with_capacity(n_layers);
        let mut cur = input.clone();
        for l in 0..n_layers {
            let mut z = cur.dot(&self.weights[l].t());
            z += &self.biases[l];
            if l + 1 < n_layers {
                z.mapv_inplace(|v| self.hidden_activation.apply(v));
            }
            post.push(z.clone());
            cur = z;
        }
        Ok((
            cur,
            NetCache {
                input: input.clone(),
                post,
            },
        ))
    }

    /// Backward pass for a single input/upstream pair (runs its own forward).
    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(NetGrads, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimMismatch {
                context: "DenseNet::backward upstream",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).unwrap();
        let (_, cache) = self.forward_batch(&x)?;
        let up = Array2::from_shape_vec((1, upstream.len()), upstream.to_vec()).unwrap();
        let (grads, dx) = self.backward_batch(&cache, &up)?;
        Ok((grads, dx.row(0).to_vec()))
    }

    /// Batched backward pass. Parameter gradients are summed over the batch.
    pub fn backward_batch(
        &self,
        cache: &NetCache,
        upstream: &Array2<f64>,
    ) -> Result<(NetGrads, Array2<f64>)> {
        if upstream.ncols() != self.output_dim() {
            return Err(Error::DimMismatch {
                context: "DenseNet::backward_batch upstream",
                expected: self.output_dim(),
                got: upstream.ncols(),
            });
        }
        let n_layers = self.weights.len();
        let mut grads = NetGrads {
            weights: Vec::with_capacity(n_layers),
            biases: Vec::with_capacity(n_layers),
        };
        // Filled back-to-front, reversed at the end.
        let mut w_rev = Vec::with_capacity(n_layers);
        let mut b_rev = Vec::with_capacity(n_layers);
        let mut delta = upstream.clone();
        for l in (0..n_layers).rev() {
            if l + 1 < n_layers {
                // Hidden layer: fold in activation derivative.
                let post = &cache.post[l];
                delta.zip_mut_with(post, |d, &p| {
                    *d *= self.hidden_activation.derive_from_post(p)
                });
            }
            let prev = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            w_rev.push(delta.t().dot(prev));
            b_rev.push(delta.sum_axis(Axis(0)));
            delta = delta.dot(&self.weights[l]);
        }
        w_rev.reverse();
        b_rev.reverse();
        grads.weights = w_rev;
        grads.biases = b_rev;
        Ok((grads, delta))
    }

    /// Gradient w.r.t. the input only; parameter gradients are skipped.
    pub fn input_grad_batch(&self, cache: &NetCache, upstream: &Array2<f64>) -> Array2<f64> {
        let n_layers = self.weights.len();
        let mut delta = upstream.clone();
        for l in (0..n_layers).rev() {
            if l + 1 < n_layers {
                let post = &cache.post[l];
                delta.zip_mut_with(post, |d, &p| {
                    *d *= self.hidden_activation.derive_from_post(p)
                });
            }
            delta = delta.dot(&self.weights[l]);
        }
        delta
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (l, w) in self.weights.iter().enumerate() {
            out.push((format!("w{l}"), w.as_slice().expect("standard layout")));
        }
        for (l, b) in self.biases.iter().enumerate() {
            out.push((format!("b{l}"), b.as_slice().expect("standard layout")));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (l, w) in self.weights.iter_mut().enumerate() {
            out.push((format!("w{l}"), w.as_slice_mut().expect("standard layout")));
        }
        for (l, b) in self.biases.iter_mut().enumerate() {
            out.push((format!("b{l}"), b.as_slice_mut().expect("standard layout")));
        }
        out
    }
}

/// Numerically stabilized softmax (max subtraction).
pub fn softmax(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "softmax of empty vector");
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax in place.
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_weight_net_outputs_biases() {
        let mut net = DenseNet::new(&[3, 4, 2], Activation::Relu, &mut rng(0));
        net.zero_layer(0);
        net.zero_layer(1);
        let out = net.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_initialized_single_layer_passes_input_through() {
        let mut net = DenseNet::new(&[3, 3], Activation::Relu, &mut rng(1));
        net.zero_layer(0);
        {
            let mut blocks = net.blocks_mut();
            let (_, w0) = &mut blocks[0];
            // Row-major 3x3 identity.
            w0[0] = 1.0;
            w0[4] = 1.0;
            w0[8] = 1.0;
        }
        let x = [0.5, -1.5, 2.0];
        let out = net.forward(&x).unwrap();
        assert_eq!(out, x.to_vec());
    }

    #[test]
    fn forward_matches_straight_line_matrix_multiply_oracle() {
        // Independent oracle: explicit nested loops over a 4 -> 8 -> 2 net.
        let net = DenseNet::new(&[4, 8, 2], Activation::Relu, &mut rng(2));
        let mut r = rng(3);
        let input: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();

        let blocks = net.blocks();
        let w0 = blocks.iter().find(|(n, _)| n == "w0").unwrap().1;
        let w1 = blocks.iter().find(|(n, _)| n == "w1").unwrap().1;
        let b0 = blocks.iter().find(|(n, _)| n == "b0").unwrap().1;
        let b1 = blocks.iter().find(|(n, _)| n == "b1").unwrap().1;

        let mut hidden = [0.0; 8];
        for i in 0..8 {
            let mut acc = b0[i];
            for j in 0..4 {
                acc += w0[i * 4 + j] * input[j];
            }
            hidden[i] = acc.max(0.0);
        }
        let mut expect = [0.0; 2];
        for i in 0..2 {
            let mut acc = b1[i];
            for j in 0..8 {
                acc += w1[i * 8 + j] * hidden[j];
            }
            expect[i] = acc;
        }

        let out = net.forward(&input).unwrap();
        for (o, e) in out.iter().zip(expect.iter()) {
            assert!((o - e).abs() < 1e-12, "got {o}, expected {e}");
        }
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = DenseNet::new(&[4, 2], Activation::Relu, &mut rng(4));
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let net = DenseNet::new(&[3, 5, 2], Activation::Relu, &mut rng(5));
        let (grads, dx) = net.backward(&[0.3, -0.2, 0.9], &[0.0, 0.0]).unwrap();
        assert!(grads.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(grads.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_single_linear_layer_is_outer_product() {
        let net = DenseNet::new(&[3, 2], Activation::Relu, &mut rng(6));
        let input = [0.5, -1.0, 2.0];
        let upstream = [2.0, -3.0];
        let (grads, _) = net.backward(&input, &upstream).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let expect = upstream[i] * input[j];
                assert!((grads.weights[0][(i, j)] - expect).abs() < 1e-15);
            }
            assert!((grads.biases[0][i] - upstream[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_wrong_upstream_dim() {
        let net = DenseNet::new(&[3, 2], Activation::Relu, &mut rng(7));
        assert!(matches!(
            net.backward(&[1.0, 2.0, 3.0], &[1.0]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let s = softmax(&[0.0, 0.0]);
        assert!((s[0] - 0.5).abs() < 1e-15 && (s[1] - 0.5).abs() < 1e-15);

        let s = softmax(&[1000.0, 0.0]);
        assert!(s.iter().all(|v| v.is_finite()));
        assert!(s[0] > 1.0 - 1e-9 && s[1] < 1e-9);
    }

    #[test]
    fn softmax_matches_naive_oracle_at_moderate_magnitudes() {
        let mut r = rng(8);
        let v: Vec<f64> = (0..5).map(|_| r.random_range(-3.0..3.0)).collect();
        let naive: Vec<f64> = {
            let exps: Vec<f64> = v.iter().map(|&x| x.exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        };
        let s = softmax(&v);
        for (a, b) in s.iter().zip(naive.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let sum: f64 = s.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}
