//! Feed-forward reward network with hand-written reverse-mode gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine layer `x·W + b` with `W` of shape `(in, out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }
}

/// Tanh hidden layers and a linear scalar head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardNet {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub layers: Vec<Dense>,
}

/// Gradients (or optimizer moments) shaped like a network's layers.
pub type Grads = Vec<Dense>;

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    /// Input followed by each hidden activation.
    activations: Vec<Array2<f64>>,
}

impl RewardNet {
    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must be positive: input {input_dim}, hidden {hidden:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|io| {
                let limit = (6.0 / (io[0] + io[1]) as f64).sqrt();
                Dense {
                    w: Array2::from_shape_fn((io[0], io[1]), |_| rng.random_range(-limit..limit)),
                    b: Array1::zeros(io[1]),
                }
            })
            .collect();
        Ok(Self {
            input_dim,
            hidden: hidden.to_vec(),
            layers,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Per-row rewards.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<(Array1<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let (head, hidden) = self.layers.split_last().expect("at least the output layer");
        for layer in hidden {
            let mut z = a.dot(&layer.w);
            z += &layer.b;
            z.mapv_inplace(f64::tanh);
            activations.push(std::mem::replace(&mut a, z));
        }
        let mut out = a.dot(&head.w);
        out += &head.b;
        activations.push(a);
        Ok((out.column(0).to_owned(), ForwardCache { activations }))
    }

    /// Parameter gradients given `∂L/∂output` for every row.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView1<'_, f64>) -> Grads {
        let n_layers = self.layers.len();
        let mut grads: Grads = self.layers.iter().map(Dense::zeros_like).collect();
        let mut g = grad_out.to_owned().insert_axis(Axis(1));
        for i in (0..n_layers).rev() {
            let a_in = &cache.activations[i];
            grads[i].w = a_in.t().dot(&g);
            grads[i].b = g.sum_axis(Axis(0));
            if i == 0 {
                break;
            }
            let mut ga = g.dot(&self.layers[i].w.t());
            // a_in is tanh(z): dtanh = 1 − a²
            Zip::from(&mut ga).and(a_in).for_each(|gv, &av| *gv *= 1.0 - av * av);
            g = ga;
        }
        grads
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }
}

pub fn flatten(grads: &Grads) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
        .collect()
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Grads,
    v: Grads,
    t: i32,
}

impl Adam {
    pub fn new(net: &RewardNet, lr: f64) -> Self {
        let zeros: Grads = net.layers.iter().map(Dense::zeros_like).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut RewardNet, grads: &Grads) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            Zip::from(&mut layer.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(update);
            Zip::from(&mut layer.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(update);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn shapes_and_determinism() {
        let a = RewardNet::new(3, &[4, 5], 1).unwrap();
        assert_eq!(a.param_count(), 3 * 4 + 4 + 4 * 5 + 5 + 5 + 1);
        assert_eq!(a, RewardNet::new(3, &[4, 5], 1).unwrap());
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let y = a.forward(x.view()).unwrap();
        assert_eq!(y.len(), 2);
        assert!(y.iter().all(|v| v.is_finite()));
        assert!(a.forward(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn flat_params_round_trip() {
        let mut a = RewardNet::new(2, &[3], 4).unwrap();
        let p: Vec<f64> = (0..a.param_count()).map(|i| i as f64 * 0.01).collect();
        a.set_params_flat(&p).unwrap();
        assert_eq!(a.params_flat(), p);
    }

    #[test]
    fn adam_descends_a_linear_objective() {
        let mut net = RewardNet::new(1, &[2], 0).unwrap();
        let x = array![[1.0]];
        let before = net.forward(x.view()).unwrap()[0];
        let mut opt = Adam::new(&net, 0.01);
        for _ in 0..50 {
            let (_, cache) = net.forward_cached(x.view()).unwrap();
            // minimize the output itself
            let g = net.backward(&cache, array![1.0].view());
            opt.step(&mut net, &g);
        }
        assert!(net.forward(x.view()).unwrap()[0] < before - 0.1);
    }
}
