use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, xs: &mut [f64]) {
        match self {
            Activation::Tanh => xs.iter_mut().for_each(|x| *x = libm::tanh(*x)),
            Activation::Relu => xs.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Identity => {}
        }
    }
}

/// Fully connected network. Parameters are stored as `[W0, b0, W1, b1, ..]`
/// with `W_l` shaped `[in, out]` so that a layer computes `act(x W + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<Tensor>,
}

fn check_layout(widths: &[usize], activations: &[Activation]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Config("an MLP needs at least two positive layer widths".into()));
    }
    if activations.len() != widths.len() - 1 {
        return Err(Error::Shape {
            context: "Mlp activations",
            expected: vec![widths.len() - 1],
            actual: vec![activations.len()],
        });
    }
    Ok(())
}

impl Mlp {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for
    /// weights and biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        check_layout(widths, activations)?;
        let mut params = Vec::with_capacity(2 * activations.len());
        for w in widths.windows(2) {
            let bound = 1.0 / libm::sqrt(w[0] as f64);
            let weights = (0..w[0] * w[1]).map(|_| rng.random_range(-bound..=bound)).collect();
            let bias = (0..w[1]).map(|_| rng.random_range(-bound..=bound)).collect();
            params.push(Tensor::matrix(w[0], w[1], weights));
            params.push(Tensor::vector(bias));
        }
        Ok(Self {
            widths: widths.to_vec(),
            activations: activations.to_vec(),
            params,
        })
    }

    pub fn zeros(widths: &[usize], activations: &[Activation]) -> Result<Self> {
        check_layout(widths, activations)?;
        let params = widths
            .windows(2)
            .flat_map(|w| [Tensor::zeros(&[w[0], w[1]]), Tensor::zeros(&[w[1]])])
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            activations: activations.to_vec(),
            params,
        })
    }

    /// Rebuilds a network from stored parameters, validating every shape.
    pub fn from_params(widths: &[usize], activations: &[Activation], params: Vec<Tensor>) -> Result<Self> {
        let template = Self::zeros(widths, activations)?;
        if params.len() != template.params.len() {
            return Err(Error::Shape {
                context: "Mlp::from_params count",
                expected: vec![template.params.len()],
                actual: vec![params.len()],
            });
        }
        for (p, t) in params.iter().zip(&template.params) {
            if p.shape() != t.shape() {
                return Err(Error::Shape {
                    context: "Mlp::from_params",
                    expected: t.shape().to_vec(),
                    actual: p.shape().to_vec(),
                });
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("Mlp parameters".into()));
            }
        }
        Ok(Self {
            widths: widths.to_vec(),
            activations: activations.to_vec(),
            params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    /// Batched forward pass. Accepts a single input vector `[in]` or a batch
    /// `[rows, in]`; the output keeps the same rank.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.input_dim() || input.shape().len() > 2 {
            return Err(Error::Shape {
                context: "Mlp::forward",
                expected: vec![self.input_dim()],
                actual: input.shape().to_vec(),
            });
        }
        let out = self.forward_rows(input.rows(), input.data());
        let shape = if input.shape().len() == 1 {
            vec![self.output_dim()]
        } else {
            vec![input.rows(), self.output_dim()]
        };
        Tensor::new(shape, out)
    }

    /// Forward pass on raw row-major data without shape checks beyond asserts.
    pub(crate) fn forward_rows(&self, rows: usize, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), rows * self.input_dim(), "forward_rows input");
        let mut h = input.to_vec();
        for (l, act) in self.activations.iter().enumerate() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let w = &self.params[2 * l];
            let b = self.params[2 * l + 1].data();
            let mut out = vec![0.0; rows * fan_out];
            for row in out.chunks_exact_mut(fan_out) {
                row.copy_from_slice(b);
            }
            gemm(&h, rows, fan_in, false, w.data(), fan_in, fan_out, false, &mut out, true);
            act.apply(&mut out);
            h = out;
        }
        h
    }

    /// Places the parameters on a tape. With `trainable == false` they are
    /// recorded as constants, so gradients still flow to the inputs but not
    /// into this network.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { g.param(p) } else { g.constant(p) })
            .collect();
        BoundMlp {
            vars,
            activations: self.activations.clone(),
        }
    }

    /// `self ← (1 − tau)·self + tau·online`, parameter by parameter.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        assert_eq!(self.widths, online.widths, "soft update layout");
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            for (x, y) in t.data_mut().iter_mut().zip(o.data()) {
                *x = (1.0 - tau) * *x + tau * y;
            }
        }
    }
}

/// An [`Mlp`] whose parameters live on a [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundMlp {
    vars: Vec<Var>,
    activations: Vec<Activation>,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        for (l, act) in self.activations.iter().enumerate() {
            let z = g.matmul(h, self.vars[2 * l]);
            let z = g.add_bias(z, self.vars[2 * l + 1]);
            h = match act {
                Activation::Tanh => g.tanh(z),
                Activation::Relu => g.relu(z),
                Activation::Identity => z,
            };
        }
        h
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients for each parameter, shaped like `net.params()`.
    pub fn grads(&self, grads: &Gradients, net: &Mlp) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(net.params())
            .map(|(&v, p)| grads.tensor(v, p))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2], &[Activation::Tanh, Activation::Identity]).unwrap();
        let y = net.forward(&Tensor::vector(vec![1.0, -2.0, 3.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        assert_eq!(y.shape(), &[2]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[3, 3], &[Activation::Identity]).unwrap();
        net.params_mut()[0] = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let x = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 3.0, 4.0, -5.0]);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn two_layer_tanh_matches_hand_transcript() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::new(&[2, 3, 1], &[Activation::Tanh, Activation::Tanh], &mut rng).unwrap();
        let p = net.params();
        let (w0, b0, w1, b1) = (p[0].data(), p[1].data(), p[2].data(), p[3].data());
        // input [1, 0]: hidden_j = tanh(W0[0][j] + b0[j])
        let h: Vec<f64> = (0..3).map(|j| libm::tanh(w0[j] + b0[j])).collect();
        let expected = libm::tanh(h[0] * w1[0] + h[1] * w1[1] + h[2] * w1[2] + b1[0]);
        let y = net.forward(&Tensor::vector(vec![1.0, 0.0])).unwrap();
        assert!((y.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Mlp::zeros(&[3, 2], &[Activation::Relu]).unwrap();
        assert!(matches!(net.forward(&Tensor::vector(vec![1.0, 2.0])), Err(Error::Shape { .. })));
        assert!(Mlp::zeros(&[3, 2], &[]).is_err());
    }

    #[test]
    fn initialization_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[16, 4], &[Activation::Identity], &mut rng).unwrap();
        assert!(net.params().iter().all(|t| t.data().iter().all(|x| x.abs() <= 0.25)));
        assert_eq!(net.param_count(), 16 * 4 + 4);
    }

    #[test]
    fn soft_update_is_convex_combination() {
        let mut target = Mlp::zeros(&[1, 1], &[Activation::Identity]).unwrap();
        let mut online = target.clone();
        online.params_mut()[0].data_mut()[0] = 2.0;
        target.soft_update_from(&online, 0.5);
        assert_eq!(target.params()[0].data()[0], 1.0);
        let before = target.clone();
        target.soft_update_from(&online, 0.0);
        assert_eq!(target, before);
        target.soft_update_from(&online, 1.0);
        assert_eq!(target, online);
    }
}
