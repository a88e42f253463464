//! Dense layers and their tape bindings.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
    Softmax,
}

/// Fully connected layer: y = act(x W + b).
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias, deterministic for a given rng state.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let weights = glorot_uniform(in_dim, out_dim, rng);
        let bias = Tensor::zeros(vec![out_dim]).with_requires_grad();
        DenseLayer {
            weights,
            bias,
            activation,
        }
    }

    pub fn from_params(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (in_dim, out_dim) = weights.dims2()?;
        if bias.shape() != [out_dim] {
            return Err(Error::shape(
                "dense_layer",
                format!("weights [{in_dim}x{out_dim}] but bias {:?}", bias.shape()),
            ));
        }
        Ok(DenseLayer {
            weights: weights.with_requires_grad(),
            bias: bias.with_requires_grad(),
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Forward pass without a tape, for frozen evaluation.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xid = tape.constant(x);
        let wid = tape.constant(&self.weights);
        let bid = tape.constant(&self.bias);
        let out = forward_on(&mut tape, xid, wid, bid, self.activation)?;
        Ok(tape.value(out).clone())
    }
}

/// Glorot-uniform init: U[-sqrt(6/(fan_in+fan_out)), +sqrt(...)].
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data)
        .expect("glorot shape")
        .with_requires_grad()
}

fn forward_on(
    tape: &mut Tape,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    activation: Activation,
) -> Result<NodeId> {
    let z = tape.matmul(x, w)?;
    let zb = tape.add(z, b)?;
    match activation {
        Activation::Relu => tape.relu(zb),
        Activation::Sigmoid => tape.sigmoid(zb),
        Activation::Linear => Ok(zb),
        Activation::Softmax => tape.softmax_rows(zb),
    }
}

/// A layer stack registered on a tape; holds the parameter node ids so
/// gradients can be read back after the backward pass.
#[derive(Debug)]
pub struct BoundStack {
    params: Vec<NodeId>, // [w0, b0, w1, b1, ...]
    activations: Vec<Activation>,
}

impl BoundStack {
    /// Register every layer's parameters as trainable vars (or constants when
    /// `trainable` is false, which freezes the stack for this step).
    pub fn bind(tape: &mut Tape, layers: &[DenseLayer], trainable: bool) -> Self {
        let mut params = Vec::with_capacity(layers.len() * 2);
        let mut activations = Vec::with_capacity(layers.len());
        for layer in layers {
            let (w, b) = if trainable {
                (tape.var(&layer.weights), tape.var(&layer.bias))
            } else {
                (tape.constant(&layer.weights), tape.constant(&layer.bias))
            };
            params.push(w);
            params.push(b);
            activations.push(layer.activation);
        }
        BoundStack {
            params,
            activations,
        }
    }

    pub fn forward(&self, tape: &mut Tape, mut x: NodeId) -> Result<NodeId> {
        for (i, &act) in self.activations.iter().enumerate() {
            x = forward_on(tape, x, self.params[2 * i], self.params[2 * i + 1], act)?;
        }
        Ok(x)
    }

    /// Gradients for every parameter, in [w0, b0, w1, b1, ...] order.
    pub fn grads(&self, tape: &Tape) -> Result<Vec<Vec<f64>>> {
        self.params
            .iter()
            .map(|&id| tape.grad(id).map(|g| g.to_vec()))
            .collect()
    }
}

/// Forward a slice of layers without any tape recording.
pub fn eval_stack(layers: &[DenseLayer], x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut id = tape.constant(x);
    for layer in layers {
        let w = tape.constant(&layer.weights);
        let b = tape.constant(&layer.bias);
        id = forward_on(&mut tape, id, w, b, layer.activation)?;
    }
    Ok(tape.value(id).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn glorot_same_seed_bitwise_equal() {
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = glorot_uniform(13, 7, &mut r1);
        let b = glorot_uniform(13, 7, &mut r2);
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn glorot_bound_for_unit_fans() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let limit = (6.0f64 / 2.0).sqrt();
        for _ in 0..200 {
            let t = glorot_uniform(1, 1, &mut rng);
            let v = t.data()[0];
            assert!(v > -limit && v < limit, "{v} outside ±{limit}");
        }
    }

    #[test]
    fn glorot_sample_mean_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = glorot_uniform(100, 100, &mut rng);
        let n = t.len() as f64;
        let mean: f64 = t.data().iter().sum::<f64>() / n;
        let limit = (6.0 / 200.0f64).sqrt();
        // uniform on [-L, L]: sd of the mean is L/sqrt(3 n)
        let se = limit / (3.0 * n).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3se {}", 3.0 * se);
    }

    #[test]
    fn zero_weight_layer_outputs_bias() {
        let layer = DenseLayer::from_params(
            Tensor::zeros(vec![3, 2]),
            Tensor::new(vec![2], vec![0.5, -0.25]).unwrap(),
            Activation::Linear,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let y = layer.eval(&x).unwrap();
        assert_eq!(y.data(), &[0.5, -0.25]);
    }

    #[test]
    fn identity_weight_layer_is_identity() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let layer =
            DenseLayer::from_params(eye, Tensor::zeros(vec![2]), Activation::Linear).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, 0.7], vec![0.1, 0.9]]).unwrap();
        let y = layer.eval(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }
}
