use serde::{Deserialize, Serialize};

use crate::quat::QuatTensor;

/// Real activation applied independently to every plane (split activation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    /// ReLU uses the subgradient 0 at exactly 0.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    pub fn apply_slice(self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    /// `grad_in = grad_out ⊙ f'(x)`.
    pub fn backward_slice(self, xs: &[f64], ys: &[f64], grad_out: &[f64]) -> Vec<f64> {
        xs.iter()
            .zip(ys)
            .zip(grad_out)
            .map(|((&x, &y), &g)| g * self.derivative(x, y))
            .collect()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn split_activation(input: &QuatTensor, kind: Activation) -> QuatTensor {
    input.map_planes(|x| kind.apply(x))
}

pub fn split_activation_backward(
    input: &QuatTensor,
    output: &QuatTensor,
    grad_out: &QuatTensor,
    kind: Activation,
) -> QuatTensor {
    let planes = std::array::from_fn(|k| {
        kind.backward_slice(input.plane(k), output.plane(k), grad_out.plane(k))
    });
    QuatTensor::from_planes(input.shape(), planes).expect("shapes match by construction")
}
