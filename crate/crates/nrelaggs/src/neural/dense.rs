//! Fully connected layer with optional ReLU, plus its exact backward pass.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::Scalar;
use crate::error::NeuralError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

/// `y = act(x·W + b)` with `W: (in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<F: Scalar> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: Scalar> DenseLayer<F> {
    /// Glorot-uniform weights (`a = sqrt(6/(in+out))`), zero bias. Weights
    /// are drawn row by row so the layout is reproducible across runs.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = Array2::from_shape_fn((in_dim, out_dim), |_| {
            F::from_f64(rng.random_range(-a..a))
        });
        DenseLayer { weights, bias: Array1::zeros(out_dim), activation }
    }

    /// Square identity layer: `W = I`, `b = 0`. Composing such layers around
    /// an aggregation reproduces the aggregation exactly (the GEMM only ever
    /// adds `x·1` to zeros, which is lossless in IEEE arithmetic).
    pub fn identity(dim: usize, activation: Activation) -> Self {
        DenseLayer { weights: Array2::eye(dim), bias: Array1::zeros(dim), activation }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check(&self, x: &ArrayView2<F>) -> Result<(), NeuralError> {
        if x.ncols() != self.in_dim() {
            return Err(NeuralError::ShapeMismatch {
                context: "dense forward".into(),
                expected: format!("(*, {})", self.in_dim()),
                found: format!("({}, {})", x.nrows(), x.ncols()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> Result<Array2<F>, NeuralError> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass returning `(activated, preactivation)`; the
    /// preactivation is what [`Self::backward`] needs.
    pub fn forward_cached(&self, x: &ArrayView2<F>) -> Result<(Array2<F>, Array2<F>), NeuralError> {
        self.check(x)?;
        let mut pre = x.dot(&self.weights);
        pre += &self.bias;
        let out = match self.activation {
            Activation::Linear => pre.clone(),
            Activation::Relu => pre.mapv(|v| if v > F::zero() { v } else { F::zero() }),
        };
        Ok((out, pre))
    }

    /// Gradients of a scalar loss given `grad_out = ∂L/∂y`:
    /// returns `(∂L/∂x, ∂L/∂W, ∂L/∂b)`.
    pub fn backward(
        &self,
        x: &ArrayView2<F>,
        preactivation: &Array2<F>,
        grad_out: &ArrayView2<F>,
    ) -> Result<(Array2<F>, Array2<F>, Array1<F>), NeuralError> {
        self.check(x)?;
        if grad_out.dim() != (x.nrows(), self.out_dim()) {
            return Err(NeuralError::ShapeMismatch {
                context: "dense backward".into(),
                expected: format!("({}, {})", x.nrows(), self.out_dim()),
                found: format!("({}, {})", grad_out.nrows(), grad_out.ncols()),
            });
        }
        let grad_pre = match self.activation {
            Activation::Linear => grad_out.to_owned(),
            Activation::Relu => {
                let mut g = grad_out.to_owned();
                g.zip_mut_with(preactivation, |gi, &p| {
                    if p <= F::zero() {
                        *gi = F::zero();
                    }
                });
                g
            }
        };
        let grad_w = x.t().dot(&grad_pre);
        let grad_b = grad_pre.sum_axis(Axis(0));
        let grad_x = grad_pre.dot(&self.weights.t());
        Ok((grad_x, grad_w, grad_b))
    }
}
