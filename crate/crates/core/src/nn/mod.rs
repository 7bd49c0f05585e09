//! Mean-aggregation GNN encoder, per-task linear heads, cross-entropy, Adam,
//! and a finite-difference gradient checker. Backpropagation is hand-written
//! for this fixed operator set.

mod adam;
mod gnn;
mod gradcheck;
mod loss;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, OptState};
pub use gnn::{gnn_forward, GnnCache, GnnParams, Propagation};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{cross_entropy, cross_entropy_with_grad, softmax_rows};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    /// No nonlinearity; used by hand-checkable tests.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation value.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Affine map `x ↦ x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights in `±√(6/(in+out))`, zero bias.
    pub fn glorot(input: usize, output: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let limit = (6.0 / (input + output) as f64).sqrt();
        let mut weight = Matrix::zeros(input, output);
        for w in weight.as_mut_slice() {
            *w = rng.gen_range(-limit..limit);
        }
        Self {
            weight,
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        out.add_row_vector(&self.bias);
        Ok(out)
    }

    /// Parameter gradients and input gradient for upstream gradient `dout`.
    pub fn backward(&self, x: &Matrix, dout: &Matrix) -> Result<(Linear, Matrix)> {
        let grad = Linear {
            weight: x.matmul_tn(dout)?,
            bias: dout.sum_rows(),
        };
        let dx = dout.matmul_nt(&self.weight)?;
        Ok((grad, dx))
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.as_slice());
        out.extend_from_slice(&self.bias);
    }

    /// Overwrites parameters from the front of `flat`; returns values consumed.
    pub fn read_flat(&mut self, flat: &[f64]) -> usize {
        let nw = self.weight.as_slice().len();
        let nb = self.bias.len();
        self.weight.as_mut_slice().copy_from_slice(&flat[..nw]);
        self.bias.copy_from_slice(&flat[nw..nw + nb]);
        nw + nb
    }

    pub fn add_assign(&mut self, other: &Linear) {
        self.weight.add_assign(&other.weight);
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.weight.scale(k);
        self.bias.iter_mut().for_each(|b| *b *= k);
    }
}

/// One linear head per task, indexed by 1-based task ordinal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub heads: Vec<Linear>,
}

impl HeadParams {
    pub fn head(&self, task_index: usize) -> Result<&Linear> {
        task_index
            .checked_sub(1)
            .and_then(|i| self.heads.get(i))
            .ok_or_else(|| Error::NotFound(format!("head for task {task_index}")))
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn push(&mut self, head: Linear) -> usize {
        self.heads.push(head);
        self.heads.len()
    }
}

/// Logits of `head` for each embedding row.
pub fn head_forward(head: &Linear, embeddings: &Matrix) -> Result<Matrix> {
    if embeddings.cols() != head.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: head.input_dim(),
            got: embeddings.cols(),
        });
    }
    head.forward(embeddings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_gives_zero_logits() {
        let head = Linear::zeros(3, 2);
        let z = Matrix::from_rows(&[[1.0, -2.0, 0.5], [4.0, 4.0, 4.0]]).unwrap();
        let logits = head_forward(&head, &z).unwrap();
        assert!(logits.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_head() {
        let head = Linear {
            weight: Matrix::identity(2),
            bias: vec![0.0, 0.0],
        };
        let logits = head_forward(&head, &Matrix::from_rows(&[[1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(logits.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn random_head_matches_naive_product() {
        let head = Linear {
            bias: vec![0.3, -0.7],
            ..Linear::glorot(4, 2, 9)
        };
        let z = Matrix::from_rows(&[[0.1, 0.2, -0.3, 0.4], [1.5, -1.0, 0.0, 2.0]]).unwrap();
        let logits = head_forward(&head, &z).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = head.bias[j];
                for k in 0..4 {
                    s += z[(i, k)] * head.weight[(k, j)];
                }
                assert!((logits[(i, j)] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_head_is_not_found() {
        let heads = HeadParams::default();
        assert!(matches!(heads.head(1), Err(Error::NotFound(_))));
        assert!(matches!(heads.head(0), Err(Error::NotFound(_))));
        assert!(head_forward(&Linear::zeros(3, 2), &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn glorot_bounds() {
        let l = Linear::glorot(10, 6, 1);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(l.weight.as_slice().iter().all(|w| w.abs() <= limit));
        assert_eq!(l, Linear::glorot(10, 6, 1));
    }
}
