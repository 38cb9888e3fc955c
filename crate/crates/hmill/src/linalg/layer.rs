use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
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

/// One affine map with an element-wise activation. Weights are `out x in`,
/// the bias has one entry per output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Shape {
                op: "DenseLayer::new",
                left: format!("{} weight rows", weights.rows()),
                right: format!("{} bias entries", bias.len()),
            });
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-normal weights, zero bias.
    pub fn glorot(out_dim: usize, in_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        DenseLayer {
            weights: glorot_normal_init(out_dim, in_dim, rng),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    /// `act(W x + b)` column by column; column j of the output depends only
    /// on column j of the input.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_with_pre(x)?.0)
    }

    /// Forward pass that also returns the pre-activation matrix for the
    /// backward pass.
    pub fn forward_with_pre(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        if x.rows() != self.in_dim() {
            return Err(Error::Shape {
                op: "dense_forward",
                left: format!("layer input dim {}", self.in_dim()),
                right: format!("data rows {}", x.rows()),
            });
        }
        let mut pre = self.weights.matmul(x)?;
        for r in 0..pre.rows() {
            for c in 0..pre.cols() {
                pre.add_at(r, c, self.bias[r]);
            }
        }
        let out = pre.map(|v| self.activation.apply(v));
        Ok((out, pre))
    }

    /// Reverse step: given the upstream gradient w.r.t. this layer's output
    /// and the taped input/pre-activation, returns `(d_weights, d_bias,
    /// d_input)`.
    pub fn backward(
        &self,
        input: &Matrix,
        pre: &Matrix,
        upstream: &Matrix,
    ) -> Result<(Matrix, Vec<f64>, Matrix)> {
        let mut d_pre = upstream.clone();
        for r in 0..d_pre.rows() {
            for c in 0..d_pre.cols() {
                let g = d_pre.get(r, c) * self.activation.derivative(pre.get(r, c));
                d_pre.set(r, c, g);
            }
        }
        let d_weights = d_pre.matmul_transpose(input)?;
        let d_bias = d_pre.row_sums();
        let d_input = self.weights.transpose_matmul(&d_pre)?;
        Ok((d_weights, d_bias, d_input))
    }
}

/// Weight initialization drawing from `Normal(0, 2/(rows+cols))`; the draw
/// order is row-major, so the result is reproducible bit-exactly for a given
/// seeded generator.
pub fn glorot_normal_init(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite draws")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_through() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let layer = DenseLayer::new(w, vec![0.0, 0.0], Activation::Identity).unwrap();
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_expose_bias() {
        let layer =
            DenseLayer::new(Matrix::zeros(2, 3), vec![5.0, -1.0], Activation::Identity).unwrap();
        let x = Matrix::from_rows(&[vec![0.3], vec![-2.0], vec![7.0]]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.data(), &[5.0, -1.0]);
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = DenseLayer::glorot(3, 4, Activation::Tanh, &mut rng);
        let x = glorot_normal_init(4, 2, &mut rng);
        let y = layer.forward(&x).unwrap();
        for j in 0..2 {
            for i in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += layer.weights.get(i, k) * x.get(k, j);
                }
                acc += layer.bias[i];
                let expect = acc.tanh();
                assert!((y.get(i, j) - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let layer = DenseLayer::new(Matrix::zeros(2, 3), vec![0.0; 2], Activation::Relu).unwrap();
        let x = Matrix::zeros(4, 1);
        let err = layer.forward(&x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('4'), "{msg}");
    }

    #[test]
    fn column_locality_under_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = DenseLayer::glorot(3, 3, Activation::Relu, &mut rng);
        let x = glorot_normal_init(3, 4, &mut rng);
        let y = layer.forward(&x).unwrap();
        let perm = [2usize, 0, 3, 1];
        let xp = x.select_cols(&perm);
        let yp = layer.forward(&xp).unwrap();
        for (j, &p) in perm.iter().enumerate() {
            for r in 0..3 {
                assert_eq!(yp.get(r, j), y.get(r, p));
            }
        }
    }

    #[test]
    fn glorot_is_deterministic_for_a_seed() {
        let a = glorot_normal_init(3, 5, &mut ChaCha8Rng::seed_from_u64(11));
        let b = glorot_normal_init(3, 5, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        let single = glorot_normal_init(1, 1, &mut ChaCha8Rng::seed_from_u64(1));
        let again = glorot_normal_init(1, 1, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(single.data()[0].to_bits(), again.data()[0].to_bits());
    }

    #[test]
    fn glorot_variance_monte_carlo() {
        // 4 draws of 50x50 pool 10^4 samples; target variance 2/100.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut samples = Vec::with_capacity(10_000);
        for _ in 0..4 {
            samples.extend_from_slice(glorot_normal_init(50, 50, &mut rng).data());
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let target = 2.0 / 100.0;
        assert!(
            (var - target).abs() <= 0.15 * target,
            "sample variance {var} outside 15% of {target}"
        );
    }
}
