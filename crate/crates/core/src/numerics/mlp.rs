//! Small fully-connected networks with an explicit forward tape.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, Matrix};
use super::Params;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Affine layer `y = act(x·W + b)` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
}

/// Forward values of one `MlpParams::forward_tape` call.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    "MLP layer chaining",
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(Error::shape("MLP bias length", l.out_dim(), l.bias.len()));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Randomly initialised network through `dims[0] → … → dims[last]`.
    /// Hidden layers use `hidden`, the final layer uses `output`.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("MLP needs at least input and output dims".into()));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let activation = if i + 2 == dims.len() { output } else { hidden };
                let gain = if activation == Activation::Relu { 2.0 } else { 1.0 };
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).unwrap();
                let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
                Dense {
                    weight: Matrix::from_vec(fan_in, fan_out, data).unwrap(),
                    bias: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        MlpParams::new(layers)
    }

    pub fn identity(n: usize) -> Self {
        MlpParams {
            layers: vec![Dense {
                weight: Matrix::identity(n),
                bias: vec![0.0; n],
                activation: Activation::Identity,
            }],
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward_tape(&self, x: &[f64]) -> Result<MlpTape> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("MLP input", self.input_dim(), x.len()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.bias.clone();
            for (i, &xi) in cur.iter().enumerate() {
                if xi != 0.0 {
                    axpy(xi, layer.weight.row(i), &mut z);
                }
            }
            let out: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(cur);
            pre.push(z);
            cur = out;
        }
        Ok(MlpTape {
            inputs,
            pre,
            output: cur,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(x)?.output)
    }

    /// Applies the network to every row of `input`.
    pub fn apply(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape("MLP input", self.input_dim(), input.cols()));
        }
        let mut out = Matrix::zeros(input.rows(), self.output_dim());
        for r in 0..input.rows() {
            let y = self.forward(input.row(r))?;
            out.row_mut(r).copy_from_slice(&y);
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, tape: &MlpTape, d_out: &[f64], grads: &mut MlpParams) -> Vec<f64> {
        debug_assert_eq!(d_out.len(), self.output_dim());
        let mut upstream = d_out.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let pre = &tape.pre[idx];
            let out: &[f64] = if idx + 1 < self.layers.len() {
                &tape.inputs[idx + 1]
            } else {
                &tape.output
            };
            let dz: Vec<f64> = upstream
                .iter()
                .zip(pre)
                .zip(out)
                .map(|((&g, &p), &o)| g * layer.activation.derivative(p, o))
                .collect();
            let input = &tape.inputs[idx];
            let g = &mut grads.layers[idx];
            for (i, &xi) in input.iter().enumerate() {
                if xi != 0.0 {
                    axpy(xi, &dz, g.weight.row_mut(i));
                }
            }
            for (b, d) in g.bias.iter_mut().zip(&dz) {
                *b += d;
            }
            upstream = (0..layer.in_dim())
                .map(|i| super::matrix::dot(layer.weight.row(i), &dz))
                .collect();
        }
        upstream
    }
}

impl Params for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let p = MlpParams::identity(2);
        assert_eq!(p.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_layer_hand_computed() {
        let p = MlpParams::new(vec![Dense {
            weight: Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap(),
            bias: vec![1.0, 1.0],
            activation: Activation::Relu,
        }])
        .unwrap();
        assert_eq!(p.forward(&[-1.0, 1.0]).unwrap(), vec![0.0, 4.0]);
    }

    #[test]
    fn apply_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::random(&[5, 7, 6, 3], Activation::Relu, Activation::Identity, &mut rng)
            .unwrap();
        let mut x = Matrix::zeros(8, 5);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = ((i * 37 % 11) as f64 - 5.0) / 3.0;
        }
        let a = p.apply(&x).unwrap();
        let b = p.apply(&x).unwrap();
        assert_eq!((a.rows(), a.cols()), (8, 3));
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn dimension_mismatch_names_both_dims() {
        let p = MlpParams::identity(3);
        let err = p.apply(&Matrix::zeros(1, 4)).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains('4'), "{err}");
    }

    #[test]
    fn layer_chain_is_validated() {
        let l = |i, o| Dense {
            weight: Matrix::zeros(i, o),
            bias: vec![0.0; o],
            activation: Activation::Identity,
        };
        assert!(MlpParams::new(vec![l(2, 3), l(4, 1)]).is_err());
        assert!(MlpParams::new(vec![l(2, 3), l(3, 1)]).is_ok());
    }

    #[test]
    fn single_layer_identity_activation_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = MlpParams::random(&[4, 3], Activation::Identity, Activation::Identity, &mut rng)
            .unwrap();
        let mut p = p;
        p.tensors_mut()[1].copy_from_slice(&[0.5, -1.0, 2.0]);
        let x = [1.0, -2.0, 0.5, 3.0];
        let y = [0.3, 0.1, -0.7, 2.0];
        let (a, b) = (1.7, -0.4);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = p.forward(&mix).unwrap();
        let fx = p.forward(&x).unwrap();
        let fy = p.forward(&y).unwrap();
        let f0 = p.forward(&[0.0; 4]).unwrap();
        for i in 0..3 {
            let rhs = a * fx[i] + b * fy[i] + (1.0 - a - b) * f0[i];
            assert!((lhs[i] - rhs).abs() < 1e-12);
        }
    }
}
