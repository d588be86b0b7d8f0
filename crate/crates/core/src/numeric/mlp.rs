//! Fully-connected feed-forward networks with hand-written backpropagation.
//!
//! A layer computes `act(x W^T + b)` with `W` stored `out x in`. [`MlpParams::forward`]
//! returns a [`ForwardCache`] holding every layer's input and output; [`MlpParams::backward`]
//! consumes it to produce parameter gradients and the gradient with respect to the input.
//! The cache carries a fingerprint of the parameters it was computed with, so a backward
//! pass against different (e.g. already updated) parameters is rejected.

use serde::{Deserialize, Serialize};

use super::{Matrix, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            3 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// One dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    /// `inputs[l]` is the input of layer `l`.
    inputs: Vec<Matrix>,
    /// `outputs[l]` is the post-activation output of layer `l`.
    outputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("cache holds at least one layer")
    }
}

/// Gradients with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.to_flat().iter().all(|&v| v == 0.0)
    }
}

impl MlpParams {
    /// Validates that consecutive layers chain and that there is at least one layer.
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::shape("MlpParams::new bias", l.out_dim(), l.bias.len()));
            }
            if l.in_dim() == 0 || l.out_dim() == 0 {
                return Err(Error::InvalidArgument(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::shape(
                    "MlpParams::new chaining",
                    format!("layer {i} input {}", layers[i - 1].out_dim()),
                    l.in_dim(),
                ));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "layer parameters", index: i });
            }
        }
        Ok(MlpParams { layers })
    }

    /// Glorot-uniform weights, zero biases. `dims = [in, h1, ..., out]`; hidden layers use
    /// `hidden`, the last layer uses `output`.
    pub fn init(dims: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output dims".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
            let activation = if i + 2 == dims.len() { output } else { hidden };
            layers.push(Dense {
                weight: Matrix::from_vec(fan_out, fan_in, data)?,
                bias: vec![0.0; fan_out],
                activation,
            });
        }
        MlpParams::new(layers)
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

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.rows() * l.weight.cols() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer: weights row-major then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("MlpParams::set_flat", self.param_count(), flat.len()));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weight.rows() * l.weight.cols();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Zero every parameter (used for the "zero head" contract and tests).
    pub fn zeroed(mut self) -> Self {
        for l in &mut self.layers {
            l.weight.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }

    /// FNV-1a over dimensions, activations and parameter bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for l in &self.layers {
            eat(l.in_dim() as u64);
            eat(l.out_dim() as u64);
            eat(u64::from(l.activation.code()));
            for v in l.weight.as_slice().iter().chain(&l.bias) {
                eat(v.to_bits());
            }
        }
        h
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "mlp input",
                format!("{} columns", self.input_dim()),
                format!("{} columns", x.cols()),
            ));
        }
        Ok(())
    }

    fn layer_forward(layer: &Dense, x: &Matrix) -> Matrix {
        let mut y = x.matmul_t(&layer.weight).expect("dimensions checked");
        for r in 0..y.rows() {
            for (v, &b) in y.row_mut(r).iter_mut().zip(&layer.bias) {
                *v = layer.activation.apply(*v + b);
            }
        }
        y
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = Self::layer_forward(l, &h);
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let y = Self::layer_forward(l, &h);
            inputs.push(h);
            h = y.clone();
            outputs.push(y);
        }
        let cache = ForwardCache { fingerprint: self.fingerprint(), inputs, outputs };
        Ok((h, cache))
    }

    /// Backpropagates `d_out` (gradient of the loss w.r.t. the network output).
    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<(MlpGrads, Matrix)> {
        if cache.inputs.len() != self.layers.len() || cache.fingerprint != self.fingerprint() {
            return Err(Error::StaleCache);
        }
        let out = cache.output();
        if d_out.shape() != out.shape() {
            return Err(Error::shape(
                "mlp backward cotangent",
                format!("{:?}", out.shape()),
                format!("{:?}", d_out.shape()),
            ));
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = d_out.clone();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let y = &cache.outputs[l];
            for (d, &yv) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *d *= layer.activation.derivative_from_output(yv);
            }
            let dw = delta.t_matmul(&cache.inputs[l])?;
            let mut db = vec![0.0; layer.out_dim()];
            for row in delta.row_iter() {
                for (a, &v) in db.iter_mut().zip(row) {
                    *a += v;
                }
            }
            let dx = delta.matmul(&layer.weight)?;
            weights.push(dw);
            biases.push(db);
            delta = dx;
        }
        weights.reverse();
        biases.reverse();
        Ok((MlpGrads { weights, biases }, delta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::grad_check;

    fn single(weight: Matrix, act: Activation) -> MlpParams {
        let out = weight.rows();
        MlpParams::new(vec![Dense { weight, bias: vec![0.0; out], activation: act }]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single(Matrix::identity(2), Activation::Identity);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(net.predict(&x).unwrap().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_layer_clips_negatives() {
        let net = single(Matrix::identity(2), Activation::Relu);
        let x = Matrix::from_rows(&[vec![-1.0, 3.0]]).unwrap();
        assert_eq!(net.predict(&x).unwrap().as_slice(), &[0.0, 3.0]);
    }

    /// Re-evaluates a network one scalar at a time, sharing no code with `forward`.
    fn scalar_forward(net: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in net.layers() {
            let mut next = Vec::new();
            for o in 0..l.out_dim() {
                let mut s = l.bias[o];
                for i in 0..l.in_dim() {
                    s += l.weight.get(o, i) * h[i];
                }
                next.push(match l.activation {
                    Activation::Relu => {
                        if s > 0.0 {
                            s
                        } else {
                            0.0
                        }
                    }
                    Activation::Tanh => s.tanh(),
                    Activation::Identity => s,
                    Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                });
            }
            h = next;
        }
        h
    }

    fn random_input(rng: &mut Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn forward_matches_scalar_reevaluation() {
        let mut rng = Rng::new(11);
        let net = MlpParams::init(&[3, 5, 2], Activation::Tanh, Activation::Sigmoid, &mut rng).unwrap();
        let x = random_input(&mut rng, 4, 3);
        let (y, _) = net.forward(&x).unwrap();
        for r in 0..4 {
            let expect = scalar_forward(&net, x.row(r));
            for (a, b) in y.row(r).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = Rng::new(1);
        let net = MlpParams::init(&[3, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let err = net.forward(&Matrix::zeros(1, 4)).unwrap_err();
        assert!(err.to_string().contains("3 columns"));
    }

    #[test]
    fn linear_gradient_is_sum_of_outer_products() {
        let w = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let net = single(w, Activation::Identity);
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 4.0]]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let ones = Matrix::from_vec(2, 2, vec![1.0; 4]).unwrap();
        let (g, _) = net.backward(&cache, &ones).unwrap();
        // each output row of dW is the column sums of x
        assert_eq!(g.weights[0].as_slice(), &[-2.0, 6.0, -2.0, 6.0]);
        assert_eq!(g.biases[0], vec![2.0, 2.0]);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let mut rng = Rng::new(2);
        let net = MlpParams::init(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let x = random_input(&mut rng, 5, 3);
        let (y, cache) = net.forward(&x).unwrap();
        let (g, dx) = net.backward(&cache, &Matrix::zeros(y.rows(), y.cols())).unwrap();
        assert!(g.is_zero());
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = Rng::new(3);
        let mut net = MlpParams::init(&[2, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let (y, cache) = net.forward(&Matrix::zeros(1, 2)).unwrap();
        let mut flat = net.to_flat();
        flat[0] += 1.0;
        net.set_flat(&flat).unwrap();
        assert!(matches!(net.backward(&cache, &y), Err(Error::StaleCache)));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let net = MlpParams::init(&[3, 6, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let x = random_input(&mut rng, 7, 3);
        let target = random_input(&mut rng, 7, 2);
        // loss = 0.5 * sum (y - t)^2
        let loss = |p: &[f64]| {
            let mut n = net.clone();
            n.set_flat(p).unwrap();
            let y = n.predict(&x).unwrap();
            0.5 * y.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let (y, cache) = net.forward(&x).unwrap();
        let mut dy = y.clone();
        dy.add_scaled(&target, -1.0).unwrap();
        let (g, _) = net.backward(&cache, &dy).unwrap();
        let err = grad_check(loss, &net.to_flat(), &g.to_flat(), 1e-5).unwrap();
        assert!(err.max_rel_error < 1e-4, "{err:?}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let net = MlpParams::init(&[4, 5, 3], Activation::Sigmoid, Activation::Tanh, &mut rng).unwrap();
        let x = random_input(&mut rng, 3, 4);
        let loss = |flat: &[f64]| {
            let xi = Matrix::from_vec(3, 4, flat.to_vec()).unwrap();
            net.predict(&xi).unwrap().as_slice().iter().sum::<f64>()
        };
        let (y, cache) = net.forward(&x).unwrap();
        let ones = Matrix::from_vec(y.rows(), y.cols(), vec![1.0; y.rows() * y.cols()]).unwrap();
        let (_, dx) = net.backward(&cache, &ones).unwrap();
        let err = grad_check(loss, x.as_slice(), dx.as_slice(), 1e-5).unwrap();
        assert!(err.max_rel_error < 1e-4);
    }

    #[test]
    fn empty_batch_forward() {
        let mut rng = Rng::new(4);
        let net = MlpParams::init(&[3, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let (y, _) = net.forward(&Matrix::zeros(0, 3)).unwrap();
        assert_eq!(y.shape(), (0, 2));
    }
}
