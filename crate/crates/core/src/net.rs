//! The shared embedding trunk: a stack of affine layers with explicit
//! forward and backward passes. One instance embeds both modalities.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("network needs at least one layer")]
    EmptySpec,
    #[error("layer {layer}: {what} must be positive")]
    ZeroWidth { layer: usize, what: &'static str },
    #[error("layer {layer}: max-feature-map needs an even pre-activation width, got {width}")]
    OddMaxFeatureMap { layer: usize, width: usize },
    #[error("layer {layer}: expected input width {expected}, got {actual}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("tape does not match this network or gradient batch")]
    StaleTape,
    #[error("non-finite values produced by layer {0}")]
    NonFinite(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    /// Splits the pre-activation into two halves and keeps the elementwise max.
    MaxFeatureMap,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::MaxFeatureMap => "max-feature-map",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "max-feature-map" => Some(Activation::MaxFeatureMap),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One affine layer. `output_dim` is the pre-activation width; a
/// max-feature-map layer emits half of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }

    pub fn activated_dim(&self) -> usize {
        match self.activation {
            Activation::MaxFeatureMap => self.output_dim / 2,
            _ => self.output_dim,
        }
    }
}

/// Checks that specs are non-empty, widths positive, and dims chain.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<(), NetError> {
    if specs.is_empty() {
        return Err(NetError::EmptySpec);
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 {
            return Err(NetError::ZeroWidth {
                layer: i,
                what: "input_dim",
            });
        }
        if s.output_dim == 0 {
            return Err(NetError::ZeroWidth {
                layer: i,
                what: "output_dim",
            });
        }
        if s.activation == Activation::MaxFeatureMap && s.output_dim % 2 != 0 {
            return Err(NetError::OddMaxFeatureMap {
                layer: i,
                width: s.output_dim,
            });
        }
        if i > 0 {
            let prev = specs[i - 1].activated_dim();
            if prev != s.input_dim {
                return Err(NetError::DimensionMismatch {
                    layer: i,
                    expected: prev,
                    actual: s.input_dim,
                });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// output_dim × input_dim
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingNet {
    layers: Vec<Layer>,
}

/// Activations saved by [`EmbeddingNet::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
}

impl ForwardTape {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients for every trunk parameter, mirroring the layer structure.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }
}

impl EmbeddingNet {
    /// Xavier-uniform weights, zero biases.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self, NetError> {
        validate_specs(specs)?;
        let mut rng = rng::fork(seed, "net-init");
        let layers = specs
            .iter()
            .map(|&spec| {
                let bound = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let weight = Matrix::from_fn(spec.output_dim, spec.input_dim, |_, _| {
                    dist.sample(&mut rng)
                });
                Layer {
                    spec,
                    weight,
                    bias: vec![0.0; spec.output_dim],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Assembles a network from explicit parameters (checkpoint loading, tests).
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetError> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for (i, l) in layers.iter().enumerate() {
            if l.weight.shape() != (l.spec.output_dim, l.spec.input_dim)
                || l.bias.len() != l.spec.output_dim
            {
                return Err(NetError::DimensionMismatch {
                    layer: i,
                    expected: l.spec.output_dim * l.spec.input_dim,
                    actual: l.weight.rows() * l.weight.cols(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().expect("non-empty").spec.activated_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Weight then bias for each layer, in order. [`NetGrads::slices`] uses the same order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn zero_grads(&self) -> NetGrads {
        NetGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Embeds a batch (one sample per row) and records the tape.
    pub fn forward(&self, inputs: &Matrix) -> Result<(Matrix, ForwardTape), NetError> {
        let mut tape = ForwardTape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut x = inputs.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if x.cols() != layer.spec.input_dim {
                return Err(NetError::DimensionMismatch {
                    layer: i,
                    expected: layer.spec.input_dim,
                    actual: x.cols(),
                });
            }
            let mut z = x.matmul_t(&layer.weight).expect("checked width");
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let a = activate(layer.spec.activation, &z);
            if !a.is_finite() {
                return Err(NetError::NonFinite(i));
            }
            tape.inputs.push(x);
            tape.pre.push(z);
            x = a;
        }
        Ok((x, tape))
    }

    /// Forward pass without keeping the tape.
    pub fn embed(&self, inputs: &Matrix) -> Result<Matrix, NetError> {
        Ok(self.forward(inputs)?.0)
    }

    /// Gradients of a scalar loss w.r.t. all parameters and the inputs,
    /// given its gradient w.r.t. the embeddings.
    pub fn backward(
        &self,
        tape: &ForwardTape,
        grad_embeddings: &Matrix,
    ) -> Result<(NetGrads, Matrix), NetError> {
        if tape.pre.len() != self.layers.len()
            || grad_embeddings.rows() != tape.batch_size()
            || grad_embeddings.cols() != self.embedding_dim()
        {
            return Err(NetError::StaleTape);
        }
        for (l, (x, z)) in self.layers.iter().zip(tape.inputs.iter().zip(&tape.pre)) {
            if x.cols() != l.spec.input_dim || z.cols() != l.spec.output_dim {
                return Err(NetError::StaleTape);
            }
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_embeddings.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let dz = activation_backward(layer.spec.activation, &tape.pre[i], &upstream);
            let dw = dz.t_matmul(&tape.inputs[i]).expect("tape shapes");
            let mut db = vec![0.0; layer.spec.output_dim];
            for r in 0..dz.rows() {
                for (acc, v) in db.iter_mut().zip(dz.row(r)) {
                    *acc += v;
                }
            }
            upstream = dz.matmul(&layer.weight).expect("tape shapes");
            grads.push(LayerGrads {
                weight: dw,
                bias: db,
            });
        }
        grads.reverse();
        Ok((NetGrads { layers: grads }, upstream))
    }
}

fn activate(act: Activation, z: &Matrix) -> Matrix {
    match act {
        Activation::Identity => z.clone(),
        Activation::Relu => z.map(|v| v.max(0.0)),
        Activation::MaxFeatureMap => {
            let half = z.cols() / 2;
            Matrix::from_fn(z.rows(), half, |r, c| z[(r, c)].max(z[(r, c + half)]))
        }
    }
}

fn activation_backward(act: Activation, z: &Matrix, upstream: &Matrix) -> Matrix {
    match act {
        Activation::Identity => upstream.clone(),
        Activation::Relu => Matrix::from_fn(z.rows(), z.cols(), |r, c| {
            if z[(r, c)] > 0.0 {
                upstream[(r, c)]
            } else {
                0.0
            }
        }),
        Activation::MaxFeatureMap => {
            let half = z.cols() / 2;
            let mut dz = Matrix::zeros(z.rows(), z.cols());
            for r in 0..z.rows() {
                for c in 0..half {
                    // ties route to the first half, matching `activate`
                    if z[(r, c)] >= z[(r, c + half)] {
                        dz[(r, c)] = upstream[(r, c)];
                    } else {
                        dz[(r, c + half)] = upstream[(r, c)];
                    }
                }
            }
            dz
        }
    }
}

/// Draws a random input batch; used by examples and tests.
pub fn random_batch(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn specs_default() -> Vec<LayerSpec> {
        vec![
            LayerSpec::new(64, 128, Activation::MaxFeatureMap),
            LayerSpec::new(64, 32, Activation::Identity),
        ]
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = EmbeddingNet::init(&specs_default(), 17).unwrap();
        let b = EmbeddingNet::init(&specs_default(), 17).unwrap();
        let c = EmbeddingNet::init(&specs_default(), 18).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.embedding_dim(), 32);

        let net = EmbeddingNet::init(&[LayerSpec::new(64, 32, Activation::Relu)], 1).unwrap();
        let bound = (6.0f64 / 96.0).sqrt();
        assert!(net.layers()[0]
            .weight
            .as_slice()
            .iter()
            .all(|w| w.abs() <= bound));
        assert!(net.layers()[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn spec_validation() {
        assert_eq!(EmbeddingNet::init(&[], 0), Err(NetError::EmptySpec));
        let odd = [LayerSpec::new(4, 5, Activation::MaxFeatureMap)];
        assert!(matches!(
            EmbeddingNet::init(&odd, 0),
            Err(NetError::OddMaxFeatureMap { layer: 0, width: 5 })
        ));
        let broken = [
            LayerSpec::new(4, 8, Activation::MaxFeatureMap),
            LayerSpec::new(8, 2, Activation::Identity),
        ];
        assert!(matches!(
            EmbeddingNet::init(&broken, 0),
            Err(NetError::DimensionMismatch {
                layer: 1,
                expected: 4,
                actual: 8
            })
        ));
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let net = EmbeddingNet::init(&specs_default(), 1).unwrap();
        let err = net.forward(&Matrix::zeros(2, 10)).unwrap_err();
        assert_eq!(
            err,
            NetError::DimensionMismatch {
                layer: 0,
                expected: 64,
                actual: 10
            }
        );
    }

    #[test]
    fn identity_layer_is_plain_product() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 4.0]]);
        let net = EmbeddingNet::from_layers(vec![Layer {
            spec: LayerSpec::new(2, 3, Activation::Identity),
            weight: w.clone(),
            bias: vec![0.0; 3],
        }])
        .unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -0.7]]);
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y, x.matmul_t(&w).unwrap());
    }

    #[test]
    fn relu_on_negative_preactivations_is_zero() {
        let net = EmbeddingNet::from_layers(vec![Layer {
            spec: LayerSpec::new(2, 2, Activation::Relu),
            weight: Matrix::identity(2),
            bias: vec![-5.0, -5.0],
        }])
        .unwrap();
        let (y, _) = net.forward(&Matrix::from_rows(&[vec![1.0, -2.0]])).unwrap();
        assert_eq!(y.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn two_layer_forward_matches_scalar_loops() {
        let specs = [
            LayerSpec::new(3, 4, Activation::MaxFeatureMap),
            LayerSpec::new(2, 2, Activation::Relu),
        ];
        let mut net = EmbeddingNet::init(&specs, 5).unwrap();
        net.layers[0].bias = vec![0.1, -0.2, 0.05, 0.3];
        net.layers[1].bias = vec![0.2, -0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_batch(3, 3, &mut rng);
        let (y, _) = net.forward(&x).unwrap();

        let l0 = &net.layers[0];
        let l1 = &net.layers[1];
        for r in 0..3 {
            let mut z0 = [0.0; 4];
            for o in 0..4 {
                z0[o] = l0.bias[o];
                for i in 0..3 {
                    z0[o] += l0.weight[(o, i)] * x[(r, i)];
                }
            }
            let h = [z0[0].max(z0[2]), z0[1].max(z0[3])];
            for o in 0..2 {
                let mut z1 = l1.bias[o];
                for i in 0..2 {
                    z1 += l1.weight[(o, i)] * h[i];
                }
                assert!((y[(r, o)] - z1.max(0.0)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = EmbeddingNet::init(&specs_default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, tape) = net.forward(&random_batch(5, 64, &mut rng)).unwrap();
        let (g, gx) = net.backward(&tape, &Matrix::zeros(5, 32)).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(gx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_net_quadratic_loss_grad_is_embedding() {
        let net = EmbeddingNet::from_layers(vec![Layer {
            spec: LayerSpec::new(3, 3, Activation::Identity),
            weight: Matrix::identity(3),
            bias: vec![0.0; 3],
        }])
        .unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, -1.0]]);
        let (y, tape) = net.forward(&x).unwrap();
        // d(½‖y‖²)/dy = y
        let (_, gx) = net.backward(&tape, &y).unwrap();
        assert_eq!(gx, y);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let net = EmbeddingNet::init(&specs_default(), 3).unwrap();
        let other = EmbeddingNet::init(&[LayerSpec::new(64, 32, Activation::Relu)], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, tape) = other.forward(&random_batch(2, 64, &mut rng)).unwrap();
        assert_eq!(
            net.backward(&tape, &Matrix::zeros(2, 32)).unwrap_err(),
            NetError::StaleTape
        );
        let (_, tape) = net.forward(&random_batch(2, 64, &mut rng)).unwrap();
        assert_eq!(
            net.backward(&tape, &Matrix::zeros(3, 32)).unwrap_err(),
            NetError::StaleTape
        );
    }
}
