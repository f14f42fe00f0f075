use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{Graph, Matrix, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::Config(format!(
                "embedding_dim must be at least 2, got {}",
                self.embedding_dim
            )));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("encoder dimensions must be at least 1".into()));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(self.embedding_dim))
            .collect()
    }
}

/// Fully connected layer, `y = x W + b` with `W` of shape `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Matrix,
}

/// Per-entry uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix::new(rows, cols, data).expect("sized by construction")
}

/// Dense multilayer perceptron with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    layers: Vec<DenseLayer>,
}

/// Graph handles for an encoder's parameters, in layer order.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub layers: Vec<(NodeId, NodeId)>,
}

impl Encoder {
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derived(config.seed, 0);
        let dims = config.dims();
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer {
                weights: uniform_init(w[0], w[1], w[0], &mut rng),
                bias: uniform_init(1, w[1], w[0], &mut rng),
            })
            .collect();
        Ok(Encoder { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.weights.cols()) {
                return Err(Error::Shape {
                    op: "encoder bias",
                    lhs: l.weights.shape(),
                    rhs: l.bias.shape(),
                });
            }
            if i > 0 && layers[i - 1].weights.cols() != l.weights.rows() {
                return Err(Error::Shape {
                    op: "encoder layers",
                    lhs: layers[i - 1].weights.shape(),
                    rhs: l.weights.shape(),
                });
            }
        }
        Ok(Encoder { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().unwrap().weights.cols()
    }

    /// Raw (unnormalized) latent features of every row of `x`.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.matmul(&l.weights)?.add_row(&l.bias)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        if !h.is_finite() {
            return Err(Error::NonFinite("embed"));
        }
        Ok(h)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "embed",
                lhs: x.shape(),
                rhs: self.layers[0].weights.shape(),
            });
        }
        Ok(())
    }

    pub fn register(&self, g: &mut Graph) -> EncoderParams {
        EncoderParams {
            layers: self
                .layers
                .iter()
                .map(|l| (g.leaf(l.weights.clone()), g.leaf(l.bias.clone())))
                .collect(),
        }
    }

    /// Records the forward pass of `x` on `g` using registered parameters.
    pub fn apply(&self, g: &mut Graph, params: &EncoderParams, x: NodeId) -> Result<NodeId> {
        self.check_input(g.value(x))?;
        let mut h = x;
        let last = params.layers.len() - 1;
        for (i, &(w, b)) in params.layers.iter().enumerate() {
            h = g.matmul(h, w)?;
            h = g.add_bias(h, b)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    pub(crate) fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }
}
