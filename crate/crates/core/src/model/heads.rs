use std::collections::BTreeSet;

use super::encoder::uniform_init;
use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{argmax, l2_norm, Graph, Matrix, NodeId, DEFAULT_EPSILON};

pub const DEFAULT_SCALE: f64 = 16.0;
/// Allowed deviation of a weight column's norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-6;

fn check_class_ids(ids: &[ClassId], k: usize) -> Result<()> {
    if ids.len() != k {
        return Err(Error::Shape {
            op: "class ids",
            lhs: (1, k),
            rhs: (1, ids.len()),
        });
    }
    let mut seen = BTreeSet::new();
    for &id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateClass(id));
        }
    }
    Ok(())
}

/// Predicted column of each row; ties go to the lowest column.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits.row_iter().map(argmax).collect()
}

/// Cosine classifier: unit-norm class columns, features scaled to norm `S`,
/// no bias. Logits are `S cos(theta)` between features and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NslHead {
    weights: Matrix,
    scale: f64,
    class_ids: Vec<ClassId>,
}

impl NslHead {
    /// Wraps existing columns; every column must already be unit norm.
    pub fn new(weights: Matrix, scale: f64, class_ids: Vec<ClassId>) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        check_class_ids(&class_ids, weights.cols())?;
        for c in 0..weights.cols() {
            let norm = l2_norm(&weights.column(c));
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::DegenerateWeight { col: c, norm });
            }
        }
        Ok(NslHead {
            weights,
            scale,
            class_ids,
        })
    }

    /// Seeded uniform columns projected onto the unit sphere.
    pub fn init(embedding_dim: usize, class_ids: Vec<ClassId>, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = rng::derived(seed, 1);
        let weights = uniform_init(embedding_dim, class_ids.len(), embedding_dim, &mut rng);
        let mut head = NslHead {
            weights,
            scale,
            class_ids,
        };
        check_class_ids(&head.class_ids, head.weights.cols())?;
        head.project_weights()?;
        NslHead::new(head.weights, scale, head.class_ids)
    }

    /// Head whose columns are the given unit vectors.
    pub fn from_columns(columns: &[Vec<f64>], scale: f64, class_ids: Vec<ClassId>) -> Result<Self> {
        let m = columns.first().map_or(0, Vec::len);
        let rows = Matrix::from_rows(columns)?;
        let weights = if columns.is_empty() {
            Matrix::zeros(m, 0)
        } else {
            rows.transpose()
        };
        NslHead::new(weights, scale, class_ids)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.weights.column(k)
    }

    /// Same columns under a different scale.
    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        NslHead::new(self.weights.clone(), scale, self.class_ids.clone())
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.embedding_dim() {
            return Err(Error::Shape {
                op: "nsl_logits",
                lhs: features.shape(),
                rhs: self.weights.shape(),
            });
        }
        Ok(())
    }

    /// `S cos(theta)` for every (row, class) pair.
    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        self.check_features(features)?;
        features
            .row_normalize(self.scale, DEFAULT_EPSILON)?
            .matmul(&self.weights)
    }

    /// Records the logits on `g`, with the weight matrix as node `weights`.
    pub fn logits_node(&self, g: &mut Graph, features: NodeId, weights: NodeId) -> Result<NodeId> {
        self.check_features(g.value(features))?;
        let scaled = g.row_normalize(features, self.scale, DEFAULT_EPSILON)?;
        g.matmul(scaled, weights)
    }

    /// Dense column index predicted for every row.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(features)?))
    }

    /// Rescales every column to unit norm.
    pub fn project_weights(&mut self) -> Result<()> {
        let (m, k) = self.weights.shape();
        for c in 0..k {
            let norm = l2_norm(&self.weights.column(c));
            if !(norm > DEFAULT_EPSILON) || !norm.is_finite() {
                return Err(Error::DegenerateWeight { col: c, norm });
            }
            for r in 0..m {
                let v = self.weights.get(r, c) / norm;
                self.weights.set(r, c, v);
            }
        }
        Ok(())
    }

    /// New head with one more class; existing columns are copied unchanged.
    pub fn extend(&self, new_class: ClassId, w_new: &[f64]) -> Result<NslHead> {
        if self.class_ids.contains(&new_class) {
            return Err(Error::DuplicateClass(new_class));
        }
        if w_new.len() != self.embedding_dim() {
            return Err(Error::Shape {
                op: "extend_head",
                lhs: self.weights.shape(),
                rhs: (w_new.len(), 1),
            });
        }
        let norm = l2_norm(w_new);
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::DegenerateWeight {
                col: self.num_classes(),
                norm,
            });
        }
        let mut class_ids = self.class_ids.clone();
        class_ids.push(new_class);
        Ok(NslHead {
            weights: self.weights.push_column(w_new)?,
            scale: self.scale,
            class_ids,
        })
    }
}

/// Unconstrained affine classifier `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    weights: Matrix,
    biases: Matrix,
    class_ids: Vec<ClassId>,
}

impl SoftmaxHead {
    pub fn new(weights: Matrix, biases: Matrix, class_ids: Vec<ClassId>) -> Result<Self> {
        if biases.shape() != (1, weights.cols()) {
            return Err(Error::Shape {
                op: "softmax head",
                lhs: weights.shape(),
                rhs: biases.shape(),
            });
        }
        check_class_ids(&class_ids, weights.cols())?;
        Ok(SoftmaxHead {
            weights,
            biases,
            class_ids,
        })
    }

    pub fn init(embedding_dim: usize, class_ids: Vec<ClassId>, seed: u64) -> Result<Self> {
        let mut rng = rng::derived(seed, 1);
        let k = class_ids.len();
        let weights = uniform_init(embedding_dim, k, embedding_dim, &mut rng);
        let biases = uniform_init(1, k, embedding_dim, &mut rng);
        SoftmaxHead::new(weights, biases, class_ids)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &Matrix {
        &self.biases
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn embedding_dim(&self) -> usize {
        self.weights.rows()
    }

    pub(crate) fn parameters_mut(&mut self) -> [&mut Matrix; 2] {
        [&mut self.weights, &mut self.biases]
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        features.matmul(&self.weights)?.add_row(&self.biases)
    }

    pub fn logits_node(
        &self,
        g: &mut Graph,
        features: NodeId,
        weights: NodeId,
        biases: NodeId,
    ) -> Result<NodeId> {
        let z = g.matmul(features, weights)?;
        g.add_bias(z, biases)
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(features)?))
    }
}
