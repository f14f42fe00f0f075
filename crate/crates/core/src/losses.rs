//! Training objectives.
//!
//! Each loss has a graph form (records a node for `backward`) and a
//! `*_value` form that evaluates it on plain matrices.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::NslHead;
use crate::tensor::{Graph, Matrix, NodeId};

pub const DEFAULT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SoftmaxCe,
    Nsl,
    WeightedCe,
    Triplet,
    Contrastive,
}

impl LossKind {
    pub fn is_metric(self) -> bool {
        matches!(self, LossKind::Triplet | LossKind::Contrastive)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::SoftmaxCe => "softmax_ce",
            LossKind::Nsl => "nsl",
            LossKind::WeightedCe => "weighted_ce",
            LossKind::Triplet => "triplet",
            LossKind::Contrastive => "contrastive",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "softmax_ce" => LossKind::SoftmaxCe,
            "nsl" => LossKind::Nsl,
            "weighted_ce" => LossKind::WeightedCe,
            "triplet" => LossKind::Triplet,
            "contrastive" => LossKind::Contrastive,
            other => return Err(Error::Config(format!("unknown loss kind '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Hinge margin for triplet and contrastive losses.
    pub margin: f64,
    /// Per-class weights for weighted cross-entropy; `None` means inverse
    /// class frequency of the training set.
    pub class_weights: Option<Vec<f64>>,
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        LossConfig {
            kind,
            margin: DEFAULT_MARGIN,
            class_weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_metric() && !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if let Some(w) = &self.class_weights {
            check_class_weights(w)?;
        }
        Ok(())
    }
}

fn check_class_weights(w: &[f64]) -> Result<()> {
    if let Some(bad) = w.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "class weights must be positive, got {bad}"
        )));
    }
    Ok(())
}

/// `w_c = total / (K * n_c)`.
pub fn inverse_frequency_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 {
                Err(Error::InvalidParameter(format!(
                    "class {c} has no samples, its weight is undefined"
                )))
            } else {
                Ok(total as f64 / (k * n as f64))
            }
        })
        .collect()
}

/// Mean of `-log softmax(logits)[label]`.
pub fn softmax_crossentropy(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    g.softmax_crossentropy(logits, labels, None)
}

/// `sum_i w[y_i] * nll_i / sum_i w[y_i]`.
pub fn weighted_crossentropy(
    g: &mut Graph,
    logits: NodeId,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<NodeId> {
    check_class_weights(class_weights)?;
    let k = g.value(logits).cols();
    if class_weights.len() != k {
        return Err(Error::Shape {
            op: "weighted_crossentropy",
            lhs: g.value(logits).shape(),
            rhs: (1, class_weights.len()),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let per_sample: Vec<f64> = labels.iter().map(|&l| class_weights[l]).collect();
    g.softmax_crossentropy(logits, labels, Some(&per_sample))
}

/// Cross-entropy over `S cos(theta)` logits; `weights` is the node holding
/// the head's weight matrix.
pub fn nsl_loss(
    g: &mut Graph,
    head: &NslHead,
    features: NodeId,
    weights: NodeId,
    labels: &[usize],
) -> Result<NodeId> {
    let logits = head.logits_node(g, features, weights)?;
    softmax_crossentropy(g, logits, labels)
}

pub fn triplet_loss(
    g: &mut Graph,
    anchor: NodeId,
    positive: NodeId,
    negative: NodeId,
    margin: f64,
) -> Result<NodeId> {
    g.triplet(anchor, positive, negative, margin)
}

pub fn contrastive_loss(
    g: &mut Graph,
    left: NodeId,
    right: NodeId,
    same_class: &[bool],
    margin: f64,
) -> Result<NodeId> {
    g.contrastive(left, right, same_class, margin)
}

pub fn softmax_crossentropy_value(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let z = g.leaf(logits.clone());
    let l = softmax_crossentropy(&mut g, z, labels)?;
    Ok(g.scalar(l))
}

pub fn weighted_crossentropy_value(
    logits: &Matrix,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<f64> {
    let mut g = Graph::new();
    let z = g.leaf(logits.clone());
    let l = weighted_crossentropy(&mut g, z, labels, class_weights)?;
    Ok(g.scalar(l))
}

pub fn nsl_loss_value(head: &NslHead, features: &Matrix, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let f = g.leaf(features.clone());
    let w = g.leaf(head.weights().clone());
    let l = nsl_loss(&mut g, head, f, w, labels)?;
    Ok(g.scalar(l))
}

pub fn triplet_loss_value(a: &Matrix, p: &Matrix, n: &Matrix, margin: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (a, p, n) = (g.leaf(a.clone()), g.leaf(p.clone()), g.leaf(n.clone()));
    let l = triplet_loss(&mut g, a, p, n, margin)?;
    Ok(g.scalar(l))
}

pub fn contrastive_loss_value(x1: &Matrix, x2: &Matrix, same: &[bool], margin: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (x1, x2) = (g.leaf(x1.clone()), g.leaf(x2.clone()));
    let l = contrastive_loss(&mut g, x1, x2, same, margin)?;
    Ok(g.scalar(l))
}
