//! Reverse-mode gradient tape over a closed set of operations.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` is a single reverse sweep.

use super::matrix::{l2_norm, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    RowNormalize {
        input: NodeId,
        target: f64,
        norms: Vec<f64>,
    },
    Sum(NodeId),
    HalfSquaredNorm(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        sample_weights: Vec<f64>,
        probs: Matrix,
    },
    Triplet {
        anchor: NodeId,
        positive: NodeId,
        negative: NodeId,
        margin: f64,
    },
    Contrastive {
        left: NodeId,
        right: NodeId,
        same: Vec<bool>,
        margin: f64,
    },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Relu(..) => "relu",
            Op::RowNormalize { .. } => "row_normalize",
            Op::Sum(..) => "sum",
            Op::HalfSquaredNorm(..) => "half_squared_norm",
            Op::SoftmaxCrossEntropy { .. } => "softmax_crossentropy",
            Op::Triplet { .. } => "triplet",
            Op::Contrastive { .. } => "contrastive",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) => vec![a, b],
            Op::Relu(a) | Op::Sum(a) | Op::HalfSquaredNorm(a) => vec![a],
            Op::RowNormalize { input, .. } => vec![input],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits],
            Op::Triplet {
                anchor,
                positive,
                negative,
                ..
            } => vec![anchor, positive, negative],
            Op::Contrastive { left, right, .. } => vec![left, right],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
    grad: Matrix,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].grad
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.get(0, 0)
    }

    /// Operation tag of a node, e.g. `"matmul"`.
    pub fn op_tag(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.tag()
    }

    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.tag()));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(Node { op, value, grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = self.value(x).add_row(self.value(bias))?;
        self.push(Op::AddBias(x, bias), v)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).relu();
        self.push(Op::Relu(x), v)
    }

    pub fn row_normalize(&mut self, x: NodeId, target: f64, epsilon: f64) -> Result<NodeId> {
        let input = self.value(x);
        let v = input.row_normalize(target, epsilon)?;
        let norms = input.row_norms();
        self.push(
            Op::RowNormalize {
                input: x,
                target,
                norms,
            },
            v,
        )
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).sum();
        self.push(Op::Sum(x), Matrix::filled(1, 1, s))
    }

    /// `0.5 * ||x||_F^2`
    pub fn half_squared_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).frobenius_norm();
        self.push(Op::HalfSquaredNorm(x), Matrix::filled(1, 1, 0.5 * n * n))
    }

    /// Weighted mean over rows of `-log softmax(logits)[label]`, stabilized by
    /// subtracting each row's maximum. Unit weights give the plain mean.
    pub fn softmax_crossentropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        sample_weights: Option<&[f64]>,
    ) -> Result<NodeId> {
        let z = self.value(logits);
        let (n, k) = z.shape();
        if labels.len() != n {
            return Err(Error::Shape {
                op: "softmax_crossentropy",
                lhs: z.shape(),
                rhs: (labels.len(), 1),
            });
        }
        if n == 0 {
            return Err(Error::Contract("cross-entropy over an empty batch".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let weights = match sample_weights {
            Some(w) => {
                if w.len() != n {
                    return Err(Error::Shape {
                        op: "softmax_crossentropy weights",
                        lhs: (n, 1),
                        rhs: (w.len(), 1),
                    });
                }
                if let Some(bad) = w.iter().find(|&&v| !(v > 0.0)) {
                    return Err(Error::InvalidParameter(format!(
                        "sample weights must be positive, got {bad}"
                    )));
                }
                w.to_vec()
            }
            None => vec![1.0; n],
        };
        let total_weight: f64 = weights.iter().sum();
        let mut probs = Matrix::zeros(n, k);
        let mut loss = 0.0;
        for i in 0..n {
            let row = z.row(i);
            let top = super::argmax(row);
            let max = row[top];
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != top)
                .map(|(_, &v)| (v - max).exp())
                .sum();
            let sum_exp = 1.0 + rest;
            let log_sum = rest.ln_1p();
            for (p, &v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - max).exp() / sum_exp;
            }
            let nll = log_sum - (row[labels[i]] - max);
            loss += weights[i] * nll;
        }
        loss /= total_weight;
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                sample_weights: weights,
                probs,
            },
            Matrix::filled(1, 1, loss),
        )
    }

    /// Mean over rows of `max(0, |a-p|^2 - |a-n|^2 + margin)`.
    pub fn triplet(
        &mut self,
        anchor: NodeId,
        positive: NodeId,
        negative: NodeId,
        margin: f64,
    ) -> Result<NodeId> {
        let (a, p, n) = (self.value(anchor), self.value(positive), self.value(negative));
        if a.shape() != p.shape() || a.shape() != n.shape() {
            let other = if a.shape() != p.shape() { p } else { n };
            return Err(Error::Shape {
                op: "triplet",
                lhs: a.shape(),
                rhs: other.shape(),
            });
        }
        if a.rows() == 0 {
            return Err(Error::Contract("triplet loss over an empty batch".into()));
        }
        let mut loss = 0.0;
        for i in 0..a.rows() {
            let s = triplet_slack(a.row(i), p.row(i), n.row(i), margin);
            loss += s.max(0.0);
        }
        loss /= a.rows() as f64;
        self.push(
            Op::Triplet {
                anchor,
                positive,
                negative,
                margin,
            },
            Matrix::filled(1, 1, loss),
        )
    }

    /// Mean over row pairs of `d^2` (same class) or `max(0, margin - d)^2`.
    pub fn contrastive(
        &mut self,
        left: NodeId,
        right: NodeId,
        same: &[bool],
        margin: f64,
    ) -> Result<NodeId> {
        let (x1, x2) = (self.value(left), self.value(right));
        if x1.shape() != x2.shape() {
            return Err(Error::Shape {
                op: "contrastive",
                lhs: x1.shape(),
                rhs: x2.shape(),
            });
        }
        if same.len() != x1.rows() {
            return Err(Error::Shape {
                op: "contrastive flags",
                lhs: x1.shape(),
                rhs: (same.len(), 1),
            });
        }
        if x1.rows() == 0 {
            return Err(Error::Contract("contrastive loss over an empty batch".into()));
        }
        let mut loss = 0.0;
        for i in 0..x1.rows() {
            let d2 = super::matrix::squared_distance(x1.row(i), x2.row(i));
            loss += if same[i] {
                d2
            } else {
                let h = (margin - d2.sqrt()).max(0.0);
                h * h
            };
        }
        loss /= x1.rows() as f64;
        self.push(
            Op::Contrastive {
                left,
                right,
                same: same.to_vec(),
                margin,
            },
            Matrix::filled(1, 1, loss),
        )
    }

    /// Fills every node's gradient with `d loss / d node`, seeding the
    /// scalar loss node with 1. Nodes created after `loss` get zero gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss node, got {shape:?}"
            )));
        }
        for node in &mut self.nodes {
            node.grad.as_mut_slice().fill(0.0);
        }
        self.nodes[loss.0].grad.set(0, 0, 1.0);

        for idx in (0..=loss.0).rev() {
            let op = self.nodes[idx].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let upstream = self.nodes[idx].grad.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    // dA = dC B^T, dB = A^T dC
                    let da = upstream.matmul(&self.value(b).transpose())?;
                    let db = self.value(a).transpose().matmul(&upstream)?;
                    self.nodes[a.0].grad.axpy(1.0, &da);
                    self.nodes[b.0].grad.axpy(1.0, &db);
                }
                Op::AddBias(x, bias) => {
                    self.nodes[x.0].grad.axpy(1.0, &upstream);
                    let mut col_sums = Matrix::zeros(1, upstream.cols());
                    for r in 0..upstream.rows() {
                        for (s, g) in col_sums.as_mut_slice().iter_mut().zip(upstream.row(r)) {
                            *s += g;
                        }
                    }
                    self.nodes[bias.0].grad.axpy(1.0, &col_sums);
                }
                Op::Relu(x) => {
                    let mask = self.value(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    let grad = &mut self.nodes[x.0].grad;
                    for ((g, u), m) in grad
                        .as_mut_slice()
                        .iter_mut()
                        .zip(upstream.as_slice())
                        .zip(mask.as_slice())
                    {
                        *g += u * m;
                    }
                }
                Op::RowNormalize {
                    input,
                    target,
                    norms,
                } => {
                    // y = t u, u = x/|x|:  dx = (t/|x|) (dy - u (u . dy))
                    let x = self.value(input).clone();
                    let grad = &mut self.nodes[input.0].grad;
                    for r in 0..x.rows() {
                        let norm = norms[r];
                        let dy = upstream.row(r);
                        let xr = x.row(r);
                        let u_dot_dy: f64 =
                            xr.iter().zip(dy).map(|(xi, gi)| xi * gi).sum::<f64>() / norm;
                        let k = target / norm;
                        for ((g, &xi), &gi) in grad.row_mut(r).iter_mut().zip(xr).zip(dy) {
                            *g += k * (gi - xi / norm * u_dot_dy);
                        }
                    }
                }
                Op::Sum(x) => {
                    let s = upstream.get(0, 0);
                    for g in self.nodes[x.0].grad.as_mut_slice() {
                        *g += s;
                    }
                }
                Op::HalfSquaredNorm(x) => {
                    let s = upstream.get(0, 0);
                    let xv = self.value(x).clone();
                    self.nodes[x.0].grad.axpy(s, &xv);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    sample_weights,
                    probs,
                } => {
                    let s = upstream.get(0, 0);
                    let total: f64 = sample_weights.iter().sum();
                    let grad = &mut self.nodes[logits.0].grad;
                    for i in 0..probs.rows() {
                        let w = s * sample_weights[i] / total;
                        let y = labels[i];
                        // p_y - 1 as minus the other probabilities, which
                        // stays accurate when p_y rounds to 1.
                        let others: f64 = probs
                            .row(i)
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != y)
                            .map(|(_, &p)| p)
                            .sum();
                        for (j, (g, &p)) in grad.row_mut(i).iter_mut().zip(probs.row(i)).enumerate() {
                            *g += w * if j == y { -others } else { p };
                        }
                    }
                }
                Op::Triplet {
                    anchor,
                    positive,
                    negative,
                    margin,
                } => {
                    let s = upstream.get(0, 0);
                    let a = self.value(anchor).clone();
                    let p = self.value(positive).clone();
                    let n = self.value(negative).clone();
                    let scale = s / a.rows() as f64;
                    let cols = a.cols();
                    let mut da = Matrix::zeros(a.rows(), cols);
                    let mut dp = Matrix::zeros(a.rows(), cols);
                    let mut dn = Matrix::zeros(a.rows(), cols);
                    for i in 0..a.rows() {
                        if triplet_slack(a.row(i), p.row(i), n.row(i), margin) <= 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            let (ai, pi, ni) = (a.get(i, c), p.get(i, c), n.get(i, c));
                            da.set(i, c, scale * 2.0 * (ni - pi));
                            dp.set(i, c, scale * -2.0 * (ai - pi));
                            dn.set(i, c, scale * 2.0 * (ai - ni));
                        }
                    }
                    self.nodes[anchor.0].grad.axpy(1.0, &da);
                    self.nodes[positive.0].grad.axpy(1.0, &dp);
                    self.nodes[negative.0].grad.axpy(1.0, &dn);
                }
                Op::Contrastive {
                    left,
                    right,
                    same,
                    margin,
                } => {
                    let s = upstream.get(0, 0);
                    let x1 = self.value(left).clone();
                    let x2 = self.value(right).clone();
                    let scale = s / x1.rows() as f64;
                    let mut d1 = Matrix::zeros(x1.rows(), x1.cols());
                    for i in 0..x1.rows() {
                        let diff: Vec<f64> =
                            x1.row(i).iter().zip(x2.row(i)).map(|(a, b)| a - b).collect();
                        let coef = if same[i] {
                            2.0
                        } else {
                            let d = l2_norm(&diff);
                            let h = margin - d;
                            // subgradient 0 at the hinge and at d = 0
                            if h > 0.0 && d > 0.0 {
                                -2.0 * h / d
                            } else {
                                0.0
                            }
                        };
                        for (g, di) in d1.row_mut(i).iter_mut().zip(&diff) {
                            *g = scale * coef * di;
                        }
                    }
                    self.nodes[left.0].grad.axpy(1.0, &d1);
                    self.nodes[right.0].grad.axpy(-1.0, &d1);
                }
            }
        }
        Ok(())
    }
}

fn triplet_slack(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    super::matrix::squared_distance(a, p) - super::matrix::squared_distance(a, n) + margin
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn half_squared_norm_gradient_is_input() {
        let mut g = Graph::new();
        let xv = Matrix::from_rows(&[[1.0, -2.0, 0.25]]).unwrap();
        let x = g.leaf(xv.clone());
        let l = g.half_squared_norm(x).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x), &xv);
    }

    #[test]
    fn relu_subgradient() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::from_rows(&[[-1.0, 2.0]]).unwrap());
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).as_slice(), &[0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.leaf(Matrix::from_rows(&[[0.0]]).unwrap());
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).as_slice(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::zeros(2, 2));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn nodes_are_topologically_ordered() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::filled(2, 3, 0.5));
        let w = g.leaf(Matrix::filled(3, 2, -0.1));
        let b = g.leaf(Matrix::filled(1, 2, 0.2));
        let h = g.matmul(x, w).unwrap();
        let h = g.add_bias(h, b).unwrap();
        let h = g.relu(h).unwrap();
        let s = g.sum(h).unwrap();
        g.backward(s).unwrap();
        for i in 0..g.len() {
            let id = NodeId(i);
            assert!(g.inputs(id).iter().all(|inp| inp.index() < i));
            assert_eq!(g.grad(id).shape(), g.value(id).shape());
        }
        assert_eq!(g.op_tag(h), "relu");
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::from_rows(&[[2.0]]).unwrap());
        let y = g.matmul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).get(0, 0), 4.0);
    }
}
