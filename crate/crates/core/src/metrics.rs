//! Confusion-matrix measures and cosine distances.
//!
//! Division by an empty denominator (no predictions for a class, or no true
//! samples when computing precision-based scores) counts as zero.

use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, Matrix};

/// `K x K` counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Shape {
                op: "confusion matrix",
                lhs: (k, k),
                rhs: (counts.len(), 1),
            });
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn from_predictions(k: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape {
                op: "confusion matrix",
                lhs: (truth.len(), 1),
                rhs: (predicted.len(), 1),
            });
        }
        let mut cm = ConfusionMatrix::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            let label = t.max(p);
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
            cm.add(t, p);
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.k + predicted] += 1;
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.count(i, i)).sum()
    }

    pub fn row_total(&self, class: usize) -> u64 {
        (0..self.k).map(|j| self.count(class, j)).sum()
    }

    pub fn column_total(&self, class: usize) -> u64 {
        (0..self.k).map(|i| self.count(i, class)).sum()
    }

    /// Recall of each class; errors if a class has no samples.
    pub fn per_class_recall(&self) -> Result<Vec<f64>> {
        (0..self.k)
            .map(|c| {
                let n = self.row_total(c);
                if n == 0 {
                    Err(Error::UndefinedRecall(c))
                } else {
                    Ok(self.count(c, c) as f64 / n as f64)
                }
            })
            .collect()
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyConfusion);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Mean of per-class recalls.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::EmptyConfusion);
    }
    let recalls = cm.per_class_recall()?;
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::EmptyConfusion);
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let sum: f64 = (0..cm.num_classes())
        .map(|c| {
            let tp = cm.count(c, c);
            let precision = ratio(tp, cm.column_total(c));
            let recall = ratio(tp, cm.row_total(c));
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .sum();
    Ok(sum / cm.num_classes() as f64)
}

/// `1 - cos(a_i, b_j)` for every pair of rows.
pub fn cosine_distance_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::Shape {
            op: "cosine_distance_matrix",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let norms = |m: &Matrix| -> Result<Vec<f64>> {
        m.row_iter()
            .enumerate()
            .map(|(row, r)| {
                let n = l2_norm(r);
                if n > 0.0 {
                    Ok(n)
                } else {
                    Err(Error::DegenerateEmbedding { row, norm: n })
                }
            })
            .collect()
    };
    let (na, nb) = (norms(a)?, norms(b)?);
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let cos = (dot(a.row(i), b.row(j)) / (na[i] * nb[j])).clamp(-1.0, 1.0);
            out.set(i, j, 1.0 - cos);
        }
    }
    Ok(out)
}
