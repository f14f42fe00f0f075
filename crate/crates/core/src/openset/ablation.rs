//! How well inferred weights stand in for trained ones.

use std::fmt;
use std::str::FromStr;

use super::eval::support_rows;
use super::infer_class_weight;
use super::SupportSize;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{cosine_distance_matrix, macro_f1, ConfusionMatrix};
use crate::model::{Encoder, NslHead};
use crate::rng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionError {
    /// `1 - cos(w_trained, w_inferred)` for each class.
    pub per_class_cosine_distance: Vec<f64>,
    /// `||W_trained - W_inferred||_F / ||W_trained||_F`
    pub relative_frobenius_error: f64,
}

pub fn weight_reconstruction_error(trained: &NslHead, inferred: &Matrix) -> Result<ReconstructionError> {
    let w = trained.weights();
    if w.shape() != inferred.shape() {
        return Err(Error::Shape {
            op: "weight_reconstruction_error",
            lhs: w.shape(),
            rhs: inferred.shape(),
        });
    }
    let dist = cosine_distance_matrix(&w.transpose(), &inferred.transpose())?;
    let per_class_cosine_distance = (0..w.cols()).map(|k| dist.get(k, k)).collect();
    let mut diff = w.clone();
    diff.axpy(-1.0, inferred);
    Ok(ReconstructionError {
        per_class_cosine_distance,
        relative_frobenius_error: diff.frobenius_norm() / w.frobenius_norm(),
    })
}

/// Inferred columns (`embedding_dim x K`) for every class of `head`, from
/// training samples drawn per `support`.
pub fn infer_head_weights(
    encoder: &Encoder,
    head: &NslHead,
    train: &Dataset,
    support: SupportSize,
    seed: u64,
) -> Result<Matrix> {
    let mut rng = rng::derived(seed, 3);
    let cols = head
        .class_ids()
        .iter()
        .map(|&c| infer_class_weight(&encoder.embed(&support_rows(train, c, support, &mut rng)?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_rows(&cols)?.transpose())
}

fn head_macro_f1(encoder: &Encoder, head: &NslHead, test: &Dataset) -> Result<f64> {
    let ids = head.class_ids();
    let mut idx = Vec::new();
    let mut truth = Vec::new();
    for i in 0..test.len() {
        if let Some(t) = ids.iter().position(|&c| c == test.class_id(test.labels[i])) {
            idx.push(i);
            truth.push(t);
        }
    }
    let pred = head.predict(&encoder.embed(&test.features.select_rows(&idx))?)?;
    macro_f1(&ConfusionMatrix::from_predictions(ids.len(), &truth, &pred)?)
}

/// Closed-set test macro-F1 after replacing every trained column of `head`
/// with one inferred from `support` training samples.
pub fn support_macro_f1(
    encoder: &Encoder,
    head: &NslHead,
    train: &Dataset,
    test: &Dataset,
    support: SupportSize,
    seed: u64,
) -> Result<f64> {
    let w = infer_head_weights(encoder, head, train, support, seed)?;
    let imprinted = NslHead::new(w, head.scale(), head.class_ids().to_vec())?;
    head_macro_f1(encoder, &imprinted, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMode {
    /// Weights found by optimization.
    Trained,
    /// One random training sample per class.
    SingleAnchor,
    /// Every training sample of the class.
    Prototype,
}

impl AnchorMode {
    pub const ALL: [AnchorMode; 3] = [AnchorMode::Trained, AnchorMode::SingleAnchor, AnchorMode::Prototype];
}

impl fmt::Display for AnchorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnchorMode::Trained => "trained",
            AnchorMode::SingleAnchor => "single_anchor",
            AnchorMode::Prototype => "prototype",
        })
    }
}

impl FromStr for AnchorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trained" => Ok(AnchorMode::Trained),
            "single_anchor" => Ok(AnchorMode::SingleAnchor),
            "prototype" => Ok(AnchorMode::Prototype),
            other => Err(Error::Config(format!("unknown anchor mode '{other}'"))),
        }
    }
}

/// Test macro-F1 of the closed-set head under each weight source.
pub fn anchor_ablation(
    encoder: &Encoder,
    head: &NslHead,
    train: &Dataset,
    test: &Dataset,
    modes: &[AnchorMode],
    seed: u64,
) -> Result<Vec<(AnchorMode, f64)>> {
    modes
        .iter()
        .map(|&mode| {
            let f1 = match mode {
                AnchorMode::Trained => head_macro_f1(encoder, head, test)?,
                AnchorMode::SingleAnchor => {
                    support_macro_f1(encoder, head, train, test, SupportSize::Count(1), seed)?
                }
                AnchorMode::Prototype => {
                    support_macro_f1(encoder, head, train, test, SupportSize::All, seed)?
                }
            };
            Ok((mode, f1))
        })
        .collect()
}
