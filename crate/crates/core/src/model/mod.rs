//! Encoder plus classification head.

pub mod checkpoint;
mod encoder;
mod heads;

pub use encoder::{DenseLayer, Encoder, EncoderConfig, EncoderParams};
pub use heads::{argmax_rows, NslHead, SoftmaxHead, DEFAULT_SCALE, UNIT_TOLERANCE};

use crate::data::ClassId;
use crate::error::Result;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Softmax,
    Nsl,
    /// No classification layer; the encoder is used through prototypes.
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Softmax(SoftmaxHead),
    Nsl(NslHead),
    Embedding,
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Softmax(_) => HeadKind::Softmax,
            Head::Nsl(_) => HeadKind::Nsl,
            Head::Embedding => HeadKind::Embedding,
        }
    }

    pub fn class_ids(&self) -> &[ClassId] {
        match self {
            Head::Softmax(h) => h.class_ids(),
            Head::Nsl(h) => h.class_ids(),
            Head::Embedding => &[],
        }
    }

    pub fn as_nsl(&self) -> Option<&NslHead> {
        match self {
            Head::Nsl(h) => Some(h),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub head: Head,
}

impl Model {
    /// Freshly initialized model; the head (if any) gets one column per class.
    pub fn init(
        config: &EncoderConfig,
        kind: HeadKind,
        class_ids: Vec<ClassId>,
        scale: f64,
    ) -> Result<Self> {
        let encoder = Encoder::new(config)?;
        let m = config.embedding_dim;
        let head = match kind {
            HeadKind::Softmax => Head::Softmax(SoftmaxHead::init(m, class_ids, config.seed)?),
            HeadKind::Nsl => Head::Nsl(NslHead::init(m, class_ids, scale, config.seed)?),
            HeadKind::Embedding => Head::Embedding,
        };
        Ok(Model { encoder, head })
    }

    /// Head logits for raw inputs; `None` for embedding-only models.
    pub fn logits(&self, x: &Matrix) -> Result<Option<Matrix>> {
        let f = self.encoder.embed(x)?;
        Ok(match &self.head {
            Head::Softmax(h) => Some(h.logits(&f)?),
            Head::Nsl(h) => Some(h.logits(&f)?),
            Head::Embedding => None,
        })
    }
}
