//! Flat binary model checkpoints.
//!
//! ```text
//! "HSOS1\0"
//! u32 layer_count
//! u32 dims[layer_count + 1]           input width, then each layer's width
//! per layer: f64 weights (in x out, row-major), f64 bias (out)
//! u32 head tag                        0 softmax, 1 normalized softmax, 2 none
//! f64 scale                           0 unless the head is normalized
//! u32 K
//! K weight columns of f64 (embedding_dim each)
//! softmax only: K f64 biases
//! K u32 class ids
//! ```
//!
//! Integers and floats are little-endian; floats are stored bit-for-bit.

use std::path::Path;

use super::{DenseLayer, Encoder, Head, Model, NslHead, SoftmaxHead};
use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 6] = b"HSOS1\0";

const TAG_SOFTMAX: u32 = 0;
const TAG_NSL: u32 = 1;
const TAG_NONE: u32 = 2;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: impl IntoIterator<Item = f64>) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_columns(out: &mut Vec<u8>, w: &Matrix) {
    for c in 0..w.cols() {
        put_f64s(out, w.column(c));
    }
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let layers = model.encoder.layers();
    put_u32(&mut out, layers.len() as u32);
    put_u32(&mut out, model.encoder.input_dim() as u32);
    for l in layers {
        put_u32(&mut out, l.weights.cols() as u32);
    }
    for l in layers {
        put_f64s(&mut out, l.weights.as_slice().iter().copied());
        put_f64s(&mut out, l.bias.as_slice().iter().copied());
    }
    match &model.head {
        Head::Softmax(h) => {
            put_u32(&mut out, TAG_SOFTMAX);
            put_f64s(&mut out, [0.0]);
            put_u32(&mut out, h.class_ids().len() as u32);
            put_columns(&mut out, h.weights());
            put_f64s(&mut out, h.biases().as_slice().iter().copied());
        }
        Head::Nsl(h) => {
            put_u32(&mut out, TAG_NSL);
            put_f64s(&mut out, [h.scale()]);
            put_u32(&mut out, h.num_classes() as u32);
            put_columns(&mut out, h.weights());
        }
        Head::Embedding => {
            put_u32(&mut out, TAG_NONE);
            put_f64s(&mut out, [0.0]);
            put_u32(&mut out, 0);
        }
    }
    for id in model.head.class_ids() {
        put_u32(&mut out, id.0);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn columns(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let mut m = Matrix::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m.set(r, c, self.f64()?);
            }
        }
        Ok(m)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let n_layers = r.u32()? as usize;
    if n_layers == 0 {
        return Err(Error::Checkpoint("no encoder layers".into()));
    }
    let dims: Vec<usize> = (0..=n_layers)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<_>>()?;
    let mut layers = Vec::with_capacity(n_layers);
    for w in dims.windows(2) {
        let weights = Matrix::new(w[0], w[1], r.f64s(w[0] * w[1])?)?;
        let bias = Matrix::new(1, w[1], r.f64s(w[1])?)?;
        layers.push(DenseLayer { weights, bias });
    }
    let encoder = Encoder::from_layers(layers)?;
    let m = encoder.embedding_dim();
    let tag = r.u32()?;
    let scale = r.f64()?;
    let k = r.u32()? as usize;
    let head = match tag {
        TAG_SOFTMAX => {
            let w = r.columns(m, k)?;
            let b = Matrix::new(1, k, r.f64s(k)?)?;
            let ids = read_ids(&mut r, k)?;
            Head::Softmax(SoftmaxHead::new(w, b, ids)?)
        }
        TAG_NSL => {
            let w = r.columns(m, k)?;
            let ids = read_ids(&mut r, k)?;
            Head::Nsl(NslHead::new(w, scale, ids)?)
        }
        TAG_NONE => Head::Embedding,
        other => return Err(Error::Checkpoint(format!("unknown head tag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Model { encoder, head })
}

fn read_ids(r: &mut Reader<'_>, k: usize) -> Result<Vec<ClassId>> {
    (0..k).map(|_| r.u32().map(ClassId)).collect()
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderConfig, HeadKind};

    fn model(kind: HeadKind) -> Model {
        let cfg = EncoderConfig {
            input_dim: 4,
            hidden_dims: vec![5],
            embedding_dim: 3,
            seed: 2,
        };
        Model::init(&cfg, kind, vec![ClassId(4), ClassId(1)], 16.0).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for kind in [HeadKind::Softmax, HeadKind::Nsl, HeadKind::Embedding] {
            let m = model(kind);
            let bytes = to_bytes(&m);
            assert_eq!(&bytes[..6], MAGIC);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&model(HeadKind::Nsl));
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        let dims: Vec<u32> = bytes[10..22]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![4, 5, 3]);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = to_bytes(&model(HeadKind::Nsl));
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(from_bytes(&long).is_err());
    }
}
