//! Datasets, synthetic blobs, IDX ingestion, class views and samplers.

mod blobs;
pub mod idx;
mod sampling;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

pub use blobs::{blob_centers, make_blobs, BlobSpec, MIN_CENTER_ANGLE_DEG};
pub use idx::{load_idx, parse_idx, write_idx, IdxTensor};
pub use sampling::{sample_pairs, sample_triplets, Pair, Triplet};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

/// Identifier of a class as it appears in the source data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Feature rows with dense labels.
///
/// `labels[i]` indexes into `class_catalog`, which maps dense labels back to
/// the original class ids. Views produced by [`split_classes`] keep this
/// mapping so reports stay traceable to source classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_catalog: Vec<ClassId>,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_catalog: Vec<ClassId>,
        split: Split,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape {
                op: "dataset",
                lhs: features.shape(),
                rhs: (labels.len(), 1),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_catalog.len()) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_catalog.len(),
            });
        }
        let unique: BTreeSet<_> = class_catalog.iter().collect();
        if unique.len() != class_catalog.len() {
            return Err(Error::Contract("class catalog has duplicate ids".into()));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Dataset {
            features,
            labels,
            class_catalog,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_catalog.len()
    }

    pub fn class_id(&self, dense: usize) -> ClassId {
        self.class_catalog[dense]
    }

    pub fn dense_label(&self, id: ClassId) -> Option<usize> {
        self.class_catalog.iter().position(|&c| c == id)
    }

    /// Original class id of every sample.
    pub fn class_ids(&self) -> Vec<ClassId> {
        self.labels.iter().map(|&l| self.class_catalog[l]).collect()
    }

    pub fn indices_of(&self, id: ClassId) -> Vec<usize> {
        match self.dense_label(id) {
            Some(dense) => (0..self.len()).filter(|&i| self.labels[i] == dense).collect(),
            None => Vec::new(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, same catalog.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_catalog: self.class_catalog.clone(),
            split: self.split,
        }
    }

    /// Holds out `fraction` of every class (rounded down, at least one sample
    /// left for training) and returns `(kept, held_out)`.
    pub fn stratified_holdout(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut rng = rng::seeded(seed);
        let mut keep = Vec::new();
        let mut hold = Vec::new();
        for dense in 0..self.num_classes() {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == dense).collect();
            idx.shuffle(&mut rng);
            let n_hold = ((idx.len() as f64 * fraction).floor() as usize).min(idx.len().saturating_sub(1));
            hold.extend_from_slice(&idx[..n_hold]);
            keep.extend_from_slice(&idx[n_hold..]);
        }
        keep.sort_unstable();
        hold.sort_unstable();
        (self.subset(&keep), self.subset(&hold))
    }

    /// Writes `f0,..,f{d-1},label` rows; the label column holds original class ids.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.input_dim())
            .map(|j| format!("f{j}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> =
                self.features.row(i).iter().map(|v| format!("{v}")).collect();
            fields.push(self.class_id(self.labels[i]).to_string());
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Splits a dataset into label-filtered views for the `seen` and `unseen`
/// classes. Each view relabels densely in catalog order; its
/// `class_catalog` is the dense-to-original id map.
pub fn split_classes(
    d: &Dataset,
    seen: &[ClassId],
    unseen: &[ClassId],
) -> Result<(Dataset, Dataset)> {
    for id in seen.iter().chain(unseen) {
        if d.dense_label(*id).is_none() {
            return Err(Error::UnknownClass(*id));
        }
    }
    let seen_set: BTreeSet<_> = seen.iter().copied().collect();
    let unseen_set: BTreeSet<_> = unseen.iter().copied().collect();
    if let Some(id) = seen_set.intersection(&unseen_set).next() {
        return Err(Error::Contract(format!(
            "class {id} is both seen and unseen"
        )));
    }
    Ok((view(d, &seen_set), view(d, &unseen_set)))
}

fn view(d: &Dataset, keep: &BTreeSet<ClassId>) -> Dataset {
    let catalog: Vec<ClassId> = d
        .class_catalog
        .iter()
        .copied()
        .filter(|c| keep.contains(c))
        .collect();
    let remap: HashMap<usize, usize> = catalog
        .iter()
        .enumerate()
        .map(|(new, id)| (d.dense_label(*id).unwrap(), new))
        .collect();
    let indices: Vec<usize> = (0..d.len()).filter(|&i| remap.contains_key(&d.labels[i])).collect();
    Dataset {
        features: d.features.select_rows(&indices),
        labels: indices.iter().map(|&i| remap[&d.labels[i]]).collect(),
        class_catalog: catalog,
        split: d.split,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs8() -> Dataset {
        make_blobs(&BlobSpec {
            num_classes: 8,
            dim: 6,
            centers_norm: 3.0,
            cluster_std: 0.2,
            samples_per_class: 10,
            seed: 5,
        })
        .unwrap()
        .0
    }

    #[test]
    fn full_catalog_view_is_identity() {
        let d = blobs8();
        let (seen, unseen) = split_classes(&d, &d.class_catalog.clone(), &[]).unwrap();
        assert_eq!(seen, d);
        assert!(unseen.is_empty());
    }

    #[test]
    fn six_two_split_partitions_samples() {
        let d = blobs8();
        let seen: Vec<ClassId> = (0..6).map(ClassId).collect();
        let unseen = [ClassId(6), ClassId(7)];
        let (s, u) = split_classes(&d, &seen, &unseen).unwrap();
        assert_eq!(s.len() + u.len(), d.len());
        assert_eq!(s.num_classes(), 6);
        assert_eq!(u.class_catalog, unseen.to_vec());
        assert!(u.labels.iter().all(|&l| l < 2));
        // id map round trip
        for dense in 0..u.num_classes() {
            assert_eq!(u.dense_label(u.class_id(dense)), Some(dense));
        }
        // no label mixing: every unseen-view row is a row of class 6 or 7 in d
        for i in 0..u.len() {
            let id = u.class_id(u.labels[i]);
            assert!(d.indices_of(id).iter().any(|&j| d.features.row(j) == u.features.row(i)));
        }
    }

    #[test]
    fn unknown_and_overlapping_classes_rejected() {
        let d = blobs8();
        assert!(matches!(
            split_classes(&d, &[ClassId(99)], &[]),
            Err(Error::UnknownClass(ClassId(99)))
        ));
        assert!(split_classes(&d, &[ClassId(1)], &[ClassId(1)]).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let d = Dataset::new(
            Matrix::from_rows(&[[0.5, 1.0], [2.0, -1.0]]).unwrap(),
            vec![1, 0],
            vec![ClassId(3), ClassId(9)],
            Split::Train,
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "f0,f1,label\n0.5,1,9\n2,-1,3\n");
    }

    #[test]
    fn holdout_is_stratified() {
        let d = blobs8();
        let (keep, hold) = d.stratified_holdout(0.25, 1);
        assert_eq!(keep.len() + hold.len(), d.len());
        assert!(hold.class_counts().iter().all(|&c| c == 2));
    }
}
