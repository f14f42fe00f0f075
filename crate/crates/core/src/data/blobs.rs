//! Isotropic Gaussian blobs around well-separated centers.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::{ClassId, Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{dot, l2_norm, Matrix};

/// Minimum pairwise angle between blob centers.
pub const MIN_CENTER_ANGLE_DEG: f64 = 30.0;
const MAX_CENTER_TRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub centers_norm: f64,
    pub cluster_std: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl BlobSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("blobs need at least 2 classes".into()));
        }
        if self.dim < 1 {
            return Err(Error::Config("blob dimension must be at least 1".into()));
        }
        if !(self.cluster_std > 0.0) || !self.cluster_std.is_finite() {
            return Err(Error::Config(format!(
                "cluster_std must be positive, got {}",
                self.cluster_std
            )));
        }
        if !(self.centers_norm > 0.0) || !self.centers_norm.is_finite() {
            return Err(Error::Config(format!(
                "centers_norm must be positive, got {}",
                self.centers_norm
            )));
        }
        if self.samples_per_class < 2 {
            return Err(Error::Config(
                "need at least 2 samples per class for a train/test split".into(),
            ));
        }
        Ok(())
    }
}

fn draw_centers(spec: &BlobSpec, rng: &mut Rng) -> Result<Matrix> {
    let min_cos = MIN_CENTER_ANGLE_DEG.to_radians().cos();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    let mut tries = 0;
    while centers.len() < spec.num_classes {
        tries += 1;
        if tries > MAX_CENTER_TRIES {
            return Err(Error::Config(format!(
                "could not place {} centers in {} dimensions at {MIN_CENTER_ANGLE_DEG} degree separation",
                spec.num_classes, spec.dim
            )));
        }
        let v: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = l2_norm(&v);
        if norm < 1e-12 {
            continue;
        }
        let unit: Vec<f64> = v.iter().map(|x| x / norm).collect();
        if centers
            .iter()
            .all(|c| dot(c, &unit) / spec.centers_norm <= min_cos)
        {
            centers.push(unit.iter().map(|x| x * spec.centers_norm).collect());
        }
    }
    Matrix::from_rows(&centers)
}

/// The class centers `make_blobs` uses for `spec`.
pub fn blob_centers(spec: &BlobSpec) -> Result<Matrix> {
    spec.validate()?;
    draw_centers(spec, &mut rng::seeded(spec.seed))
}

/// Generates `(train, test)` blobs; each class is split 80/20.
pub fn make_blobs(spec: &BlobSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let centers = draw_centers(spec, &mut rng)?;
    let n_train = spec.samples_per_class * 4 / 5;
    let catalog: Vec<ClassId> = (0..spec.num_classes as u32).map(ClassId).collect();

    let mut train_rows = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_rows = Vec::new();
    let mut test_labels = Vec::new();
    for class in 0..spec.num_classes {
        let center = centers.row(class);
        let mut samples: Vec<Vec<f64>> = (0..spec.samples_per_class)
            .map(|_| {
                center
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c + spec.cluster_std * z
                    })
                    .collect()
            })
            .collect();
        samples.shuffle(&mut rng);
        for (i, s) in samples.into_iter().enumerate() {
            if i < n_train {
                train_rows.push(s);
                train_labels.push(class);
            } else {
                test_rows.push(s);
                test_labels.push(class);
            }
        }
    }
    let train = Dataset::new(
        Matrix::from_rows(&train_rows)?,
        train_labels,
        catalog.clone(),
        Split::Train,
    )?;
    let test = Dataset::new(
        Matrix::from_rows(&test_rows)?,
        test_labels,
        catalog,
        Split::Test,
    )?;
    Ok((train, test))
}
