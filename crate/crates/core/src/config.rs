//! Experiment configuration: flat `key = value` lines, `#` comments,
//! dotted keys.
//!
//! ```text
//! seed = 7
//! data.source = blobs
//! data.blobs.num_classes = 8
//! encoder.hidden_dims = 64,32
//! scenario.unseen = 6,7
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{BlobSpec, ClassId};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind, DEFAULT_MARGIN};
use crate::model::{EncoderConfig, HeadKind, DEFAULT_SCALE};
use crate::openset::{Metric, ReportMode, SupportSize};
use crate::train::OptimizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Blobs,
    Idx,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassWeights {
    /// Inverse class frequency on the training set.
    Auto,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub source: SourceKind,
    /// Blob parameters; the blob seed is always `seed`.
    pub blobs: BlobSpec,
    pub idx: IdxPaths,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub head: HeadKind,
    pub scale: f64,
    pub loss: LossKind,
    pub margin: f64,
    pub class_weights: ClassWeights,
    pub optimizer: OptimizerConfig,
    /// Fraction of the seen training data held out for best-model selection.
    pub validation_fraction: f64,
    pub mode: ReportMode,
    /// Seen classes; empty means every class not listed as unseen.
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
    pub support: SupportSize,
    /// Prototype metric for embedding-only models.
    pub metric: Metric,
    pub repeats: usize,
    pub support_sizes: Vec<SupportSize>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            source: SourceKind::Blobs,
            blobs: BlobSpec {
                num_classes: 8,
                dim: 32,
                centers_norm: 4.0,
                cluster_std: 0.4,
                samples_per_class: 100,
                seed: 0,
            },
            idx: IdxPaths::default(),
            hidden_dims: vec![64],
            embedding_dim: 16,
            head: HeadKind::Nsl,
            scale: DEFAULT_SCALE,
            loss: LossKind::Nsl,
            margin: DEFAULT_MARGIN,
            class_weights: ClassWeights::Auto,
            optimizer: OptimizerConfig::default(),
            validation_fraction: 0.1,
            mode: ReportMode::Closed,
            seen: Vec::new(),
            unseen: Vec::new(),
            support: SupportSize::All,
            metric: Metric::Euclidean,
            repeats: 5,
            support_sizes: vec![SupportSize::Count(1), SupportSize::Count(5), SupportSize::All],
            output_dir: PathBuf::from("out"),
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("{key}: expected {want}, got '{value}'"))
}

fn num<T: FromStr>(key: &str, value: &str, want: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, want))
}

fn list<T: FromStr>(key: &str, value: &str, want: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim(), want)).collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn head_name(kind: HeadKind) -> &'static str {
    match kind {
        HeadKind::Nsl => "nsl",
        HeadKind::Softmax => "softmax",
        HeadKind::Embedding => "none",
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seed = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            let key = key.trim();
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
            seed |= key == "seed";
        }
        if !seed {
            return Err(Error::Config("seed is mandatory".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, value, "an unsigned 64-bit integer")?,
            "data.source" => {
                self.source = match value {
                    "blobs" => SourceKind::Blobs,
                    "idx" => SourceKind::Idx,
                    _ => return Err(bad(key, value, "blobs or idx")),
                }
            }
            "data.blobs.num_classes" => self.blobs.num_classes = num(key, value, "a count")?,
            "data.blobs.dim" => self.blobs.dim = num(key, value, "a count")?,
            "data.blobs.centers_norm" => self.blobs.centers_norm = num(key, value, "a number")?,
            "data.blobs.cluster_std" => self.blobs.cluster_std = num(key, value, "a number")?,
            "data.blobs.samples_per_class" => self.blobs.samples_per_class = num(key, value, "a count")?,
            "data.idx.train_images" => self.idx.train_images = value.into(),
            "data.idx.train_labels" => self.idx.train_labels = value.into(),
            "data.idx.test_images" => self.idx.test_images = value.into(),
            "data.idx.test_labels" => self.idx.test_labels = value.into(),
            "encoder.hidden_dims" => self.hidden_dims = list(key, value, "a list of counts")?,
            "encoder.embedding_dim" => self.embedding_dim = num(key, value, "a count")?,
            "head.kind" => {
                self.head = match value {
                    "nsl" => HeadKind::Nsl,
                    "softmax" => HeadKind::Softmax,
                    "none" => HeadKind::Embedding,
                    _ => return Err(bad(key, value, "nsl, softmax or none")),
                }
            }
            "head.scale" => self.scale = num(key, value, "a number")?,
            "loss.kind" => self.loss = value.parse()?,
            "loss.margin" => self.margin = num(key, value, "a number")?,
            "loss.class_weights" => {
                self.class_weights = match value {
                    "auto" => ClassWeights::Auto,
                    v => ClassWeights::Explicit(list(key, v, "auto or a list of numbers")?),
                }
            }
            "optimizer.learning_rate" => self.optimizer.learning_rate = num(key, value, "a number")?,
            "optimizer.momentum" => self.optimizer.momentum = num(key, value, "a number")?,
            "optimizer.epochs" => self.optimizer.epochs = num(key, value, "a count")?,
            "optimizer.batch_size" => self.optimizer.batch_size = num(key, value, "a count")?,
            "optimizer.validation_fraction" => self.validation_fraction = num(key, value, "a number")?,
            "scenario.mode" => self.mode = value.parse()?,
            "scenario.seen" => self.seen = list::<u32>(key, value, "a list of class ids")?.into_iter().map(ClassId).collect(),
            "scenario.unseen" => self.unseen = list::<u32>(key, value, "a list of class ids")?.into_iter().map(ClassId).collect(),
            "scenario.support" => self.support = value.parse()?,
            "scenario.metric" => self.metric = value.parse()?,
            "study.repeats" => self.repeats = num(key, value, "a count")?,
            "study.support_sizes" => {
                self.support_sizes = value.split(',').map(str::parse).collect::<Result<_>>()?
            }
            "output.dir" => self.output_dir = value.into(),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        self.blobs.seed = self.seed;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.source == SourceKind::Idx {
            let p = &self.idx;
            for (name, path) in [
                ("train_images", &p.train_images),
                ("train_labels", &p.train_labels),
                ("test_images", &p.test_images),
                ("test_labels", &p.test_labels),
            ] {
                if path.as_os_str().is_empty() {
                    return Err(Error::Config(format!("data.idx.{name} is required")));
                }
            }
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("head.scale must be positive, got {}", self.scale)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "optimizer.validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.repeats == 0 {
            return Err(Error::Config("study.repeats must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.loss_config().validate().map_err(|e| Error::Config(strip(e)))?;
        self.encoder_config(1).validate()?;
        Ok(())
    }

    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            embedding_dim: self.embedding_dim,
            seed: self.seed,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            kind: self.loss,
            margin: self.margin,
            class_weights: match &self.class_weights {
                ClassWeights::Auto => None,
                ClassWeights::Explicit(w) => Some(w.clone()),
            },
        }
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        match self.source {
            SourceKind::Blobs => {
                kv("data.source", "blobs".into());
                kv("data.blobs.num_classes", self.blobs.num_classes.to_string());
                kv("data.blobs.dim", self.blobs.dim.to_string());
                kv("data.blobs.centers_norm", self.blobs.centers_norm.to_string());
                kv("data.blobs.cluster_std", self.blobs.cluster_std.to_string());
                kv("data.blobs.samples_per_class", self.blobs.samples_per_class.to_string());
            }
            SourceKind::Idx => {
                kv("data.source", "idx".into());
                kv("data.idx.train_images", self.idx.train_images.display().to_string());
                kv("data.idx.train_labels", self.idx.train_labels.display().to_string());
                kv("data.idx.test_images", self.idx.test_images.display().to_string());
                kv("data.idx.test_labels", self.idx.test_labels.display().to_string());
            }
        }
        kv("encoder.hidden_dims", join(&self.hidden_dims));
        kv("encoder.embedding_dim", self.embedding_dim.to_string());
        kv("head.kind", head_name(self.head).into());
        kv("head.scale", self.scale.to_string());
        kv("loss.kind", self.loss.to_string());
        kv("loss.margin", self.margin.to_string());
        kv(
            "loss.class_weights",
            match &self.class_weights {
                ClassWeights::Auto => "auto".into(),
                ClassWeights::Explicit(w) => join(w),
            },
        );
        kv("optimizer.learning_rate", self.optimizer.learning_rate.to_string());
        kv("optimizer.momentum", self.optimizer.momentum.to_string());
        kv("optimizer.epochs", self.optimizer.epochs.to_string());
        kv("optimizer.batch_size", self.optimizer.batch_size.to_string());
        kv("optimizer.validation_fraction", self.validation_fraction.to_string());
        kv("scenario.mode", self.mode.to_string());
        kv("scenario.seen", join(&self.seen.iter().map(|c| c.0).collect::<Vec<_>>()));
        kv("scenario.unseen", join(&self.unseen.iter().map(|c| c.0).collect::<Vec<_>>()));
        kv("scenario.support", self.support.to_string());
        kv("scenario.metric", self.metric.to_string());
        kv("study.repeats", self.repeats.to_string());
        kv("study.support_sizes", join(&self.support_sizes));
        kv("output.dir", self.output_dir.display().to_string());
        s
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
