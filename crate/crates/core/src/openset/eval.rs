//! Closed, joint and disjoint evaluation protocols.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;

use super::{build_prototype, infer_class_weight, knn_classify, Metric};
use crate::data::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, balanced_accuracy, macro_f1, ConfusionMatrix};
use crate::model::{Encoder, Head, Model, NslHead, SoftmaxHead, DEFAULT_SCALE};
use crate::rng::{self, Rng};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioMode {
    Joint,
    Disjoint,
}

/// How many training samples of a novel class are used to infer its weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportSize {
    All,
    Count(usize),
}

impl fmt::Display for SupportSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SupportSize::All => f.write_str("all"),
            SupportSize::Count(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for SupportSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(SupportSize::All),
            n => match n.parse::<usize>() {
                Ok(0) | Err(_) => Err(Error::Config(format!(
                    "support size must be 'all' or a positive count, got '{n}'"
                ))),
                Ok(v) => Ok(SupportSize::Count(v)),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
    pub mode: ScenarioMode,
    pub support: SupportSize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let seen: BTreeSet<_> = self.seen.iter().collect();
        let unseen: BTreeSet<_> = self.unseen.iter().collect();
        if seen.len() != self.seen.len() || unseen.len() != self.unseen.len() {
            return Err(Error::Config("scenario lists a class twice".into()));
        }
        if let Some(id) = seen.intersection(&unseen).next() {
            return Err(Error::Config(format!("class {id} is both seen and unseen")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportMode {
    Closed,
    Joint,
    Disjoint,
}

impl fmt::Display for ReportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportMode::Closed => "closed",
            ReportMode::Joint => "joint",
            ReportMode::Disjoint => "disjoint",
        })
    }
}

impl FromStr for ReportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" => Ok(ReportMode::Closed),
            "joint" => Ok(ReportMode::Joint),
            "disjoint" => Ok(ReportMode::Disjoint),
            other => Err(Error::Config(format!("unknown evaluation mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: ReportMode,
    /// Candidate classes, in the order of `per_class_recall`.
    pub class_ids: Vec<ClassId>,
    pub per_class_recall: Vec<f64>,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    /// Accuracy over test samples of seen classes, when any were evaluated.
    pub seen_accuracy: Option<f64>,
    pub unseen_accuracy: Option<f64>,
    pub n_seen: usize,
    pub n_unseen: usize,
    pub seed: u64,
    pub wall_ms: f64,
}

impl RunReport {
    /// Every field except `wall_ms`.
    pub fn same_outcome(&self, other: &RunReport) -> bool {
        let mut a = self.clone();
        a.wall_ms = other.wall_ms;
        &a == other
    }
}

/// Draws the support rows of `class` from `train`.
pub(crate) fn support_rows(
    train: &Dataset,
    class: ClassId,
    support: SupportSize,
    rng: &mut Rng,
) -> Result<Matrix> {
    let idx = train.indices_of(class);
    if idx.is_empty() {
        return Err(Error::EmptySupport(class));
    }
    let chosen: Vec<usize> = match support {
        SupportSize::Count(n) if n < idx.len() => {
            let mut picks = index::sample(rng, idx.len(), n).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| idx[i]).collect()
        }
        _ => idx,
    };
    Ok(train.features.select_rows(&chosen))
}

struct Scored<'a> {
    mode: ReportMode,
    candidates: &'a [ClassId],
    truth: Vec<usize>,
    predicted: Vec<usize>,
    seen: &'a [ClassId],
    n_unseen: usize,
    seed: u64,
    started: Instant,
}

impl Scored<'_> {
    fn report(self) -> Result<RunReport> {
        let k = self.candidates.len();
        let cm = ConfusionMatrix::from_predictions(k, &self.truth, &self.predicted)?;
        let subset_accuracy = |want_seen: bool| -> Option<f64> {
            let hits: Vec<bool> = self
                .truth
                .iter()
                .zip(&self.predicted)
                .filter(|(&t, _)| self.seen.contains(&self.candidates[t]) == want_seen)
                .map(|(t, p)| t == p)
                .collect();
            if hits.is_empty() {
                None
            } else {
                Some(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
            }
        };
        Ok(RunReport {
            mode: self.mode,
            class_ids: self.candidates.to_vec(),
            per_class_recall: cm.per_class_recall()?,
            accuracy: accuracy(&cm)?,
            balanced_accuracy: balanced_accuracy(&cm)?,
            macro_f1: macro_f1(&cm)?,
            seen_accuracy: subset_accuracy(true),
            unseen_accuracy: subset_accuracy(false),
            n_seen: self.seen.len(),
            n_unseen: self.n_unseen,
            seed: self.seed,
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Test rows whose class is among `candidates`, with dense truth labels.
fn test_rows(test: &Dataset, candidates: &[ClassId]) -> (Matrix, Vec<usize>) {
    let mut idx = Vec::new();
    let mut truth = Vec::new();
    for i in 0..test.len() {
        let id = test.class_id(test.labels[i]);
        if let Some(t) = candidates.iter().position(|&c| c == id) {
            idx.push(i);
            truth.push(t);
        }
    }
    (test.features.select_rows(&idx), truth)
}

fn check_mode(spec: &ScenarioSpec, want: ScenarioMode) -> Result<()> {
    spec.validate()?;
    if spec.mode != want {
        return Err(Error::Contract(format!(
            "scenario mode is {:?}, evaluator needs {want:?}",
            spec.mode
        )));
    }
    Ok(())
}

/// Classifies unseen-class test samples among the unseen classes only.
///
/// With [`Metric::Cosine`] each unseen class gets an inferred unit weight and
/// samples are scored by a cosine head; with [`Metric::Euclidean`] each gets a
/// mean prototype and samples go to the nearest one.
pub fn evaluate_disjoint(
    encoder: &Encoder,
    spec: &ScenarioSpec,
    train: &Dataset,
    test: &Dataset,
    metric: Metric,
) -> Result<RunReport> {
    check_mode(spec, ScenarioMode::Disjoint)?;
    let started = Instant::now();
    if spec.unseen.is_empty() {
        return Err(Error::Contract("disjoint evaluation needs unseen classes".into()));
    }
    let mut rng = rng::derived(spec.seed, 2);
    let (x, truth) = test_rows(test, &spec.unseen);
    let queries = encoder.embed(&x)?;
    let predicted = match metric {
        Metric::Cosine => {
            let cols = spec
                .unseen
                .iter()
                .map(|&c| infer_class_weight(&encoder.embed(&support_rows(train, c, spec.support, &mut rng)?)?))
                .collect::<Result<Vec<_>>>()?;
            NslHead::from_columns(&cols, DEFAULT_SCALE, spec.unseen.clone())?.predict(&queries)?
        }
        Metric::Euclidean => {
            let protos = spec
                .unseen
                .iter()
                .map(|&c| build_prototype(c, &encoder.embed(&support_rows(train, c, spec.support, &mut rng)?)?, metric))
                .collect::<Result<Vec<_>>>()?;
            classify_by_prototypes(&queries, &protos, metric)?
        }
    };
    Scored {
        mode: ReportMode::Disjoint,
        candidates: &spec.unseen,
        truth,
        predicted,
        seen: &spec.seen,
        n_unseen: spec.unseen.len(),
        seed: spec.seed,
        started,
    }
    .report()
}

fn classify_by_prototypes(
    queries: &Matrix,
    protos: &[super::ClassPrototype],
    metric: Metric,
) -> Result<Vec<usize>> {
    queries
        .row_iter()
        .map(|q| {
            let id = knn_classify(q, protos, metric)?;
            Ok(protos.iter().position(|p| p.class_id == id).unwrap())
        })
        .collect()
}

/// Extends the trained cosine head with an inferred weight per unseen class
/// and classifies test samples of every class among seen and unseen.
pub fn evaluate_joint(
    encoder: &Encoder,
    head: &NslHead,
    spec: &ScenarioSpec,
    train: &Dataset,
    test: &Dataset,
) -> Result<RunReport> {
    check_mode(spec, ScenarioMode::Joint)?;
    joint_with_head(encoder, head, spec, train, test, ReportMode::Joint)
}

fn joint_with_head(
    encoder: &Encoder,
    head: &NslHead,
    spec: &ScenarioSpec,
    train: &Dataset,
    test: &Dataset,
    mode: ReportMode,
) -> Result<RunReport> {
    let started = Instant::now();
    let head_ids: BTreeSet<_> = head.class_ids().iter().collect();
    let seen_ids: BTreeSet<_> = spec.seen.iter().collect();
    if head_ids != seen_ids {
        return Err(Error::Contract(
            "scenario seen classes must be exactly the trained head's classes".into(),
        ));
    }
    let mut rng = rng::derived(spec.seed, 2);
    let mut extended = head.clone();
    for &c in &spec.unseen {
        let w = infer_class_weight(&encoder.embed(&support_rows(train, c, spec.support, &mut rng)?)?)?;
        extended = extended.extend(c, &w)?;
    }
    let (x, truth) = test_rows(test, extended.class_ids());
    let predicted = extended.predict(&encoder.embed(&x)?)?;
    Scored {
        mode,
        candidates: extended.class_ids(),
        truth,
        predicted,
        seen: head.class_ids(),
        n_unseen: spec.unseen.len(),
        seed: spec.seed,
        started,
    }
    .report()
}

/// Joint protocol for embedding-only models: a prototype per seen class from
/// all of its training samples, a prototype per unseen class from its
/// support, nearest-prototype classification among all of them.
pub fn evaluate_joint_prototypes(
    encoder: &Encoder,
    spec: &ScenarioSpec,
    train: &Dataset,
    test: &Dataset,
    metric: Metric,
) -> Result<RunReport> {
    check_mode(spec, ScenarioMode::Joint)?;
    prototypes_all(encoder, spec, train, test, metric, ReportMode::Joint)
}

fn prototypes_all(
    encoder: &Encoder,
    spec: &ScenarioSpec,
    train: &Dataset,
    test: &Dataset,
    metric: Metric,
    mode: ReportMode,
) -> Result<RunReport> {
    let started = Instant::now();
    let mut rng = rng::derived(spec.seed, 2);
    let mut candidates = spec.seen.clone();
    candidates.extend_from_slice(&spec.unseen);
    let protos = candidates
        .iter()
        .map(|&c| {
            let support = if spec.seen.contains(&c) {
                SupportSize::All
            } else {
                spec.support
            };
            build_prototype(c, &encoder.embed(&support_rows(train, c, support, &mut rng)?)?, metric)
        })
        .collect::<Result<Vec<_>>>()?;
    let (x, truth) = test_rows(test, &candidates);
    let predicted = classify_by_prototypes(&encoder.embed(&x)?, &protos, metric)?;
    Scored {
        mode,
        candidates: &candidates,
        truth,
        predicted,
        seen: &spec.seen,
        n_unseen: spec.unseen.len(),
        seed: spec.seed,
        started,
    }
    .report()
}

/// Closed-set evaluation of a trained model on test samples of its own
/// classes. Embedding-only models classify by Euclidean prototypes built
/// from `train` over `classes`.
pub fn evaluate_closed(
    model: &Model,
    classes: &[ClassId],
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<RunReport> {
    let spec = ScenarioSpec {
        seen: classes.to_vec(),
        unseen: Vec::new(),
        mode: ScenarioMode::Joint,
        support: SupportSize::All,
        seed,
    };
    spec.validate()?;
    match &model.head {
        Head::Nsl(h) => joint_with_head(&model.encoder, h, &spec, train, test, ReportMode::Closed),
        Head::Softmax(h) => closed_softmax(&model.encoder, h, seed, test),
        Head::Embedding => prototypes_all(&model.encoder, &spec, train, test, Metric::Euclidean, ReportMode::Closed),
    }
}

fn closed_softmax(encoder: &Encoder, head: &SoftmaxHead, seed: u64, test: &Dataset) -> Result<RunReport> {
    let started = Instant::now();
    let (x, truth) = test_rows(test, head.class_ids());
    let predicted = head.predict(&encoder.embed(&x)?)?;
    Scored {
        mode: ReportMode::Closed,
        candidates: head.class_ids(),
        truth,
        predicted,
        seen: head.class_ids(),
        n_unseen: 0,
        seed,
        started,
    }
    .report()
}
