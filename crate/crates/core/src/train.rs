//! Mini-batch SGD with momentum.
//!
//! Classification losses step over shuffled mini-batches. Metric losses draw
//! `batch_size` fresh triplets or pairs per step and take the same number of
//! steps per epoch as a classification run on the same data, so comparative
//! runs consume equal gradient-step budgets.

use rand::seq::SliceRandom;
use rand::RngCore;

use crate::data::{sample_pairs, sample_triplets, Dataset, Pair, Triplet};
use crate::error::{Error, Result};
use crate::losses::{self, inverse_frequency_weights, LossConfig, LossKind};
use crate::model::{Head, HeadKind, Model};
use crate::openset::{evaluate_closed, ReportMode};
use crate::rng::{self, Rng};
use crate::tensor::{Graph, Matrix, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 50,
            batch_size: 32,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    /// Closed-set accuracy on the training data after the epoch.
    pub closed_acc: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochStats>,
    /// Model with the lowest validation loss (training loss without a
    /// validation set); the initialization when no epoch ran.
    pub best: Model,
    pub best_epoch: Option<usize>,
}

pub fn steps_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

pub struct Trainer {
    model: Model,
    loss: LossConfig,
    class_weights: Option<Vec<f64>>,
    opt: OptimizerConfig,
    velocity: Vec<Matrix>,
    rng: Rng,
    steps: usize,
    epoch: usize,
}

fn params_mut(model: &mut Model) -> Vec<&mut Matrix> {
    let mut out: Vec<&mut Matrix> = model.encoder.parameters_mut().collect();
    match &mut model.head {
        Head::Softmax(h) => out.extend(h.parameters_mut()),
        Head::Nsl(h) => out.push(h.weights_mut()),
        Head::Embedding => {}
    }
    out
}

impl Trainer {
    /// Checks that loss and head fit together and that the head's classes
    /// are the training set's catalog.
    pub fn new(
        model: Model,
        loss: LossConfig,
        opt: OptimizerConfig,
        train: &Dataset,
        seed: u64,
    ) -> Result<Self> {
        loss.validate()?;
        opt.validate()?;
        let kind = model.head.kind();
        let compatible = match loss.kind {
            LossKind::SoftmaxCe => kind == HeadKind::Softmax,
            LossKind::Nsl => kind == HeadKind::Nsl,
            LossKind::WeightedCe => kind != HeadKind::Embedding,
            LossKind::Triplet | LossKind::Contrastive => kind == HeadKind::Embedding,
        };
        if !compatible {
            return Err(Error::Config(format!(
                "loss '{}' cannot train a {kind:?} head",
                loss.kind
            )));
        }
        if kind != HeadKind::Embedding && model.head.class_ids() != train.class_catalog.as_slice() {
            return Err(Error::Config(
                "head classes differ from the training catalog".into(),
            ));
        }
        if model.encoder.input_dim() != train.input_dim() {
            return Err(Error::Shape {
                op: "trainer",
                lhs: (model.encoder.input_dim(), model.encoder.embedding_dim()),
                rhs: train.features.shape(),
            });
        }
        let class_weights = match loss.kind {
            LossKind::WeightedCe => Some(match &loss.class_weights {
                Some(w) if w.len() == train.num_classes() => w.clone(),
                Some(w) => {
                    return Err(Error::Config(format!(
                        "{} class weights for {} classes",
                        w.len(),
                        train.num_classes()
                    )))
                }
                None => inverse_frequency_weights(&train.class_counts())?,
            }),
            _ => None,
        };
        let mut model = model;
        let velocity = params_mut(&mut model)
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Ok(Trainer {
            model,
            loss,
            class_weights,
            opt,
            velocity,
            rng: rng::derived(seed, 4),
            steps: 0,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn record_loss(&self, g: &mut Graph, features: NodeId, head_nodes: &[NodeId], labels: &[usize]) -> Result<NodeId> {
        let logits = match &self.model.head {
            Head::Nsl(h) => h.logits_node(g, features, head_nodes[0])?,
            Head::Softmax(h) => h.logits_node(g, features, head_nodes[0], head_nodes[1])?,
            Head::Embedding => unreachable!("checked in Trainer::new"),
        };
        match &self.class_weights {
            Some(w) => losses::weighted_crossentropy(g, logits, labels, w),
            None => losses::softmax_crossentropy(g, logits, labels),
        }
    }

    fn register_head(&self, g: &mut Graph) -> Vec<NodeId> {
        match &self.model.head {
            Head::Nsl(h) => vec![g.leaf(h.weights().clone())],
            Head::Softmax(h) => vec![g.leaf(h.weights().clone()), g.leaf(h.biases().clone())],
            Head::Embedding => vec![],
        }
    }

    /// Runs backward on `loss`, applies the update and re-projects cosine
    /// head columns. Returns the loss value.
    fn apply(&mut self, mut g: Graph, params: Vec<NodeId>, loss: NodeId) -> Result<f64> {
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(self.divergence(value));
        }
        g.backward(loss)?;
        let (lr, mu) = (self.opt.learning_rate, self.opt.momentum);
        let velocity = &mut self.velocity;
        for ((p, v), id) in params_mut(&mut self.model).into_iter().zip(velocity.iter_mut()).zip(&params) {
            let grad = g.grad(*id);
            for (vi, gi) in v.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *vi = mu * *vi + gi;
            }
            p.axpy(-lr, v);
        }
        if let Head::Nsl(h) = &mut self.model.head {
            h.project_weights()?;
        }
        self.steps += 1;
        Ok(value)
    }

    fn divergence(&self, loss: f64) -> Error {
        Error::Divergence {
            epoch: self.epoch,
            step: self.steps,
            loss,
        }
    }

    fn guard<T>(&self, r: Result<T>) -> Result<T> {
        match r {
            Err(Error::NonFinite(_)) => Err(self.divergence(f64::NAN)),
            other => other,
        }
    }

    /// One update on a labeled batch (classification losses).
    pub fn classification_step(&mut self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        if self.loss.kind.is_metric() {
            return Err(Error::Contract("metric losses step on pairs or triplets".into()));
        }
        let r = (|| {
            let mut g = Graph::new();
            let enc = self.model.encoder.register(&mut g);
            let head = self.register_head(&mut g);
            let xi = g.leaf(x.clone());
            let f = self.model.encoder.apply(&mut g, &enc, xi)?;
            let loss = self.record_loss(&mut g, f, &head, labels)?;
            let params = enc.layers.iter().flat_map(|&(w, b)| [w, b]).chain(head).collect();
            Ok((g, params, loss))
        })();
        let (g, params, loss) = self.guard(r)?;
        let value = self.apply(g, params, loss);
        self.guard(value)
    }

    /// One update on a batch of triplets drawn from `data`.
    pub fn triplet_step(&mut self, data: &Dataset, triplets: &[Triplet]) -> Result<f64> {
        let pick = |f: fn(&Triplet) -> usize| -> Vec<usize> { triplets.iter().map(f).collect() };
        let a = data.features.select_rows(&pick(|t| t.anchor));
        let p = data.features.select_rows(&pick(|t| t.positive));
        let n = data.features.select_rows(&pick(|t| t.negative));
        let margin = self.loss.margin;
        let r = (|| {
            let mut g = Graph::new();
            let enc = self.model.encoder.register(&mut g);
            let mut embed = |m: Matrix| {
                let x = g.leaf(m);
                self.model.encoder.apply(&mut g, &enc, x)
            };
            let (ea, ep, en) = (embed(a)?, embed(p)?, embed(n)?);
            let loss = losses::triplet_loss(&mut g, ea, ep, en, margin)?;
            let params = enc.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
            Ok((g, params, loss))
        })();
        let (g, params, loss) = self.guard(r)?;
        let value = self.apply(g, params, loss);
        self.guard(value)
    }

    /// One update on a batch of labeled pairs drawn from `data`.
    pub fn pair_step(&mut self, data: &Dataset, pairs: &[Pair]) -> Result<f64> {
        let x1 = data.features.select_rows(&pairs.iter().map(|p| p.first).collect::<Vec<_>>());
        let x2 = data.features.select_rows(&pairs.iter().map(|p| p.second).collect::<Vec<_>>());
        let same: Vec<bool> = pairs.iter().map(|p| p.same_class).collect();
        let margin = self.loss.margin;
        let r = (|| {
            let mut g = Graph::new();
            let enc = self.model.encoder.register(&mut g);
            let l = g.leaf(x1);
            let l = self.model.encoder.apply(&mut g, &enc, l)?;
            let rt = g.leaf(x2);
            let rt = self.model.encoder.apply(&mut g, &enc, rt)?;
            let loss = losses::contrastive_loss(&mut g, l, rt, &same, margin)?;
            let params = enc.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
            Ok((g, params, loss))
        })();
        let (g, params, loss) = self.guard(r)?;
        let value = self.apply(g, params, loss);
        self.guard(value)
    }

    /// One pass over `data`; `on_step` sees the model after every update.
    /// Returns the mean step loss.
    pub fn run_epoch(
        &mut self,
        data: &Dataset,
        on_step: &mut dyn FnMut(&Model, usize, f64),
    ) -> Result<f64> {
        let bs = self.opt.batch_size;
        let steps = steps_per_epoch(data.len(), bs);
        let mut total = 0.0;
        match self.loss.kind {
            LossKind::Triplet | LossKind::Contrastive => {
                for _ in 0..steps {
                    let seed = self.rng.next_u64();
                    let loss = if self.loss.kind == LossKind::Triplet {
                        let t = sample_triplets(data, bs, seed)?;
                        self.triplet_step(data, &t)?
                    } else {
                        let p = sample_pairs(data, bs, seed)?;
                        self.pair_step(data, &p)?
                    };
                    total += loss;
                    on_step(&self.model, self.steps, loss);
                }
            }
            _ => {
                let mut order: Vec<usize> = (0..data.len()).collect();
                order.shuffle(&mut self.rng);
                for chunk in order.chunks(bs) {
                    let x = data.features.select_rows(chunk);
                    let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
                    let loss = self.classification_step(&x, &labels)?;
                    total += loss;
                    on_step(&self.model, self.steps, loss);
                }
            }
        }
        self.epoch += 1;
        Ok(total / steps.max(1) as f64)
    }

    /// Runs the configured number of epochs, logging loss and closed-set
    /// training accuracy, and keeps the best model by validation loss.
    pub fn fit(
        &mut self,
        train: &Dataset,
        val: Option<&Dataset>,
        on_step: &mut dyn FnMut(&Model, usize, f64),
    ) -> Result<TrainOutcome> {
        let mut log = Vec::with_capacity(self.opt.epochs);
        let mut best = self.model.clone();
        let mut best_epoch = None;
        let mut best_loss = f64::INFINITY;
        for epoch in 0..self.opt.epochs {
            let loss = self.run_epoch(train, on_step)?;
            let closed_acc = closed_accuracy(&self.model, train)?;
            let val_loss = match val {
                Some(v) if !v.is_empty() => Some(dataset_loss(&self.model, &self.loss, v, self.class_weights.as_deref())?),
                _ => None,
            };
            let score = val_loss.unwrap_or(loss);
            if score < best_loss {
                best_loss = score;
                best = self.model.clone();
                best_epoch = Some(epoch);
            }
            log.push(EpochStats {
                epoch,
                loss,
                closed_acc,
                val_loss,
            });
        }
        Ok(TrainOutcome {
            log,
            best,
            best_epoch,
        })
    }
}

/// Closed-set accuracy of `model` on `data` (prototypes built from `data`
/// itself for embedding-only models).
pub fn closed_accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    let classes = match &model.head {
        Head::Embedding => data.class_catalog.clone(),
        h => h.class_ids().to_vec(),
    };
    let report = evaluate_closed(model, &classes, data, data, 0)?;
    debug_assert_eq!(report.mode, ReportMode::Closed);
    Ok(report.accuracy)
}

/// Loss of `model` over all of `data` without updating it. Metric losses
/// use a fixed sample of `data.len()` triplets or pairs.
pub fn dataset_loss(
    model: &Model,
    loss: &LossConfig,
    data: &Dataset,
    class_weights: Option<&[f64]>,
) -> Result<f64> {
    let f = model.encoder.embed(&data.features)?;
    match (&model.head, loss.kind) {
        (Head::Embedding, LossKind::Triplet) => {
            let t = sample_triplets(data, data.len(), 0)?;
            let sel = |g: fn(&Triplet) -> usize| f.select_rows(&t.iter().map(g).collect::<Vec<_>>());
            losses::triplet_loss_value(&sel(|t| t.anchor), &sel(|t| t.positive), &sel(|t| t.negative), loss.margin)
        }
        (Head::Embedding, LossKind::Contrastive) => {
            let p = sample_pairs(data, data.len(), 0)?;
            let a = f.select_rows(&p.iter().map(|p| p.first).collect::<Vec<_>>());
            let b = f.select_rows(&p.iter().map(|p| p.second).collect::<Vec<_>>());
            let same: Vec<bool> = p.iter().map(|p| p.same_class).collect();
            losses::contrastive_loss_value(&a, &b, &same, loss.margin)
        }
        (Head::Embedding, _) => Err(Error::Config("embedding-only model needs a metric loss".into())),
        (head, _) => {
            let logits = match head {
                Head::Nsl(h) => h.logits(&f)?,
                Head::Softmax(h) => h.logits(&f)?,
                Head::Embedding => unreachable!(),
            };
            match class_weights {
                Some(w) => losses::weighted_crossentropy_value(&logits, &data.labels, w),
                None => losses::softmax_crossentropy_value(&logits, &data.labels),
            }
        }
    }
}
