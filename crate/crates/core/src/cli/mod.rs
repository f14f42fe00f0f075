//! Experiment runner behind the `hsphere` binary.
//!
//! Outputs, all written under the configured output directory:
//!
//! | file | header |
//! |------|--------|
//! | `training_log.csv` | `epoch,loss,closed_acc` |
//! | `report.csv` | `seed,mode,n_seen,n_unseen,accuracy,balanced_accuracy,macro_f1,seen_acc,unseen_acc,wall_ms` |
//! | `study_reconstruction.csv` | `row,seed,relative_frobenius_error,mean_cosine_distance,max_cosine_distance,final_loss` |
//! | `study_anchors.csv` | `row,seed,mode,macro_f1` |
//! | `study_sample-count.csv` | `row,seed,support,macro_f1` |
//!
//! Study files hold one row per run followed by `median`, `min` and `max`
//! summary rows (per mode or support size where applicable). Empty cells
//! stand for values that do not apply.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ExperimentConfig, SourceKind};
use crate::data::{load_idx, make_blobs, split_classes, ClassId, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{checkpoint, Head, Model};
use crate::openset::{
    anchor_ablation, evaluate_closed, evaluate_disjoint, evaluate_joint, evaluate_joint_prototypes,
    infer_head_weights, support_macro_f1, weight_reconstruction_error, AnchorMode, Metric, ReportMode,
    RunReport, ScenarioMode, ScenarioSpec,
};
use crate::train::{EpochStats, Trainer};

pub const TRAINING_LOG: &str = "training_log.csv";
pub const REPORT: &str = "report.csv";
pub const FINAL_CHECKPOINT: &str = "model_final.ckpt";
pub const BEST_CHECKPOINT: &str = "model_best.ckpt";
pub const REPORT_HEADER: &str =
    "seed,mode,n_seen,n_unseen,accuracy,balanced_accuracy,macro_f1,seen_acc,unseen_acc,wall_ms";

#[derive(Debug, Parser)]
#[command(name = "hsphere", version, about = "Hyperspherical embedding classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// closed, joint or disjoint
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyKind {
    Reconstruction,
    Anchors,
    SampleCount,
}

impl StudyKind {
    pub fn file_name(self) -> &'static str {
        match self {
            StudyKind::Reconstruction => "study_reconstruction.csv",
            StudyKind::Anchors => "study_anchors.csv",
            StudyKind::SampleCount => "study_sample-count.csv",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoints and the training log.
    Train(CommonArgs),
    /// Evaluate a checkpoint; writes report.csv.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Defaults to model_final.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Repeat training over consecutive seeds and aggregate a study.
    Study {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        kind: StudyKind,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Write the configured blob dataset as train.csv and test.csv.
    GenBlobs(CommonArgs),
}

/// 2 for configuration problems, 3 for everything that fails at run time.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => 2,
        _ => 3,
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
        other => other,
    })?;
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(mode) = &args.mode {
        cfg.set("scenario.mode", mode)?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

/// Runs one parsed command line and returns a short summary for stdout.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Train(args) => {
            let cfg = load_config(args)?;
            let trained = run_train(&cfg)?;
            let last = trained.log.last().map(|s| s.loss).unwrap_or(f64::NAN);
            Ok(format!(
                "trained {} epochs, final loss {last}; wrote {}",
                trained.log.len(),
                cfg.output_dir.display()
            ))
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load_config(common)?;
            let ckpt = checkpoint.clone().unwrap_or_else(|| cfg.output_dir.join(FINAL_CHECKPOINT));
            let report = run_eval(&cfg, &ckpt)?;
            Ok(format!(
                "{} accuracy {} balanced {} macro_f1 {}",
                report.mode, report.accuracy, report.balanced_accuracy, report.macro_f1
            ))
        }
        Command::Study { common, kind, repeats } => {
            let mut cfg = load_config(common)?;
            if let Some(r) = repeats {
                cfg.set("study.repeats", &r.to_string())?;
                cfg.validate()?;
            }
            run_study(&cfg, *kind)?;
            Ok(format!("wrote {}", cfg.output_dir.join(kind.file_name()).display()))
        }
        Command::GenBlobs(args) => {
            let cfg = load_config(args)?;
            run_gen_blobs(&cfg)?;
            Ok(format!("wrote blobs to {}", cfg.output_dir.display()))
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Train and test splits for the configured source.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.source {
        SourceKind::Blobs => make_blobs(&cfg.blobs),
        SourceKind::Idx => Ok((
            load_idx(&cfg.idx.train_images, &cfg.idx.train_labels, Split::Train)?,
            load_idx(&cfg.idx.test_images, &cfg.idx.test_labels, Split::Test)?,
        )),
    }
}

/// `(seen, unseen)` for a catalog; seen defaults to every class not unseen.
pub fn scenario_classes(cfg: &ExperimentConfig, catalog: &[ClassId]) -> Result<(Vec<ClassId>, Vec<ClassId>)> {
    for id in cfg.seen.iter().chain(&cfg.unseen) {
        if !catalog.contains(id) {
            return Err(Error::Config(format!("class {id} is not in the dataset")));
        }
    }
    let seen = if cfg.seen.is_empty() {
        catalog.iter().copied().filter(|c| !cfg.unseen.contains(c)).collect()
    } else {
        cfg.seen.clone()
    };
    Ok((seen, cfg.unseen.clone()))
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub best: Model,
    pub log: Vec<EpochStats>,
}

/// Trains on the seen classes of `train`, holding out the configured
/// validation fraction for best-model selection.
pub fn train_model(cfg: &ExperimentConfig, train: &Dataset) -> Result<Trained> {
    let (seen, unseen) = scenario_classes(cfg, &train.class_catalog)?;
    let (seen_view, _) = split_classes(train, &seen, &unseen)?;
    let (fit_set, val) = if cfg.validation_fraction > 0.0 {
        let (k, v) = seen_view.stratified_holdout(cfg.validation_fraction, cfg.seed);
        (k, Some(v))
    } else {
        (seen_view, None)
    };
    let model = Model::init(
        &cfg.encoder_config(train.input_dim()),
        cfg.head,
        fit_set.class_catalog.clone(),
        cfg.scale,
    )?;
    let mut trainer = Trainer::new(model, cfg.loss_config(), cfg.optimizer.clone(), &fit_set, cfg.seed)?;
    let out = trainer.fit(&fit_set, val.as_ref(), &mut |_, _, _| {})?;
    Ok(Trained {
        model: trainer.into_model(),
        best: out.best,
        log: out.log,
    })
}

pub fn training_log_csv(log: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,closed_acc\n");
    for e in log {
        let _ = writeln!(s, "{},{},{}", e.epoch, e.loss, e.closed_acc);
    }
    s
}

/// `train`: checkpoints plus training log in the output directory.
pub fn run_train(cfg: &ExperimentConfig) -> Result<Trained> {
    let (train, _) = load_data(cfg)?;
    let trained = train_model(cfg, &train)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    checkpoint::save(&trained.model, &dir.join(FINAL_CHECKPOINT))?;
    checkpoint::save(&trained.best, &dir.join(BEST_CHECKPOINT))?;
    write_file(&dir.join(TRAINING_LOG), &training_log_csv(&trained.log))?;
    Ok(trained)
}

/// Evaluates `model` under `mode` with the configured scenario.
pub fn evaluate(
    cfg: &ExperimentConfig,
    model: &Model,
    train: &Dataset,
    test: &Dataset,
    mode: ReportMode,
) -> Result<RunReport> {
    if model.encoder.input_dim() != train.input_dim() || model.encoder.input_dim() != test.input_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {} input features, dataset has {}",
            model.encoder.input_dim(),
            train.input_dim()
        )));
    }
    let (mut seen, unseen) = scenario_classes(cfg, &train.class_catalog)?;
    if let Some(h) = model.head.as_nsl() {
        if !unseen.iter().all(|c| !h.class_ids().contains(c)) || seen.len() != h.class_ids().len() {
            return Err(Error::Config("checkpoint head classes do not match the scenario".into()));
        }
        seen = h.class_ids().to_vec();
    }
    let spec = |mode| ScenarioSpec {
        seen: seen.clone(),
        unseen: unseen.clone(),
        mode,
        support: cfg.support,
        seed: cfg.seed,
    };
    let encoder = &model.encoder;
    match (mode, &model.head) {
        (ReportMode::Closed, Head::Softmax(h)) => evaluate_closed(model, h.class_ids(), train, test, cfg.seed),
        (ReportMode::Closed, _) => evaluate_closed(model, &seen, train, test, cfg.seed),
        (ReportMode::Joint, Head::Nsl(h)) => evaluate_joint(encoder, h, &spec(ScenarioMode::Joint), train, test),
        (ReportMode::Joint, Head::Embedding) => {
            evaluate_joint_prototypes(encoder, &spec(ScenarioMode::Joint), train, test, cfg.metric)
        }
        (ReportMode::Joint, Head::Softmax(_)) => {
            Err(Error::Config("softmax heads support closed and disjoint modes only".into()))
        }
        (ReportMode::Disjoint, head) => {
            let metric = match head {
                Head::Embedding => cfg.metric,
                _ => Metric::Cosine,
            };
            if unseen.is_empty() {
                return Err(Error::Config("disjoint mode needs scenario.unseen".into()));
            }
            evaluate_disjoint(encoder, &spec(ScenarioMode::Disjoint), train, test, metric)
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn report_csv(reports: &[RunReport]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{:.3}",
            r.seed,
            r.mode,
            r.n_seen,
            r.n_unseen,
            r.accuracy,
            r.balanced_accuracy,
            r.macro_f1,
            cell(r.seen_accuracy),
            cell(r.unseen_accuracy),
            r.wall_ms
        );
    }
    s
}

/// `eval`: one report row for the configured mode.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint_path: &Path) -> Result<RunReport> {
    let model = checkpoint::load(checkpoint_path)?;
    let (train, test) = load_data(cfg)?;
    let report = evaluate(cfg, &model, &train, &test, cfg.mode)?;
    write_file(&cfg.output_dir.join(REPORT), &report_csv(std::slice::from_ref(&report)))?;
    Ok(report)
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn summary(values: &[f64]) -> [(&'static str, f64); 3] {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [("median", median(values)), ("min", min), ("max", max)]
}

/// One training run of a study; data are regenerated from the run's seed.
struct StudyRun {
    seed: u64,
    cells: Vec<(String, Vec<f64>)>,
}

fn study_run(cfg: &ExperimentConfig, kind: StudyKind) -> Result<StudyRun> {
    let (train, test) = load_data(cfg)?;
    let trained = train_model(cfg, &train)?;
    let head = trained
        .model
        .head
        .as_nsl()
        .ok_or_else(|| Error::Config("studies need head.kind = nsl".into()))?;
    let encoder = &trained.model.encoder;
    let (seen, unseen) = scenario_classes(cfg, &train.class_catalog)?;
    let (train_seen, _) = split_classes(&train, &seen, &unseen)?;
    let (test_seen, _) = split_classes(&test, &seen, &unseen)?;
    let cells = match kind {
        StudyKind::Reconstruction => {
            let inferred = infer_head_weights(encoder, head, &train_seen, crate::openset::SupportSize::All, cfg.seed)?;
            let err = weight_reconstruction_error(head, &inferred)?;
            let d = &err.per_class_cosine_distance;
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let loss = trained.log.last().map(|s| s.loss).unwrap_or(f64::NAN);
            vec![(String::new(), vec![err.relative_frobenius_error, mean, max, loss])]
        }
        StudyKind::Anchors => anchor_ablation(encoder, head, &train_seen, &test_seen, &AnchorMode::ALL, cfg.seed)?
            .into_iter()
            .map(|(m, f1)| (m.to_string(), vec![f1]))
            .collect(),
        StudyKind::SampleCount => cfg
            .support_sizes
            .iter()
            .map(|&s| Ok((s.to_string(), vec![support_macro_f1(encoder, head, &train_seen, &test_seen, s, cfg.seed)?])))
            .collect::<Result<_>>()?,
    };
    Ok(StudyRun { seed: cfg.seed, cells })
}

/// Runs `cfg.repeats` independent repeats with seeds `seed..seed + repeats`
/// in parallel and returns the study CSV.
pub fn study_csv(cfg: &ExperimentConfig, kind: StudyKind) -> Result<String> {
    let configs = (0..cfg.repeats as u64)
        .map(|r| {
            let mut c = cfg.clone();
            c.set("seed", &cfg.seed.wrapping_add(r).to_string())?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let runs = std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || study_run(c, kind))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("study worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    let header = match kind {
        StudyKind::Reconstruction => {
            "row,seed,relative_frobenius_error,mean_cosine_distance,max_cosine_distance,final_loss"
        }
        StudyKind::Anchors => "row,seed,mode,macro_f1",
        StudyKind::SampleCount => "row,seed,support,macro_f1",
    };
    let labelled = kind != StudyKind::Reconstruction;
    let row = |s: &mut String, row: &str, seed: &str, label: &str, values: &[f64]| {
        let mut fields = vec![row.to_string(), seed.to_string()];
        if labelled {
            fields.push(label.to_string());
        }
        fields.extend(values.iter().map(f64::to_string));
        let _ = writeln!(s, "{}", fields.join(","));
    };
    let mut s = format!("{header}\n");
    for (i, run) in runs.iter().enumerate() {
        for (label, values) in &run.cells {
            row(&mut s, &i.to_string(), &run.seed.to_string(), label, values);
        }
    }
    let groups = runs[0].cells.len();
    let width = runs[0].cells[0].1.len();
    for g in 0..groups {
        let label = &runs[0].cells[g].0;
        let columns: Vec<Vec<f64>> = (0..width)
            .map(|c| runs.iter().map(|r| r.cells[g].1[c]).collect())
            .collect();
        let stats: Vec<_> = columns.iter().map(|c| summary(c)).collect();
        for k in 0..3 {
            let values: Vec<f64> = stats.iter().map(|st| st[k].1).collect();
            row(&mut s, stats[0][k].0, "", label, &values);
        }
    }
    Ok(s)
}

/// `study`: writes `study_<kind>.csv`.
pub fn run_study(cfg: &ExperimentConfig, kind: StudyKind) -> Result<String> {
    let csv = study_csv(cfg, kind)?;
    write_file(&cfg.output_dir.join(kind.file_name()), &csv)?;
    Ok(csv)
}

/// `gen-blobs`: `train.csv` and `test.csv` in the output directory.
pub fn run_gen_blobs(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.source != SourceKind::Blobs {
        return Err(Error::Config("gen-blobs needs data.source = blobs".into()));
    }
    let (train, test) = make_blobs(&cfg.blobs)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    train.save_csv(&cfg.output_dir.join("train.csv"))?;
    test.save_csv(&cfg.output_dir.join("test.csv"))
}
