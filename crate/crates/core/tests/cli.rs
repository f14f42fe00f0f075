use std::fs;
use std::path::Path;
use std::process::Command;

use hsphere::cli::{evaluate, load_data, median, run_train, study_csv, train_model, StudyKind, REPORT_HEADER};
use hsphere::config::ExperimentConfig;
use hsphere::model::{checkpoint, Model};
use hsphere::openset::ReportMode;

const BIN: &str = env!("CARGO_BIN_EXE_hsphere");

fn config(pairs: &[(&str, &str)]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.set("seed", "3").unwrap();
    for (k, v) in pairs {
        cfg.set(k, v).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

const SMALL: &[(&str, &str)] = &[
    ("data.blobs.num_classes", "4"),
    ("data.blobs.dim", "6"),
    ("data.blobs.samples_per_class", "40"),
    ("encoder.hidden_dims", "16"),
    ("encoder.embedding_dim", "4"),
    ("optimizer.epochs", "40"),
];

fn with(extra: &[(&'static str, &'static str)]) -> ExperimentConfig {
    let pairs: Vec<_> = SMALL.iter().chain(extra).copied().collect();
    config(&pairs)
}

fn exit_status(dir: &Path, text: &str, args: &[&str]) -> Option<i32> {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    Command::new(BIN)
        .args(args)
        .args(["--config", path.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap()
        .status
        .code()
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(exit_status(dir.path(), "seed = 1\nbogus.key = 3\n", &["train"]), Some(2));
    assert_eq!(exit_status(dir.path(), "optimizer.epochs = 3\n", &["train"]), Some(2));
    assert_eq!(exit_status(dir.path(), "seed = 1\noptimizer.batch_size = 0\n", &["train"]), Some(2));
    let missing = Command::new(BIN).args(["train", "--config", "/nonexistent/run.cfg"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = "seed = 1\ndata.blobs.num_classes = 3\ndata.blobs.samples_per_class = 10\noptimizer.learning_rate = 1e200\noptimizer.epochs = 5\n";
    assert_eq!(exit_status(dir.path(), text, &["train"]), Some(3));
}

#[test]
fn checkpoint_dimension_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 1\ndata.blobs.dim = 6\ndata.blobs.samples_per_class = 10\noptimizer.epochs = 1\n";
    assert_eq!(exit_status(dir.path(), cfg, &["train"]), Some(0));
    let other = "seed = 1\ndata.blobs.dim = 7\ndata.blobs.samples_per_class = 10\n";
    assert_eq!(exit_status(dir.path(), other, &["eval", "--mode", "closed"]), Some(2));
}

#[test]
fn zero_epochs_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = with(&[("optimizer.epochs", "0")]);
    cfg.output_dir = dir.path().to_path_buf();
    let (train, _) = load_data(&cfg).unwrap();
    run_train(&cfg).unwrap();
    let saved = checkpoint::load(&dir.path().join("model_final.ckpt")).unwrap();
    let init = Model::init(&cfg.encoder_config(train.input_dim()), cfg.head, train.class_catalog.clone(), cfg.scale).unwrap();
    assert_eq!(saved, init);
}

#[test]
fn identical_runs_write_identical_checkpoints() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let mut cfg = with(&[]);
        cfg.output_dir = dir.path().to_path_buf();
        run_train(&cfg).unwrap();
    }
    for name in ["model_final.ckpt", "model_best.ckpt", "training_log.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn training_log_has_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = with(&[("optimizer.epochs", "3")]);
    cfg.output_dir = dir.path().to_path_buf();
    run_train(&cfg).unwrap();
    let log = fs::read_to_string(dir.path().join("training_log.csv")).unwrap();
    let lines: Vec<_> = log.lines().collect();
    assert_eq!(lines[0], "epoch,loss,closed_acc");
    assert_eq!(lines.len(), 4);
}

#[test]
fn four_blob_nsl_training_reaches_low_loss() {
    let cfg = config(&[("data.blobs.num_classes", "4"), ("data.blobs.dim", "2"), ("optimizer.epochs", "50")]);
    let (train, _) = load_data(&cfg).unwrap();
    let trained = train_model(&cfg, &train).unwrap();
    let last = trained.log.last().unwrap();
    assert!(last.loss < 0.1, "final loss {}", last.loss);
}

#[test]
fn converged_model_classifies_its_training_data() {
    let cfg = with(&[]);
    let (train, _) = load_data(&cfg).unwrap();
    let trained = train_model(&cfg, &train).unwrap();
    let report = evaluate(&cfg, &trained.model, &train, &train, ReportMode::Closed).unwrap();
    assert!(report.accuracy >= 0.99, "accuracy {}", report.accuracy);
}

#[test]
fn single_unseen_class_disjoint_is_perfect() {
    let cfg = with(&[("scenario.unseen", "3")]);
    let (train, test) = load_data(&cfg).unwrap();
    let trained = train_model(&cfg, &train).unwrap();
    let report = evaluate(&cfg, &trained.model, &train, &test, ReportMode::Disjoint).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.n_unseen, 1);
}

#[test]
fn joint_without_unseen_reduces_to_closed() {
    let cfg = with(&[]);
    let (train, test) = load_data(&cfg).unwrap();
    let trained = train_model(&cfg, &train).unwrap();
    let closed = evaluate(&cfg, &trained.model, &train, &test, ReportMode::Closed).unwrap();
    let mut joint = evaluate(&cfg, &trained.model, &train, &test, ReportMode::Joint).unwrap();
    joint.mode = ReportMode::Closed;
    assert!(joint.same_outcome(&closed), "{joint:?} vs {closed:?}");
}

#[test]
fn report_csv_has_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 2\ndata.blobs.num_classes = 4\ndata.blobs.samples_per_class = 20\noptimizer.epochs = 2\nscenario.unseen = 3\n";
    assert_eq!(exit_status(dir.path(), cfg, &["train"]), Some(0));
    assert_eq!(exit_status(dir.path(), cfg, &["eval", "--mode", "disjoint"]), Some(0));
    let report = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let lines: Vec<_> = report.lines().collect();
    assert_eq!(lines[0], REPORT_HEADER);
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].split(',').count(), REPORT_HEADER.split(',').count());
}

fn summary_rows<'a>(csv: &'a str, stat: &str) -> Vec<Vec<&'a str>> {
    csv.lines().skip(1).map(|l| l.split(',').collect::<Vec<_>>()).filter(|f| f[0] == stat).collect()
}

#[test]
fn anchors_study_emits_modes_times_repeats_rows() {
    let cfg = with(&[("study.repeats", "3")]);
    let csv = study_csv(&cfg, StudyKind::Anchors).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "row,seed,mode,macro_f1");
    let runs = lines[1..].iter().filter(|l| l.split(',').next().unwrap().parse::<usize>().is_ok()).count();
    assert_eq!(runs, 3 * 3);
    assert_eq!(summary_rows(&csv, "median").len(), 3);
    assert_eq!(lines.len(), 1 + 9 + 9);
}

#[test]
fn reconstruction_study_recovers_trained_weights() {
    let cfg = config(&[
        ("data.blobs.num_classes", "4"),
        ("data.blobs.dim", "2"),
        ("data.blobs.cluster_std", "0.3"),
        ("encoder.hidden_dims", "64,64"),
        ("encoder.embedding_dim", "2"),
        ("optimizer.learning_rate", "0.005"),
        ("optimizer.epochs", "3000"),
        ("study.repeats", "5"),
    ]);
    let csv = study_csv(&cfg, StudyKind::Reconstruction).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 5 + 3);
    let median_row = &summary_rows(&csv, "median")[0];
    let frobenius: f64 = median_row[2].parse().unwrap();
    assert!(frobenius < 0.35, "median relative Frobenius error {frobenius}");
}

#[test]
fn sample_count_study_orders_support_sizes() {
    let cfg = with(&[("study.repeats", "3"), ("scenario.unseen", "3")]);
    let csv = study_csv(&cfg, StudyKind::SampleCount).unwrap();
    let medians = summary_rows(&csv, "median");
    let f1 = |support: &str| -> f64 { medians.iter().find(|r| r[2] == support).unwrap()[3].parse().unwrap() };
    assert!(f1("all") >= f1("1") - 0.02);
}

#[test]
fn median_of_even_and_odd_lengths() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
}
