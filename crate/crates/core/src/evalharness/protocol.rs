//! Evaluation protocols: leave-one-subject-out, cross-dataset, and plain
//! training runs, all producing an [`EvalReport`].

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::affnet::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::evalharness::dataset::{load_samples, Sample};
use crate::evalharness::folds::loso_folds;
use crate::evalharness::metrics::{accuracy_and_confusion, round2, Confusion};
use crate::evalharness::train::{mix_seed, predict_classes, prepare_examples, train_network, training_pool, TrainConfig};
use crate::evalharness::DatasetManifest;

/// Environment variable capping the number of folds trained concurrently.
pub const THREADS_ENV: &str = "AFFNET_THREADS";

/// Fold parallelism from `AFFNET_THREADS`, else the number of logical cores.
pub fn default_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// Held-out subject for LOSO, the test dataset name otherwise.
    pub name: String,
    pub test_count: usize,
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub protocol: String,
    pub labels: Vec<String>,
    pub per_fold_accuracy: Vec<f64>,
    pub folds: Vec<FoldReport>,
    /// `100 * trace / total` of the pooled confusion matrix.
    pub aggregate_accuracy: f64,
    /// Rows are true classes, columns predicted.
    pub confusion: Confusion,
    pub config_snapshot: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn confusion_csv(&self) -> String {
        self.confusion.to_csv(&self.labels)
    }

    /// Mean of the per-fold training accuracies.
    pub fn mean_train_accuracy(&self) -> f64 {
        if self.folds.is_empty() {
            return 0.0;
        }
        self.folds.iter().map(|f| f.train_accuracy).sum::<f64>() / self.folds.len() as f64
    }
}

/// Loss curve of one trained model, labelled by fold.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub name: String,
    pub losses: Vec<f64>,
}

/// `fold,epoch,loss` rows for every curve.
pub fn loss_csv(curves: &[LossCurve]) -> String {
    let mut out = String::from("fold,epoch,loss\n");
    for c in curves {
        for (epoch, loss) in c.losses.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", c.name, epoch + 1, loss));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub curves: Vec<LossCurve>,
}

/// A single train-and-test run.
struct Split<'a> {
    name: String,
    train: Vec<&'a Sample>,
    test: Vec<&'a Sample>,
    seed: u64,
}

struct SplitResult {
    fold: FoldReport,
    confusion: Confusion,
    losses: Vec<f64>,
    network: Network<f32>,
}

fn run_split(split: &Split<'_>, spec: &NetworkSpec, config: &TrainConfig, classes: usize) -> Result<SplitResult> {
    let input = spec.input_size;
    let spec = spec.clone().with_seed(split.seed);
    let config = TrainConfig {
        seed: split.seed,
        ..config.clone()
    };
    let pool = training_pool(&split.train, input, &config)?;
    let trained = train_network(&pool, &spec, &config)?;
    let train_examples = prepare_examples(&split.train, input)?;
    let train_pred = predict_classes(&trained.network, &train_examples)?;
    let train_labels: Vec<usize> = train_examples.iter().map(|e| e.label).collect();
    let train_metrics = accuracy_and_confusion(&train_pred, &train_labels, classes)?;
    let test_examples = prepare_examples(&split.test, input)?;
    let pred = predict_classes(&trained.network, &test_examples)?;
    let labels: Vec<usize> = test_examples.iter().map(|e| e.label).collect();
    let metrics = accuracy_and_confusion(&pred, &labels, classes)?;
    Ok(SplitResult {
        fold: FoldReport {
            name: split.name.clone(),
            test_count: split.test.len(),
            accuracy: metrics.accuracy,
            train_accuracy: train_metrics.accuracy,
            final_loss: trained.loss_curve.last().copied(),
        },
        confusion: metrics.confusion,
        losses: trained.loss_curve,
        network: trained.network,
    })
}

/// Runs splits on up to `threads` workers; results come back in split order
/// regardless of scheduling.
fn run_splits(
    splits: &[Split<'_>],
    spec: &NetworkSpec,
    config: &TrainConfig,
    classes: usize,
    threads: usize,
) -> Result<Vec<SplitResult>> {
    let workers = threads.clamp(1, splits.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SplitResult>>>> = Mutex::new((0..splits.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= splits.len() {
                    break;
                }
                let result = run_split(&splits[i], spec, config, classes);
                slots.lock().expect("fold result lock poisoned")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("fold result lock poisoned")
        .into_iter()
        .map(|r| r.expect("every split is run"))
        .collect()
}

fn assemble(
    name: String,
    protocol: &str,
    labels: &[String],
    results: &[SplitResult],
    config_snapshot: serde_json::Value,
) -> Result<EvalReport> {
    let mut confusion = Confusion::zeros(labels.len());
    for r in results {
        confusion.merge(&r.confusion)?;
    }
    Ok(EvalReport {
        name,
        protocol: protocol.into(),
        labels: labels.to_vec(),
        per_fold_accuracy: results.iter().map(|r| r.fold.accuracy).collect(),
        folds: results.iter().map(|r| r.fold.clone()).collect(),
        aggregate_accuracy: round2(confusion.accuracy()),
        confusion,
        config_snapshot,
    })
}

fn snapshot(spec: &NetworkSpec, config: &TrainConfig, datasets: &[&str]) -> serde_json::Value {
    serde_json::json!({
        "network": spec,
        "train": config,
        "datasets": datasets,
    })
}

fn check_classes(manifest: &DatasetManifest, spec: &NetworkSpec) -> Result<()> {
    if manifest.label_set().len() != spec.class_count {
        return Err(Error::invalid(format!(
            "manifest {} has {} labels but the network has {} classes",
            manifest.dataset_name,
            manifest.label_set().len(),
            spec.class_count
        )));
    }
    Ok(())
}

/// Leave-one-subject-out evaluation with folds trained on up to `threads`
/// workers. Fold `i` uses a seed derived from `config.seed` and its held-out
/// subject, so results do not depend on the thread count.
pub fn evaluate_loso(
    manifest: &DatasetManifest,
    spec: &NetworkSpec,
    config: &TrainConfig,
    threads: usize,
) -> Result<Evaluation> {
    config.validate()?;
    spec.validate()?;
    check_classes(manifest, spec)?;
    let plan = loso_folds(manifest)?;
    let samples = load_samples(manifest, config.weight_rule)?;
    let splits: Vec<Split<'_>> = plan
        .folds
        .iter()
        .map(|fold| {
            let (test, train): (Vec<&Sample>, Vec<&Sample>) =
                samples.iter().partition(|s| s.subject_id == fold.held_out_subject);
            Split {
                name: fold.held_out_subject.clone(),
                train,
                test,
                seed: mix_seed(config.seed, &fold.held_out_subject),
            }
        })
        .collect();
    let results = run_splits(&splits, spec, config, manifest.label_set().len(), threads)?;
    let report = assemble(
        format!("{}-loso", manifest.dataset_name),
        "loso",
        manifest.label_set(),
        &results,
        snapshot(spec, config, &[&manifest.dataset_name]),
    )?;
    let curves = results
        .into_iter()
        .map(|r| LossCurve {
            name: r.fold.name,
            losses: r.losses,
        })
        .collect();
    Ok(Evaluation { report, curves })
}

/// Trains on all of `train` and tests once on all of `test`. The report is
/// named `<TRAIN>2<TEST>`.
pub fn cross_dataset_eval(
    train: &DatasetManifest,
    test: &DatasetManifest,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<(Evaluation, Network<f32>)> {
    if train.label_set() != test.label_set() {
        return Err(Error::invalid(format!(
            "label sets differ: {:?} vs {:?}",
            train.label_set(),
            test.label_set()
        )));
    }
    config.validate()?;
    spec.validate()?;
    check_classes(train, spec)?;
    let train_samples = load_samples(train, config.weight_rule)?;
    let test_samples = load_samples(test, config.weight_rule)?;
    let name = format!("{}2{}", train.dataset_name, test.dataset_name);
    let split = Split {
        name: test.dataset_name.clone(),
        train: train_samples.iter().collect(),
        test: test_samples.iter().collect(),
        seed: config.seed,
    };
    let result = run_split(&split, spec, config, train.label_set().len())?;
    let report = assemble(
        name.clone(),
        "cde",
        train.label_set(),
        std::slice::from_ref(&result),
        snapshot(spec, config, &[&train.dataset_name, &test.dataset_name]),
    )?;
    let curves = vec![LossCurve {
        name,
        losses: result.losses,
    }];
    Ok((Evaluation { report, curves }, result.network))
}

/// Trains on the whole manifest and reports accuracy on that same data.
pub fn train_on_manifest(
    manifest: &DatasetManifest,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<(Evaluation, Network<f32>)> {
    config.validate()?;
    spec.validate()?;
    check_classes(manifest, spec)?;
    let samples = load_samples(manifest, config.weight_rule)?;
    let split = Split {
        name: manifest.dataset_name.clone(),
        train: samples.iter().collect(),
        test: samples.iter().collect(),
        seed: config.seed,
    };
    let result = run_split(&split, spec, config, manifest.label_set().len())?;
    let report = assemble(
        format!("{}-train", manifest.dataset_name),
        "train",
        manifest.label_set(),
        std::slice::from_ref(&result),
        snapshot(spec, config, &[&manifest.dataset_name]),
    )?;
    let curves = vec![LossCurve {
        name: manifest.dataset_name.clone(),
        losses: result.losses,
    }];
    Ok((Evaluation { report, curves }, result.network))
}
